"""Model bundles: build from synthetic scans, save and load on disk.

A bundle directory holds `manifest.json` plus one raw little-endian
float64 file per array. Manifests are written with sorted keys so a
rebuild with the same seed is byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basisbuild import LinearBasis, ScanConfig, generate_scans, pca_fit
from .detail import DetailModel
from .errors import ValidationError
from .facepatch import JOINT_NAMES, JOINT_REGIONS, face_patch_skinning, face_patch_topology
from .morphable import CoefficientSet, FaceModel, SkinningData

FORMAT_NAME = "sddk-bundle"
FORMAT_VERSION = 1
TOPOLOGY_NAME = "face-patch-48"

_MLP_HIDDEN = (128, 128)
_AGE_HIDDEN = (64, 32)
N_AGE_BINS = 9


@dataclass(frozen=True)
class BasisDims:
    """Component counts for every linear basis in a bundle."""

    identity: int = 256
    expression: int = 233
    albedo: int = 300
    static: int = 300
    compressed: int = 26
    stretched: int = 26

    def to_dict(self) -> dict:
        return {
            "identity": self.identity,
            "expression": self.expression,
            "albedo": self.albedo,
            "static": self.static,
            "compressed": self.compressed,
            "stretched": self.stretched,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BasisDims":
        return cls(**{k: int(v) for k, v in data.items()})


@dataclass(frozen=True)
class ModelBundle:
    face: FaceModel
    detail: DetailModel
    manifest: dict = field(repr=False)


def _seeded_layers(rng, widths):
    """(W, b) pairs for consecutive widths, drawn W-then-b per layer."""
    layers = []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        W = rng.uniform(-0.1, 0.1, size=(n_out, n_in))
        b = rng.uniform(-0.1, 0.1, size=n_out)
        layers.append((W, b))
    return tuple(layers)


def _zero_mean(basis: LinearBasis) -> LinearBasis:
    return LinearBasis(
        mean=np.zeros(basis.dim),
        components=basis.components,
        stdevs=basis.stdevs,
        total_variance=basis.total_variance,
    )


def build_bundle(config: ScanConfig = None, dims: BasisDims = None,
                 seed: int = 0) -> ModelBundle:
    """Generate scan populations, fit every basis, and wire the models.

    Deterministic for a given (config, dims, seed). The expression
    basis is stored with a zero mean: synthesis adds expression offsets
    around the neutral shape, so a mean offset has no role there.
    """
    config = config or ScanConfig()
    dims = dims or BasisDims()
    topo = face_patch_topology()
    scans = generate_scans(config, seed)

    identity_basis = pca_fit(scans["identity"], dims.identity)
    expression_basis = _zero_mean(pca_fit(scans["expression"], dims.expression))
    albedo_basis = pca_fit(scans["albedo"], dims.albedo)
    static_basis = pca_fit(scans["static"], dims.static)
    com_basis = pca_fit(scans["compressed"], dims.compressed)
    str_basis = pca_fit(scans["stretched"], dims.stretched)

    shape_mean = identity_basis.mean.reshape(-1, 3)
    weights, joint_bias = face_patch_skinning(shape_mean, topo)
    comp3 = identity_basis.components.reshape(dims.identity, -1, 3)
    joint_regressor = np.stack(
        [
            comp3[:, topo.region(JOINT_REGIONS[name])].mean(axis=1)
            for name in JOINT_NAMES
        ],
        axis=1,
    )  # (k_id, j, 3)
    skinning = SkinningData(
        joint_names=JOINT_NAMES,
        weights=weights,
        joint_bias=joint_bias,
        joint_regressor=joint_regressor,
    )
    face = FaceModel(
        topology=topo,
        shape_mean=shape_mean,
        identity_basis=identity_basis,
        expression_basis=expression_basis,
        albedo_basis=albedo_basis,
        albedo_resolution=config.albedo_resolution,
        skinning=skinning,
    )

    net_rng = np.random.default_rng([seed, 1])
    adain_weight = net_rng.uniform(-0.1, 0.1, size=(dims.static, dims.expression))
    adain_bias = net_rng.uniform(-0.1, 0.1, size=dims.static)
    n_dyn = dims.compressed + dims.stretched
    mlp_layers = _seeded_layers(net_rng, (dims.static,) + _MLP_HIDDEN + (n_dyn,))
    age_rng = np.random.default_rng([seed, 2])
    age_layers = _seeded_layers(age_rng, (dims.static,) + _AGE_HIDDEN + (N_AGE_BINS,))
    detail = DetailModel(
        resolution=config.uv_resolution,
        static_basis=static_basis,
        com_basis=com_basis,
        str_basis=str_basis,
        adain_weight=adain_weight,
        adain_bias=adain_bias,
        mlp_layers=mlp_layers,
        age_layers=age_layers,
    )

    variance = {}
    for name, basis in (
        ("identity", identity_basis),
        ("expression", expression_basis),
        ("albedo", albedo_basis),
        ("static", static_basis),
        ("compressed", com_basis),
        ("stretched", str_basis),
    ):
        frac = basis.explained_fraction()
        variance[name] = None if frac is None else float(frac)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "topology": TOPOLOGY_NAME,
        "seed": int(seed),
        "dims": dims.to_dict(),
        "n_scans": int(config.n_scans),
        "uv_resolution": int(config.uv_resolution),
        "albedo_resolution": int(config.albedo_resolution),
        "joint_names": list(JOINT_NAMES),
        "explained_variance": variance,
    }
    return ModelBundle(face=face, detail=detail, manifest=manifest)


# ---------------------------------------------------------------------------
# disk format


def _bundle_arrays(bundle: ModelBundle) -> dict:
    face, detail = bundle.face, bundle.detail
    arrays = {
        "shape_mean": face.shape_mean,
        "identity_components": face.identity_basis.components,
        "identity_stdevs": face.identity_basis.stdevs,
        "expression_components": face.expression_basis.components,
        "expression_stdevs": face.expression_basis.stdevs,
        "albedo_mean": face.albedo_basis.mean,
        "albedo_components": face.albedo_basis.components,
        "albedo_stdevs": face.albedo_basis.stdevs,
        "static_mean": detail.static_basis.mean,
        "static_components": detail.static_basis.components,
        "static_stdevs": detail.static_basis.stdevs,
        "compressed_mean": detail.com_basis.mean,
        "compressed_components": detail.com_basis.components,
        "compressed_stdevs": detail.com_basis.stdevs,
        "stretched_mean": detail.str_basis.mean,
        "stretched_components": detail.str_basis.components,
        "stretched_stdevs": detail.str_basis.stdevs,
        "skin_weights": face.skinning.weights,
        "joint_bias": face.skinning.joint_bias,
        "joint_regressor": face.skinning.joint_regressor,
        "adain_weight": detail.adain_weight,
        "adain_bias": detail.adain_bias,
    }
    for i, (W, b) in enumerate(detail.mlp_layers):
        arrays[f"mlp_{i}_w"] = W
        arrays[f"mlp_{i}_b"] = b
    if detail.age_layers is not None:
        for i, (W, b) in enumerate(detail.age_layers):
            arrays[f"age_{i}_w"] = W
            arrays[f"age_{i}_b"] = b
    missing = [k for k, v in arrays.items() if v is None]
    if missing:
        raise ValidationError(f"bundle arrays missing: {missing}")
    return arrays


def _total_variances(bundle: ModelBundle) -> dict:
    face, detail = bundle.face, bundle.detail
    pairs = {
        "identity": face.identity_basis,
        "expression": face.expression_basis,
        "albedo": face.albedo_basis,
        "static": detail.static_basis,
        "compressed": detail.com_basis,
        "stretched": detail.str_basis,
    }
    return {
        k: (None if b.total_variance is None else float(b.total_variance))
        for k, b in pairs.items()
    }


def save_bundle(bundle: ModelBundle, path) -> Path:
    """Write manifest.json and one .f64 raw file per array; returns path."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = _bundle_arrays(bundle)
    manifest = dict(bundle.manifest)
    manifest["arrays"] = {
        name: list(np.asarray(a).shape) for name, a in sorted(arrays.items())
    }
    manifest["total_variance"] = _total_variances(bundle)
    for name, arr in arrays.items():
        data = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        (path / f"{name}.f64").write_bytes(data.tobytes())
    (path / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return path


def _read_array(path: Path, name: str, shape) -> np.ndarray:
    file = path / f"{name}.f64"
    if not file.exists():
        raise ValidationError(f"bundle is missing array file {file.name}")
    raw = np.frombuffer(file.read_bytes(), dtype="<f8")
    expected = int(np.prod(shape)) if shape else 1
    if raw.size != expected:
        raise ValidationError(
            f"array {name} has {raw.size} values, manifest says {expected}"
        )
    return raw.reshape(shape).astype(np.float64)


def load_bundle(path) -> ModelBundle:
    """Read a bundle directory written by save_bundle."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no manifest.json in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed manifest in {path}: {exc}")
    if manifest.get("format") != FORMAT_NAME:
        raise ValidationError("not a model bundle (bad format tag)")
    if int(manifest.get("version", -1)) != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported bundle version {manifest.get('version')}"
        )
    if manifest.get("topology") != TOPOLOGY_NAME:
        raise ValidationError(
            f"unknown topology '{manifest.get('topology')}'"
        )
    shapes = manifest.get("arrays")
    if not isinstance(shapes, dict):
        raise ValidationError("manifest lacks the array table")
    arrays = {name: _read_array(path, name, shape) for name, shape in shapes.items()}
    tv = manifest.get("total_variance", {})

    def basis(prefix, mean):
        return LinearBasis(
            mean=mean,
            components=arrays[f"{prefix}_components"],
            stdevs=arrays.get(f"{prefix}_stdevs"),
            total_variance=tv.get(prefix),
        )

    topo = face_patch_topology()
    shape_mean = arrays["shape_mean"]
    skinning = SkinningData(
        joint_names=tuple(manifest["joint_names"]),
        weights=arrays["skin_weights"],
        joint_bias=arrays["joint_bias"],
        joint_regressor=arrays["joint_regressor"],
    )
    face = FaceModel(
        topology=topo,
        shape_mean=shape_mean,
        identity_basis=basis("identity", shape_mean.ravel()),
        expression_basis=basis(
            "expression", np.zeros(arrays["expression_components"].shape[1])
        ),
        albedo_basis=basis("albedo", arrays["albedo_mean"]),
        albedo_resolution=int(manifest["albedo_resolution"]),
        skinning=skinning,
    )

    def layers(prefix):
        out = []
        i = 0
        while f"{prefix}_{i}_w" in arrays:
            out.append((arrays[f"{prefix}_{i}_w"], arrays[f"{prefix}_{i}_b"]))
            i += 1
        return tuple(out) if out else None

    detail = DetailModel(
        resolution=int(manifest["uv_resolution"]),
        static_basis=basis("static", arrays["static_mean"]),
        com_basis=basis("compressed", arrays["compressed_mean"]),
        str_basis=basis("stretched", arrays["stretched_mean"]),
        adain_weight=arrays["adain_weight"],
        adain_bias=arrays["adain_bias"],
        mlp_layers=layers("mlp"),
        age_layers=layers("age"),
    )
    return ModelBundle(face=face, detail=detail, manifest=manifest)


# ---------------------------------------------------------------------------
# coefficient files


def save_coefficients(coeffs: CoefficientSet, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(coeffs.to_dict(), sort_keys=True, indent=2) + "\n")
    return path


def load_coefficients(path) -> CoefficientSet:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read coefficients {path}: {exc}")
    if not isinstance(data, dict):
        raise ValidationError(f"coefficient file {path} must hold an object")
    return CoefficientSet.from_dict(data)
