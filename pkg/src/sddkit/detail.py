"""Static/dynamic displacement detail pipeline.

The final displacement is a static map (identity-specific wrinkles,
synthesized from a linear basis) plus a dynamic map obtained by
blending compressed-state and stretched-state maps with a vertex
tension field rasterized into UV space. Dynamic coefficients come from
a small MLP driven by the static coefficients modulated toward the
expression's statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basisbuild import LinearBasis, reconstruct
from .errors import GeometryError, NumericalError, ValidationError
from .mesh import Mesh, compute_normals
from .morphable import CoefficientSet, FaceModel, regress_joints, skin, synthesize_shape
from .raster import rasterize_uv_claims
from .uvfield import UvField, sample_uv

_SIGMA_EPS = 1e-8


@dataclass(frozen=True)
class DetailModel:
    """Displacement bases plus the dynamic-coefficient network.

    The static, compressed and stretched bases all live on the same
    square UV grid (flattened single-channel fields). `adain_weight` /
    `adain_bias` form the affine map from expression coefficients to
    the modulation vector; `mlp_layers` are (W, b) pairs, two tanh
    hidden layers then a linear readout of length
    n_compressed + n_stretched.
    """

    resolution: int
    static_basis: LinearBasis = field(repr=False, default=None)
    com_basis: LinearBasis = field(repr=False, default=None)
    str_basis: LinearBasis = field(repr=False, default=None)
    adain_weight: np.ndarray = field(repr=False, default=None)
    adain_bias: np.ndarray = field(repr=False, default=None)
    mlp_layers: tuple = field(repr=False, default=None)
    age_layers: tuple = field(repr=False, default=None)

    def __post_init__(self):
        r = self.resolution
        for name in ("static_basis", "com_basis", "str_basis"):
            basis = getattr(self, name)
            if basis is None:
                raise ValidationError(f"{name} is required")
            if basis.dim != r * r:
                raise ValidationError(
                    f"{name} dimension {basis.dim} does not match {r}x{r} grid"
                )
        aw = np.ascontiguousarray(np.asarray(self.adain_weight, dtype=np.float64))
        ab = np.ascontiguousarray(np.asarray(self.adain_bias, dtype=np.float64))
        if aw.ndim != 2 or ab.shape != (aw.shape[0],) or aw.shape[0] < 2:
            raise ValidationError("modulation affine map has inconsistent shapes")
        layers = tuple(
            (
                np.ascontiguousarray(np.asarray(W, dtype=np.float64)),
                np.ascontiguousarray(np.asarray(b, dtype=np.float64)),
            )
            for W, b in self.mlp_layers
        )
        if layers[0][0].shape[1] != self.static_basis.n_components:
            raise ValidationError("MLP input width must match static dimension")
        n_out = layers[-1][0].shape[0]
        if n_out != self.com_basis.n_components + self.str_basis.n_components:
            raise ValidationError(
                "MLP output width must be n_compressed + n_stretched"
            )
        for W, b in layers:
            if b.shape != (W.shape[0],):
                raise ValidationError("MLP bias/weight shapes disagree")
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise ValidationError("MLP weights must be finite")
        age = None
        if self.age_layers is not None:
            age = tuple(
                (
                    np.ascontiguousarray(np.asarray(W, dtype=np.float64)),
                    np.ascontiguousarray(np.asarray(b, dtype=np.float64)),
                )
                for W, b in self.age_layers
            )
        for arr in (aw, ab):
            arr.flags.writeable = False
        object.__setattr__(self, "adain_weight", aw)
        object.__setattr__(self, "adain_bias", ab)
        object.__setattr__(self, "mlp_layers", layers)
        object.__setattr__(self, "age_layers", age)

    @property
    def n_static(self) -> int:
        return self.static_basis.n_components

    @property
    def n_compressed(self) -> int:
        return self.com_basis.n_components

    @property
    def n_stretched(self) -> int:
        return self.str_basis.n_components


@dataclass(frozen=True)
class TensionMap:
    """Per-vertex tension plus its UV rasterization."""

    per_vertex: np.ndarray = field(repr=False)
    uv_map: UvField = field(repr=False)


def mlp_forward(layers, x):
    """Tanh hidden layers, linear readout."""
    h = np.asarray(x, dtype=np.float64)
    for W, b in layers[:-1]:
        h = np.tanh(W @ h + b)
    W, b = layers[-1]
    return W @ h + b


def _grid_field(flat, resolution, kind):
    return UvField.from_array(
        np.asarray(flat, dtype=np.float64).reshape(resolution, resolution), kind=kind
    )


def age_probabilities(phi, detail_model: DetailModel):
    """Softmax age-bin probabilities (9 bins) from the head on phi."""
    if detail_model.age_layers is None:
        raise ValidationError("detail model has no age head")
    logits = mlp_forward(detail_model.age_layers, np.asarray(phi, dtype=np.float64))
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def static_displacement(phi, detail_model: DetailModel) -> UvField:
    """Static detail map: basis mean plus phi-weighted components."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (detail_model.n_static,):
        raise ValidationError(
            f"phi must have length {detail_model.n_static}, got {phi.shape}"
        )
    flat = reconstruct(detail_model.static_basis, phi)
    return _grid_field(flat, detail_model.resolution, "displacement")


def dynamic_coefficients(phi, xi, detail_model: DetailModel, standard_form=False):
    """Dynamic detail coefficients from static ones, modulated by expression.

    The static vector is normalized to the statistics of the affined
    expression vector and pushed through the MLP; the output splits
    into (compressed, stretched) coefficient vectors. By default the
    shift enters inside the scale (the form of record); standard_form
    applies scale-then-shift instead.
    """
    phi = np.asarray(phi, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    if phi.shape != (detail_model.n_static,):
        raise ValidationError(f"phi must have length {detail_model.n_static}")
    if xi.shape != (detail_model.adain_weight.shape[1],):
        raise ValidationError(
            f"xi must have length {detail_model.adain_weight.shape[1]}"
        )
    sigma_phi = float(np.std(phi))
    if sigma_phi <= _SIGMA_EPS:
        raise NumericalError(
            "static coefficients are (nearly) constant; cannot normalize"
        )
    affined = detail_model.adain_weight @ xi + detail_model.adain_bias
    mu_a = float(np.mean(affined))
    sigma_a = float(np.std(affined))
    normalized = (phi - np.mean(phi)) / sigma_phi
    if standard_form:
        z = sigma_a * normalized + mu_a
    else:
        z = sigma_a * (normalized + mu_a)
    out = mlp_forward(detail_model.mlp_layers, z)
    n_com = detail_model.n_compressed
    return out[:n_com], out[n_com:]


def polarized_displacements(phi_com, phi_str, detail_model: DetailModel):
    """Compressed-state and stretched-state displacement maps."""
    phi_com = np.asarray(phi_com, dtype=np.float64)
    phi_str = np.asarray(phi_str, dtype=np.float64)
    if phi_com.shape != (detail_model.n_compressed,):
        raise ValidationError(
            f"phi_com must have length {detail_model.n_compressed}"
        )
    if phi_str.shape != (detail_model.n_stretched,):
        raise ValidationError(
            f"phi_str must have length {detail_model.n_stretched}"
        )
    r = detail_model.resolution
    d_com = _grid_field(reconstruct(detail_model.com_basis, phi_com), r, "displacement")
    d_str = _grid_field(reconstruct(detail_model.str_basis, phi_str), r, "displacement")
    return d_com, d_str


def vertex_tension(expressed: Mesh, neutral: Mesh):
    """Per-vertex tension: 1 minus the mean expansion of incident edges.

    Positive values mean compression (edges shorter than neutral),
    negative values stretch; an unchanged neighborhood gives exactly 0.
    """
    if expressed.topology is not neutral.topology and not np.array_equal(
        expressed.topology.triangles, neutral.topology.triangles
    ):
        raise ValidationError("meshes must share one topology")
    edges = neutral.topology.edges
    e_neu = neutral.positions[edges[:, 1]] - neutral.positions[edges[:, 0]]
    e_exp = expressed.positions[edges[:, 1]] - expressed.positions[edges[:, 0]]
    len_neu = np.linalg.norm(e_neu, axis=1)
    len_exp = np.linalg.norm(e_exp, axis=1)
    bad = np.nonzero(len_neu <= 1e-12)[0]
    if bad.size:
        a, b = edges[bad[0]]
        raise GeometryError(
            f"neutral edge ({a}, {b}) has (near-)zero length; tension undefined"
        )
    ratio = len_exp / len_neu
    n_v = neutral.topology.n_vertices
    sums = np.zeros(n_v)
    counts = np.zeros(n_v)
    np.add.at(sums, edges[:, 0], ratio)
    np.add.at(sums, edges[:, 1], ratio)
    np.add.at(counts, edges[:, 0], 1.0)
    np.add.at(counts, edges[:, 1], 1.0)
    return 1.0 - sums / counts


def tension_uv_map(t, topology, resolution) -> UvField:
    """Rasterize per-vertex tension into UV space.

    Texels outside the chart stay 0. The chart must be injective:
    overlapping UV triangles raise a geometry error.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (topology.n_vertices,):
        raise ValidationError("tension length must equal vertex count")
    values, coverage, claims = rasterize_uv_claims(
        topology.uv, topology.triangles, t[:, None], resolution, resolution
    )
    if (claims > 1).any():
        raise GeometryError("UV triangles overlap; tension map is ambiguous")
    return UvField.from_array(values[:, :, 0] * coverage, kind="tension")


def _split_weights(m_uv: UvField, clamp: bool):
    m = m_uv.values[:, :, 0]
    if clamp:
        return np.clip(m, 0.0, 1.0), np.clip(-m, 0.0, 1.0)
    return np.maximum(m, 0.0), np.maximum(-m, 0.0)


def interpolate_dynamic(m_uv: UvField, d_com: UvField, d_str: UvField, clamp=True):
    """Blend polarized maps by tension sign.

    Compressed texels (positive tension) draw from d_com, stretched
    ones from d_str; at most one side is active per texel. With
    clamp=True (default) the blend weights saturate at 1.
    """
    if not (m_uv.same_resolution(d_com) and m_uv.same_resolution(d_str)):
        raise ValidationError("tension and displacement resolutions differ")
    w_pos, w_neg = _split_weights(m_uv, clamp)
    blended = w_pos * d_com.values[:, :, 0] + w_neg * d_str.values[:, :, 0]
    return UvField.from_array(blended, kind="displacement")


def compose_detail(d_sta: UvField, d_dyn: UvField) -> UvField:
    """Texel-wise sum of the static and dynamic maps."""
    if not d_sta.same_resolution(d_dyn):
        raise ValidationError("detail map resolutions differ")
    return UvField.from_array(
        d_sta.values[:, :, 0] + d_dyn.values[:, :, 0], kind="displacement"
    )


def apply_displacement(mesh: Mesh, displacement: UvField, scale=1.0) -> Mesh:
    """Offset vertices along their normals by the sampled displacement."""
    if mesh.normals is None:
        raise ValidationError("mesh has no normals; compute them first")
    if not scale > 0.0:
        raise ValidationError(f"scale must be positive, got {scale}")
    uv = mesh.topology.uv
    offsets = sample_uv(displacement, uv[:, 0], uv[:, 1])
    moved = mesh.positions + scale * np.asarray(offsets)[:, None] * mesh.normals
    return mesh.with_positions(moved)


@dataclass(frozen=True)
class DetailResult:
    """Everything produced by one detail-pipeline run."""

    displacement: UvField  # composed static + dynamic map
    mesh: Mesh  # detailed (and posed, if a pose was set) mesh
    neutral: Mesh
    expressed: Mesh
    coarse_posed: Mesh
    tension: TensionMap
    static_map: UvField
    dynamic_map: UvField
    com_map: UvField
    str_map: UvField
    phi_com: np.ndarray
    phi_str: np.ndarray


def run_sd_detail(
    coeffs: CoefficientSet,
    model: FaceModel,
    detail_model: DetailModel,
    standard_form=False,
    clamp=True,
    scale=1.0,
) -> DetailResult:
    """Run the full detail pipeline for one coefficient set.

    Chains shape synthesis, vertex tension, UV rasterization, static
    synthesis, dynamic coefficients, polarized maps, interpolation,
    composition and displacement; the detailed mesh is then posed.
    Displacement direction uses the expressed coarse mesh's normals.
    """
    neutral, expressed = synthesize_shape(coeffs.beta, coeffs.xi, model)
    t = vertex_tension(expressed, neutral)
    m_uv = tension_uv_map(t, model.topology, detail_model.resolution)
    d_sta = static_displacement(coeffs.phi, detail_model)
    phi_com, phi_str = dynamic_coefficients(
        coeffs.phi, coeffs.xi, detail_model, standard_form=standard_form
    )
    d_com, d_str = polarized_displacements(phi_com, phi_str, detail_model)
    d_dyn = interpolate_dynamic(m_uv, d_com, d_str, clamp=clamp)
    composed = compose_detail(d_sta, d_dyn)
    detailed = apply_displacement(expressed.with_normals(), composed, scale=scale)

    joints = regress_joints(coeffs.beta, model)
    posed = skin(detailed, coeffs.pose, joints, model.skinning.weights)
    coarse_posed = skin(expressed, coeffs.pose, joints, model.skinning.weights)
    return DetailResult(
        displacement=composed,
        mesh=posed,
        neutral=neutral,
        expressed=expressed,
        coarse_posed=coarse_posed,
        tension=TensionMap(per_vertex=t, uv_map=m_uv),
        static_map=d_sta,
        dynamic_map=d_dyn,
        com_map=d_com,
        str_map=d_str,
        phi_com=phi_com,
        phi_str=phi_str,
    )
