"""Linear bases by PCA, and the synthetic scan populations they fit.

The generator stands in for a capture rig: every population is a seeded
random combination of a fixed pattern library, so sample spans have
controlled rank and builds are reproducible bit for bit. PCA uses the
population covariance (divisor n) and, for wide data, the n x n Gram
matrix instead of the full covariance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .facepatch import dome_positions, face_patch_topology, grid_uv

SAMPLE_KINDS = ("shape", "albedo", "static-displacement", "compressed", "stretched")

_RANK_TOL = 1e-12


@dataclass(frozen=True)
class LinearBasis:
    """Mean vector plus orthonormal component rows.

    Parameters
    ----------
    mean : (m,) float array.
    components : (k, m) float array, rows orthonormal when PCA-built.
    stdevs : optional (k,) per-component standard deviations.
    total_variance : optional scalar, trace of the training covariance
        (lets callers report explained-variance fractions).
    """

    mean: np.ndarray = field(repr=False)
    components: np.ndarray = field(repr=False)
    stdevs: Optional[np.ndarray] = field(default=None, repr=False)
    total_variance: Optional[float] = None

    def __post_init__(self):
        mean = np.ascontiguousarray(np.asarray(self.mean, dtype=np.float64))
        comp = np.ascontiguousarray(np.asarray(self.components, dtype=np.float64))
        if mean.ndim != 1 or comp.ndim != 2 or comp.shape[1] != mean.shape[0]:
            raise ValidationError(
                f"basis shapes inconsistent: mean {mean.shape}, components {comp.shape}"
            )
        if not (np.isfinite(mean).all() and np.isfinite(comp).all()):
            raise ValidationError("basis contains non-finite values")
        sd = self.stdevs
        if sd is not None:
            sd = np.ascontiguousarray(np.asarray(sd, dtype=np.float64))
            if sd.shape != (comp.shape[0],):
                raise ValidationError("stdevs length must equal component count")
            if not np.isfinite(sd).all() or (sd < 0).any():
                raise ValidationError("stdevs must be finite and non-negative")
            sd.flags.writeable = False
        mean.flags.writeable = False
        comp.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "stdevs", sd)

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def explained_fraction(self):
        if self.stdevs is None or not self.total_variance:
            return None
        return float(np.sum(self.stdevs**2) / self.total_variance)


@dataclass(frozen=True)
class SampleSet:
    """A flat-vector training population with a kind tag."""

    samples: np.ndarray = field(repr=False)
    kind: str = "shape"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.samples, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] < 2:
            raise ValidationError("sample set needs >= 2 equal-length samples")
        if not np.isfinite(arr).all():
            raise ValidationError("samples contain non-finite values")
        if self.kind not in SAMPLE_KINDS:
            raise ValidationError(f"unknown sample kind '{self.kind}'")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


def _orthonormal_fill(rows, k, dim):
    """Extend `rows` to k orthonormal vectors using canonical directions."""
    out = list(rows)
    j = 0
    while len(out) < k:
        if j >= dim:
            raise ValidationError("cannot complete orthonormal basis")
        v = np.zeros(dim)
        v[j] = 1.0
        j += 1
        for r in out:
            v -= np.dot(r, v) * r
        norm = np.linalg.norm(v)
        if norm > 0.5:
            out.append(v / norm)
    return out


def _fix_signs(components):
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def pca_fit(samples, k) -> LinearBasis:
    """Top-k PCA of a sample population.

    Components are orthonormal rows sorted by decreasing eigenvalue of
    the population covariance (divisor n); each row's largest-magnitude
    entry is made positive. When the population is rank-deficient below
    k, a warning is issued and trailing components are deterministic
    orthonormal fillers with stdev 0.
    """
    X = samples.samples if isinstance(samples, SampleSet) else np.asarray(samples, dtype=np.float64)
    n, m = X.shape
    if not (1 <= k <= n - 1):
        raise ValidationError(f"k must be in [1, {n - 1}], got {k}")
    if k > m:
        raise ValidationError(f"k={k} exceeds sample dimension {m}")
    mean = X.mean(axis=0)
    Y = X - mean

    if m <= n:
        cov = (Y.T @ Y) / n
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals = evals[order]
        vecs = evecs[:, order].T  # rows
    else:
        gram = (Y @ Y.T) / n
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals = evals[order]
        vecs = None  # lifted lazily below
        gram_vecs = evecs[:, order]

    total_variance = float(np.clip(evals, 0.0, None).sum())
    tol = max(total_variance, 1.0) * _RANK_TOL
    rank = int(np.sum(evals > tol))
    n_good = min(k, rank)

    good_evals = np.clip(evals[:n_good], 0.0, None)
    if n_good == 0:
        rows = []
    elif m <= n:
        rows = list(vecs[:n_good])
    else:
        lifted = Y.T @ gram_vecs[:, :n_good]
        lifted /= np.sqrt(n * evals[:n_good])
        rows = list(lifted.T)

    if n_good < k:
        warnings.warn(
            f"sample covariance rank {rank} is below the requested {k} "
            "components; trailing components carry zero variance",
            stacklevel=2,
        )
        rows = _orthonormal_fill(rows, k, m)

    components = _fix_signs(np.asarray(rows))
    stdevs = np.sqrt(np.concatenate([good_evals, np.zeros(k - n_good)]))
    return LinearBasis(
        mean=mean,
        components=components,
        stdevs=stdevs,
        total_variance=total_variance,
    )


def project(basis: LinearBasis, x):
    """Coefficients of x in the basis: B(x - mean)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != basis.dim:
        raise ValidationError(
            f"expected vectors of length {basis.dim}, got {x.shape[-1]}"
        )
    return (x - basis.mean) @ basis.components.T


def reconstruct(basis: LinearBasis, coefficients):
    """Inverse of project on the span: mean + c B."""
    c = np.asarray(coefficients, dtype=np.float64)
    if c.shape[-1] != basis.n_components:
        raise ValidationError(
            f"expected {basis.n_components} coefficients, got {c.shape[-1]}"
        )
    return basis.mean + c @ basis.components


# ---------------------------------------------------------------------------
# synthetic scan generation


@dataclass(frozen=True)
class ScanConfig:
    """Counts, resolutions and amplitudes of the synthetic populations."""

    n_scans: int = 332
    uv_resolution: int = 256
    albedo_resolution: int = 128
    shape_amplitude: float = 0.08
    expression_amplitude: float = 0.12
    static_amplitude: tuple = (0.005, 0.05)  # wrinkle depth from young to old
    dynamic_amplitude: float = 0.03
    albedo_variation: float = 0.12
    n_shape_patterns: int = 280
    n_expression_patterns: int = 250
    n_albedo_patterns: int = 320
    n_static_patterns: int = 320
    n_dynamic_patterns: int = 40


# UV centers and extents of the expressive areas (brows, mouth)
_DYNAMIC_SITES = (
    (0.3085, 0.2872, 0.070, 0.035),
    (0.6915, 0.2872, 0.070, 0.035),
    (0.5000, 0.7128, 0.120, 0.050),
)


def _texel_uv(res):
    t = (np.arange(res) + 0.5) / res
    uu, vv = np.meshgrid(t, t, indexing="xy")
    return uu.ravel(), vv.ravel()


def _wave(u, v, freq, orient, phase):
    return np.sin(2.0 * np.pi * freq * (u * np.cos(orient) + v * np.sin(orient)) + phase)


def _gauss_window(u, v, cu, cv, su, sv):
    return np.exp(-0.5 * (((u - cu) / su) ** 2 + ((v - cv) / sv) ** 2))


def _pattern_weights(count, decay=0.8):
    return (1.0 + np.arange(count)) ** (-decay)


def _combine(rng, n, patterns, weights):
    g = rng.standard_normal((n, patterns.shape[0]))
    return (g * weights) @ patterns


def _uv_mask(topology, res):
    from .raster import rasterize_uv_attribute

    inside = topology.region_mask("detail-face")
    tris = topology.triangles
    keep = inside[tris].all(axis=1)
    ones = np.ones((topology.n_vertices, 1))
    vals, cov = rasterize_uv_attribute(topology.uv, tris[keep], ones, res, res)
    return (vals[:, :, 0] * cov).ravel()


def generate_scans(config: ScanConfig, seed: int):
    """Generate all six training populations, deterministically per seed.

    Returns a dict with keys identity, expression, albedo, static,
    compressed, stretched. Identity samples are absolute vertex
    positions; expression samples are vertex offsets; the rest are flat
    UV grids. Static samples record a per-scan age in [0, 1] whose
    wrinkle amplitude grows linearly between the configured bounds.
    """
    if config.n_scans < 2:
        raise ValidationError("n_scans must be at least 2")
    rng = np.random.default_rng(seed)
    topo = face_patch_topology()
    vert_uv = grid_uv()
    base = dome_positions(vert_uv)
    radial = base / np.linalg.norm(base, axis=1, keepdims=True)
    n = config.n_scans
    out = {}

    # identity: smooth low-frequency radial deformations of the dome
    pats = np.empty((config.n_shape_patterns, base.size))
    for p in range(config.n_shape_patterns):
        s = _wave(
            vert_uv[:, 0],
            vert_uv[:, 1],
            rng.uniform(0.3, 1.8),
            rng.uniform(0.0, np.pi),
            rng.uniform(0.0, 2.0 * np.pi),
        )
        pats[p] = (s[:, None] * radial).ravel()
    offsets = _combine(rng, n, pats, _pattern_weights(config.n_shape_patterns))
    offsets *= config.shape_amplitude
    out["identity"] = SampleSet(
        samples=base.ravel()[None, :] + offsets, kind="shape", meta={"seed": seed}
    )

    # expression: radial offsets windowed around brows and mouth
    pats = np.empty((config.n_expression_patterns, base.size))
    for p in range(config.n_expression_patterns):
        cu, cv, su, sv = _DYNAMIC_SITES[p % len(_DYNAMIC_SITES)]
        w = _gauss_window(vert_uv[:, 0], vert_uv[:, 1], cu, cv, 2.0 * su, 2.0 * sv)
        s = _wave(
            vert_uv[:, 0],
            vert_uv[:, 1],
            rng.uniform(0.5, 2.5),
            rng.uniform(0.0, np.pi),
            rng.uniform(0.0, 2.0 * np.pi),
        )
        pats[p] = ((w * s)[:, None] * radial).ravel()
    offsets = _combine(rng, n, pats, _pattern_weights(config.n_expression_patterns))
    out["expression"] = SampleSet(
        samples=offsets * config.expression_amplitude,
        kind="shape",
        meta={"seed": seed, "offsets": True},
    )

    # albedo: per-scan tone plus low-frequency color fields, in [0, 1]
    res_a = config.albedo_resolution
    ua, va = _texel_uv(res_a)
    pats = np.empty((config.n_albedo_patterns, ua.size * 3))
    for p in range(config.n_albedo_patterns):
        s = _wave(
            ua,
            va,
            rng.uniform(0.5, 3.0),
            rng.uniform(0.0, np.pi),
            rng.uniform(0.0, 2.0 * np.pi),
        )
        color = rng.uniform(-1.0, 1.0, size=3)
        color /= np.linalg.norm(color)
        pats[p] = np.outer(s, color).ravel()
    fields = _combine(rng, n, pats, _pattern_weights(config.n_albedo_patterns))
    tone = np.array([0.78, 0.60, 0.50])
    scale = 0.72 + 0.18 * rng.uniform(-1.0, 1.0, size=n)
    bases = np.tile(np.outer(scale, tone), (1, ua.size))
    albedo = np.clip(bases + config.albedo_variation * fields, 0.02, 0.98)
    out["albedo"] = SampleSet(samples=albedo, kind="albedo", meta={"seed": seed})

    # static displacement: band-limited wrinkle fields, amplitude by age
    res = config.uv_resolution
    u, v = _texel_uv(res)
    mask = _uv_mask(topo, res)
    pats = np.empty((config.n_static_patterns, u.size))
    for p in range(config.n_static_patterns):
        pats[p] = mask * _wave(
            u,
            v,
            rng.uniform(4.0, 12.0),
            rng.uniform(0.0, np.pi),
            rng.uniform(0.0, 2.0 * np.pi),
        )
    fields = _combine(rng, n, pats, _pattern_weights(config.n_static_patterns))
    ages = rng.uniform(0.0, 1.0, size=n)
    lo, hi = config.static_amplitude
    amp = lo + ages * (hi - lo)
    out["static"] = SampleSet(
        samples=fields * amp[:, None],
        kind="static-displacement",
        meta={"seed": seed, "ages": ages.tolist()},
    )

    # compressed/stretched: oriented ridges at the expressive sites,
    # sharing one pattern library with opposite phase
    pats = np.empty((config.n_dynamic_patterns, u.size))
    for p in range(config.n_dynamic_patterns):
        cu, cv, su, sv = _DYNAMIC_SITES[p % len(_DYNAMIC_SITES)]
        w = _gauss_window(u, v, cu, cv, su, sv)
        pats[p] = mask * w * _wave(
            u,
            v,
            rng.uniform(6.0, 16.0),
            rng.uniform(0.0, np.pi),
            rng.uniform(0.0, 2.0 * np.pi),
        )
    wts = _pattern_weights(config.n_dynamic_patterns)
    com = _combine(rng, n, pats, wts) * config.dynamic_amplitude
    stre = _combine(rng, n, -pats, wts) * config.dynamic_amplitude
    out["compressed"] = SampleSet(samples=com, kind="compressed", meta={"seed": seed})
    out["stretched"] = SampleSet(samples=stre, kind="stretched", meta={"seed": seed})
    return out
