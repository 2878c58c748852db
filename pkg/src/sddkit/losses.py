"""Loss terms for analysis-by-synthesis fitting.

All field/vertex/pixel losses are masked, unsquared L2 norms by
default (a squared variant is available behind a flag). Coefficient
distribution agreement uses KL divergence of softmaxed vectors;
identity agreement is one minus cosine similarity, so every term is
non-negative and zero on exact agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .uvfield import UvField

DETAIL_KEYS = ("static", "compressed", "stretched")


@dataclass(frozen=True)
class LossWeights:
    """Term weights of the total loss; defaults are the standard set."""

    detail: float = 10.0
    shp: float = 1.0
    self_sup: float = 1.0
    id: float = 0.1
    lmk: float = 0.5
    kd: float = 1.0
    reg: float = 1e-3

    def __post_init__(self):
        for name in ("detail", "shp", "self_sup", "id", "lmk", "kd", "reg"):
            if getattr(self, name) < 0:
                raise ValidationError(f"loss weight '{name}' must be >= 0")

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        base = cls()
        kwargs = {}
        for name in ("detail", "shp", "self_sup", "id", "lmk", "kd", "reg"):
            kwargs[name] = float(data.get(name, getattr(base, name)))
        return cls(**kwargs)


def _values(x):
    return x.values if isinstance(x, UvField) else np.asarray(x, dtype=np.float64)


def _masked_norm(diff, mask, squared):
    masked = diff * mask
    total = float(np.sum(masked * masked))
    return total if squared else float(np.sqrt(total))


def detail_loss(pred: dict, truth: dict, mask, squared=False) -> float:
    """Masked L2 over the static, compressed and stretched maps, summed."""
    m = _values(mask)
    if m.ndim == 3:
        m = m[:, :, 0]
    total = 0.0
    for key in DETAIL_KEYS:
        if key not in pred or key not in truth:
            raise ValidationError(f"detail_loss needs '{key}' in pred and truth")
        p = _values(pred[key])
        t = _values(truth[key])
        if p.shape != t.shape:
            raise ValidationError(f"detail map '{key}' shapes differ")
        if p.ndim == 3:
            p, t = p[:, :, 0], t[:, :, 0]
        if p.shape != m.shape:
            raise ValidationError("detail mask resolution differs from maps")
        total += _masked_norm(p - t, m, squared)
    return total


def vertex_loss(pred_positions, truth_positions, vertex_mask=None, squared=False):
    """Masked L2 over vertex positions."""
    p = np.asarray(pred_positions, dtype=np.float64)
    t = np.asarray(truth_positions, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError("vertex arrays must have equal shapes")
    if vertex_mask is None:
        mask = np.ones((p.shape[0], 1))
    else:
        mask = np.asarray(vertex_mask, dtype=np.float64).reshape(-1, 1)
        if mask.shape[0] != p.shape[0]:
            raise ValidationError("vertex mask length must equal vertex count")
    return _masked_norm(p - t, mask, squared)


def _log_softmax(v):
    z = v - v.max()
    return z - np.log(np.exp(z).sum())


def kl_coeff_loss(predicted, truth) -> float:
    """KL divergence of softmaxed coefficients, truth against predicted."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValidationError("coefficient vectors must have equal length")
    log_q = _log_softmax(p)
    log_p = _log_softmax(t)
    ref = np.exp(log_p)
    return float(np.sum(ref * (log_p - log_q)))


def photo_loss(image, rendered, mask, squared=False) -> float:
    """Masked L2 over image pixels."""
    i = np.asarray(image, dtype=np.float64)
    r = np.asarray(rendered, dtype=np.float64)
    if i.shape != r.shape:
        raise ValidationError("image shapes differ")
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 2:
        m = m[:, :, None]
    if m.shape[:2] != i.shape[:2]:
        raise ValidationError("mask resolution differs from image")
    return _masked_norm(i - r, m, squared)


def identity_loss(embedding_a, embedding_b) -> float:
    """One minus cosine similarity of two embeddings."""
    a = np.asarray(embedding_a, dtype=np.float64).ravel()
    b = np.asarray(embedding_b, dtype=np.float64).ravel()
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= 0.0 or nb <= 0.0:
        raise ValidationError("identity embeddings must have nonzero norm")
    return float(1.0 - (a @ b) / (na * nb))


def default_embedding(image, mask):
    """Deterministic stand-in for a face-recognition feature vector.

    16x16 average-pooled grayscale of the masked image, flattened and
    mean-centered. Swap in a real embedder via the identity_loss API.
    """
    i = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 3:
        m = m[:, :, 0]
    gray = i.mean(axis=2) * m
    h, w = gray.shape
    ys = np.linspace(0, h, 17).astype(int)
    xs = np.linspace(0, w, 17).astype(int)
    pooled = np.empty((16, 16))
    for r in range(16):
        for c in range(16):
            block = gray[ys[r] : max(ys[r + 1], ys[r] + 1), xs[c] : max(xs[c + 1], xs[c] + 1)]
            pooled[r, c] = block.mean()
    flat = pooled.ravel()
    return flat - flat.mean()


def landmark_loss(detected, sigmas, projected) -> float:
    """Sum of landmark distances, each scaled by 1 / (2 sigma^2)."""
    d = np.asarray(detected, dtype=np.float64)
    p = np.asarray(projected, dtype=np.float64)
    s = np.asarray(sigmas, dtype=np.float64)
    if d.shape != p.shape or d.ndim != 2 or d.shape[1] != 2:
        raise ValidationError("landmark arrays must be matching (L, 2)")
    if s.shape != (d.shape[0],):
        raise ValidationError("sigma count must match landmark count")
    if (s <= 0).any():
        raise ValidationError("landmark sigmas must be positive")
    dist = np.linalg.norm(d - p, axis=1)
    return float(np.sum(dist / (2.0 * s * s)))


def kd_loss(teacher_probs, student_probs) -> float:
    """KL divergence between teacher and student age-bin distributions."""
    t = np.asarray(teacher_probs, dtype=np.float64)
    s = np.asarray(student_probs, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 1:
        raise ValidationError("probability vectors must have equal length")
    for name, v in (("teacher", t), ("student", s)):
        if (v < 0).any() or abs(float(v.sum()) - 1.0) > 1e-6:
            raise ValidationError(f"{name} probabilities must be normalized")
    active = t > 0
    if (s[active] <= 0).any():
        raise ValidationError("student assigns zero mass where teacher does not")
    out = np.zeros_like(t)
    out[active] = t[active] * (np.log(t[active]) - np.log(s[active]))
    return float(out.sum())


def reg_loss(coeffs) -> float:
    """Sum of squared norms of all regularized coefficient vectors."""
    total = 0.0
    for v in (coeffs.alpha, coeffs.beta, coeffs.xi, coeffs.phi):
        total += float(v @ v)
    for v in (coeffs.phi_com, coeffs.phi_str):
        if v is not None:
            total += float(v @ v)
    return total


TERM_NAMES = ("detail", "vertex", "kl", "photo", "identity", "landmark", "kd", "reg")


def total_loss(terms: dict, weights: LossWeights):
    """Weighted total plus an exact per-term breakdown.

    `terms` maps term names (see TERM_NAMES) to raw scalars; missing
    terms contribute 0 and are listed under "missing". The "terms"
    entries of the breakdown are the weighted contributions and sum to
    the returned total exactly.
    """
    unknown = set(terms) - set(TERM_NAMES)
    if unknown:
        raise ValidationError(f"unknown loss terms: {sorted(unknown)}")
    raw = {name: float(terms.get(name, 0.0)) for name in TERM_NAMES}
    w = weights
    contributions = {
        "detail": w.detail * raw["detail"],
        "vertex": w.shp * raw["vertex"],
        "kl": w.shp * raw["kl"],
        "photo": w.self_sup * raw["photo"],
        "identity": w.self_sup * w.id * raw["identity"],
        "landmark": w.self_sup * w.lmk * raw["landmark"],
        "kd": w.kd * raw["kd"],
        "reg": w.reg * raw["reg"],
    }
    total = 0.0
    for name in TERM_NAMES:
        total += contributions[name]
    breakdown = {
        "total": total,
        "terms": contributions,
        "raw": raw,
        "missing": [name for name in TERM_NAMES if name not in terms],
    }
    return total, breakdown
