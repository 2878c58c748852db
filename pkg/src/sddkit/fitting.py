"""Coefficient fitting by damped gradient descent with line search.

The landmark term's gradient is computed analytically through shape
synthesis, skinning and projection; photographic and distillation
terms use central finite differences over a rotating coordinate
subset. A fixed diagonal damping matrix, estimated from the landmark
Jacobian at the start, equalizes the very different sensitivities of
shape coefficients and pose parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .detail import (
    age_probabilities,
    dynamic_coefficients,
    polarized_displacements,
    run_sd_detail,
    static_displacement,
)
from .errors import NumericalError, ValidationError
from .losses import (
    LossWeights,
    default_embedding,
    detail_loss,
    identity_loss,
    kd_loss,
    kl_coeff_loss,
    landmark_loss,
    photo_loss,
    reg_loss,
    total_loss,
    vertex_loss,
)
from .morphable import (
    CoefficientSet,
    Pose,
    regress_joints,
    rodrigues,
    rodrigues_derivative,
    skin,
    synthesize_albedo,
    synthesize_shape,
)
from .render import Camera, project_landmarks, render_coefficients
from .uvfield import load_field

BLOCK_NAMES = ("beta", "xi", "alpha", "gamma", "phi", "pose")


@dataclass(frozen=True)
class FitTarget:
    """Observed quantities a coefficient set is fitted against."""

    camera: Camera
    landmarks: np.ndarray = field(default=None, repr=False)  # (L, 2) pixels
    sigmas: np.ndarray = field(default=None, repr=False)  # (L,) > 0
    image: np.ndarray = field(default=None, repr=False)  # (H, W, 3) in [0, 1]
    mask: np.ndarray = field(default=None, repr=False)  # (H, W)
    truth: dict = field(default_factory=dict)
    age_probs: np.ndarray = field(default=None, repr=False)  # (9,)

    def __post_init__(self):
        if self.landmarks is not None:
            lm = np.ascontiguousarray(np.asarray(self.landmarks, dtype=np.float64))
            sg = np.asarray(self.sigmas, dtype=np.float64) if self.sigmas is not None else None
            if lm.ndim != 2 or lm.shape[1] != 2:
                raise ValidationError("landmarks must be (L, 2)")
            if sg is None or sg.shape != (lm.shape[0],):
                raise ValidationError("each landmark needs one uncertainty")
            if (sg <= 0).any():
                raise ValidationError("landmark uncertainties must be positive")
            sg = np.ascontiguousarray(sg)
            lm.flags.writeable = False
            sg.flags.writeable = False
            object.__setattr__(self, "landmarks", lm)
            object.__setattr__(self, "sigmas", sg)
        if self.image is not None:
            img = np.ascontiguousarray(np.asarray(self.image, dtype=np.float64))
            if img.ndim != 3 or img.shape[2] != 3:
                raise ValidationError("target image must be (H, W, 3)")
            if self.mask is None:
                raise ValidationError("target image requires a skin mask")
            msk = np.ascontiguousarray(np.asarray(self.mask, dtype=np.float64))
            if msk.ndim == 3:
                msk = np.ascontiguousarray(msk[:, :, 0])
            if msk.shape != img.shape[:2]:
                raise ValidationError("mask resolution must match the image")
            img.flags.writeable = False
            msk.flags.writeable = False
            object.__setattr__(self, "image", img)
            object.__setattr__(self, "mask", msk)
        if self.age_probs is not None:
            p = np.asarray(self.age_probs, dtype=np.float64)
            if p.shape != (9,) or abs(float(p.sum()) - 1.0) > 1e-6 or (p < 0).any():
                raise ValidationError("age probabilities must be 9 values summing to 1")
            p = np.ascontiguousarray(p)
            p.flags.writeable = False
            object.__setattr__(self, "age_probs", p)

    def has_any_term(self) -> bool:
        return (
            self.landmarks is not None
            or self.image is not None
            or bool(self.truth)
            or self.age_probs is not None
        )


@dataclass(frozen=True)
class FitOptions:
    """Optimizer knobs; defaults suit landmark-driven fits."""

    blocks: tuple = ("beta", "xi", "pose")
    max_iterations: int = 200
    initial_step: float = 1.0
    backtrack_factor: float = 0.5
    grow_factor: float = 1.5
    max_backtracks: int = 30
    grad_tol: float = 1e-8
    rel_tol: float = 1e-8
    armijo: float = 1e-4
    fd_step: float = 1e-4
    fd_coords: int = 8
    weights: LossWeights = field(default_factory=LossWeights)
    squared: bool = False
    standard_form: bool = False
    clamp_tension: bool = True
    jitter_seed: int = 0
    embedder: callable = None

    def __post_init__(self):
        bad = set(self.blocks) - set(BLOCK_NAMES)
        if bad:
            raise ValidationError(f"unknown coefficient blocks: {sorted(bad)}")
        if not self.blocks:
            raise ValidationError("at least one block must be optimized")


@dataclass(frozen=True)
class FitResult:
    coefficients: CoefficientSet
    trace: tuple  # rows of dicts, one per accepted step (plus the init row)
    stop_reason: str
    breakdown: dict


def effective_phi(phi, seed):
    """Static coefficients with deterministic jitter if (nearly) constant.

    The modulation stage cannot normalize a zero-variance vector; a
    seeded perturbation keeps zero-coefficient synthesis well-defined
    and reproducible.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.size >= 2 and float(np.std(phi)) <= 1e-8:
        rng = np.random.default_rng(seed)
        return phi + rng.normal(0.0, 1e-6, size=phi.shape)
    return phi


# ---------------------------------------------------------------------------
# block packing


def _block_value(coeffs: CoefficientSet, name: str):
    if name == "pose":
        return np.concatenate(
            [coeffs.pose.rotations.ravel(), coeffs.pose.translation]
        )
    return getattr(coeffs, name)


def _set_block(coeffs: CoefficientSet, name: str, value) -> CoefficientSet:
    value = np.asarray(value, dtype=np.float64)
    if name == "pose":
        j = coeffs.pose.n_joints
        pose = Pose(
            rotations=value[: 3 * j].reshape(j, 3), translation=value[3 * j :]
        )
        return coeffs.replace(pose=pose)
    return coeffs.replace(**{name: value})


def _block_dim(coeffs: CoefficientSet, name: str) -> int:
    return _block_value(coeffs, name).shape[0]


# ---------------------------------------------------------------------------
# analytic landmark derivatives


def landmark_jacobian(coeffs: CoefficientSet, model, camera: Camera):
    """Jacobian of projected landmarks w.r.t. beta, xi and pose.

    Returns {"beta": (L, 2, k_id), "xi": (L, 2, k_exp),
    "pose": (L, 2, 3j+3)} for the coarse posed mesh's anchors.
    """
    topo = model.topology
    if topo.landmark_tris is None or topo.n_landmarks == 0:
        raise ValidationError("topology has no landmark anchors")
    _, expressed = synthesize_shape(coeffs.beta, coeffs.xi, model)
    joints = regress_joints(coeffs.beta, model)
    j = model.skinning.n_joints
    if coeffs.pose.n_joints != j:
        raise ValidationError("pose joint count does not match the model")

    corners = topo.triangles[topo.landmark_tris]  # (L, 3)
    used, corner_u = np.unique(corners, return_inverse=True)
    corner_u = corner_u.reshape(corners.shape)
    n_u = used.shape[0]
    bary = topo.landmark_bary  # (L, 3)
    w_used = model.skinning.weights[:, used]  # (j, U)
    v_used = expressed.positions[used]  # (U, 3)

    R = np.stack([rodrigues(coeffs.pose.rotations[k]) for k in range(j)])
    Q = np.einsum("ku,kab->uab", w_used, R)  # (U, 3, 3)

    k_id = model.n_identity
    k_exp = model.n_expression
    bid = model.identity_basis.components.reshape(k_id, -1, 3)[:, used]
    bexp = model.expression_basis.components.reshape(k_exp, -1, 3)[:, used]
    jr = model.skinning.joint_regressor  # (k_id, j, 3)

    # d v'_u / d beta: skinned basis response plus joint motion
    dv_beta = np.einsum("uab,iub->iua", Q, bid)
    t_jk = np.einsum("kab,ikb->ika", np.eye(3)[None] - R, jr)  # (k_id, j, 3)
    dv_beta += np.einsum("ku,ika->iua", w_used, t_jk)
    dv_xi = np.einsum("uab,iub->iua", Q, bexp)

    # d v'_u / d pose: rotation derivatives, then translation
    dv_pose = np.zeros((3 * j + 3, n_u, 3))
    for k in range(j):
        lever = v_used - joints[k]  # (U, 3)
        for i in range(3):
            D = rodrigues_derivative(coeffs.pose.rotations[k], i)
            dv_pose[3 * k + i] = w_used[k][:, None] * (lever @ D.T)
    for c in range(3):
        dv_pose[3 * j + c, :, c] = 1.0

    def to_pixels(dv):
        dm = np.einsum("lc,ilca->ila", bary, dv[:, corner_u])  # (dim, L, 3)
        out = np.empty((dm.shape[1], 2, dm.shape[0]))
        out[:, 0, :] = camera.scale * dm[:, :, 0].T
        out[:, 1, :] = -camera.scale * dm[:, :, 1].T
        return out

    return {
        "beta": to_pixels(dv_beta),
        "xi": to_pixels(dv_xi),
        "pose": to_pixels(dv_pose),
    }


def _landmark_adjoint(projected, detected, sigmas):
    r = projected - detected
    d = np.linalg.norm(r, axis=1)
    adj = np.zeros_like(r)
    nz = d > 1e-12
    adj[nz] = r[nz] / (d[nz] * 2.0 * sigmas[nz] ** 2)[:, None]
    return adj


def landmark_gradient(coeffs: CoefficientSet, model, camera, detected, sigmas):
    """Analytic gradient of the raw landmark loss over beta, xi, pose."""
    posed = _posed_coarse(coeffs, model)
    projected = project_landmarks(posed, camera)
    adj = _landmark_adjoint(projected, np.asarray(detected, dtype=np.float64),
                            np.asarray(sigmas, dtype=np.float64))
    jac = landmark_jacobian(coeffs, model, camera)
    return {name: np.einsum("lc,lcj->j", adj, jac[name]) for name in jac}


def _posed_coarse(coeffs, model):
    _, expressed = synthesize_shape(coeffs.beta, coeffs.xi, model)
    joints = regress_joints(coeffs.beta, model)
    return skin(expressed, coeffs.pose, joints, model.skinning.weights)


def _softmax(v):
    z = np.asarray(v, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# loss evaluation


class _Evaluator:
    """Caches per-fit constants and computes weighted losses."""

    def __init__(self, bundle, target: FitTarget, options: FitOptions):
        self.bundle = bundle
        self.target = target
        self.options = options
        self.weights = options.weights
        self.embed = options.embedder or default_embedding
        face = bundle.face
        self.frontal = face.topology.region_mask("frontal-face").astype(np.float64)
        self._detail_mask = None
        self._target_embedding = None
        if target.image is not None:
            self._target_embedding = self.embed(target.image, target.mask)

    def detail_mask(self):
        if self._detail_mask is None:
            truth_mask = self.target.truth.get("detail_mask")
            if truth_mask is not None:
                self._detail_mask = truth_mask
            else:
                res = self.bundle.detail.resolution
                self._detail_mask = self.bundle.face.topology.raster_mask(
                    "detail-face", res, res
                )
        return self._detail_mask

    # individual raw terms -------------------------------------------------

    def landmark_term(self, coeffs):
        posed = _posed_coarse(coeffs, self.bundle.face)
        projected = project_landmarks(posed, self.target.camera)
        return landmark_loss(self.target.landmarks, self.target.sigmas, projected)

    def photo_terms(self, coeffs):
        opts = self.options
        phi = effective_phi(coeffs.phi, opts.jitter_seed)
        result = run_sd_detail(
            coeffs.replace(phi=phi),
            self.bundle.face,
            self.bundle.detail,
            standard_form=opts.standard_form,
            clamp=opts.clamp_tension,
        )
        albedo, _ = synthesize_albedo(coeffs.alpha, self.bundle.face)
        render, _ = render_coefficients(
            result.mesh, albedo, coeffs.gamma, self.target.camera
        )
        terms = {
            "photo": photo_loss(
                self.target.image, render.image, self.target.mask, squared=opts.squared
            )
        }
        rendered_embedding = self.embed(render.image, self.target.mask)
        terms["identity"] = identity_loss(self._target_embedding, rendered_embedding)
        return terms

    def detail_term(self, coeffs):
        opts = self.options
        phi = effective_phi(coeffs.phi, opts.jitter_seed)
        d_sta = static_displacement(phi, self.bundle.detail)
        phi_com, phi_str = dynamic_coefficients(
            phi, coeffs.xi, self.bundle.detail, standard_form=opts.standard_form
        )
        d_com, d_str = polarized_displacements(phi_com, phi_str, self.bundle.detail)
        pred = {"static": d_sta, "compressed": d_com, "stretched": d_str}
        return detail_loss(
            pred, self.target.truth, self.detail_mask(), squared=opts.squared
        )

    def kd_term(self, coeffs):
        student = age_probabilities(coeffs.phi, self.bundle.detail)
        return kd_loss(self.target.age_probs, student)

    def vertex_term(self, coeffs):
        _, expressed = synthesize_shape(coeffs.beta, coeffs.xi, self.bundle.face)
        mask = self.target.truth.get("vertex_mask", self.frontal)
        return vertex_loss(
            expressed.positions,
            self.target.truth["vertices"],
            mask,
            squared=self.options.squared,
        )

    # assembled totals ------------------------------------------------------

    def term_names(self):
        names = ["reg"]
        t = self.target
        if t.landmarks is not None:
            names.append("landmark")
        if t.image is not None:
            names.extend(("photo", "identity"))
        if "vertices" in t.truth:
            names.append("vertex")
        if "beta" in t.truth:
            names.append("kl")
        if all(k in t.truth for k in ("static", "compressed", "stretched")):
            names.append("detail")
        if t.age_probs is not None:
            names.append("kd")
        return names

    def evaluate(self, coeffs):
        terms = {"reg": reg_loss(coeffs)}
        names = self.term_names()
        if "landmark" in names:
            terms["landmark"] = self.landmark_term(coeffs)
        if "photo" in names:
            terms.update(self.photo_terms(coeffs))
        if "vertex" in names:
            terms["vertex"] = self.vertex_term(coeffs)
        if "kl" in names:
            terms["kl"] = kl_coeff_loss(coeffs.beta, self.target.truth["beta"])
        if "detail" in names:
            terms["detail"] = self.detail_term(coeffs)
        if "kd" in names:
            terms["kd"] = self.kd_term(coeffs)
        return total_loss(terms, self.weights)

    # gradient ---------------------------------------------------------------

    def fd_terms_for_block(self, block):
        names = self.term_names()
        out = []
        if "photo" in names:
            out.append("photo")  # photo probe also yields the identity term
        if "detail" in names and block in ("phi", "xi"):
            out.append("detail")
        if "kd" in names and block == "phi":
            out.append("kd")
        return out

    def fd_eval(self, coeffs, term_names):
        terms = {}
        if "photo" in term_names:
            terms.update(self.photo_terms(coeffs))
        if "detail" in term_names:
            terms["detail"] = self.detail_term(coeffs)
        if "kd" in term_names:
            terms["kd"] = self.kd_term(coeffs)
        return total_loss(terms, self.weights)[0]

    def gradient(self, coeffs, iteration):
        opts = self.options
        w = self.weights
        grads = {b: np.zeros(_block_dim(coeffs, b)) for b in opts.blocks}
        names = self.term_names()

        if "landmark" in names:
            lg = landmark_gradient(
                coeffs,
                self.bundle.face,
                self.target.camera,
                self.target.landmarks,
                self.target.sigmas,
            )
            scale = w.self_sup * w.lmk
            for b in ("beta", "xi", "pose"):
                if b in grads:
                    grads[b] += scale * lg[b]

        if "kl" in names and "beta" in grads:
            grads["beta"] += w.shp * (
                _softmax(coeffs.beta) - _softmax(self.target.truth["beta"])
            )

        if "vertex" in names:
            self._add_vertex_gradient(coeffs, grads)

        for b in ("beta", "xi", "alpha", "phi"):
            if b in grads:
                grads[b] += w.reg * 2.0 * _block_value(coeffs, b)

        for b in opts.blocks:
            fd_names = self.fd_terms_for_block(b)
            if not fd_names:
                continue
            dim = _block_dim(coeffs, b)
            n_probe = min(opts.fd_coords, dim)
            start = (iteration * n_probe) % dim
            coords = [(start + i) % dim for i in range(n_probe)]
            base = _block_value(coeffs, b)
            h = opts.fd_step
            for c in coords:
                up = base.copy()
                up[c] += h
                dn = base.copy()
                dn[c] -= h
                f_up = self.fd_eval(_set_block(coeffs, b, up), fd_names)
                f_dn = self.fd_eval(_set_block(coeffs, b, dn), fd_names)
                grads[b][c] += (f_up - f_dn) / (2.0 * h)
        return grads

    def _add_vertex_gradient(self, coeffs, grads):
        face = self.bundle.face
        _, expressed = synthesize_shape(coeffs.beta, coeffs.xi, face)
        truth = np.asarray(self.target.truth["vertices"], dtype=np.float64)
        mask = np.asarray(
            self.target.truth.get("vertex_mask", self.frontal), dtype=np.float64
        ).reshape(-1, 1)
        diff = (expressed.positions - truth) * mask * mask
        if self.options.squared:
            dl = 2.0 * diff
        else:
            norm = vertex_loss(
                expressed.positions, truth, mask[:, 0], squared=False
            )
            if norm <= 1e-15:
                return
            dl = diff / norm
        flat = dl.ravel()
        if "beta" in grads:
            grads["beta"] += self.weights.shp * (
                face.identity_basis.components @ flat
            )
        if "xi" in grads:
            grads["xi"] += self.weights.shp * (
                face.expression_basis.components @ flat
            )


def _damping_matrix(coeffs, bundle, target, options):
    """Fixed diagonal scaling from landmark Jacobian column norms."""
    scales = {}
    jac = None
    if target.landmarks is not None:
        jac = landmark_jacobian(coeffs, bundle.face, target.camera)
    for b in options.blocks:
        dim = _block_dim(coeffs, b)
        if jac is not None and b in jac:
            col = np.einsum("lcj,lcj->j", jac[b], jac[b])
            mu = 1e-3 * col.max() + 1e-12
            scales[b] = 1.0 / (col + mu)
            scales[b] /= scales[b].max()
        else:
            scales[b] = np.ones(dim)
    return scales


def fit_coefficients(target: FitTarget, bundle, init: CoefficientSet,
                     options: FitOptions = None) -> FitResult:
    """Minimize the weighted total loss over selected coefficient blocks.

    Damped gradient descent: the step direction is the gradient scaled
    by a fixed diagonal matrix, with backtracking line search (Armijo
    condition). The trace of accepted steps is monotone non-increasing.
    Stops on max iterations, small gradient, small relative decrease,
    or when no acceptable step remains.
    """
    options = options or FitOptions()
    if not target.has_any_term():
        raise ValidationError("fit target has no terms to fit against")
    ev = _Evaluator(bundle, target, options)
    loss, breakdown = ev.evaluate(init)
    if not np.isfinite(loss):
        raise NumericalError("loss is not finite at the initial coefficients")

    damping = _damping_matrix(init, bundle, target, options)
    coeffs = init
    trace = [_trace_row(0, loss, 0.0, breakdown)]
    step = options.initial_step
    stop = "max_iterations"

    for it in range(1, options.max_iterations + 1):
        grads = ev.gradient(coeffs, it - 1)
        direction = {b: -damping[b] * grads[b] for b in options.blocks}
        slope = sum(float(grads[b] @ direction[b]) for b in options.blocks)
        gnorm = np.sqrt(sum(float(grads[b] @ grads[b]) for b in options.blocks))
        if gnorm < options.grad_tol:
            stop = "gradient_norm"
            break
        if slope >= 0.0:
            stop = "no_descent_direction"
            break

        accepted = False
        s = step
        for _ in range(options.max_backtracks):
            cand = coeffs
            for b in options.blocks:
                cand = _set_block(
                    cand, b, _block_value(coeffs, b) + s * direction[b]
                )
            cand_loss, cand_breakdown = ev.evaluate(cand)
            if np.isfinite(cand_loss) and (
                cand_loss <= loss + options.armijo * s * slope
            ):
                accepted = True
                break
            s *= options.backtrack_factor
        if not accepted:
            stop = "no_acceptable_step"
            break

        prev = loss
        coeffs, loss, breakdown = cand, cand_loss, cand_breakdown
        step = s * options.grow_factor
        trace.append(_trace_row(it, loss, s, breakdown))
        if prev - loss < options.rel_tol * max(prev, 1e-30):
            stop = "converged"
            break

    return FitResult(
        coefficients=coeffs,
        trace=tuple(trace),
        stop_reason=stop,
        breakdown=breakdown,
    )


def _trace_row(iteration, loss, step, breakdown):
    row = {"iteration": iteration, "total": loss, "step": step}
    row.update({f"term_{k}": v for k, v in breakdown["terms"].items()})
    return row


# ---------------------------------------------------------------------------
# target/options files


def load_fit_target(path) -> FitTarget:
    """Read a fit target from JSON (field files resolved relative to it)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read fit target {path}: {exc}")
    if "camera" not in data:
        raise ValidationError("fit target must define a camera")
    cam = data["camera"]
    camera = Camera(
        scale=float(cam["scale"]),
        principal=tuple(cam.get("principal", (cam["width"] / 2, cam["height"] / 2))),
        width=int(cam["width"]),
        height=int(cam["height"]),
    )
    kwargs = {"camera": camera}
    if "landmarks" in data:
        kwargs["landmarks"] = np.asarray(data["landmarks"], dtype=np.float64)
        if "sigmas" not in data:
            raise ValidationError("fit target with landmarks needs sigmas")
        kwargs["sigmas"] = np.asarray(data["sigmas"], dtype=np.float64)
    base = path.parent

    def _field(name):
        return load_field(base / data[name])

    if "image" in data:
        kwargs["image"] = _field("image").values
        if "mask" not in data:
            raise ValidationError("fit target image requires a mask file")
        kwargs["mask"] = _field("mask").values[:, :, 0]
    truth = {}
    td = data.get("truth", {})
    if "beta" in td:
        truth["beta"] = np.asarray(td["beta"], dtype=np.float64)
    for key in ("static", "compressed", "stretched", "detail_mask"):
        if key in td:
            truth[key] = load_field(base / td[key])
    if "vertices" in td:
        from .objio import load_obj

        truth["vertices"] = load_obj(base / td["vertices"]).positions
    if truth:
        kwargs["truth"] = truth
    if "age_probs" in data:
        kwargs["age_probs"] = np.asarray(data["age_probs"], dtype=np.float64)
    return FitTarget(**kwargs)


def load_fit_options(path, weights_default: LossWeights = None) -> FitOptions:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read fit options {path}: {exc}")
    return fit_options_from_dict(data, weights_default)


def fit_options_from_dict(data: dict, weights_default: LossWeights = None) -> FitOptions:
    base = FitOptions(weights=weights_default or LossWeights())
    kwargs = {}
    for name in (
        "max_iterations",
        "initial_step",
        "backtrack_factor",
        "grow_factor",
        "max_backtracks",
        "grad_tol",
        "rel_tol",
        "armijo",
        "fd_step",
        "fd_coords",
        "jitter_seed",
    ):
        if name in data:
            kwargs[name] = type(getattr(base, name))(data[name])
    if "blocks" in data:
        kwargs["blocks"] = tuple(data["blocks"])
    for flag in ("squared", "standard_form", "clamp_tension"):
        if flag in data:
            kwargs[flag] = bool(data[flag])
    weights = base.weights
    if "weights" in data:
        merged = {
            "detail": weights.detail,
            "shp": weights.shp,
            "self_sup": weights.self_sup,
            "id": weights.id,
            "lmk": weights.lmk,
            "kd": weights.kd,
            "reg": weights.reg,
        }
        merged.update(data["weights"])
        weights = LossWeights.from_dict(merged)
    kwargs["weights"] = weights
    return replace(base, **kwargs)
