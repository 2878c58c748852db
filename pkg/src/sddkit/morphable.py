"""Linear face model: coarse shape/albedo synthesis and blend skinning.

Shape and albedo are affine in their coefficients: mean plus
coefficient-weighted orthonormal components. Posing is linear blend
skinning over four independent joints, each rotating about its own
bind position, with one root translation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .basisbuild import LinearBasis
from .errors import ValidationError
from .mesh import Mesh, Topology
from .uvfield import UvField

_SMALL_ANGLE = 1e-8


@dataclass(frozen=True)
class SkinningData:
    """Joint weights and the affine joint regressor.

    Parameters
    ----------
    joint_names : tuple of str, length j.
    weights : (j, n_v) array, non-negative, per-vertex columns sum to 1.
    joint_bias : (j, 3) bind joints of the mean shape.
    joint_regressor : (k_id, j, 3) linear response of joints to identity
        coefficients: J(beta) = joint_bias + sum_i beta_i * regressor[i].
    """

    joint_names: tuple
    weights: np.ndarray = field(repr=False)
    joint_bias: np.ndarray = field(repr=False)
    joint_regressor: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        bias = np.ascontiguousarray(np.asarray(self.joint_bias, dtype=np.float64))
        reg = np.ascontiguousarray(np.asarray(self.joint_regressor, dtype=np.float64))
        j = len(self.joint_names)
        if w.ndim != 2 or w.shape[0] != j:
            raise ValidationError(f"weights must be ({j}, n_v)")
        if bias.shape != (j, 3):
            raise ValidationError(f"joint_bias must be ({j}, 3)")
        if reg.ndim != 3 or reg.shape[1:] != (j, 3):
            raise ValidationError(f"joint_regressor must be (k, {j}, 3)")
        if (w < 0).any():
            raise ValidationError("skinning weights must be non-negative")
        col = w.sum(axis=0)
        if np.abs(col - 1.0).max() > 1e-6:
            raise ValidationError("per-vertex skinning weights must sum to 1")
        for arr in (w, bias, reg):
            arr.flags.writeable = False
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "joint_bias", bias)
        object.__setattr__(self, "joint_regressor", reg)

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)


@dataclass(frozen=True)
class Pose:
    """Axis-angle rotation per joint plus a root translation."""

    rotations: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def __post_init__(self):
        rot = np.ascontiguousarray(np.asarray(self.rotations, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64))
        if rot.ndim != 2 or rot.shape[1] != 3:
            raise ValidationError("rotations must be (j, 3) axis-angle rows")
        if t.shape != (3,):
            raise ValidationError("translation must be a 3-vector")
        if not (np.isfinite(rot).all() and np.isfinite(t).all()):
            raise ValidationError("pose contains non-finite values")
        rot.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, n_joints: int) -> "Pose":
        return cls(rotations=np.zeros((n_joints, 3)), translation=np.zeros(3))

    @property
    def n_joints(self) -> int:
        return self.rotations.shape[0]


@dataclass(frozen=True)
class CoefficientSet:
    """All coefficients driving one face instance."""

    beta: np.ndarray = field(repr=False)  # identity
    xi: np.ndarray = field(repr=False)  # expression
    alpha: np.ndarray = field(repr=False)  # albedo
    gamma: np.ndarray = field(repr=False)  # 9 SH lighting values
    pose: Pose = None
    phi: np.ndarray = field(repr=False, default=None)  # static detail
    phi_com: Optional[np.ndarray] = field(default=None, repr=False)
    phi_str: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("beta", "xi", "alpha", "gamma", "phi"):
            v = getattr(self, name)
            if v is None:
                raise ValidationError(f"coefficient '{name}' is required")
            v = np.ascontiguousarray(np.asarray(v, dtype=np.float64))
            if v.ndim != 1 or not np.isfinite(v).all():
                raise ValidationError(f"coefficient '{name}' must be a finite vector")
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        if self.gamma.shape != (9,):
            raise ValidationError("gamma must hold 9 lighting values")
        if self.pose is None:
            raise ValidationError("pose is required")
        for name in ("phi_com", "phi_str"):
            v = getattr(self, name)
            if v is not None:
                v = np.ascontiguousarray(np.asarray(v, dtype=np.float64))
                if v.ndim != 1 or not np.isfinite(v).all():
                    raise ValidationError(f"coefficient '{name}' must be finite")
                v.flags.writeable = False
                object.__setattr__(self, name, v)

    def replace(self, **updates) -> "CoefficientSet":
        fields = {
            "beta": self.beta,
            "xi": self.xi,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "pose": self.pose,
            "phi": self.phi,
            "phi_com": self.phi_com,
            "phi_str": self.phi_str,
        }
        fields.update(updates)
        return CoefficientSet(**fields)

    def to_dict(self) -> dict:
        out = {
            "beta": self.beta.tolist(),
            "xi": self.xi.tolist(),
            "alpha": self.alpha.tolist(),
            "gamma": self.gamma.tolist(),
            "phi": self.phi.tolist(),
            "pose_rotations": self.pose.rotations.tolist(),
            "pose_translation": self.pose.translation.tolist(),
        }
        if self.phi_com is not None:
            out["phi_com"] = self.phi_com.tolist()
        if self.phi_str is not None:
            out["phi_str"] = self.phi_str.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CoefficientSet":
        try:
            pose = Pose(
                rotations=np.asarray(data["pose_rotations"], dtype=np.float64),
                translation=np.asarray(data["pose_translation"], dtype=np.float64),
            )
            return cls(
                beta=np.asarray(data["beta"], dtype=np.float64),
                xi=np.asarray(data["xi"], dtype=np.float64),
                alpha=np.asarray(data["alpha"], dtype=np.float64),
                gamma=np.asarray(data["gamma"], dtype=np.float64),
                pose=pose,
                phi=np.asarray(data["phi"], dtype=np.float64),
                phi_com=(
                    np.asarray(data["phi_com"], dtype=np.float64)
                    if "phi_com" in data
                    else None
                ),
                phi_str=(
                    np.asarray(data["phi_str"], dtype=np.float64)
                    if "phi_str" in data
                    else None
                ),
            )
        except KeyError as exc:
            raise ValidationError(f"coefficient file missing field {exc}")

    @classmethod
    def zeros(cls, model: "FaceModel", n_static: int) -> "CoefficientSet":
        return cls(
            beta=np.zeros(model.n_identity),
            xi=np.zeros(model.n_expression),
            alpha=np.zeros(model.n_albedo),
            gamma=np.zeros(9),
            pose=Pose.identity(model.skinning.n_joints),
            phi=np.zeros(n_static),
        )


@dataclass(frozen=True)
class FaceModel:
    """Coarse-model data: topology, shape/albedo bases, skinning."""

    topology: Topology
    shape_mean: np.ndarray = field(repr=False)  # (n_v, 3)
    identity_basis: LinearBasis = field(repr=False, default=None)
    expression_basis: LinearBasis = field(repr=False, default=None)
    albedo_basis: LinearBasis = field(repr=False, default=None)
    albedo_resolution: int = 0
    skinning: SkinningData = None

    def __post_init__(self):
        mean = np.ascontiguousarray(np.asarray(self.shape_mean, dtype=np.float64))
        n_v = self.topology.n_vertices
        if mean.shape != (n_v, 3):
            raise ValidationError(f"shape_mean must be ({n_v}, 3)")
        for name in ("identity_basis", "expression_basis", "albedo_basis"):
            if getattr(self, name) is None:
                raise ValidationError(f"{name} is required")
        if self.identity_basis.dim != 3 * n_v or self.expression_basis.dim != 3 * n_v:
            raise ValidationError("shape basis dimension must be 3 * n_v")
        r = self.albedo_resolution
        if self.albedo_basis.dim != 3 * r * r:
            raise ValidationError("albedo basis dimension must be 3 * res^2")
        if self.skinning is None or self.skinning.weights.shape[1] != n_v:
            raise ValidationError("skinning data missing or wrong vertex count")
        if self.skinning.joint_regressor.shape[0] != self.identity_basis.n_components:
            raise ValidationError("joint regressor must match identity dimension")
        mean.flags.writeable = False
        object.__setattr__(self, "shape_mean", mean)

    @property
    def n_identity(self) -> int:
        return self.identity_basis.n_components

    @property
    def n_expression(self) -> int:
        return self.expression_basis.n_components

    @property
    def n_albedo(self) -> int:
        return self.albedo_basis.n_components


def _check_len(name, v, expected):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (expected,):
        raise ValidationError(
            f"{name} must have length {expected}, got {v.shape}"
        )
    return v


def synthesize_shape(beta, xi, model: FaceModel):
    """Neutral and expressed coarse meshes for (beta, xi).

    Returns (neutral, expressed); both share the model topology. The
    expressed shape adds the expression components on top of the
    neutral one.
    """
    beta = _check_len("beta", beta, model.n_identity)
    xi = _check_len("xi", xi, model.n_expression)
    neutral = model.shape_mean.ravel() + beta @ model.identity_basis.components
    expressed = neutral + xi @ model.expression_basis.components
    n_v = model.topology.n_vertices
    return (
        Mesh(topology=model.topology, positions=neutral.reshape(n_v, 3)),
        Mesh(topology=model.topology, positions=expressed.reshape(n_v, 3)),
    )


def synthesize_albedo(alpha, model: FaceModel):
    """Albedo UV field for alpha, clamped to [0, 1].

    Returns (field, n_clamped) where n_clamped counts texel channels
    that hit the clamp.
    """
    alpha = _check_len("alpha", alpha, model.n_albedo)
    flat = model.albedo_basis.mean + alpha @ model.albedo_basis.components
    clamped = np.clip(flat, 0.0, 1.0)
    n_clamped = int(np.count_nonzero(clamped != flat))
    r = model.albedo_resolution
    field = UvField.from_array(clamped.reshape(r, r, 3), kind="albedo")
    return field, n_clamped


def regress_joints(beta, model: FaceModel):
    """Bind-pose joint positions (j, 3) for identity coefficients beta."""
    beta = _check_len("beta", beta, model.n_identity)
    skin_data = model.skinning
    return skin_data.joint_bias + np.einsum(
        "k,kjc->jc", beta, skin_data.joint_regressor
    )


def rodrigues(axis_angle):
    """Rotation matrix of an axis-angle vector (Rodrigues formula).

    Below 1e-8 radians the sin/cos factors are replaced by their
    second-order series, which is exact to double precision there.
    """
    w = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )
    if theta < _SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rodrigues_derivative(axis_angle, i):
    """d(rodrigues(w)) / d w_i, exact at w = 0.

    Uses the closed form d R = ((w_i [w]x + [w x ((I - R) e_i)]x) / |w|^2) R,
    which degenerates to the skew generator [e_i]x at the origin.
    """
    w = np.asarray(axis_angle, dtype=np.float64)
    theta2 = float(w @ w)
    e = np.zeros(3)
    e[i] = 1.0
    if theta2 < _SMALL_ANGLE**2:
        return _skew(e)
    R = rodrigues(w)
    v = w[i] * w + np.cross(w, (np.eye(3) - R) @ e)
    return (_skew(v) @ R) / theta2


def _skew(v):
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def skin(mesh: Mesh, pose: Pose, joints, weights) -> Mesh:
    """Pose a mesh by linear blend skinning.

    Each joint rotates about its own bind position; the root
    translation shifts everything. The identity pose returns the input
    positions unchanged.
    """
    joints = np.asarray(joints, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    j = joints.shape[0]
    if pose.n_joints != j or weights.shape != (j, mesh.topology.n_vertices):
        raise ValidationError("pose/joints/weights dimensions disagree")
    col = weights.sum(axis=0)
    if np.abs(col - 1.0).max() > 1e-6:
        raise ValidationError("per-vertex skinning weights must sum to 1")

    if not pose.rotations.any():
        return mesh.with_positions(mesh.positions + pose.translation)

    v = mesh.positions
    out = np.zeros_like(v)
    for k in range(j):
        R = rodrigues(pose.rotations[k])
        moved = (v - joints[k]) @ R.T + joints[k]
        out += weights[k][:, None] * moved
    return mesh.with_positions(out + pose.translation)
