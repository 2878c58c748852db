"""Spherical-harmonics shading, orthographic projection, rasterization.

Shading happens in UV space: the albedo field is multiplied by the
radiance of the 9 band-0..2 real SH basis functions evaluated on a
UV-space normal map. Rendering projects the mesh orthographically and
fills triangles with a z-buffer (larger z is nearer the camera),
sampling the shaded texture bilinearly at interpolated UVs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .mesh import Mesh, Topology
from .raster import rasterize_attributes, rasterize_uv_attribute
from .uvfield import UvField, sample_uv

SH_BAND0 = 0.2820948
SH_BAND1 = 0.4886025
SH_BAND2_XY = 1.0925484  # also yz and xz
SH_BAND2_ZZ = 0.3153916
SH_BAND2_XXYY = 0.5462742


@dataclass(frozen=True)
class Lighting:
    """Nine spherical-harmonics radiance coefficients."""

    gamma: np.ndarray = field(repr=False)

    def __post_init__(self):
        g = np.ascontiguousarray(np.asarray(self.gamma, dtype=np.float64))
        if g.shape != (9,):
            raise ValidationError("lighting needs exactly 9 SH coefficients")
        if not np.isfinite(g).all():
            raise ValidationError("lighting coefficients must be finite")
        g.flags.writeable = False
        object.__setattr__(self, "gamma", g)


@dataclass(frozen=True)
class Camera:
    """Orthographic camera: pixels = scale * (x, -y) + principal point."""

    scale: float
    principal: tuple
    width: int
    height: int

    def __post_init__(self):
        if not self.scale > 0:
            raise ValidationError(f"camera scale must be positive, got {self.scale}")
        if self.width < 1 or self.height < 1:
            raise ValidationError("camera resolution must be at least 1x1")
        object.__setattr__(self, "principal", tuple(float(p) for p in self.principal))

    @classmethod
    def centered(cls, width, height, scale) -> "Camera":
        return cls(
            scale=scale, principal=(width / 2.0, height / 2.0), width=width, height=height
        )


def sh_basis(normal):
    """The 9 real SH basis values for unit normal(s), bands 0 to 2.

    Accepts a single 3-vector or an (..., 3) array; returns (..., 9)
    in the order 1, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2.
    """
    n = np.asarray(normal, dtype=np.float64)
    norms = np.linalg.norm(n, axis=-1)
    if np.abs(norms - 1.0).max() > 1e-6:
        raise ValidationError("sh_basis requires unit normals (within 1e-6)")
    x, y, z = n[..., 0], n[..., 1], n[..., 2]
    out = np.empty(n.shape[:-1] + (9,))
    out[..., 0] = SH_BAND0
    out[..., 1] = SH_BAND1 * y
    out[..., 2] = SH_BAND1 * z
    out[..., 3] = SH_BAND1 * x
    out[..., 4] = SH_BAND2_XY * x * y
    out[..., 5] = SH_BAND2_XY * y * z
    out[..., 6] = SH_BAND2_ZZ * (3.0 * z * z - 1.0)
    out[..., 7] = SH_BAND2_XY * x * z
    out[..., 8] = SH_BAND2_XXYY * (x * x - y * y)
    return out


def shade(albedo: UvField, normal_map: UvField, gamma) -> UvField:
    """Shaded texture: albedo times SH radiance of the normal map.

    No clamping is applied; callers clamp for display.
    """
    if not albedo.same_resolution(normal_map):
        raise ValidationError("albedo and normal map resolutions differ")
    if normal_map.channels != 3:
        raise ValidationError("normal map must have 3 channels")
    g = Lighting(gamma=np.asarray(gamma, dtype=np.float64)).gamma
    basis = sh_basis(normal_map.values)  # (H, W, 9)
    radiance = basis @ g
    return UvField.from_array(albedo.values * radiance[:, :, None], kind="texture")


def uv_normal_map(mesh: Mesh, resolution: int) -> UvField:
    """Rasterize per-vertex normals into UV space.

    Covered texels hold the renormalized barycentric normal; texels
    outside the chart get (0, 0, 1) so the whole field stays unit.
    """
    normals = mesh.normals
    if normals is None:
        normals = compute_normals_for(mesh)
    vals, cov = rasterize_uv_attribute(
        mesh.topology.uv, mesh.topology.triangles, normals, resolution, resolution
    )
    norms = np.linalg.norm(vals, axis=2)
    safe = (norms > 1e-12) & cov
    out = np.zeros_like(vals)
    out[safe] = vals[safe] / norms[safe][:, None]
    out[~safe] = (0.0, 0.0, 1.0)
    return UvField.from_array(out, kind="normals")


def compute_normals_for(mesh: Mesh):
    from .mesh import compute_normals

    return compute_normals(mesh)


def project_points(points, camera: Camera):
    """Orthographic projection; returns ((N, 2) pixels, (N,) depth).

    Larger depth is nearer the camera.
    """
    pts = np.asarray(points, dtype=np.float64)
    if not np.isfinite(pts).all():
        raise ValidationError("cannot project non-finite points")
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    pix = np.empty((pts.shape[0], 2))
    pix[:, 0] = camera.scale * pts[:, 0] + camera.principal[0]
    pix[:, 1] = -camera.scale * pts[:, 1] + camera.principal[1]
    depth = pts[:, 2].copy()
    if single:
        return pix[0], depth[0]
    return pix, depth


def landmark_positions(mesh: Mesh):
    """Barycentric 3D positions of the topology's landmark anchors."""
    topo = mesh.topology
    if topo.landmark_tris is None or topo.n_landmarks == 0:
        raise ValidationError("topology has no landmark anchors")
    corners = topo.triangles[topo.landmark_tris]  # (L, 3)
    pts = mesh.positions[corners]  # (L, 3, 3)
    return np.einsum("lc,lcd->ld", topo.landmark_bary, pts)


def project_landmarks(mesh: Mesh, camera: Camera):
    """2D pixel positions of all landmark anchors."""
    pix, _ = project_points(landmark_positions(mesh), camera)
    return pix


@dataclass(frozen=True)
class RenderResult:
    image: np.ndarray = field(repr=False)  # (H, W, 3) linear values
    depth: np.ndarray = field(repr=False)  # (H, W), -inf on background
    coverage: np.ndarray = field(repr=False)  # (H, W) bool
    uv: np.ndarray = field(repr=False)  # (H, W, 2) interpolated UVs


def rasterize(mesh: Mesh, texture: UvField, camera: Camera) -> RenderResult:
    """Z-buffered render of the mesh with a UV-mapped texture.

    Background pixels are 0. Depth ties keep the smaller triangle
    index; coverage depends only on the 2D projection, not depth.
    """
    pix, depth = project_points(mesh.positions, camera)
    uv_buf, cov, depth_buf, _ = rasterize_attributes(
        pix,
        mesh.topology.triangles,
        mesh.topology.uv,
        camera.width,
        camera.height,
        depths=depth,
    )
    image = np.zeros((camera.height, camera.width, 3))
    if cov.any():
        rows, cols = np.nonzero(cov)
        u = np.clip(uv_buf[rows, cols, 0], 0.0, 1.0)
        v = np.clip(uv_buf[rows, cols, 1], 0.0, 1.0)
        texels = sample_uv(texture, u, v)
        texels = np.asarray(texels)
        if texture.channels == 1:
            texels = texels[:, None].repeat(3, axis=1)
        image[rows, cols] = texels
    return RenderResult(image=image, depth=depth_buf, coverage=cov, uv=uv_buf)


def render_coefficients(mesh: Mesh, albedo: UvField, gamma, camera: Camera):
    """Shade the albedo under gamma and render the mesh with it."""
    nmap = uv_normal_map(mesh.with_normals(), albedo.width)
    texture = shade(albedo, nmap, gamma)
    return rasterize(mesh, texture, camera), texture


def write_png(image, path) -> None:
    """Write a linear [0,1] (H, W, 3) image as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(str(path))
