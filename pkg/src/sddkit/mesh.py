"""Triangle meshes with per-vertex UVs, adjacency, regions, landmarks.

Topology (connectivity, UVs, regions, landmark anchors) is separated from
Mesh (positions + optional normals) so many meshes can share one topology.
Both are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import GeometryError, ValidationError
from .uvfield import UvField

DEGENERATE_AREA = 1e-12


def _build_edges(triangles, n_vertices):
    """Unique undirected edges and, per vertex, the incident edge indices."""
    tri = triangles
    pairs = np.concatenate(
        [tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=0
    )
    pairs = np.sort(pairs, axis=1)
    edges = np.unique(pairs, axis=0)
    vertex_edges = [[] for _ in range(n_vertices)]
    for e, (a, b) in enumerate(edges):
        vertex_edges[int(a)].append(e)
        vertex_edges[int(b)].append(e)
    return edges, vertex_edges


@dataclass(frozen=True)
class Topology:
    """Shared mesh connectivity.

    Parameters
    ----------
    triangles : (F, 3) int array
        Vertex indices, consistent winding.
    uv : (V, 2) float array
        Per-vertex UV in [0, 1] (v runs top to bottom, matching UvField).
    landmark_tris : (L,) int array
        Triangle index anchoring each landmark.
    landmark_bary : (L, 3) float array
        Barycentric weights per landmark; rows sum to 1.
    vertex_regions : dict[str, ndarray]
        Named vertex-index sets ("frontal-face", "detail-face",
        "eyebrow", "mouth", "left-eye", "right-eye", ...).

    Derived: `edges` (E, 2) with a < b, and `vertex_edges`, the incident
    edge indices per vertex. Every vertex must have at least one edge.
    """

    triangles: np.ndarray = field(repr=False)
    uv: np.ndarray = field(repr=False)
    landmark_tris: np.ndarray = field(repr=False, default=None)
    landmark_bary: np.ndarray = field(repr=False, default=None)
    vertex_regions: dict = field(default_factory=dict, repr=False)
    edges: np.ndarray = field(init=False, repr=False)
    vertex_edges: tuple = field(init=False, repr=False)

    def __post_init__(self):
        tri = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.intp))
        uv = np.asarray(self.uv, dtype=np.float64)
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise ValidationError(f"triangles must be (F, 3), got {tri.shape}")
        if uv.ndim != 2 or uv.shape[1] != 2:
            raise ValidationError(f"uv must be (V, 2), got {uv.shape}")
        n_v = uv.shape[0]
        if tri.size and (tri.min() < 0 or tri.max() >= n_v):
            raise ValidationError(
                f"triangle index out of range (vertex count {n_v})"
            )
        lt = self.landmark_tris
        lb = self.landmark_bary
        lt = np.zeros(0, dtype=np.intp) if lt is None else np.asarray(lt, dtype=np.intp)
        lb = (
            np.zeros((0, 3), dtype=np.float64)
            if lb is None
            else np.asarray(lb, dtype=np.float64)
        )
        if lt.shape[0] != lb.shape[0]:
            raise ValidationError("landmark_tris and landmark_bary length mismatch")
        if lt.size:
            if lt.min() < 0 or lt.max() >= tri.shape[0]:
                raise ValidationError("landmark anchor references invalid triangle")
            if np.max(np.abs(lb.sum(axis=1) - 1.0)) > 1e-9:
                raise ValidationError("landmark barycentric weights must sum to 1")
        edges, vertex_edges = _build_edges(tri, n_v)
        if any(len(v) == 0 for v in vertex_edges):
            orphan = next(i for i, v in enumerate(vertex_edges) if len(v) == 0)
            raise ValidationError(f"vertex {orphan} has no incident edge")
        for arr in (tri, uv, edges, lt, lb):
            arr.setflags(write=False)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "uv", uv)
        object.__setattr__(self, "landmark_tris", lt)
        object.__setattr__(self, "landmark_bary", lb)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(
            self, "vertex_edges", tuple(tuple(v) for v in vertex_edges)
        )

    @property
    def n_vertices(self) -> int:
        return self.uv.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_landmarks(self) -> int:
        return self.landmark_tris.shape[0]

    def region(self, name: str) -> np.ndarray:
        try:
            return self.vertex_regions[name]
        except KeyError:
            raise ValidationError(f"unknown region '{name}'") from None

    def region_mask(self, name: str) -> np.ndarray:
        """Boolean per-vertex mask for a named region."""
        m = np.zeros(self.n_vertices, dtype=bool)
        m[self.region(name)] = True
        return m

    def raster_mask(self, name: str, width: int, height: int) -> UvField:
        """Rasterize a vertex region into a UV-space 0/1 mask.

        A texel is inside when its center is covered by a triangle whose
        three vertices all belong to the region.
        """
        from .raster import rasterize_uv_attribute

        inside = self.region_mask(name)
        keep = inside[self.triangles].all(axis=1)
        tris = self.triangles[keep]
        ones = np.ones((self.n_vertices, 1))
        vals, cov = rasterize_uv_attribute(self.uv, tris, ones, width, height)
        out = np.where(cov[:, :, None], vals, 0.0)
        return UvField(width=width, height=height, channels=1, values=out, kind="mask")


@dataclass(frozen=True)
class Mesh:
    """Vertex positions (and optional unit normals) over a Topology."""

    topology: Topology
    positions: np.ndarray = field(repr=False)
    normals: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.shape != (self.topology.n_vertices, 3):
            raise ValidationError(
                f"positions shape {pos.shape} does not match vertex count "
                f"{self.topology.n_vertices}"
            )
        if not np.all(np.isfinite(pos)):
            raise ValidationError("positions contain non-finite values")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64)
            if nrm.shape != pos.shape:
                raise ValidationError("normals shape does not match positions")
            lengths = np.linalg.norm(nrm, axis=1)
            if np.max(np.abs(lengths - 1.0)) > 1e-6:
                raise ValidationError("stored normals must have unit norm")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def with_positions(self, positions) -> "Mesh":
        """Same topology, new positions; normals dropped (stale)."""
        return Mesh(topology=self.topology, positions=positions)

    def with_normals(self) -> "Mesh":
        """Copy with freshly computed per-vertex normals."""
        return Mesh(
            topology=self.topology,
            positions=self.positions,
            normals=compute_normals(self),
        )

    def bounding_box(self):
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(hi - lo))


def compute_normals(mesh: Mesh) -> np.ndarray:
    """Per-vertex unit normals: area-weighted mean of incident face normals.

    Deterministic for a given mesh. Raises GeometryError naming the first
    triangle whose area falls below the degeneracy threshold.
    """
    tri = mesh.topology.triangles
    pos = mesh.positions
    p0, p1, p2 = pos[tri[:, 0]], pos[tri[:, 1]], pos[tri[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)  # 2 * area * unit normal
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    bad = np.nonzero(areas <= DEGENERATE_AREA)[0]
    if bad.size:
        raise GeometryError(
            f"degenerate triangle {int(bad[0])} (area {areas[bad[0]]:.3e})"
        )
    acc = np.zeros_like(pos)
    np.add.at(acc, tri[:, 0], cross)
    np.add.at(acc, tri[:, 1], cross)
    np.add.at(acc, tri[:, 2], cross)
    norms = np.linalg.norm(acc, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise GeometryError(
            f"vertex {int(zero[0])}: incident face normals cancel exactly"
        )
    return acc / norms[:, None]
