"""Built-in procedural face patch: a domed 48x48 vertex grid.

The patch is the default desk-scale geometry for the whole pipeline.
Grid vertex (column i, row j) sits at UV (i/47, j/47) with row 0 at the
top; positions span x, y in [-1, 1] with a convex paraboloid dome in z.
Named vertex regions mark eyes, brows, mouth, a frontal area, a detail
area for UV masking, plus head/neck cores used to place joints. A
fixed lattice of 669 barycentric landmark anchors covers the interior.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh, Topology

GRID = 48
N_LANDMARKS = 669
DOME_HEIGHT = 0.55

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

# inclusive (col_lo, col_hi, row_lo, row_hi) index boxes on the 48 grid
_REGION_BOXES = {
    "eye-left": (11, 18, 17, 21),
    "eye-right": (29, 36, 17, 21),
    "brow-left": (10, 19, 12, 15),
    "brow-right": (28, 37, 12, 15),
    "mouth": (15, 32, 31, 36),
    "head-core": (20, 27, 2, 9),
    "neck-base": (0, 47, 45, 47),
}

JOINT_NAMES = ("head", "neck", "eye-left", "eye-right")
JOINT_REGIONS = {
    "head": "head-core",
    "neck": "neck-base",
    "eye-left": "eye-left",
    "eye-right": "eye-right",
}


def _vertex_id(i, j):
    return j * GRID + i


def grid_uv():
    """(n_v, 2) UV coordinates of the grid vertices."""
    idx = np.arange(GRID, dtype=np.float64) / (GRID - 1)
    uu, vv = np.meshgrid(idx, idx, indexing="xy")
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def dome_positions(uv=None):
    """Map UVs onto the dome: x, y in [-1,1], z a convex paraboloid."""
    if uv is None:
        uv = grid_uv()
    x = 2.0 * (uv[:, 0] - 0.5)
    y = 2.0 * (0.5 - uv[:, 1])
    z = DOME_HEIGHT * (1.0 - 0.5 * (x * x + y * y))
    return np.stack([x, y, z], axis=1)


def _grid_triangles():
    tris = []
    for j in range(GRID - 1):
        for i in range(GRID - 1):
            tl = _vertex_id(i, j)
            tr = _vertex_id(i + 1, j)
            bl = _vertex_id(i, j + 1)
            br = _vertex_id(i + 1, j + 1)
            tris.append((tl, bl, br))
            tris.append((tl, br, tr))
    return np.asarray(tris, dtype=np.int64)


def _region_vertices():
    uv = grid_uv()
    regions = {}
    for name, (c0, c1, r0, r1) in _REGION_BOXES.items():
        ids = [
            _vertex_id(i, j)
            for j in range(r0, r1 + 1)
            for i in range(c0, c1 + 1)
        ]
        regions[name] = np.asarray(ids, dtype=np.int64)
    du = uv[:, 0] - 0.5
    dv = uv[:, 1] - 0.5
    rad2 = du * du + dv * dv
    regions["frontal-face"] = np.nonzero(rad2 <= 0.45 ** 2)[0].astype(np.int64)
    regions["detail-face"] = np.nonzero(rad2 <= 0.47 ** 2)[0].astype(np.int64)
    return regions


def _locate(u, v):
    """Containing triangle index and barycentric weights for interior (u, v)."""
    cells = GRID - 1
    cu = u * cells
    cv = v * cells
    ci = min(int(np.floor(cu)), cells - 1)
    cj = min(int(np.floor(cv)), cells - 1)
    fu = cu - ci
    fv = cv - cj
    base = 2 * (cj * cells + ci)
    if fv >= fu:  # lower-left triangle (tl, bl, br)
        return base, np.array([1.0 - fv, fv - fu, fu])
    return base + 1, np.array([1.0 - fu, fv, fu - fv])  # (tl, br, tr)


def _landmark_anchors():
    """669 anchors on a golden-ratio lattice over the patch interior."""
    tris = np.empty(N_LANDMARKS, dtype=np.int64)
    bary = np.empty((N_LANDMARKS, 3), dtype=np.float64)
    for n in range(N_LANDMARKS):
        u = 0.08 + 0.84 * ((n * _GOLDEN) % 1.0)
        v = 0.08 + 0.84 * ((n + 0.5) / N_LANDMARKS)
        tris[n], bary[n] = _locate(u, v)
    return tris, bary


def face_patch_topology() -> Topology:
    """Connectivity, UVs, regions and landmark anchors of the patch."""
    lm_tris, lm_bary = _landmark_anchors()
    return Topology(
        triangles=_grid_triangles(),
        uv=grid_uv(),
        landmark_tris=lm_tris,
        landmark_bary=lm_bary,
        vertex_regions=_region_vertices(),
    )


def face_patch_mesh(topology: Topology | None = None) -> Mesh:
    """The undeformed dome mesh."""
    topo = topology if topology is not None else face_patch_topology()
    return Mesh(topology=topo, positions=dome_positions(topo.uv))


def face_patch_skinning(positions, topology):
    """Soft skinning weights for the four patch joints.

    Weights fall off with squared distance from each joint's region
    centroid (wide support for head and neck, tight for the eyes) and
    are normalized per vertex.

    Returns (weights (4, n_v), joint positions (4, 3)).
    """
    radii = {"head": 1.1, "neck": 0.7, "eye-left": 0.25, "eye-right": 0.25}
    joints = np.stack(
        [
            positions[topology.region(JOINT_REGIONS[name])].mean(axis=0)
            for name in JOINT_NAMES
        ]
    )
    d2 = ((positions[None, :, :] - joints[:, None, :]) ** 2).sum(axis=2)
    sigma2 = np.array([radii[name] ** 2 for name in JOINT_NAMES])[:, None]
    w = np.exp(-d2 / sigma2)
    return w / w.sum(axis=0, keepdims=True), joints
