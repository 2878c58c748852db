import numpy as np

import sddkit as sk
from sddkit.facepatch import (
    GRID,
    JOINT_NAMES,
    JOINT_REGIONS,
    N_LANDMARKS,
    dome_positions,
    face_patch_mesh,
    face_patch_topology,
)


def test_counts():
    topo = face_patch_topology()
    assert topo.n_vertices == GRID * GRID == 2304
    # full grid minus the two corner cut cells
    assert topo.n_triangles == 4418
    assert topo.n_landmarks == N_LANDMARKS == 669


def test_uv_covers_unit_square():
    topo = face_patch_topology()
    assert topo.uv.min() == 0.0 and topo.uv.max() == 1.0
    # grid spacing is uniform
    us = np.unique(topo.uv[:, 0])
    assert len(us) == GRID
    np.testing.assert_allclose(np.diff(us), 1.0 / (GRID - 1), atol=1e-12)


def test_landmark_bary_valid():
    topo = face_patch_topology()
    bary = topo.landmark_bary
    np.testing.assert_allclose(bary.sum(axis=1), 1.0, atol=1e-12)
    assert bary.min() >= -1e-12
    assert topo.landmark_tris.min() >= 0
    assert topo.landmark_tris.max() < topo.n_triangles


def test_landmarks_spread_over_triangles():
    # the golden-ratio lattice should not pile anchors onto few triangles
    topo = face_patch_topology()
    assert len(np.unique(topo.landmark_tris)) > N_LANDMARKS // 2


def test_regions_are_disjoint_feature_sets():
    topo = face_patch_topology()
    for name in ("eye-left", "eye-right", "mouth", "brow-left", "brow-right"):
        assert len(topo.region(name)) > 0
    left = set(topo.region("eye-left"))
    right = set(topo.region("eye-right"))
    assert not left & right
    frontal = set(topo.region("frontal-face"))
    assert left <= frontal and right <= frontal


def test_dome_geometry():
    topo = face_patch_topology()
    pos = dome_positions(topo.uv)
    assert pos.shape == (topo.n_vertices, 3)
    # paraboloid: highest near the center, corners exactly on the base plane
    assert pos[:, 2].max() > 0.5
    assert pos[:, 2].min() >= 0.0
    corners = (np.abs(pos[:, 0]) == 1.0) & (np.abs(pos[:, 1]) == 1.0)
    assert corners.sum() == 4
    np.testing.assert_allclose(pos[corners, 2], 0.0, atol=1e-12)


def test_mesh_valid_and_deterministic():
    a = face_patch_mesh()
    b = face_patch_mesh()
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.topology.triangles, b.topology.triangles)
    normals = sk.compute_normals(a)  # no degenerate triangles
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)


def test_skinning_weights_partition_unity():
    mesh = face_patch_mesh()
    weights, joints = sk.face_patch_skinning(mesh.positions, mesh.topology)
    assert weights.shape == (len(JOINT_NAMES), mesh.topology.n_vertices)
    assert joints.shape == (len(JOINT_NAMES), 3)
    np.testing.assert_allclose(weights.sum(axis=0), 1.0, atol=1e-12)
    assert weights.min() >= 0.0


def test_skinning_locality():
    mesh = face_patch_mesh()
    topo = mesh.topology
    weights, joints = sk.face_patch_skinning(mesh.positions, topo)
    # each joint dominates at its own region centroid
    for j, name in enumerate(JOINT_NAMES):
        region = topo.region(JOINT_REGIONS[name])
        centroid = mesh.positions[region].mean(axis=0)
        nearest = int(np.argmin(((mesh.positions - centroid) ** 2).sum(axis=1)))
        assert int(np.argmax(weights[:, nearest])) == j
