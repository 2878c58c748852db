import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sddkit as sk
from sddkit.detail import (
    apply_displacement,
    compose_detail,
    interpolate_dynamic,
    mlp_forward,
    polarized_displacements,
    static_displacement,
)


def uniform_scale_mesh(bundle, s):
    topo = bundle.face.topology
    neutral = sk.Mesh(topology=topo, positions=bundle.face.shape_mean)
    scaled = sk.Mesh(topology=topo, positions=bundle.face.shape_mean * s)
    return neutral, scaled


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_tension_uniform_scale_exact(bundle, s):
    # scaling every edge by s makes every vertex tension exactly 1 - s
    neutral, scaled = uniform_scale_mesh(bundle, s)
    t = sk.vertex_tension(scaled, neutral)
    np.testing.assert_array_equal(t, np.full(t.shape, 1.0 - s))


def test_tension_sign_convention(bundle):
    neutral, compressed = uniform_scale_mesh(bundle, 0.9)
    _, stretched = uniform_scale_mesh(bundle, 1.1)
    assert sk.vertex_tension(compressed, neutral).min() > 0.0
    assert sk.vertex_tension(stretched, neutral).max() < 0.0


def test_tension_identical_meshes_zero(bundle):
    neutral, same = uniform_scale_mesh(bundle, 1.0)
    t = sk.vertex_tension(same, neutral)
    np.testing.assert_array_equal(t, np.zeros_like(t))


def test_tension_matches_naive_loop(bundle, make_coeffs):
    coeffs = make_coeffs(10)
    neutral, expressed = sk.synthesize_shape(coeffs.beta, coeffs.xi, bundle.face)
    t = sk.vertex_tension(expressed, neutral)

    topo = bundle.face.topology
    for vi in (0, 100, 1000, topo.n_vertices - 1):
        ratios = []
        for e in topo.vertex_edges[vi]:
            a, b = topo.edges[e]
            ln = np.linalg.norm(neutral.positions[b] - neutral.positions[a])
            le = np.linalg.norm(expressed.positions[b] - expressed.positions[a])
            ratios.append(le / ln)
        assert t[vi] == pytest.approx(1.0 - np.mean(ratios), abs=1e-12)


def test_tension_degenerate_edge(bundle):
    topo = bundle.face.topology
    pos = bundle.face.shape_mean.copy()
    a, b = topo.edges[0]
    pos[b] = pos[a]  # collapse one neutral edge
    neutral = sk.Mesh(topology=topo, positions=pos)
    expressed = sk.Mesh(topology=topo, positions=bundle.face.shape_mean)
    with pytest.raises(sk.GeometryError):
        sk.vertex_tension(expressed, neutral)


def test_tension_uv_map_outside_zero(bundle):
    topo = bundle.face.topology
    t = np.full(topo.n_vertices, 0.25)
    fld = sk.tension_uv_map(t, topo, 32)
    assert fld.kind == "tension"
    covered = fld.values != 0.0
    assert covered.any()
    # covered texels interpolate a constant exactly
    np.testing.assert_allclose(fld.values[covered], 0.25, atol=1e-12)


def test_static_displacement_linear(bundle):
    dm = bundle.detail
    phi = np.zeros(dm.n_static)
    base = static_displacement(phi, dm)
    np.testing.assert_allclose(
        base.values.ravel(), dm.static_basis.mean, atol=1e-15
    )
    phi[0] = 2.0
    moved = static_displacement(phi, dm)
    want = dm.static_basis.mean + 2.0 * dm.static_basis.components[0]
    np.testing.assert_allclose(moved.values.ravel(), want, atol=1e-12)


def test_mlp_forward_oracle():
    # one hidden layer done by hand
    W0 = np.array([[1.0, -1.0], [0.5, 0.5]])
    b0 = np.array([0.1, -0.2])
    W1 = np.array([[2.0, 3.0]])
    b1 = np.array([0.25])
    x = np.array([0.3, 0.7])
    got = mlp_forward([(W0, b0), (W1, b1)], x)
    h = np.tanh(W0 @ x + b0)
    want = W1 @ h + b1
    np.testing.assert_allclose(got, want, atol=1e-15)


def test_dynamic_coefficients_formula(bundle, make_coeffs):
    dm = bundle.detail
    coeffs = make_coeffs(11)
    phi, xi = coeffs.phi, coeffs.xi
    got_com, got_str = sk.dynamic_coefficients(phi, xi, dm)

    affined = dm.adain_weight @ xi + dm.adain_bias
    normalized = (phi - phi.mean()) / phi.std()
    z = affined.std() * (normalized + affined.mean())
    out = mlp_forward(dm.mlp_layers, z)
    np.testing.assert_allclose(got_com, out[: dm.n_compressed], atol=1e-12)
    np.testing.assert_allclose(got_str, out[dm.n_compressed :], atol=1e-12)


def test_dynamic_coefficients_standard_form(bundle, make_coeffs):
    dm = bundle.detail
    coeffs = make_coeffs(12)
    phi, xi = coeffs.phi, coeffs.xi
    got_com, got_str = sk.dynamic_coefficients(phi, xi, dm, standard_form=True)

    affined = dm.adain_weight @ xi + dm.adain_bias
    normalized = (phi - phi.mean()) / phi.std()
    z = affined.std() * normalized + affined.mean()
    out = mlp_forward(dm.mlp_layers, z)
    np.testing.assert_allclose(got_com, out[: dm.n_compressed], atol=1e-12)
    np.testing.assert_allclose(got_str, out[dm.n_compressed :], atol=1e-12)
    # the two forms genuinely differ whenever the affined mean is non-zero
    default_com, _ = sk.dynamic_coefficients(phi, xi, dm)
    assert not np.allclose(got_com, default_com)


def test_dynamic_coefficients_constant_phi_raises(bundle):
    dm = bundle.detail
    with pytest.raises(sk.NumericalError):
        sk.dynamic_coefficients(
            np.zeros(dm.n_static), np.zeros(dm.adain_weight.shape[1]), dm
        )
    with pytest.raises(sk.NumericalError):
        sk.dynamic_coefficients(
            np.full(dm.n_static, 3.7), np.zeros(dm.adain_weight.shape[1]), dm
        )


def test_interpolate_dynamic_selects_by_sign(bundle):
    r = 8
    m = sk.UvField.from_array(
        np.concatenate([np.full((4, r), 0.5), np.full((4, r), -0.5)]), kind="tension"
    )
    d_com = sk.UvField.constant(r, r, 2.0, kind="displacement")
    d_str = sk.UvField.constant(r, r, -3.0, kind="displacement")
    out = interpolate_dynamic(m, d_com, d_str)
    np.testing.assert_allclose(out.values[:4], 0.5 * 2.0)
    np.testing.assert_allclose(out.values[4:], 0.5 * -3.0)


def test_interpolate_dynamic_clamp(bundle):
    r = 4
    m = sk.UvField.constant(r, r, 2.5, kind="tension")  # beyond the clamp
    d_com = sk.UvField.constant(r, r, 1.0, kind="displacement")
    d_str = sk.UvField.constant(r, r, 1.0, kind="displacement")
    clamped = interpolate_dynamic(m, d_com, d_str, clamp=True)
    np.testing.assert_allclose(clamped.values, 1.0)
    raw = interpolate_dynamic(m, d_com, d_str, clamp=False)
    np.testing.assert_allclose(raw.values, 2.5)


def test_polarized_extremes_full_weight(bundle, make_coeffs):
    # tension saturated at +1 everywhere -> dynamic map equals d_com exactly
    dm = bundle.detail
    coeffs = make_coeffs(13)
    phi_com, phi_str = sk.dynamic_coefficients(coeffs.phi, coeffs.xi, dm)
    d_com, d_str = polarized_displacements(phi_com, phi_str, dm)
    r = dm.resolution
    plus = sk.UvField.constant(r, r, 1.0, kind="tension")
    minus = sk.UvField.constant(r, r, -1.0, kind="tension")
    np.testing.assert_array_equal(
        interpolate_dynamic(plus, d_com, d_str).values, d_com.values
    )
    np.testing.assert_array_equal(
        interpolate_dynamic(minus, d_com, d_str).values, d_str.values
    )


def test_compose_detail_is_sum(bundle):
    a = sk.UvField.constant(4, 4, 0.25, kind="displacement")
    b = sk.UvField.constant(4, 4, -0.75, kind="displacement")
    out = compose_detail(a, b)
    np.testing.assert_allclose(out.values, -0.5)
    with pytest.raises(sk.ValidationError):
        compose_detail(a, sk.UvField.constant(8, 8, 0.0))


def test_apply_displacement_along_normals(bundle):
    mesh = sk.Mesh(
        topology=bundle.face.topology, positions=bundle.face.shape_mean
    ).with_normals()
    d = sk.UvField.constant(16, 16, 0.01, kind="displacement")
    out = apply_displacement(mesh, d)
    np.testing.assert_allclose(
        out.positions, mesh.positions + 0.01 * mesh.normals, atol=1e-15
    )
    with pytest.raises(sk.ValidationError):
        apply_displacement(mesh, d, scale=0.0)
    bare = sk.Mesh(topology=bundle.face.topology, positions=bundle.face.shape_mean)
    with pytest.raises(sk.ValidationError):
        apply_displacement(bare, d)


def test_age_probabilities(bundle, make_coeffs):
    dm = bundle.detail
    p = sk.age_probabilities(make_coeffs(14).phi, dm)
    assert p.shape == (9,)
    assert p.min() > 0.0
    assert p.sum() == pytest.approx(1.0, abs=1e-12)


def test_run_sd_detail_neutral_expression_nullity(bundle, make_coeffs):
    # xi = 0: expressed == neutral bit-exact, tension exactly 0, dynamic map 0
    coeffs = make_coeffs(15).replace(xi=np.zeros(bundle.face.n_expression))
    res = sk.run_sd_detail(coeffs, bundle.face, bundle.detail)
    np.testing.assert_array_equal(res.expressed.positions, res.neutral.positions)
    np.testing.assert_array_equal(res.tension.per_vertex, 0.0)
    np.testing.assert_array_equal(res.dynamic_map.values, 0.0)
    np.testing.assert_array_equal(res.displacement.values, res.static_map.values)


def test_run_sd_detail_composition(bundle, make_coeffs):
    coeffs = make_coeffs(16)
    res = sk.run_sd_detail(coeffs, bundle.face, bundle.detail)
    np.testing.assert_array_equal(
        res.displacement.values, res.static_map.values + res.dynamic_map.values
    )
    assert res.phi_com.shape == (bundle.detail.n_compressed,)
    assert res.phi_str.shape == (bundle.detail.n_stretched,)
    # posing commutes through the result: coarse_posed is skin(expressed)
    assert res.coarse_posed.positions.shape == res.expressed.positions.shape


def test_run_sd_detail_zero_pose_keeps_mesh_unposed(bundle, make_coeffs):
    coeffs = make_coeffs(17).replace(
        pose=sk.Pose.identity(bundle.face.skinning.n_joints)
    )
    res = sk.run_sd_detail(coeffs, bundle.face, bundle.detail)
    np.testing.assert_array_equal(
        res.coarse_posed.positions, res.expressed.positions
    )


def test_tension_uv_overlap_raises(bundle):
    tri = np.array([[0, 1, 2], [0, 1, 2]])
    uv = np.array([[0.1, 0.1], [0.9, 0.1], [0.5, 0.9]])
    topo = sk.Topology(triangles=tri, uv=uv)
    with pytest.raises(sk.GeometryError):
        sk.tension_uv_map(np.zeros(3), topo, 16)
