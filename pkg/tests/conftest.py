import numpy as np
import pytest

import sddkit as sk


@pytest.fixture(scope="session")
def bundle():
    """Small but fully functional model bundle shared by the whole suite."""
    config = sk.ScanConfig(n_scans=48, uv_resolution=64, albedo_resolution=32)
    dims = sk.BasisDims(
        identity=12, expression=10, albedo=8, static=20, compressed=6, stretched=6
    )
    return sk.build_bundle(config, dims, seed=0)


@pytest.fixture(scope="session")
def bundle_dir(bundle, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "bundle"
    sk.save_bundle(bundle, path)
    return path


@pytest.fixture(scope="session")
def camera():
    return sk.Camera.centered(128, 128, 50.0)


def make_coefficients(bundle, seed, pose_sigma=0.15, trans_sigma=0.05):
    """Random but plausible coefficients scaled by each basis's stdevs."""
    rng = np.random.default_rng(seed)
    face, detail = bundle.face, bundle.detail

    def draw(basis, scale=0.5):
        return rng.normal(0.0, 1.0, basis.n_components) * basis.stdevs * scale

    return sk.CoefficientSet(
        beta=draw(face.identity_basis),
        xi=draw(face.expression_basis),
        alpha=draw(face.albedo_basis),
        gamma=np.concatenate([[2.5], rng.normal(0.0, 0.2, 8)]),
        pose=sk.Pose(
            rotations=rng.normal(0.0, pose_sigma, (face.skinning.n_joints, 3)),
            translation=rng.normal(0.0, trans_sigma, 3),
        ),
        phi=draw(detail.static_basis),
    )


@pytest.fixture()
def make_coeffs(bundle):
    return lambda seed, **kw: make_coefficients(bundle, seed, **kw)
