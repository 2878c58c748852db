import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

import sddkit as sk
from sddkit.cli import main


def run_cli(args, env_model=None, monkeypatch=None):
    if monkeypatch is not None:
        if env_model is None:
            monkeypatch.delenv("SDDK_MODEL", raising=False)
        else:
            monkeypatch.setenv("SDDK_MODEL", str(env_model))
    return main(list(args))


def file_hash(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def cli_bundle_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "model"
    code = main(
        [
            "build-basis",
            "--output",
            str(out),
            "--scans",
            "24",
            "--uv-resolution",
            "32",
            "--albedo-resolution",
            "16",
            "--dim-identity",
            "8",
            "--dim-expression",
            "6",
            "--dim-albedo",
            "5",
            "--dim-static",
            "10",
            "--dim-compressed",
            "4",
            "--dim-stretched",
            "4",
        ]
    )
    assert code == 0
    return out


def test_build_basis_creates_loadable_bundle(cli_bundle_dir):
    bundle = sk.load_bundle(cli_bundle_dir)
    assert bundle.face.n_identity == 8
    assert bundle.detail.n_static == 10


def test_build_basis_deterministic(tmp_path, capsys):
    args = [
        "build-basis",
        "--scans",
        "12",
        "--uv-resolution",
        "16",
        "--albedo-resolution",
        "8",
        "--dim-identity",
        "4",
        "--dim-expression",
        "3",
        "--dim-albedo",
        "3",
        "--dim-static",
        "4",
        "--dim-compressed",
        "2",
        "--dim-stretched",
        "2",
    ]
    assert main(args + ["--output", str(tmp_path / "a")]) == 0
    assert main(args + ["--output", str(tmp_path / "b")]) == 0
    a_files = sorted((tmp_path / "a").iterdir())
    b_files = sorted((tmp_path / "b").iterdir())
    assert [f.name for f in a_files] == [f.name for f in b_files]
    for fa, fb in zip(a_files, b_files):
        assert fa.read_bytes() == fb.read_bytes(), fa.name


def test_synthesize_zero_coefficients(cli_bundle_dir, tmp_path, capsys):
    out = tmp_path / "zero"
    code = main(
        ["synthesize", "-m", str(cli_bundle_dir), "--out-dir", str(out), "--json"]
    )
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    # zero expression: tension is exactly 0 everywhere
    assert summary["tension_min"] == 0.0
    assert summary["tension_max"] == 0.0
    assert summary["phi_jittered"] is True
    for name in ("coarse.obj", "detailed.obj", "displacement.f32", "tension.f32"):
        assert (out / name).exists()
    # the coarse mesh is exactly the model mean
    bundle = sk.load_bundle(cli_bundle_dir)
    mesh = sk.load_obj(out / "coarse.obj")
    np.testing.assert_allclose(mesh.positions, bundle.face.shape_mean, atol=5e-7)


def test_synthesize_deterministic_across_runs_and_threads(
    cli_bundle_dir, tmp_path, capsys
):
    outs = []
    for name, threads in (("r1", "1"), ("r2", "1"), ("r4", "4")):
        out = tmp_path / name
        code = main(
            [
                "synthesize",
                "-m",
                str(cli_bundle_dir),
                "--out-dir",
                str(out),
                "--random",
                "--seed",
                "5",
                "--threads",
                threads,
                "--render",
            ]
        )
        assert code == 0
        outs.append(out)
    capsys.readouterr()
    names = sorted(f.name for f in outs[0].iterdir())
    for other in outs[1:]:
        assert sorted(f.name for f in other.iterdir()) == names
        for n in names:
            assert file_hash(outs[0] / n) == file_hash(other / n), n


def test_synthesize_random_seed_changes_output(cli_bundle_dir, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["synthesize", "-m", str(cli_bundle_dir), "--out-dir", str(a), "--random", "--seed", "1"])
    main(["synthesize", "-m", str(cli_bundle_dir), "--out-dir", str(b), "--random", "--seed", "2"])
    capsys.readouterr()
    assert file_hash(a / "coarse.obj") != file_hash(b / "coarse.obj")


def test_missing_model_is_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("SDDK_MODEL", raising=False)
    code = main(["synthesize", "--out-dir", str(tmp_path / "x")])
    capsys.readouterr()
    assert code == 2


def test_model_env_fallback(cli_bundle_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SDDK_MODEL", str(cli_bundle_dir))
    code = main(["synthesize", "--out-dir", str(tmp_path / "env")])
    capsys.readouterr()
    assert code == 0


def test_build_basis_bad_dims_is_usage_error(tmp_path, capsys):
    # more components than scans allow -> validation, exit 2
    code = main(
        [
            "build-basis",
            "--output",
            str(tmp_path / "x"),
            "--scans",
            "6",
            "--uv-resolution",
            "16",
            "--albedo-resolution",
            "8",
            "--dim-identity",
            "10",
        ]
    )
    capsys.readouterr()
    assert code == 2


def test_fit_bad_target_numerical_error(cli_bundle_dir, tmp_path, capsys):
    bundle = sk.load_bundle(cli_bundle_dir)
    n_lmk = bundle.face.topology.n_landmarks
    target = {
        "camera": {"scale": 50.0, "width": 128, "height": 128},
        "landmarks": [[1e308, 1e308]] * n_lmk,
        "sigmas": [1.0] * n_lmk,
    }
    tpath = tmp_path / "target.json"
    tpath.write_text(json.dumps(target))
    with np.errstate(over="ignore"):
        code = main(
            [
                "fit",
                "-m",
                str(cli_bundle_dir),
                "--target",
                str(tpath),
                "--output",
                str(tmp_path / "out.json"),
            ]
        )
    capsys.readouterr()
    assert code == 3


def test_fit_round_trip_smoke(cli_bundle_dir, tmp_path, capsys):
    # build a consistent landmark target from known coefficients, then fit
    bundle = sk.load_bundle(cli_bundle_dir)
    from sddkit.cli import _random_coefficients

    truth = _random_coefficients(bundle, seed=3)
    from sddkit.morphable import regress_joints

    _, expressed = sk.synthesize_shape(truth.beta, truth.xi, bundle.face)
    joints = regress_joints(truth.beta, bundle.face)
    posed = sk.skin(expressed, truth.pose, joints, bundle.face.skinning.weights)
    camera = sk.Camera.centered(128, 128, 51.2)
    detected = sk.project_landmarks(posed, camera)

    target = {
        "camera": {"scale": 51.2, "width": 128, "height": 128},
        "landmarks": detected.tolist(),
        "sigmas": [1.0] * detected.shape[0],
    }
    tpath = tmp_path / "target.json"
    tpath.write_text(json.dumps(target))

    out = tmp_path / "fitted.json"
    trace = tmp_path / "trace.csv"
    code = main(
        [
            "fit",
            "-m",
            str(cli_bundle_dir),
            "--target",
            str(tpath),
            "--output",
            str(out),
            "--trace",
            str(trace),
            "--max-iterations",
            "150",
            "--json",
        ]
    )
    summary = json.loads(capsys.readouterr().out)
    assert code == 0
    assert out.exists() and trace.exists()
    assert summary["final_loss"] < summary["initial_loss"]
    header = trace.read_text().splitlines()[0].split(",")
    assert header[:3] == ["iteration", "total", "step"]


def test_animate_modes(cli_bundle_dir, tmp_path, capsys):
    from sddkit.cli import _random_coefficients

    bundle = sk.load_bundle(cli_bundle_dir)
    source = _random_coefficients(bundle, seed=10)
    driver = _random_coefficients(bundle, seed=11)
    spath, dpath = tmp_path / "s.json", tmp_path / "d.json"
    sk.save_coefficients(source, spath)
    sk.save_coefficients(driver, dpath)

    for mode, expect_xi, expect_phi in (
        ("static", "source", "driver"),
        ("dynamic", "driver", "source"),
        ("both", "driver", "driver"),
    ):
        out = tmp_path / f"out-{mode}"
        code = main(
            [
                "animate",
                "-m",
                str(cli_bundle_dir),
                "--source",
                str(spath),
                "--driver",
                str(dpath),
                "--mode",
                mode,
                "--out-dir",
                str(out),
            ]
        )
        assert code == 0
        got = sk.load_coefficients(out / "coefficients.json")
        want_xi = source.xi if expect_xi == "source" else driver.xi
        want_phi = source.phi if expect_phi == "source" else driver.phi
        np.testing.assert_array_equal(got.xi, want_xi)
        np.testing.assert_array_equal(got.phi, want_phi)
        # identity always stays with the subject
        np.testing.assert_array_equal(got.beta, source.beta)
    capsys.readouterr()


def test_animate_static_transfer_keeps_static_map(cli_bundle_dir, tmp_path, capsys):
    # static mode: driver phi moves over, so the static map equals the
    # driver's own static map while the subject's shape stays put
    from sddkit.cli import _random_coefficients
    from sddkit.detail import static_displacement

    bundle = sk.load_bundle(cli_bundle_dir)
    source = _random_coefficients(bundle, seed=10)
    driver = _random_coefficients(bundle, seed=11)
    spath, dpath = tmp_path / "s.json", tmp_path / "d.json"
    sk.save_coefficients(source, spath)
    sk.save_coefficients(driver, dpath)
    out = tmp_path / "anim"
    code = main(
        [
            "animate",
            "-m",
            str(cli_bundle_dir),
            "--source",
            str(spath),
            "--driver",
            str(dpath),
            "--mode",
            "static",
            "--out-dir",
            str(out),
        ]
    )
    assert code == 0
    capsys.readouterr()
    got = sk.load_coefficients(out / "coefficients.json")
    want = static_displacement(driver.phi, bundle.detail)
    have = static_displacement(got.phi, bundle.detail)
    np.testing.assert_array_equal(have.values, want.values)
    # neutral shape is bit-identical to the subject's
    neu_src, _ = sk.synthesize_shape(source.beta, source.xi, bundle.face)
    neu_out, _ = sk.synthesize_shape(got.beta, got.xi, bundle.face)
    np.testing.assert_array_equal(neu_out.positions, neu_src.positions)


def test_tension_identical_meshes_zero(cli_bundle_dir, tmp_path, capsys):
    from sddkit.cli import _random_coefficients

    bundle = sk.load_bundle(cli_bundle_dir)
    coeffs = _random_coefficients(bundle, seed=12)
    cpath = tmp_path / "c.json"
    sk.save_coefficients(coeffs, cpath)
    csv = tmp_path / "t.csv"
    code = main(
        [
            "tension",
            "-m",
            str(cli_bundle_dir),
            str(cpath),
            str(cpath),
            "--csv",
            str(csv),
            "--json",
        ]
    )
    summary = json.loads(capsys.readouterr().out)
    assert code == 0
    assert summary["min"] == 0.0 and summary["max"] == 0.0
    rows = csv.read_text().splitlines()
    assert rows[0] == "vertex,tension"
    values = np.array([float(r.split(",")[1]) for r in rows[1:]])
    np.testing.assert_array_equal(values, 0.0)


def test_tension_accepts_obj_input(cli_bundle_dir, tmp_path, capsys):
    bundle = sk.load_bundle(cli_bundle_dir)
    mesh = sk.Mesh(topology=bundle.face.topology, positions=bundle.face.shape_mean)
    scaled = sk.Mesh(
        topology=bundle.face.topology, positions=bundle.face.shape_mean * 2.0
    )
    ref, de = tmp_path / "ref.obj", tmp_path / "def.obj"
    sk.save_obj(mesh, ref)
    sk.save_obj(scaled, de)
    code = main(
        [
            "tension",
            "-m",
            str(cli_bundle_dir),
            str(ref),
            str(de),
            "--json",
        ]
    )
    summary = json.loads(capsys.readouterr().out)
    assert code == 0
    # uniform doubling gives tension -1 (up to OBJ ascii quantization)
    assert summary["min"] == pytest.approx(-1.0, abs=1e-6)
    assert summary["max"] == pytest.approx(-1.0, abs=1e-6)


def test_render_writes_png(cli_bundle_dir, tmp_path, capsys):
    out = tmp_path / "face.png"
    code = main(
        [
            "render",
            "-m",
            str(cli_bundle_dir),
            "--random",
            "--seed",
            "4",
            "--output",
            str(out),
            "--width",
            "64",
            "--height",
            "64",
        ]
    )
    capsys.readouterr()
    assert code == 0
    assert out.exists()
    from PIL import Image

    img = np.asarray(Image.open(out))
    assert img.shape == (64, 64, 3)
    assert img.max() > 0  # something got drawn


def test_unknown_subcommand_exit_2():
    proc = subprocess.run(
        [sys.executable, "-m", "sddkit.cli", "frobnicate"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2


def test_module_entry_point(cli_bundle_dir, tmp_path):
    out = tmp_path / "sub"
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "sddkit.cli",
            "synthesize",
            "--out-dir",
            str(out),
            "--json",
        ],
        capture_output=True,
        text=True,
        env={"SDDK_MODEL": str(cli_bundle_dir), "PATH": "/usr/bin:/bin"},
    )
    assert proc.returncode == 0, proc.stderr
    summary = json.loads(proc.stdout)
    assert summary["tension_min"] == 0.0
