"""Command-line surface: basis building, synthesis, fitting, transfer.

One binary (`sddk`) with subcommands. Every command accepts --json for
a machine-readable summary on stdout, resolves the model bundle from
--model or the SDDK_MODEL environment variable, and is deterministic
for fixed inputs and seed. Exit codes: 0 success, 2 usage/validation
error, 3 numerical or geometric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .basisbuild import ScanConfig
from .bundle import (
    BasisDims,
    ModelBundle,
    build_bundle,
    load_bundle,
    load_coefficients,
    save_bundle,
    save_coefficients,
)
from .detail import run_sd_detail, tension_uv_map, vertex_tension
from .errors import GeometryError, NumericalError, ValidationError
from .fitting import (
    FitOptions,
    effective_phi,
    fit_coefficients,
    load_fit_options,
    load_fit_target,
)
from .mesh import Mesh
from .morphable import CoefficientSet, Pose, synthesize_albedo, synthesize_shape
from .objio import load_obj, save_obj
from .render import Camera, render_coefficients, write_png
from .uvfield import export_png16, save_field


def _model_path(args) -> str:
    path = getattr(args, "model", None) or os.environ.get("SDDK_MODEL")
    if not path:
        raise ValidationError(
            "no model bundle given: pass --model or set SDDK_MODEL"
        )
    return path


def _check_dims(coeffs: CoefficientSet, bundle: ModelBundle, label="coefficients"):
    face, detail = bundle.face, bundle.detail
    checks = (
        ("beta", coeffs.beta.shape[0], face.n_identity),
        ("xi", coeffs.xi.shape[0], face.n_expression),
        ("alpha", coeffs.alpha.shape[0], face.n_albedo),
        ("phi", coeffs.phi.shape[0], detail.n_static),
        ("pose joints", coeffs.pose.n_joints, face.skinning.n_joints),
    )
    for name, got, want in checks:
        if got != want:
            raise ValidationError(
                f"{label} do not match the bundle: {name} is {got}, expected {want}"
            )
    if coeffs.phi_com is not None and coeffs.phi_com.shape[0] != detail.n_compressed:
        raise ValidationError(f"{label} do not match the bundle: phi_com length")
    if coeffs.phi_str is not None and coeffs.phi_str.shape[0] != detail.n_stretched:
        raise ValidationError(f"{label} do not match the bundle: phi_str length")
    return coeffs


def _random_coefficients(bundle: ModelBundle, seed: int) -> CoefficientSet:
    """Plausible random coefficients, scaled by each basis's stdevs."""
    rng = np.random.default_rng([int(seed), 3])

    def draw(basis, scale=0.5):
        sd = basis.stdevs if basis.stdevs is not None else np.full(basis.n_components, 0.1)
        return rng.normal(0.0, 1.0, basis.n_components) * sd * scale

    face, detail = bundle.face, bundle.detail
    j = face.skinning.n_joints
    return CoefficientSet(
        beta=draw(face.identity_basis),
        xi=draw(face.expression_basis),
        alpha=draw(face.albedo_basis),
        gamma=np.concatenate([[2.5], rng.normal(0.0, 0.2, 8)]),
        pose=Pose(
            rotations=rng.normal(0.0, 0.05, (j, 3)), translation=np.zeros(3)
        ),
        phi=draw(detail.static_basis),
    )


def _coefficients_for(args, bundle: ModelBundle) -> CoefficientSet:
    if getattr(args, "coefficients", None):
        return _check_dims(load_coefficients(args.coefficients), bundle)
    if getattr(args, "random", False):
        return _random_coefficients(bundle, args.seed)
    return CoefficientSet.zeros(bundle.face, bundle.detail.n_static)


def _emit(args, summary: dict, lines) -> None:
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _default_camera(args) -> Camera:
    scale = args.camera_scale
    if scale is None:
        scale = 0.4 * min(args.width, args.height)
    return Camera.centered(args.width, args.height, scale)


def _write_detail_outputs(out_dir: Path, coeffs, result, bundle, args):
    """Shared output set for synthesize/animate; returns file map."""
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    save_obj(result.coarse_posed, out_dir / "coarse.obj")
    files["coarse"] = "coarse.obj"
    save_obj(result.mesh, out_dir / "detailed.obj")
    files["detailed"] = "detailed.obj"
    save_field(result.displacement, out_dir / "displacement.f32")
    files["displacement"] = "displacement.f32"
    save_field(result.tension.uv_map, out_dir / "tension.f32")
    files["tension"] = "tension.f32"
    out_coeffs = coeffs.replace(phi_com=result.phi_com, phi_str=result.phi_str)
    save_coefficients(out_coeffs, out_dir / "coefficients.json")
    files["coefficients"] = "coefficients.json"
    if args.render:
        camera = _default_camera(args)
        albedo, _ = synthesize_albedo(coeffs.alpha, bundle.face)
        rendered, _ = render_coefficients(result.mesh, albedo, coeffs.gamma, camera)
        write_png(rendered.image, out_dir / "render.png")
        files["render"] = "render.png"
    return files


# ---------------------------------------------------------------------------
# subcommands


def cmd_build_basis(args) -> int:
    config = ScanConfig(
        n_scans=args.scans,
        uv_resolution=args.uv_resolution,
        albedo_resolution=args.albedo_resolution,
    )
    dims = BasisDims(
        identity=args.dim_identity,
        expression=args.dim_expression,
        albedo=args.dim_albedo,
        static=args.dim_static,
        compressed=args.dim_compressed,
        stretched=args.dim_stretched,
    )
    bundle = build_bundle(config, dims, args.seed)
    out = save_bundle(bundle, args.output)
    variance = bundle.manifest["explained_variance"]
    summary = {
        "command": "build-basis",
        "output": str(out),
        "seed": args.seed,
        "n_scans": args.scans,
        "dims": bundle.manifest["dims"],
        "explained_variance": variance,
    }
    lines = [f"bundle written to {out}", "explained variance:"]
    for name, frac in variance.items():
        shown = "n/a" if frac is None else f"{frac:.6f}"
        lines.append(f"  {name:<12} {shown}")
    _emit(args, summary, lines)
    return 0


def cmd_synthesize(args) -> int:
    bundle = load_bundle(_model_path(args))
    coeffs = _coefficients_for(args, bundle)
    phi_eff = effective_phi(coeffs.phi, args.seed)
    jittered = phi_eff is not coeffs.phi
    result = run_sd_detail(
        coeffs.replace(phi=phi_eff),
        bundle.face,
        bundle.detail,
        standard_form=args.standard_form,
        clamp=not args.unclamped_tension,
    )
    out_dir = Path(args.out_dir)
    files = _write_detail_outputs(out_dir, coeffs, result, bundle, args)
    t = result.tension.per_vertex
    summary = {
        "command": "synthesize",
        "out_dir": str(out_dir),
        "files": files,
        "tension_min": float(t.min()),
        "tension_max": float(t.max()),
        "phi_jittered": jittered,
    }
    _emit(
        args,
        summary,
        [f"wrote {name} ({rel})" for name, rel in files.items()]
        + [f"tension range [{t.min():.6g}, {t.max():.6g}]"],
    )
    return 0


def _fit_options(args) -> FitOptions:
    options = load_fit_options(args.options) if args.options else FitOptions()
    overrides = {}
    if args.blocks:
        overrides["blocks"] = tuple(
            b.strip() for b in args.blocks.split(",") if b.strip()
        )
    if args.max_iterations is not None:
        overrides["max_iterations"] = args.max_iterations
    if args.squared:
        overrides["squared"] = True
    if args.standard_form:
        overrides["standard_form"] = True
    if args.unclamped_tension:
        overrides["clamp_tension"] = False
    return dataclasses.replace(options, **overrides) if overrides else options


def cmd_fit(args) -> int:
    bundle = load_bundle(_model_path(args))
    target = load_fit_target(args.target)
    options = _fit_options(args)
    if args.init:
        init = _check_dims(load_coefficients(args.init), bundle, "init coefficients")
    else:
        init = CoefficientSet.zeros(bundle.face, bundle.detail.n_static)
    result = fit_coefficients(target, bundle, init, options)
    save_coefficients(result.coefficients, args.output)
    if args.trace:
        _write_trace_csv(result.trace, args.trace)
    if args.render:
        coeffs = result.coefficients
        fitted = run_sd_detail(
            coeffs.replace(phi=effective_phi(coeffs.phi, options.jitter_seed)),
            bundle.face,
            bundle.detail,
            standard_form=options.standard_form,
            clamp=options.clamp_tension,
        )
        albedo, _ = synthesize_albedo(coeffs.alpha, bundle.face)
        rendered, _ = render_coefficients(
            fitted.mesh, albedo, coeffs.gamma, target.camera
        )
        write_png(rendered.image, args.render)
    summary = {
        "command": "fit",
        "output": str(args.output),
        "iterations": len(result.trace) - 1,
        "initial_loss": result.trace[0]["total"],
        "final_loss": result.trace[-1]["total"],
        "stop_reason": result.stop_reason,
        "blocks": list(options.blocks),
    }
    _emit(
        args,
        summary,
        [
            f"fit finished after {summary['iterations']} steps ({result.stop_reason})",
            f"loss {summary['initial_loss']:.6g} -> {summary['final_loss']:.6g}",
            f"coefficients written to {args.output}",
        ],
    )
    return 0


def _write_trace_csv(trace, path) -> None:
    keys = ["iteration", "total", "step"]
    extra = sorted(k for k in trace[0] if k not in keys)
    cols = keys + extra
    rows = [",".join(cols)]
    for row in trace:
        rows.append(
            ",".join(
                (
                    str(int(row[c]))
                    if c == "iteration"
                    else format(float(row[c]), ".17g")
                )
                for c in cols
            )
        )
    Path(path).write_text("\n".join(rows) + "\n")


_ANIMATE_BLOCKS = {"static": ("phi",), "dynamic": ("xi",), "both": ("phi", "xi")}


def cmd_animate(args) -> int:
    bundle = load_bundle(_model_path(args))
    source = _check_dims(load_coefficients(args.source), bundle, "source coefficients")
    driver = _check_dims(load_coefficients(args.driver), bundle, "driver coefficients")
    updates = {name: getattr(driver, name) for name in _ANIMATE_BLOCKS[args.mode]}
    # derived dynamic coefficients are recomputed below, never carried over
    transferred = source.replace(phi_com=None, phi_str=None, **updates)
    phi_eff = effective_phi(transferred.phi, args.seed)
    result = run_sd_detail(
        transferred.replace(phi=phi_eff),
        bundle.face,
        bundle.detail,
        standard_form=args.standard_form,
        clamp=not args.unclamped_tension,
    )
    out_dir = Path(args.out_dir)
    files = _write_detail_outputs(out_dir, transferred, result, bundle, args)
    summary = {
        "command": "animate",
        "mode": args.mode,
        "replaced": list(_ANIMATE_BLOCKS[args.mode]),
        "out_dir": str(out_dir),
        "files": files,
    }
    _emit(
        args,
        summary,
        [f"mode={args.mode}: replaced {', '.join(summary['replaced'])} from driver"]
        + [f"wrote {name} ({rel})" for name, rel in files.items()],
    )
    return 0


def _mesh_from_input(path, bundle: ModelBundle) -> Mesh:
    """A mesh on the bundle topology from a coefficients JSON or an OBJ."""
    path = Path(path)
    topo = bundle.face.topology
    if path.suffix.lower() == ".obj":
        loaded = load_obj(path)
        if loaded.topology.n_vertices != topo.n_vertices:
            raise ValidationError(
                f"{path} has {loaded.topology.n_vertices} vertices, "
                f"bundle topology has {topo.n_vertices}"
            )
        return Mesh(topology=topo, positions=loaded.positions)
    coeffs = _check_dims(load_coefficients(path), bundle)
    _, expressed = synthesize_shape(coeffs.beta, coeffs.xi, bundle.face)
    return expressed


def cmd_tension(args) -> int:
    bundle = load_bundle(_model_path(args))
    reference = _mesh_from_input(args.reference, bundle)
    deformed = _mesh_from_input(args.deformed, bundle)
    t = vertex_tension(deformed, reference)
    resolution = args.resolution or bundle.detail.resolution
    m_uv = tension_uv_map(t, bundle.face.topology, resolution)
    files = {}
    if args.csv:
        rows = ["vertex,tension"]
        rows += [f"{i},{format(v, '.17g')}" for i, v in enumerate(t)]
        Path(args.csv).write_text("\n".join(rows) + "\n")
        files["csv"] = str(args.csv)
    if args.field:
        save_field(m_uv, args.field)
        files["field"] = str(args.field)
    if args.png:
        export_png16(m_uv, args.png)
        files["png"] = str(args.png)
    summary = {
        "command": "tension",
        "vertices": int(t.shape[0]),
        "min": float(t.min()),
        "max": float(t.max()),
        "mean": float(t.mean()),
        "resolution": int(resolution),
        "files": files,
    }
    _emit(
        args,
        summary,
        [
            f"tension over {t.shape[0]} vertices: "
            f"min {t.min():.6g}, max {t.max():.6g}, mean {t.mean():.6g}"
        ]
        + [f"wrote {kind}: {p}" for kind, p in files.items()],
    )
    return 0


def cmd_render(args) -> int:
    bundle = load_bundle(_model_path(args))
    coeffs = _coefficients_for(args, bundle)
    phi_eff = effective_phi(coeffs.phi, args.seed)
    result = run_sd_detail(
        coeffs.replace(phi=phi_eff),
        bundle.face,
        bundle.detail,
        standard_form=args.standard_form,
        clamp=not args.unclamped_tension,
    )
    camera = _default_camera(args)
    albedo, n_clamped = synthesize_albedo(coeffs.alpha, bundle.face)
    rendered, texture = render_coefficients(
        result.mesh, albedo, coeffs.gamma, camera
    )
    write_png(rendered.image, args.output)
    files = {"image": str(args.output)}
    if args.texture_out:
        save_field(texture, args.texture_out)
        files["texture"] = str(args.texture_out)
    coverage = float(rendered.coverage.mean())
    summary = {
        "command": "render",
        "output": str(args.output),
        "files": files,
        "coverage_fraction": coverage,
        "albedo_clamped_texels": int(n_clamped),
    }
    _emit(
        args,
        summary,
        [f"rendered to {args.output} (coverage {coverage:.3f})"],
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(sp, with_model=True):
    sp.add_argument("--json", action="store_true", help="print a JSON summary")
    sp.add_argument(
        "--threads",
        type=int,
        default=0,
        help="worker-count cap; results never depend on it",
    )
    sp.add_argument("--seed", type=int, default=0, help="seed for any randomness")
    if with_model:
        sp.add_argument(
            "-m",
            "--model",
            default=None,
            help="model bundle directory (default: env SDDK_MODEL)",
        )


def _add_pipeline_flags(sp):
    sp.add_argument(
        "--standard-form",
        action="store_true",
        help="use the standard-form modulation (sigma * norm + mu)",
    )
    sp.add_argument(
        "--unclamped-tension",
        action="store_true",
        help="do not saturate tension blend weights at 1",
    )


def _add_render_flags(sp):
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--height", type=int, default=256)
    sp.add_argument(
        "--camera-scale",
        type=float,
        default=None,
        help="pixels per unit (default 0.4 * min(width, height))",
    )


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sddk",
        description="Coarse face synthesis with decoupled static/dynamic detail",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("build-basis", help="fit all linear bases from synthetic scans")
    _add_common(sp, with_model=False)
    sp.add_argument("--output", required=True, help="bundle directory to create")
    sp.add_argument("--scans", type=int, default=332)
    sp.add_argument("--uv-resolution", type=int, default=256)
    sp.add_argument("--albedo-resolution", type=int, default=128)
    sp.add_argument("--dim-identity", type=int, default=256)
    sp.add_argument("--dim-expression", type=int, default=233)
    sp.add_argument("--dim-albedo", type=int, default=300)
    sp.add_argument("--dim-static", type=int, default=300)
    sp.add_argument("--dim-compressed", type=int, default=26)
    sp.add_argument("--dim-stretched", type=int, default=26)
    sp.set_defaults(func=cmd_build_basis)

    sp = sub.add_parser("synthesize", help="meshes and detail maps for coefficients")
    _add_common(sp)
    sp.add_argument("--coefficients", help="coefficients JSON (default: zeros)")
    sp.add_argument(
        "--random", action="store_true", help="draw random coefficients from --seed"
    )
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--render", action="store_true", help="also write render.png")
    _add_pipeline_flags(sp)
    _add_render_flags(sp)
    sp.set_defaults(func=cmd_synthesize)

    sp = sub.add_parser("fit", help="fit coefficients to a target")
    _add_common(sp)
    sp.add_argument("--target", required=True, help="fit target JSON")
    sp.add_argument("--options", help="fit options JSON")
    sp.add_argument("--init", help="initial coefficients JSON (default: zeros)")
    sp.add_argument("--output", required=True, help="fitted coefficients JSON")
    sp.add_argument("--trace", help="loss trace CSV")
    sp.add_argument("--render", help="render the fitted face to this PNG")
    sp.add_argument("--blocks", help="comma-separated coefficient blocks")
    sp.add_argument("--max-iterations", type=int, default=None)
    sp.add_argument("--squared", action="store_true", help="squared L2 variants")
    _add_pipeline_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("animate", help="transfer detail/expression blocks")
    _add_common(sp)
    sp.add_argument("--source", required=True, help="subject coefficients JSON")
    sp.add_argument("--driver", required=True, help="driving coefficients JSON")
    sp.add_argument("--mode", choices=sorted(_ANIMATE_BLOCKS), required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--render", action="store_true", help="also write render.png")
    _add_pipeline_flags(sp)
    _add_render_flags(sp)
    sp.set_defaults(func=cmd_animate)

    sp = sub.add_parser("tension", help="tension between two shapes")
    _add_common(sp)
    sp.add_argument("reference", help="neutral shape: coefficients JSON or OBJ")
    sp.add_argument("deformed", help="deformed shape: coefficients JSON or OBJ")
    sp.add_argument("--csv", help="per-vertex tension CSV")
    sp.add_argument("--field", help="UV tension field output")
    sp.add_argument("--png", help="16-bit PNG preview of the UV map")
    sp.add_argument("--resolution", type=int, default=None)
    sp.set_defaults(func=cmd_tension)

    sp = sub.add_parser("render", help="shaded render of a coefficient set")
    _add_common(sp)
    sp.add_argument("--coefficients", help="coefficients JSON (default: zeros)")
    sp.add_argument(
        "--random", action="store_true", help="draw random coefficients from --seed"
    )
    sp.add_argument("--output", required=True, help="output PNG")
    sp.add_argument("--texture-out", help="also save the shaded texture field")
    _add_pipeline_flags(sp)
    _add_render_flags(sp)
    sp.set_defaults(func=cmd_render)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (GeometryError, NumericalError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
