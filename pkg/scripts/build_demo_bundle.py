"""Build a model bundle from synthetic scans and report basis quality.

A quick-size bundle (default) builds in a few seconds; --full uses the
production counts and takes a few minutes.
"""

import argparse
import time

from sddkit import BasisDims, ScanConfig, build_bundle, save_bundle


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--output", default="demo-bundle", help="bundle directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--full",
        action="store_true",
        help="production sizes (332 scans, 256 uv, full dims) instead of quick ones",
    )
    return p.parse_args()


def main():
    args = parse_args()
    if args.full:
        config = ScanConfig()
        dims = BasisDims()
    else:
        config = ScanConfig(n_scans=48, uv_resolution=64, albedo_resolution=32)
        dims = BasisDims(
            identity=12, expression=10, albedo=8, static=20, compressed=6, stretched=6
        )

    t0 = time.perf_counter()
    bundle = build_bundle(config, dims, seed=args.seed)
    built = time.perf_counter() - t0
    path = save_bundle(bundle, args.output)

    print(f"bundle written to {path} ({built:.1f}s build)")
    print(f"{'population':<12} {'k':>4} {'explained':>10}")
    for name, basis in (
        ("identity", bundle.face.identity_basis),
        ("expression", bundle.face.expression_basis),
        ("albedo", bundle.face.albedo_basis),
        ("static", bundle.detail.static_basis),
        ("compressed", bundle.detail.com_basis),
        ("stretched", bundle.detail.str_basis),
    ):
        frac = basis.explained_fraction()
        shown = f"{frac:.4f}" if frac is not None else "n/a"
        print(f"{name:<12} {basis.n_components:>4} {shown:>10}")


if __name__ == "__main__":
    main()
