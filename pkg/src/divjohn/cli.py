"""Command line front end.

Every subcommand builds a domain (from a family spec or a PGM mask),
runs one pipeline, and emits a JSON report to stdout or --out. Side
artifacts (witness polylines, trial-field heatmaps, solution rasters)
are opt-in flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .divsolve import solve_global, solve_whitney
from .domains import DomainSpec, generate
from .errors import DivJohnError
from .grid import GridDomain, ScalarField, distance_transform
from .john import (
    component_diameter_test,
    content_thickness,
    john_constant,
    separation_check,
)
from .poincare import hardy_constant, poincare_constant, validate_triple
from .sweep import _first_boundary_point, build_field, run_sweep
from .whitney import build_tree, whitney_decompose


def _add_domain_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--family", help="built-in domain family name")
    sp.add_argument(
        "--params", default="{}", help="family parameters as a JSON object"
    )
    sp.add_argument("--h", type=float, help="grid spacing")
    sp.add_argument(
        "--n", type=int, help="resolution denominator, h = 1/n (alternative to --h)"
    )
    sp.add_argument("--mask-pgm", help="domain mask from a P2/P5 PGM instead")


def _domain(args) -> GridDomain:
    if args.mask_pgm:
        return GridDomain.from_pgm(args.mask_pgm, h=args.h)
    if not args.family:
        raise SystemExit("either --family or --mask-pgm is required")
    h = args.h if args.h else 1.0 / args.n if args.n else 1.0 / 64
    spec = DomainSpec(args.family, json.loads(args.params), h=h)
    return generate(spec)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _point(text: str) -> tuple[float, float]:
    x, y = (float(t) for t in text.split(","))
    return (x, y)


def _write_heatmap(values: np.ndarray, mask: np.ndarray, path: str) -> None:
    """Grayscale P5 of a scalar field, normalized over the mask."""
    inside = values[mask]
    lo = float(inside.min()) if inside.size else 0.0
    hi = float(inside.max()) if inside.size else 1.0
    span = hi - lo if hi > lo else 1.0
    img = np.zeros(values.shape, dtype=np.uint8)
    img[mask] = np.clip(np.rint((values[mask] - lo) / span * 255), 0, 255)
    img = img.T[::-1, :]
    nx, ny = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n# lo={lo!r} hi={hi!r}\n{nx} {ny}\n255\n".encode())
        fh.write(img.tobytes())


def _write_raster(values: np.ndarray, mask: np.ndarray, path: Path, fmt: str):
    target = path.parent / f"{path.name}.{fmt}"
    if fmt == "f32":
        values.astype(np.float32).tofile(target)
    else:
        _write_heatmap(values, np.ones_like(mask, dtype=bool), str(target))


# ---- subcommand bodies --------------------------------------------------


def _cmd_john(args) -> int:
    dom = _domain(args)
    rho = distance_transform(dom)
    assessment = john_constant(dom, rho, tol=args.tol)
    if args.witness_csv:
        with open(args.witness_csv, "w") as fh:
            fh.write("sample,vertex,x,y\n")
            for s_idx, sample in enumerate(assessment.samples):
                for v_idx, (ci, cj) in enumerate(sample.witness):
                    x, y = dom.cell_center(int(ci), int(cj))
                    fh.write(f"{s_idx},{v_idx},{x!r},{y!r}\n")
    _emit(assessment.to_json(), args.out)
    return 0


def _cmd_separation(args) -> int:
    dom = _domain(args)
    rho = distance_transform(dom)
    report = separation_check(dom, rho, C_s=args.cs)
    _emit(report.to_json(), args.out)
    return 0 if report.passed else 1


def _cmd_components(args) -> int:
    dom = _domain(args)
    rho = distance_transform(dom)
    if args.b0:
        x, y, r = (float(t) for t in args.b0.split(","))
        b0 = ((x, y), r)
    else:
        ci, cj = rho.incenter
        b0 = (dom.cell_center(ci, cj), float(rho.inradius) / 2.0)
    w = _point(args.w) if args.w else _first_boundary_point(dom)
    comps = component_diameter_test(dom, b0, w, args.d)
    payload = {
        "w": list(w),
        "d": args.d,
        "b0": {"center": list(b0[0]), "radius": b0[1]},
        "components": [
            {
                "component_id": c.component_id,
                "cells": c.cells,
                "diam": c.diam,
                "ratio": c.ratio,
            }
            for c in comps
        ],
        "max_ratio": max((c.ratio for c in comps), default=0.0),
    }
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return 0


def _cmd_thickness(args) -> int:
    dom = _domain(args)
    w = _point(args.w) if args.w else _first_boundary_point(dom)
    value = content_thickness(dom, args.lam, w, args.r)
    payload = {"lam": args.lam, "w": list(w), "r": args.r, "content": value}
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return 0


def _estimate_payload(triple, mode: str, est, seed: int) -> dict:
    return {
        "triple": {"p": triple[0], "q": triple[1], "b": triple[2]},
        "mode": mode,
        "constant": est.value,
        "kind": est.kind,
        "iterations": est.iterations,
        "seed": seed,
        "converged": est.converged,
        "residual": est.residual,
    }


def _cmd_poincare(args) -> int:
    dom = _domain(args)
    rho = distance_transform(dom)
    triple = validate_triple(args.p, args.q)
    cube = tuple(float(t) for t in args.cube.split(",")) if args.cube else None
    mode = "zero_on_cube" if cube else args.mode
    est = poincare_constant(
        dom,
        rho,
        triple,
        mode=mode,
        cube=cube,
        n_starts=args.n_starts,
        seed=args.seed,
        max_iter=args.max_iter,
    )
    if args.trial_pgm:
        _write_heatmap(est.trial.values, dom.mask, args.trial_pgm)
    payload = _estimate_payload(
        (triple.p, triple.q, triple.b), mode, est, args.seed
    )
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return 0


def _cmd_hardy(args) -> int:
    dom = _domain(args)
    rho = distance_transform(dom)
    est = hardy_constant(
        dom,
        rho,
        args.p,
        n_starts=args.n_starts,
        seed=args.seed,
        max_iter=args.max_iter,
    )
    if args.trial_pgm:
        _write_heatmap(est.trial.values, dom.mask, args.trial_pgm)
    payload = _estimate_payload((args.p, args.p, 0.0), "zero_trace", est, args.seed)
    _emit(json.dumps(payload, indent=2, sort_keys=True), args.out)
    return 0


def _cmd_solve(args) -> int:
    dom = _domain(args)
    rho = distance_transform(dom)
    if args.f_pgm:
        raster = GridDomain.from_pgm(args.f_pgm)
        if raster.shape != dom.shape:
            raise SystemExit("f raster shape does not match the domain grid")
        vals = np.where(dom.mask, raster.mask.astype(float), 0.0)
        vals[dom.mask] -= vals[dom.mask].mean()
        f = ScalarField(vals, dom.h)
    else:
        f = build_field(dom, args.pattern, json.loads(args.pattern_params), args.seed)
    if args.method == "global":
        sol = solve_global(dom, f, p=args.p, rho=rho)
    else:
        cubes = whitney_decompose(dom, rho)
        tree = build_tree(dom, cubes, dom.cell_center(*rho.incenter))
        sol = solve_whitney(dom, rho, tree, f, p=args.p)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    _write_raster(sol.v.vx, dom.mask, prefix.with_name(prefix.name + ".vx"), args.format)
    _write_raster(sol.v.vy, dom.mask, prefix.with_name(prefix.name + ".vy"), args.format)
    _emit(sol.to_json(), args.out)
    return 0


def _cmd_sweep(args) -> int:
    config = json.loads(Path(args.config).read_text())
    result = run_sweep(config, out_dir=args.out_dir)
    errored = result.errored
    print(
        f"{len(result.rows)} cells -> {args.out_dir}"
        + (" (with errors)" if errored else "")
    )
    return 1 if errored else 0


# ---- parser -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divjohn",
        description="Grid experiments: John geometry, Poincare/Hardy "
        "constants, and the divergence equation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("john", help="John constant with witness paths")
    _add_domain_args(sp)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--witness-csv", help="write witness polylines as CSV")
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_john)

    sp = sub.add_parser("separation", help="ball separation along witnesses")
    _add_domain_args(sp)
    sp.add_argument("--cs", type=float, default=2.0)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_separation)

    sp = sub.add_parser("components", help="component diameters off a ball")
    _add_domain_args(sp)
    sp.add_argument("--w", help="ball center 'x,y' (default: a boundary point)")
    sp.add_argument("--d", type=float, default=0.1)
    sp.add_argument("--b0", help="reference ball 'x,y,r' (default: incenter)")
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_components)

    sp = sub.add_parser("thickness", help="dyadic content of the complement")
    _add_domain_args(sp)
    sp.add_argument("--lam", type=float, default=1.0)
    sp.add_argument("--w", help="ball center 'x,y' (default: a boundary point)")
    sp.add_argument("--r", type=float, default=0.25)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_thickness)

    sp = sub.add_parser("poincare", help="weighted Poincare constant")
    _add_domain_args(sp)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--q", type=float, default=2.0)
    sp.add_argument("--mode", default="mean_zero")
    sp.add_argument("--cube", help="zero-on-cube window 'x0,y0,x1,y1'")
    sp.add_argument("--n-starts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-iter", type=int, default=100000)
    sp.add_argument("--trial-pgm", help="export the achieving field as PGM")
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_poincare)

    sp = sub.add_parser("hardy", help="Hardy constant over zero-trace fields")
    _add_domain_args(sp)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--n-starts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-iter", type=int, default=100000)
    sp.add_argument("--trial-pgm", help="export the achieving field as PGM")
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_hardy)

    sp = sub.add_parser("solve", help="solve div v = f with zero trace")
    _add_domain_args(sp)
    sp.add_argument(
        "--pattern",
        default="checkerboard",
        help="built-in f: checkerboard, dipole, moment, random",
    )
    sp.add_argument("--pattern-params", default="{}")
    sp.add_argument("--f-pgm", help="f from a PGM raster instead")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--method", choices=("whitney", "global"), default="whitney")
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument(
        "--format", choices=("f32", "pgm"), default="f32",
        help="raster format for the two solution components",
    )
    sp.add_argument("--out-prefix", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=_cmd_solve)

    sp = sub.add_parser("sweep", help="run a config-driven metric sweep")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", dest="out_dir", required=True)
    sp.set_defaults(func=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivJohnError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
