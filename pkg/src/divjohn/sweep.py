"""Experiment sweeps over domain specs, metrics, and resolutions.

A sweep config is a plain dict (usually loaded from JSON):

    {
      "seed": 0,
      "workers": 1,
      "specs": [{"family": "disk", "params": {}},
                {"family": "power_cusp", "params": {"alpha": 3.0}}],
      "resolutions": [64, 128],
      "metrics": ["john", {"name": "poincare", "p": 2, "q": 2}]
    }

Resolution entries above 1 are denominators (64 means h = 1/64), entries
at or below 1 are grid spacings. Metrics may be bare names or dicts with
per-metric parameters. Every (spec, metric, resolution) cell produces one
row; cells that raise keep the sweep alive and mark the row with an
error kind instead of a value. Rows go to the CSV incrementally (append
plus flush after each cell) so a killed run loses at most the in-flight
cell; the JSON mirror is written once at the end.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .divsolve import condition_report
from .domains import DomainSpec, generate
from .errors import DivJohnError, Unsupported
from .grid import GridDomain, ScalarField, distance_transform
from .john import (
    component_diameter_test,
    content_thickness,
    john_constant,
)
from .poincare import hardy_constant, poincare_constant, validate_triple

SCHEMA_VERSION = 1
CSV_COLUMNS = ("family", "params", "h", "metric", "value", "kind", "seed")


# ---- built-in right-hand-side patterns --------------------------------


def build_field(
    dom: GridDomain, name: str, params: Optional[dict] = None, seed: int = 0
) -> ScalarField:
    """Named mean-zero fields on a domain, for the solver and the sweeps.

    checkerboard: product of sines, wave numbers kx, ky (default 4).
    dipole: Gaussian source near (0.18, 0) minus sink near (0.8, 0),
        width sigma (default 0.04); centers movable via c1, c2.
    moment: first coordinate minus its domain average.
    random: unit normals per cell, seeded.
    Every pattern is restricted to the mask and projected to mean zero."""
    params = dict(params or {})
    cx, cy = dom.centers
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    if name == "checkerboard":
        kx = float(params.get("kx", 4.0))
        ky = float(params.get("ky", 4.0))
        vals = np.sin(kx * np.pi * X) * np.sin(ky * np.pi * Y)
    elif name == "dipole":
        sigma = float(params.get("sigma", 0.04))
        c1 = tuple(params.get("c1", (0.18, 0.0)))
        c2 = tuple(params.get("c2", (0.8, 0.0)))
        vals = np.exp(-((X - c1[0]) ** 2 + (Y - c1[1]) ** 2) / (2 * sigma**2))
        vals -= np.exp(-((X - c2[0]) ** 2 + (Y - c2[1]) ** 2) / (2 * sigma**2))
    elif name == "moment":
        vals = X.astype(float)
    elif name == "random":
        rng = np.random.default_rng(int(params.get("seed", seed)))
        vals = rng.standard_normal(dom.shape)
    else:
        raise Unsupported(f"unknown field pattern {name!r}")
    vals = np.where(dom.mask, vals, 0.0)
    vals[dom.mask] -= vals[dom.mask].mean()
    return ScalarField(vals, dom.h)


# ---- per-metric cell evaluation ----------------------------------------


def _first_boundary_point(dom: GridDomain) -> tuple[float, float]:
    """Center of the first complement cell touching the domain, C order."""
    m = dom.mask
    pad = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
    pad[1:-1, 1:-1] = m
    outside_touching = ~pad & (
        np.roll(pad, 1, 0) | np.roll(pad, -1, 0) | np.roll(pad, 1, 1) | np.roll(pad, -1, 1)
    )
    ii, jj = np.nonzero(outside_touching)
    i, j = int(ii[0]) - 1, int(jj[0]) - 1
    return (
        dom.origin[0] + (i + 0.5) * dom.h,
        dom.origin[1] + (j + 0.5) * dom.h,
    )


def evaluate_metric(dom: GridDomain, metric: dict, seed: int) -> tuple[float, str]:
    """One sweep cell: returns (value, kind)."""
    name = metric["name"]
    rho = distance_transform(dom)
    if name == "john":
        return float(john_constant(dom, rho).c_hat), "bisection_witness"
    if name == "poincare":
        triple = validate_triple(
            float(metric.get("p", 2.0)), float(metric.get("q", 2.0))
        )
        est = poincare_constant(
            dom,
            rho,
            triple,
            mode=metric.get("mode", "mean_zero"),
            n_starts=int(metric.get("n_starts", 8)),
            seed=seed,
            max_iter=int(metric.get("max_iter", 100000)),
        )
        return float(est.value), est.kind
    if name == "hardy":
        est = hardy_constant(
            dom,
            rho,
            float(metric.get("p", 2.0)),
            n_starts=int(metric.get("n_starts", 8)),
            seed=seed,
            max_iter=int(metric.get("max_iter", 100000)),
        )
        return float(est.value), est.kind
    if name == "div_ratios":
        k = int(metric.get("batch", 3))
        batch = [
            build_field(dom, "random", {"seed": seed * 1000 + i}) for i in range(k)
        ]
        rep = condition_report(dom, rho, batch, p=float(metric.get("p", 2.0)))
        return float(rep.max_ratios["overall"]), "condition_max_ratio"
    if name == "components":
        ci, cj = rho.incenter
        b0 = (dom.cell_center(ci, cj), float(rho.inradius) / 2.0)
        w = tuple(metric.get("w", _first_boundary_point(dom)))
        d = float(metric.get("d", 0.1))
        comps = component_diameter_test(dom, b0, w, d)
        value = max((c.ratio for c in comps), default=0.0)
        return float(value), "component_diameter_ratio"
    if name == "thickness":
        w = tuple(metric.get("w", _first_boundary_point(dom)))
        lam = float(metric.get("lam", 1.0))
        r = float(metric.get("r", 0.25))
        return float(content_thickness(dom, lam, w, r)), "dyadic_content"
    raise Unsupported(f"unknown metric {name!r}")


# ---- the sweep driver ---------------------------------------------------


@dataclass
class SweepResult:
    """All rows of a sweep run, in execution order."""

    rows: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    @property
    def errored(self) -> bool:
        return any(row["kind"].startswith("error:") for row in self.rows)

    def to_json(self) -> str:
        return json.dumps(
            {"schema_version": self.schema_version, "rows": self.rows},
            indent=2,
            sort_keys=True,
        )


def _normalize_metric(entry) -> dict:
    if isinstance(entry, str):
        return {"name": entry}
    return dict(entry)


def _normalize_h(entry) -> float:
    value = float(entry)
    return 1.0 / value if value > 1.0 else value


def _format_value(value) -> str:
    if value == "":
        return ""
    return repr(float(value))


def run_sweep(
    config: dict, out_dir: Union[str, Path, None] = None
) -> SweepResult:
    """Execute specs x metrics x resolutions; never abort on a cell error.

    With out_dir set, rows stream into out_dir/results.csv as they finish
    (header first, one flushed line per cell) and out_dir/results.json is
    the final mirror. Identical config and seed give identical bytes."""
    seed = int(config.get("seed", 0))
    workers = max(1, int(config.get("workers", 1)))
    # specs are validated inside each cell so a bad entry errors its own
    # rows instead of aborting the sweep
    variants = [
        (str(s.get("family", "")), dict(s.get("params", {})), _normalize_h(res))
        for s in config.get("specs", [])
        for res in config.get("resolutions", [])
    ]
    metrics = [_normalize_metric(m) for m in config.get("metrics", [])]
    cells = [(variant, metric) for variant in variants for metric in metrics]

    result = SweepResult()
    csv_file = None
    writer = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_file = open(out / "results.csv", "w", newline="")
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        csv_file.flush()

    def finish_row(variant, metric: dict, value, kind: str):
        family, params, h = variant
        row = {
            "family": family,
            "params": json.dumps(params, sort_keys=True),
            "h": repr(h),
            "metric": metric["name"],
            "value": _format_value(value),
            "kind": kind,
            "seed": seed,
        }
        result.rows.append(row)
        if writer is not None:
            writer.writerow([row[c] for c in CSV_COLUMNS])
            csv_file.flush()
            os.fsync(csv_file.fileno())

    try:
        if workers == 1:
            for variant, metric in cells:
                value, kind = _guarded(variant, metric, seed)
                finish_row(variant, metric, value, kind)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_guarded, variant, metric, seed)
                    for variant, metric in cells
                ]
                for (variant, metric), fut in zip(cells, futures):
                    value, kind = fut.result()
                    finish_row(variant, metric, value, kind)
    finally:
        if csv_file is not None:
            csv_file.close()
    if out_dir is not None:
        (Path(out_dir) / "results.json").write_text(result.to_json() + "\n")
    return result


def _guarded(variant, metric: dict, seed: int):
    family, params, h = variant
    try:
        dom = generate(DomainSpec(family, params, h=h))
        return evaluate_metric(dom, metric, seed)
    except (DivJohnError, ValueError, KeyError) as exc:
        return "", f"error:{type(exc).__name__}"
