"""Sweep harness and command line surface."""

from __future__ import annotations

import json

import numpy as np
import pytest

from divjohn import DomainSpec, generate
from divjohn import sweep as sweep_mod
from divjohn.cli import main
from divjohn.errors import Unsupported
from divjohn.sweep import SweepResult, build_field, run_sweep

FAST_METRICS = [
    "john",
    {"name": "poincare", "p": 2, "q": 2, "n_starts": 2, "max_iter": 3000},
    {"name": "div_ratios", "batch": 1},
    {"name": "components", "d": 0.2},
    {"name": "thickness", "lam": 1.0, "r": 0.2},
]


def fast_config(seed=0):
    return {
        "seed": seed,
        "specs": [{"family": "square", "params": {}}],
        "resolutions": [32],
        "metrics": list(FAST_METRICS),
    }


# ---- built-in field patterns -------------------------------------------


def test_build_field_patterns_are_mean_zero_and_masked():
    dom = generate(DomainSpec("disk", {}, h=1 / 32))
    for name in ("checkerboard", "dipole", "moment", "random"):
        f = build_field(dom, name, seed=5)
        assert abs(f.values[dom.mask].sum()) <= 1e-10 * np.abs(
            f.values[dom.mask]
        ).sum()
        assert np.abs(f.values[~dom.mask]).max() == 0.0
        assert np.abs(f.values).max() > 0
    with pytest.raises(Unsupported):
        build_field(dom, "nosuch")


def test_build_field_random_is_seed_deterministic():
    dom = generate(DomainSpec("square", {}, h=1 / 32))
    a = build_field(dom, "random", {"seed": 9})
    b = build_field(dom, "random", {"seed": 9})
    c = build_field(dom, "random", {"seed": 10})
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


# ---- run_sweep -----------------------------------------------------------


def test_run_sweep_produces_complete_rows(tmp_path):
    result = run_sweep(fast_config(), out_dir=tmp_path / "out")
    assert result.schema_version == 1
    assert len(result.rows) == len(FAST_METRICS)
    for row in result.rows:
        assert set(row) == set(sweep_mod.CSV_COLUMNS)
        assert row["family"] == "square"
        # a convex domain legitimately reports 0 separated components
        minimum = 0.0 if row["metric"] == "components" else 0.0 + 1e-12
        assert float(row["value"]) >= minimum
        assert not row["kind"].startswith("error:")
    assert not result.errored
    csv_lines = (tmp_path / "out" / "results.csv").read_text().splitlines()
    assert csv_lines[0] == ",".join(sweep_mod.CSV_COLUMNS)
    assert len(csv_lines) == 1 + len(result.rows)
    mirror = json.loads((tmp_path / "out" / "results.json").read_text())
    assert mirror["schema_version"] == 1
    assert mirror["rows"] == result.rows


def test_run_sweep_records_cell_errors_in_row():
    config = {
        "seed": 0,
        "specs": [
            {"family": "square", "params": {}},
            {"family": "nosuch", "params": {}},
        ],
        "resolutions": [32],
        "metrics": ["john", {"name": "poincare", "p": 0.5, "q": 2.0}],
    }
    result = run_sweep(config)
    assert len(result.rows) == 4
    kinds = [row["kind"] for row in result.rows]
    assert kinds[0] == "bisection_witness"
    assert kinds[1] == "error:NotASobolevTriple"
    assert kinds[2] == kinds[3] == "error:Unsupported"
    assert result.errored
    assert all(row["value"] == "" for row in result.rows if "error" in row["kind"])


def test_run_sweep_empty_config_is_valid(tmp_path):
    result = run_sweep({"specs": [], "resolutions": [], "metrics": []},
                       out_dir=tmp_path)
    assert result.rows == [] and not result.errored
    assert (tmp_path / "results.csv").read_text().splitlines() == [
        ",".join(sweep_mod.CSV_COLUMNS)
    ]


def test_run_sweep_is_byte_deterministic(tmp_path):
    run_sweep(fast_config(seed=4), out_dir=tmp_path / "a")
    run_sweep(fast_config(seed=4), out_dir=tmp_path / "b")
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    assert a == b
    aj = (tmp_path / "a" / "results.json").read_bytes()
    bj = (tmp_path / "b" / "results.json").read_bytes()
    assert aj == bj


def test_run_sweep_worker_pool_keeps_row_order(tmp_path):
    cfg = fast_config(seed=4)
    run_sweep(cfg, out_dir=tmp_path / "serial")
    cfg["workers"] = 4
    run_sweep(cfg, out_dir=tmp_path / "pooled")
    assert (tmp_path / "serial" / "results.csv").read_bytes() == (
        tmp_path / "pooled" / "results.csv"
    ).read_bytes()


def test_run_sweep_append_survives_crash(tmp_path, monkeypatch):
    calls = {"n": 0}
    real = sweep_mod.evaluate_metric

    def flaky(dom, metric, seed):
        calls["n"] += 1
        if calls["n"] == 2:
            raise KeyboardInterrupt
        return real(dom, metric, seed)

    monkeypatch.setattr(sweep_mod, "evaluate_metric", flaky)
    config = fast_config()
    config["metrics"] = ["john", "john", "john"]
    with pytest.raises(KeyboardInterrupt):
        run_sweep(config, out_dir=tmp_path)
    lines = (tmp_path / "results.csv").read_text().splitlines()
    assert len(lines) == 2  # header plus the one finished cell


def test_sweep_result_json_shape():
    res = SweepResult(rows=[{"kind": "error:NoPath"}])
    assert res.errored
    payload = json.loads(res.to_json())
    assert payload["schema_version"] == 1


# ---- command line --------------------------------------------------------


def domain_args(n=32):
    return ["--family", "disk", "--n", str(n)]


def test_cli_john_writes_report_and_witness_csv(tmp_path, capsys):
    out = tmp_path / "john.json"
    wit = tmp_path / "wit.csv"
    code = main(
        ["john", *domain_args(), "--witness-csv", str(wit), "--out", str(out)]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["c_hat"] > 0.5  # the disk is an excellent John domain
    lines = wit.read_text().splitlines()
    assert lines[0] == "sample,vertex,x,y"
    assert len(lines) > 10
    sample, vertex, x, y = lines[1].split(",")
    float(x), float(y)


def test_cli_separation_exit_code(tmp_path):
    out = tmp_path / "sep.json"
    code = main(["separation", *domain_args(), "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["passed"] is True


def test_cli_components_and_thickness(tmp_path):
    out = tmp_path / "c.json"
    code = main(
        [
            "components",
            "--family", "power_cusp", "--params", '{"alpha": 3.0}', "--n", "128",
            "--w", "0.3,0.0", "--d", "0.1", "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["max_ratio"] > 0
    assert payload["components"][0]["diam"] > 0
    out2 = tmp_path / "t.json"
    code = main(
        [
            "thickness",
            "--family", "cantor_slit", "--params", '{"p": 1.5}', "--n", "64",
            "--w", "0.0,0.0", "--r", "0.3", "--lam", "0.5", "--out", str(out2),
        ]
    )
    assert code == 0
    assert json.loads(out2.read_text())["content"] > 0


def test_cli_poincare_report_and_trial_pgm(tmp_path):
    out = tmp_path / "p.json"
    pgm = tmp_path / "trial.pgm"
    code = main(
        [
            "poincare", "--family", "square", "--n", "32",
            "--n-starts", "2", "--max-iter", "3000",
            "--trial-pgm", str(pgm), "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["triple"] == {"p": 2.0, "q": 2.0, "b": 2.0}
    assert payload["mode"] == "mean_zero"
    assert payload["constant"] > 0
    assert {"kind", "iterations", "seed"} <= set(payload)
    assert pgm.read_bytes().startswith(b"P5")


def test_cli_hardy_report(tmp_path):
    out = tmp_path / "h.json"
    code = main(
        [
            "hardy", "--family", "annulus", "--n", "32",
            "--n-starts", "2", "--max-iter", "3000", "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert 0.5 < payload["constant"] < 2.0
    assert payload["mode"] == "zero_trace"


def test_cli_solve_writes_rasters_and_report(tmp_path):
    out = tmp_path / "sol.json"
    prefix = tmp_path / "sol" / "disk"
    code = main(
        [
            "solve", *domain_args(), "--pattern", "dipole",
            "--method", "whitney", "--out-prefix", str(prefix),
            "--out", str(out),
        ]
    )
    assert code == 0
    payload = json.loads(out.read_text())
    assert payload["residual"] <= 1e-8
    assert payload["method"] == "whitney_constructive"
    dom = generate(DomainSpec("disk", {}, h=1 / 32))
    for comp in ("vx", "vy"):
        raster = np.fromfile(tmp_path / "sol" / f"disk.{comp}.f32", dtype=np.float32)
        assert raster.size == dom.shape[0] * dom.shape[1]
    code = main(
        [
            "solve", "--family", "square", "--n", "32",
            "--pattern", "checkerboard", "--method", "global",
            "--format", "pgm", "--out-prefix", str(tmp_path / "sq"),
            "--out", str(tmp_path / "sq.json"),
        ]
    )
    assert code == 0
    assert (tmp_path / "sq.vx.pgm").read_bytes().startswith(b"P5")
    assert json.loads((tmp_path / "sq.json").read_text())["method"] == "global_baseline"


def test_cli_solve_from_pgm_f(tmp_path):
    dom = generate(DomainSpec("square", {}, h=1 / 32))
    # nonzero pixels become the high plateau of a binary mean-zero f
    half = dom.mask.copy()
    half[:, : half.shape[1] // 2] = False
    from divjohn.grid import GridDomain

    GridDomain(half, dom.h, dom.origin).to_pgm(tmp_path / "f.pgm")
    code = main(
        [
            "solve", "--family", "square", "--n", "32",
            "--f-pgm", str(tmp_path / "f.pgm"),
            "--method", "global", "--out-prefix", str(tmp_path / "v"),
            "--out", str(tmp_path / "v.json"),
        ]
    )
    assert code == 0
    assert json.loads((tmp_path / "v.json").read_text())["residual"] <= 1e-8


def test_cli_domain_from_mask_pgm(tmp_path):
    dom = generate(DomainSpec("disk", {}, h=1 / 32))
    dom.to_pgm(tmp_path / "disk.pgm")
    out = tmp_path / "j.json"
    code = main(["john", "--mask-pgm", str(tmp_path / "disk.pgm"), "--out", str(out)])
    assert code == 0
    assert json.loads(out.read_text())["c_hat"] > 0.5


def test_cli_sweep_exit_codes(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "seed": 1,
        "specs": [{"family": "square", "params": {}}],
        "resolutions": [32],
        "metrics": ["john"],
    }))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "ok")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "seed": 1,
        "specs": [{"family": "nosuch", "params": {}}],
        "resolutions": [32],
        "metrics": ["john"],
    }))
    assert main(["sweep", "--config", str(bad), "--out", str(tmp_path / "no")]) == 1
    csv_text = (tmp_path / "no" / "results.csv").read_text()
    assert "error:Unsupported" in csv_text


def test_cli_rejects_unknown_family_with_error_code(capsys):
    assert main(["john", "--family", "nosuch", "--n", "16"]) == 2
    assert "Unsupported" in capsys.readouterr().err
