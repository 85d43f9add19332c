"""Acceptance gate: every criterion at its stated scale and tolerance.

Each test records one PASS/FAIL line, printed in the terminal summary.
"""
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from oracles import forward_rows
from percweb.cli import main
from percweb.field import FieldConfig, compute_backbone
from percweb.stats.core import ExperimentConfig
from percweb.stats.engine import default_threads
from percweb.stats.registry import EXPERIMENTS, run


def report(num: int, name: str, ok: bool, detail: str):
    line = f"{'PASS' if ok else 'FAIL'} {num} {name}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def experiment(tag, p=0.8, replicates=None, **params):
    R = replicates or EXPERIMENTS[tag].replicates
    return run(ExperimentConfig(tag, p=p, seed=1, replicates=R, threads=default_threads(), params=params))


def checks_named(res, prefix):
    return [c for c in res.checks if c.name.startswith(prefix)]


def test_01_backbone_oracle():
    rng = np.random.default_rng(20261014)
    mismatches, elapsed = 0, 0.0
    for _ in range(1000):
        w, T = int(rng.integers(1, 11)), int(rng.integers(0, 10))
        x_lo = int(rng.integers(-1000, 1000))
        cfg = FieldConfig(float(rng.uniform(0.3, 1.0)), int(rng.integers(0, 2**63)), T, x_lo, x_lo + w - 1)
        t = time.perf_counter()
        b = compute_backbone(cfg)
        got = [b.row(n) for n in range(T + 1)]
        elapsed += time.perf_counter() - t
        mismatches += sum(not np.array_equal(g, o) for g, o in zip(got, forward_rows(cfg)))
    report(1, "backbone oracle", mismatches == 0 and elapsed < 10,
           f"{mismatches} mismatching rows over 1000 fields, {elapsed:.2f} s")


def test_02_clt_anchor():
    r = experiment("clt", p=1.0, replicates=100_000, n_max=1000)
    v, ks = r.fits["v_hat"], r.fits["ks"]
    ok = abs(v - 2 / 3) <= 0.01 and ks <= 0.01 and r.wall_time < 120
    report(2, "p=1 CLT anchor", ok, f"v_hat={v:.5f} (2/3 +- 0.01), KS={ks:.4f} (<= 0.01), {r.wall_time:.0f} s")


def test_03_meeting_tails():
    r = experiment("tails", replicates=100_000)
    slopes = checks_named(r, "tails.slope")
    sep = r.check("tails.separation_exponent")
    ok = all(c.passed for c in slopes) and sep.passed and r.wall_time < 900
    report(3, "meeting-tail exponents", ok,
           f"slopes {[round(float(c.value), 3) for c in slopes]} in [-0.6, -0.4], "
           f"separation exponent {float(sep.value):.3f} in [0.85, 1.15], {r.wall_time:.0f} s")


def test_04_density():
    r = experiment("density")
    c = r.check("density.slope")
    ok = c.passed and r.wall_time < 900
    report(4, "density exponent", ok, f"slope {float(c.value):.3f} in [-0.6, -0.4], {r.wall_time:.0f} s")


def test_05_eta_envelope():
    r = experiment("eta", t_grid=[0.5, 1.0, 2.0], intervals=[[0.0, 1.0]], delta=0.05)
    cs = checks_named(r, "eta.upper") + checks_named(r, "eta.close")
    ok = all(c.passed for c in cs) and r.wall_time < 600
    ratios = {k: round(v, 4) for k, v in r.fits["ratios"].items()}
    report(5, "E1' envelope", ok, f"mean / bound {ratios} (<= 1.05 and within 15%), {r.wall_time:.0f} s")


def test_06_pair_meeting_law():
    r = experiment("fdd", replicates=10_000, delta=0.05, d=1.0)
    c = r.check("fdd.pair_meet[0-1]")
    ok = c.passed and r.wall_time < 600
    report(6, "pair BW marginal", ok, f"KS {float(c.value):.4f} (<= 0.05), {r.wall_time:.0f} s")


def test_07_tightness_trend():
    r = experiment("gap")
    c = r.check("gap.decay")
    ok = c.passed and r.wall_time < 600
    report(7, "tightness trend", ok, f"max P(gap >= 10) / max P(gap >= 1000) = {float(c.value):.2f} (>= 10), "
                                     f"{r.wall_time:.0f} s")


def test_08_hole_tail():
    r = experiment("holes")
    cs = [r.check("holes.fit_r2")] + checks_named(r, "holes.bound")
    ok = all(c.passed for c in cs) and r.wall_time < 300
    report(8, "hole tail", ok, f"R^2 {r.fits['r2']:.4f} (>= 0.98), fitted K={r.fits['K']:.3f} C={r.fits['C']:.3f}, "
                               f"bounds {[c.passed for c in cs[1:]]}, {r.wall_time:.1f} s")


def test_09_f_numerics():
    r = experiment("f-check")
    ok = r.passed and r.wall_time < 1.0
    worst = max(r.tables["f_check"].column("max_residual"))
    report(9, "f numerics", ok, f"{sum(c.passed for c in r.checks)}/{len(r.checks)} checks, "
                                f"max ODE residual {worst:.2e}, {r.wall_time:.2f} s")


DETERMINISM_RUNS = [
    ("survival", 600, {}),
    ("tails", 4500, {"n_grid": [10, 40, 160], "separations": [1, 4]}),
    ("gap", 2500, {"separations": [1, 4], "M_grid": [1, 10], "n_end": 200}),
    ("density", 3, {"m_grid": [0, 10, 100], "L": 100}),
    ("eta-mult", 2500, {"v_hat": 0.68}),
    ("crossing", 2500, {"v_hat": 0.68, "t_grid": [0.4]}),
    ("fdd", 2500, {"v_hat": 0.68, "gamma_replicates": 5, "independent_replicates": 2100}),
    ("holes", 2, {"width": 5000, "rows": 100}),
    ("cbm", 2500, {"t_end": 1.0, "marginal_t": [0.5]}),
]


def test_10_determinism(tmp_path):
    import json
    t = time.perf_counter()
    bad = []
    for sub, R, params in DETERMINISM_RUNS:
        conf = tmp_path / f"{sub}.json"
        conf.write_text(json.dumps(params))
        dirs = []
        for th in ("1", "3"):
            out = tmp_path / f"{sub}-{th}"
            assert main(["run", sub, "--replicates", str(R), "--threads", th, "--config", str(conf),
                         "--out", str(out)]) == 0
            (d,) = (out / sub).iterdir()
            dirs.append({p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))})
        if dirs[0] != dirs[1] or not dirs[0]:
            bad.append(sub)
    el = time.perf_counter() - t
    report(10, "determinism", not bad and el < 60,
           f"{len(DETERMINISM_RUNS) - len(bad)}/{len(DETERMINISM_RUNS)} subcommands byte-identical "
           f"with --threads 1 and 3, {el:.0f} s")


def test_11_crossing_trend():
    r = experiment("crossing", u_grid=[1.0], t_grid=[0.4, 0.2, 0.1], delta_grid=[0.05])
    c = r.check("crossing.trend[u=1.0,delta=0.05]")
    tab = r.tables["crossing"]
    pt = dict(zip(tab.column("t"), tab.column("p_over_t")))
    up = dict(zip(tab.column("t"), tab.column("upper95")))
    ok = c.passed and r.wall_time < 900
    report(11, "T1 trend", ok, f"P/t at t=0.4,0.2,0.1: {[pt[t] for t in (0.4, 0.2, 0.1)]}, "
                               f"95% upper bounds on P {[round(up[t], 6) for t in (0.4, 0.2, 0.1)]}, "
                               f"{r.wall_time:.0f} s")
