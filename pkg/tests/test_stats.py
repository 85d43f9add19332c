import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from oracles import difference_walk_tail
from percweb.errors import ConfigInvalid
from percweb.field import FieldConfig, compute_backbone
from percweb.rng import replicate_seed
from percweb.stats import core
from percweb.stats.core import ExperimentConfig, ExperimentResult, Table
from percweb.stats.engine import run_walks
from percweb.stats.registry import EXPERIMENTS, run


def cfg(tag, R, p=0.8, threads=1, **params):
    return ExperimentConfig(tag, p=p, replicates=R, threads=threads, params=params)


# -- core helpers -------------------------------------------------------------------

def test_geometric_grid():
    assert core.geometric_grid(10, 80) == [10, 20, 40, 80]
    assert core.geometric_grid(10, 100) == [10, 20, 40, 80, 100]


def test_fits_recover_exact_lines():
    x = np.array([1.0, 2, 4, 8, 16])
    f = core.ols(x, 3 * x - 2)
    assert f.slope == pytest.approx(3) and f.intercept == pytest.approx(-2) and f.r2 == pytest.approx(1)
    g = core.loglog_slope(x, 5 * x ** -0.5)
    assert g.slope == pytest.approx(-0.5)


def test_bootstrap_deterministic():
    v = np.arange(100.0)
    a = core.bootstrap(lambda i: v[i].mean(), 100, 1, 7, n_boot=50)
    b = core.bootstrap(lambda i: v[i].mean(), 100, 1, 7, n_boot=50)
    assert np.array_equal(a, b)
    lo, hi = core.percentile_ci(a)
    assert lo < 49.5 < hi


def test_ks_lattice_and_censored():
    rng = np.random.default_rng(0)
    s = rng.integers(-1, 2, (20_000, 400)).sum(axis=1)
    assert core.ks_lattice(s, math.sqrt(400 * 2 / 3)) < 0.015
    assert core.ks_lattice(s, 2 * math.sqrt(400 * 2 / 3)) > 0.1
    e = rng.exponential(1.0, 20_000)
    cdf = lambda t: 1 - np.exp(-np.asarray(t))
    e[e > 3] = np.inf
    assert core.ks_censored(e, cdf, 3.0) < 0.015
    assert core.ks_censored(e, lambda t: 1 - np.exp(-2 * np.asarray(t)), 3.0) > 0.1


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        ExperimentConfig("tails", replicates=0)
    with pytest.raises(ConfigInvalid):
        ExperimentConfig("tails", p=0.0)
    with pytest.raises(ConfigInvalid):
        ExperimentConfig("tails", params={"n_grid": []})
    c = ExperimentConfig("tails", seed=-1, threads=3)
    assert c.seed == 2**64 - 1 and "threads" not in c.echo()


def test_guard_rejects_subcritical():
    with pytest.raises(ConfigInvalid, match="subcritical"):
        run(cfg("tails", 10, p=0.5))


def test_table_and_result_round_trip():
    t = Table(["a", "b"], plot={"x": "a", "y": "b"})
    t.add(1, 0.1)
    t.add(np.int64(2), np.float64(1 / 3))
    assert t.to_csv() == "a,b\n1,0.1\n2,0.3333333333333333\n"
    with pytest.raises(ValueError):
        t.add(1)
    r = run(cfg("survival", 100))
    back = ExperimentResult.from_dict(json.loads(r.to_json()))
    assert back.to_json() == r.to_json()


# -- experiment invariants at small scale ---------------------------------------------

def _tab(r, name):
    t = r.tables[name]
    return {c: np.array(t.column(c)) for c in t.columns}


def test_tails_small():
    r = run(cfg("tails", 400, n_grid=[1, 10, 20, 40, 80], fit_range=[10, 80], separations=[0, 1, 2, 4]))
    d = _tab(r, "tails")
    assert np.all((d["p_hat"] >= 0) & (d["p_hat"] <= 1))
    assert np.all(d["p_hat"][d["separation"] == 0] == 0)
    for k in (1, 2, 4):
        p = d["p_hat"][d["separation"] == k]
        assert np.all(np.diff(p) <= 0)
    # wider separation survives longer
    assert d["p_hat"][(d["separation"] == 4) & (d["n"] == 80)] >= d["p_hat"][(d["separation"] == 1) & (d["n"] == 80)]


def test_separation_one_is_near_at_start():
    wb = run_walks(seed=3, tag=99, R=300, p=0.8, horizon=300, starts=[(0, 0), (1, 0)], n_end=100,
                   track_pairs=True, stop_rule=1)
    assert np.all(wb.tnear[:, 0] == 0)
    assert np.all((wb.tmeet[:, 0] == -1) | (wb.tmeet[:, 0] >= wb.tnear[:, 0]))


def test_gap_small():
    r = run(cfg("gap", 400, separations=[1, 2, 4], mixed=[[3, 10]], M_grid=[1, 3, 10, 30], n_end=300))
    m = _tab(r, "gap_max")["max_p_hat"]
    assert np.all(np.diff(m) <= 0)
    d = _tab(r, "gap")
    assert np.all((d["p_hat"] >= 0) & (d["p_hat"] <= 1))
    # separation@start-time-offset labels, including the mixed start
    assert set(d["start"]) == {"1@0", "2@0", "4@0", "3@10"}


def test_density_m0_is_theta():
    R = 6
    r = run(cfg("density", R, m_grid=[0, 10, 40], L=60))
    d = _tab(r, "density")
    assert np.all(np.diff(d["p_hat"]) <= 3 * d["se"][:-1] + 3 * d["se"][1:])
    # m = 0: fraction of backbone sites of row 0 in [-L, L] on each replicate field
    A = 60 + 40
    theta = []
    for k in range(R):
        fc = FieldConfig(0.8, replicate_seed(1, 21, k), 40 + 128, -A, A)
        theta.append(compute_backbone(fc).row(0)[A - 60: A + 61].mean())
    assert d["p_hat"][0] == pytest.approx(np.mean(theta))


def test_eta_small_interval_vanishes():
    r = run(cfg("eta", 3, L=200, v_hat=0.68, intervals=[[0.0, 1e-6], [0.0, 1.0]]))
    d = _tab(r, "eta")
    small = d["mean"][d["interval"] == "(0.0,1e-06)"]
    assert np.all(small < 1e-3)
    assert r.fits["max_count_finite"]


def test_eta_mult_small():
    r = run(cfg("eta-mult", 300, v_hat=0.68, eps_grid=[0.001, 0.05, 0.2]))
    d = _tab(r, "eta_mult")
    assert np.all(d["p_hat"][d["eps"] == 0.001] == 0)
    for t in set(d["t"]):
        assert np.all(np.diff(d["p_hat"][d["t"] == t]) >= 0)


def test_crossing_lightcone_and_monotone():
    r = run(cfg("crossing", 300, v_hat=0.68, t_grid=[0.4, 0.1], u_grid=[0.2], delta_grid=[0.1]))
    d = _tab(r, "crossing")
    assert np.all((d["p_hat"] >= 0) & (d["p_hat"] <= 1))
    imp = 2 * d["t_lattice"] < d["right"] - d["u_lattice"]
    assert np.all(d["p_hat"][imp] == 0)
    order = np.argsort(d["t"])
    assert np.all(np.diff(d["p_hat"][order]) >= -3 * d["se"][order][1:] - 1e-12)


def test_holes_p_one_and_monotone():
    r = run(cfg("holes", 1, p=1.0, width=2000, rows=20))
    d = _tab(r, "holes")
    assert np.all(d["p_hat"][d["k"] >= 1] == 0)
    r = run(cfg("holes", 1, width=20_000, rows=40))
    d = _tab(r, "holes")
    assert np.all(np.diff(d["p_hat"]) <= 0)


def test_drift_p_one_zero():
    r = run(cfg("drift", 300, p=1.0, n_end=300, hit_n_end=300))
    d = _tab(r, "drift")
    assert 0 not in d["x"]
    ok = d["count"] > 50
    assert np.all(np.abs(d["mean"][ok]) <= 4 * d["mean_se"][ok])


def test_quenched_p_one_matches_difference_walk():
    grid = [10, 40, 160]
    r = run(cfg("quenched", 3000, p=1.0, n_grid=grid, omega_count=2, separation=4))
    q = _tab(r, "quenched")
    ref = difference_walk_tail(4, grid, 200_000, 11)
    for w in set(q["omega"]):
        sel = q["omega"] == w
        assert np.all(np.abs(q["p_hat"][sel] - ref) <= 4 * q["se"][sel] + 0.005)
    assert r.checks == []


def test_clt_p_one_small():
    r = run(cfg("clt", 4000, p=1.0, n_max=128))
    assert r.fits["v_hat"] == pytest.approx(2 / 3, abs=0.05)


def test_fdd_single_start_reduces_to_marginals():
    r = run(cfg("fdd", 200, v_hat=0.68, starts=[[0, 0]], gamma_replicates=4, independent_replicates=50,
                marginal_t=[0.5]))
    assert set(r.tables["marginals"].column("walk")) == {0}
    assert r.tables["pair_meet"].rows == []


def test_cbm_and_f_check_pass():
    assert run(cfg("f-check", 1)).passed
    assert run(cfg("cbm", 2000, t_end=1.0, marginal_t=[0.5, 1.0])).passed


@pytest.mark.parametrize("tag,R,params", [
    ("tails", 2500, {"n_grid": [10, 40], "separations": [1, 3]}),
    ("density", 3, {"m_grid": [0, 20], "L": 50}),
    ("fdd", 2100, {"v_hat": 0.68, "gamma_replicates": 3, "independent_replicates": 30}),
])
def test_thread_invariance(tag, R, params):
    a = run(cfg(tag, R, threads=1, **params))
    b = run(cfg(tag, R, threads=3, **params))
    assert {k: t.to_csv() for k, t in a.tables.items()} == {k: t.to_csv() for k, t in b.tables.items()}


def test_registry_lists_all_subcommands():
    assert set(EXPERIMENTS) == {"survival", "clt", "tails", "gap", "density", "eta", "eta-mult", "crossing",
                                "holes", "fdd", "quenched", "drift", "f-check", "cbm"}
