"""Finite-dimensional comparisons of the rescaled flow with coalescing
Brownian motions, the reference sampler itself, and the f-function checks."""
from __future__ import annotations

import math
import time

import numpy as np
from scipy import stats as sps

from .. import reference
from ..errors import ConfigInvalid
from ..metrics import gamma_alpha, path_dist, scale_path, sup_dist
from ..reference import CBMConfig, cbm_statistics, pair_meet_cdf
from ..walks import LatticePath
from . import core
from .annealed import START_MODES, _result
from .core import Check, ExperimentConfig, ExperimentResult, Table
from .engine import run_walks
from .flow import v_hat_for

TAGS = {"fdd": 31, "fdd-marg": 32, "fdd-ind": 33, "fdd-gamma": 34, "cbm": 35}


def _lattice_starts(points, bs: float, delta: float):
    return [(int(math.floor(x * bs / delta + 1e-9)), int(round(t / delta ** 2))) for x, t in points]


def fdd(cfg: ExperimentConfig) -> ExperimentResult:
    """(i) rescaled pair meeting-time law, (ii) time-t marginals, (iii)
    increment correlation of independent-permutation walks before they come
    near, (iv) distance between gamma_alpha of the flow paths and the flow."""
    t0 = time.perf_counter()
    delta = float(cfg.get("delta", 0.05))
    d = float(cfg.get("d", 1.0))
    t_max = float(cfg.get("t_max", 4.0))
    marg_t = [float(t) for t in cfg.get("marginal_t", [0.5, 1.0, 2.0])]
    starts = cfg.get("starts")
    gdeltas = sorted((float(x) for x in cfg.get("gamma_delta_grid", [0.2, 0.1, 0.05])), reverse=True)
    R_gamma = int(cfg.get("gamma_replicates", 300))
    mode = START_MODES[cfg.get("conditioning", "projection")]
    v = v_hat_for(cfg)
    bs = math.sqrt(v)
    R = cfg.replicates
    pts = [(0.0, 0.0), (d, 0.0)] if starts is None else [tuple(map(float, z)) for z in starts]
    if not 1 <= len(pts) <= 5:
        raise ConfigInvalid("fdd takes between 1 and 5 starting points")
    lat = _lattice_starts(pts, bs, delta)
    n_end = int(round(t_max / delta ** 2))
    rec = sorted(set(int(round(t / delta ** 2)) for t in marg_t))
    horizon = n_end + cfg.margin
    tables, fits, checks = {}, {"v_hat": v, "lattice_starts": [list(z) for z in lat]}, []

    # (i) + (ii) on the coalescing flow
    wb = run_walks(seed=cfg.seed, tag=TAGS["fdd"], R=R, p=cfg.p, horizon=horizon, starts=lat,
                   n_end=n_end, start_mode=mode, rec_t=[0] + rec, track_pairs=len(lat) > 1,
                   stop_rule=1, threads=cfg.threads)
    mt = Table(["pair", "d_eff", "ks", "p_meet_t_max", "ref_t_max"],
               plot={"x": "d_eff", "y": "ks", "series": "pair"})
    q = 0
    for i in range(len(lat)):
        for j in range(i + 1, len(lat)):
            d_eff = abs(lat[j][0] - lat[i][0]) * delta / bs
            tm = wb.tmeet[:, q].astype(float)
            tm[tm < 0] = np.inf
            tmr = tm * delta ** 2 - max(lat[i][1], lat[j][1]) * delta ** 2
            ks = core.ks_censored(tmr, lambda t: pair_meet_cdf(d_eff, t), t_max)
            mt.add(f"{i}-{j}", d_eff, ks, float(np.mean(tmr <= t_max)), float(pair_meet_cdf(d_eff, t_max)))
            checks.append(Check(f"fdd.pair_meet[{i}-{j}]", ks, ks <= 0.05,
                                "KS(rescaled meeting-time CDF, erfc(d / (2 sqrt t))) <= 0.05"))
            q += 1
    tables["pair_meet"] = mt
    at = Table(["walk", "t", "ks", "ks_raw", "var_ratio"], plot={"x": "t", "y": "ks", "series": "walk"})
    for i in range(len(lat)):
        x0 = wb.pos[:, i, 0]
        for k, tl in enumerate(rec):
            disp = wb.pos[:, i, k + 1] - x0
            sc = math.sqrt(v * (tl - lat[i][1]))
            ks = core.ks_lattice(disp, sc)
            ks_raw = core.ks_continuous(disp / sc, sps.norm.cdf)
            at.add(i, tl * delta ** 2, ks, ks_raw, float(disp.var() / sc ** 2))
            checks.append(Check(f"fdd.marginal[{i}]@t={tl * delta ** 2:g}", ks, ks <= 0.05,
                                "KS(rescaled displacement, N(0, t)) <= 0.05 (continuity-corrected)"))
    tables["marginals"] = at

    # (iii) independent permutations: per-step increments before the pair comes near.
    # Only steps n < T_near enter (a condition on the past), so the statistic
    # is not biased by selecting on the future of the difference.
    if len(lat) >= 2:
        R_ind = int(cfg.get("independent_replicates", 2000))
        n_ind = int(round(n_end * float(cfg.get("independent_fraction", 0.25))))
        wi = run_walks(seed=cfg.seed, tag=TAGS["fdd-ind"], R=R_ind, p=cfg.p, horizon=n_ind + cfg.margin,
                       starts=lat[:2], n_end=n_ind, perm_mode=1, start_mode=mode, rec_t=range(n_ind + 1),
                       track_pairs=True, stop_rule=0, threads=cfg.threads)
        inc = np.diff(wi.pos[:, :2, :], axis=2).astype(float)      # R x 2 x n_ind
        tn = np.where(wi.tnear[:, 0] < 0, n_ind, wi.tnear[:, 0])
        before = np.arange(n_ind)[None, :] < tn[:, None]
        S = (inc[:, 0] * inc[:, 1] * before).sum(axis=1)
        Q1 = (inc[:, 0] ** 2 * before).sum()
        Q2 = (inc[:, 1] ** 2 * before).sum()
        corr = float(S.sum() / math.sqrt(Q1 * Q2)) if Q1 > 0 and Q2 > 0 else math.nan
        z = float(S.mean() / (S.std(ddof=1) / math.sqrt(R_ind))) if S.std() > 0 else 0.0
        ct = Table(["steps", "corr", "z", "replicates", "step_pairs"], plot={"x": "steps", "y": "corr"})
        ct.add(n_ind, corr, z, R_ind, int(before.sum()))
        fits["independent_corr"] = corr
        fits["independent_z"] = z
        checks.append(Check("fdd.independent_corr", z, abs(z) <= 3.0,
                            "per-step increment correlation before T_near: |z| <= 3"))
        tables["independent"] = ct

    # (iv) gamma_alpha of the rescaled flow paths against the flow itself
    if len(lat) >= 2:
        gt = Table(["delta", "median_path_dist", "median_sup_dist", "mean_path_dist", "mean_sup_dist",
                    "frac_nonzero", "median_nonzero_path_dist", "replicates"],
                   plot={"x": "delta", "y": "mean_path_dist"})
        med, mean = [], []
        for j, gd in enumerate(gdeltas):
            gl = _lattice_starts(pts, bs, gd)
            ne = int(round(t_max / gd ** 2))
            wg = run_walks(seed=cfg.seed, tag=TAGS["fdd-gamma"] * 10 + j, R=R_gamma, p=cfg.p,
                           horizon=ne + cfg.margin, starts=gl, n_end=ne, start_mode=mode,
                           rec_t=range(ne + 1), threads=cfg.threads)
            pd, sd = [], []
            for r in range(R_gamma):
                raw = []
                for i, (_, tl) in enumerate(gl):
                    xs = wg.pos[r, i, tl:]
                    raw.append(scale_path(LatticePath((int(xs[0]), tl), xs), bs, gd))
                out = gamma_alpha(raw)
                pd.append(max(path_dist(f, g) for f, g in zip(out, raw)))
                sd.append(max(sup_dist(f, g) for f, g in zip(out, raw)))
            pd, sd = np.asarray(pd), np.asarray(sd)
            med.append(float(np.median(pd)))
            mean.append(float(pd.mean()))
            nz = pd[pd > 0]
            gt.add(gd, med[-1], float(np.median(sd)), mean[-1], float(sd.mean()), float((pd > 0).mean()),
                   float(np.median(nz)) if nz.size else 0.0, R_gamma)
        tables["gamma_alpha"] = gt
        # the two agree on most replicates, so the median is often exactly 0;
        # the mean carries the trend
        ok = bool(np.all(np.diff(med) <= 0) and np.all(np.diff(mean) < 0))
        checks.append(Check("fdd.gamma_alpha_trend", {"median": med, "mean": mean}, ok,
                            "median non-increasing and mean decreasing as delta decreases"))
    return _result(cfg, t0, tables=tables, fits=fits, checks=checks)


def cbm(cfg: ExperimentConfig) -> ExperimentResult:
    """The coalescing-BM sampler against its closed-form pair and marginal laws."""
    t0 = time.perf_counter()
    starts = [tuple(map(float, z)) for z in cfg.get("starts", [[0.0, 0.0], [1.0, 0.0]])]
    dt = float(cfg.get("dt", 1e-3))
    t_end = float(cfg.get("t_end", 4.0))
    marg_t = [float(t) for t in cfg.get("marginal_t", [0.5, 1.0, 2.0])]
    R = cfg.replicates
    cc = CBMConfig(tuple(starts), dt, t_end, cfg.seed ^ (TAGS["cbm"] << 32))
    pos, tm = cbm_statistics(cc, R, marg_t)
    tab = Table(["pair", "d", "ks"], plot={"x": "d", "y": "ks", "series": "pair"})
    checks = []
    q = 0
    for i in range(len(starts)):
        for j in range(i + 1, len(starts)):
            if starts[i][1] == starts[j][1]:
                dd = abs(starts[i][0] - starts[j][0])
                ks = core.ks_censored(tm[:, q] - starts[i][1], lambda t: pair_meet_cdf(dd, t), t_end - starts[i][1])
                tab.add(f"{i}-{j}", dd, ks)
                tol = 1.63 / math.sqrt(R) + 2 * math.sqrt(dt)
                checks.append(Check(f"cbm.pair[{i}-{j}]", ks, ks <= tol, f"KS <= 1.63/sqrt(R) + 2 sqrt(dt) = {tol:.4f}"))
            q += 1
    mtab = Table(["walk", "t", "ks"], plot={"x": "t", "y": "ks", "series": "walk"})
    tol = 1.63 / math.sqrt(R)
    for i, (x0, s) in enumerate(starts):
        for k, t in enumerate(sorted(marg_t)):
            if t <= s:
                continue
            z = (pos[:, i, k] - x0) / math.sqrt(t - s)
            ks = core.ks_continuous(z, sps.norm.cdf)
            mtab.add(i, t, ks)
            checks.append(Check(f"cbm.marginal[{i}]@t={t:g}", ks, ks <= tol, f"KS normality <= {tol:.4f}"))
    return _result(cfg, t0, tables={"cbm_pair": tab, "cbm_marginal": mtab}, fits={}, checks=checks)


def f_check(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    c1s = [float(c) for c in cfg.get("c1", [0.5, 1.0, 2.0])]
    lo, hi = (float(v) for v in cfg.get("x_range", [-50.0, 50.0]))
    step = float(cfg.get("step", 0.01))
    pts = [float(x) for x in cfg.get("residual_x", [-5.0, -1.0, -0.5, 0.5, 1.0, 5.0])]
    x = np.round(np.arange(int(round((hi - lo) / step)) + 1) * step + lo, 12)
    tab = Table(["c1", "f0", "min_f", "max_ratio", "max_closed_err", "max_residual"],
                plot={"x": "c1", "y": "max_residual"})
    checks = []
    for c in c1s:
        f = reference.superharmonic_f(x, c)
        f0 = reference.superharmonic_f(0.0, c)
        env = math.exp(2.0 / c) * np.abs(x)
        ratio = float(np.max(np.divide(f, env, out=np.zeros_like(f), where=env > 0)))
        closed = reference.superharmonic_f_closed(x, c)
        err = float(np.max(np.abs(f - closed) / np.maximum(1.0, np.abs(closed))))
        res = max(reference.ode_residual(p, c) for p in pts)
        tab.add(c, f0, float(f.min()), ratio, err, res)
        checks.append(Check(f"f.zero@c1={c:g}", f0, f0 == 0.0, "f(0) = 0"))
        checks.append(Check(f"f.bounds@c1={c:g}", ratio,
                            bool(np.all(f >= 0) and np.all(f <= env * (1 + 1e-12))), "0 <= f(x) <= e^{2/c1}|x|"))
        checks.append(Check(f"f.ode@c1={c:g}", res, res <= 1e-6, "ODE residual <= 1e-6"))
        checks.append(Check(f"f.closed_form@c1={c:g}", err, err <= 1e-8, "quadrature agrees with Ei form"))
    return _result(cfg, t0, tables={"f_check": tab}, fits={}, checks=checks)
