"""Walk experiments on the lazy engine: survival, CLT variance, meeting tails,
near-to-meet gaps, difference drift and quenched tails."""
from __future__ import annotations

import math
import time

import numpy as np
from scipy import stats as sps

from ..errors import ConfigInvalid, RejectionBudgetExceeded
from ..field import FieldConfig, LazyBackbone, horizon_stability
from ..rng import QUENCHED, replicate_seed
from . import core
from .core import Check, ExperimentConfig, ExperimentResult, Table
from .engine import run_survival, run_walks

TAGS = {"survival": 11, "clt": 12, "tails": 13, "gap": 14, "drift": 15, "drift-hit": 16,
        "quenched": 17, "quenched-annealed": 18}

START_MODES = {"rejection": 0, "projection": 1}


def _start_mode(cfg: ExperimentConfig) -> int:
    name = cfg.get("conditioning", "rejection")
    if name not in START_MODES:
        raise ConfigInvalid(f"conditioning must be one of {sorted(START_MODES)}")
    return START_MODES[name]


def _walks(cfg: ExperimentConfig, tag: str, R: int, starts, n_end: int, **kw):
    return run_walks(seed=cfg.seed, tag=TAGS[tag], R=R, p=cfg.p, horizon=n_end + cfg.margin,
                     starts=starts, n_end=n_end, threads=cfg.threads, **kw)


def _result(cfg: ExperimentConfig, t0: float, **kw) -> ExperimentResult:
    res = ExperimentResult(cfg.tag, cfg.echo(), **kw)
    res.wall_time = time.perf_counter() - t0
    res.provenance = {"master_seed": cfg.seed, "p": cfg.p, "replicates": cfg.replicates}
    return res


def _categories(values: np.ndarray, grid) -> np.ndarray:
    """Number of grid points n with value > n; 'never' (negative) counts all."""
    v = np.where(values < 0, np.iinfo(np.int64).max, values)
    return np.searchsorted(np.asarray(grid), v, side="left")


def _tail_from_cats(cats: np.ndarray, ngrid: int) -> np.ndarray:
    c = np.bincount(cats, minlength=ngrid + 1)
    ge = np.cumsum(c[::-1])[::-1]          # ge[j] = #cats >= j
    return ge[1:ngrid + 1] / cats.size


def lattice_cdf_band(p_hat, se) -> bool:
    """Non-increasing within 3 sigma."""
    p_hat = np.asarray(p_hat, float)
    se = np.asarray(se, float)
    return bool(np.all(np.diff(p_hat) <= 3 * np.sqrt(se[1:] ** 2 + se[:-1] ** 2) + 1e-15))


# -- survival ------------------------------------------------------------------

def survival(cfg: ExperimentConfig) -> ExperimentResult:
    """theta(T) = P((0,0) reaches level T), over a horizon grid."""
    t0 = time.perf_counter()
    grid = [int(t) for t in cfg.get("horizons", [10, 30, 100, 300, 1000])]
    R = cfg.replicates
    tab = Table(["horizon", "theta", "se", "replicates"],
                plot={"x": "horizon", "y": "theta", "y_err": "se"})
    th = []
    for T in grid:
        hits = run_survival(cfg.seed, TAGS["survival"], R, cfg.p, T, cfg.threads)
        m = float(hits.mean())
        se = math.sqrt(m * (1 - m) / R)
        tab.add(T, m, se, R)
        th.append((m, se))
    p, s = zip(*th)
    # horizon stability of the level-0 row on one dense field
    st_T = int(cfg.get("stability_horizon", 200))
    st_d = [int(d) for d in cfg.get("stability_deltas", [8, 16, 32, 64, 128])]
    st_w = int(cfg.get("stability_width", 4000))
    stab = horizon_stability(cfg.p, st_T, st_d, st_w, replicate_seed(cfg.seed, TAGS["survival"], 0))
    htab = Table(["delta", "changed_fraction"], plot={"x": "delta", "y": "changed_fraction"})
    for d, f in stab:
        htab.add(d, f)
    checks = [Check("survival.monotone", float(max(np.diff(p), default=0.0)),
                    lattice_cdf_band(p, s), "theta non-increasing in horizon within 3 sigma")]
    return _result(cfg, t0, tables={"survival": tab, "horizon_stability": htab},
                   fits={"theta_at_max_horizon": p[-1], "se": s[-1],
                         "stability_horizon": st_T}, checks=checks)


# -- CLT variance ----------------------------------------------------------------

def clt(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    n_max = int(cfg.get("n_max", 1000))
    levels = int(cfg.get("levels", 6))
    grid = cfg.get("n_grid") or sorted(set(max(1, int(round(n_max / 2 ** k))) for k in range(levels + 1)))
    grid = [int(n) for n in grid]
    n_max = grid[-1]
    R = cfg.replicates
    wb = _walks(cfg, "clt", R, [(0, 0)], n_max, rec_t=grid, start_mode=_start_mode(cfg))
    X = wb.pos[:, 0, :].astype(np.float64)
    var = X.var(axis=0, ddof=1)
    mean = X.mean(axis=0)
    upper = np.arange(len(grid)) >= len(grid) // 2
    g = np.asarray(grid, float)
    v_hat = core.ols(g[upper], var[upper]).slope

    def boot(idx):
        return core.ols(g[upper], X[idx][:, upper].var(axis=0, ddof=1)).slope

    ci = core.percentile_ci(core.bootstrap(boot, R, cfg.seed, TAGS["clt"]))
    xn = wb.pos[:, 0, -1]
    scale = math.sqrt(v_hat * n_max)
    ks = core.ks_lattice(xn, scale)
    ks_raw = core.ks_continuous(xn / scale, sps.norm.cdf)

    tab = Table(["n", "mean", "var", "var_over_n", "replicates"], plot={"x": "n", "y": "var"})
    for n, m_, v_ in zip(grid, mean, var):
        tab.add(n, float(m_), float(v_), float(v_ / n), R)
    fits = {"v_hat": v_hat, "v_ci": list(ci), "ks": ks, "ks_raw": ks_raw, "n_max": n_max,
            "mean_attempts": float(wb.attempts.mean())}
    checks = [Check("clt.ks", ks, ks <= 0.01, "KS(X_n / sqrt(v n), N(0,1)) <= 0.01 (continuity-corrected)")]
    if cfg.p == 1.0:
        checks.append(Check("clt.v_anchor", v_hat, abs(v_hat - 2.0 / 3.0) <= 0.01, "|v - 2/3| <= 0.01 at p = 1"))
    return _result(cfg, t0, tables={"clt": tab}, fits=fits, checks=checks)


def clt_v_hat(p: float, seed: int, margin: int, threads: int = 1,
              R: int = 20_000, n_max: int = 1000) -> float:
    """v estimate used by the rescaled experiments when none is supplied."""
    cfg = ExperimentConfig("clt", p=p, seed=seed, replicates=R, margin=margin, threads=threads,
                           params={"n_max": n_max})
    return float(clt(cfg).fits["v_hat"])


# -- meeting tails -----------------------------------------------------------------

DEFAULT_TAIL_GRID = sorted(set(core.geometric_grid(10, 10_000) + [100, 1000]))


def _slope_boot(cats, grid, fit_mask, seed, tag):
    R = cats.size
    ng = len(grid)
    lg = np.log(np.asarray(grid, float))[fit_mask]

    def stat(idx):
        tail = _tail_from_cats(cats[idx], ng)[fit_mask]
        if np.any(tail <= 0):
            return math.nan
        return core.ols(lg, np.log(tail)).slope

    return core.percentile_ci(core.bootstrap(stat, R, seed, tag))


def tails(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    seps = [int(k) for k in cfg.get("separations", [2, 4, 8, 16])]
    grid = [int(n) for n in cfg.get("n_grid", DEFAULT_TAIL_GRID)]
    fit_lo, fit_hi = cfg.get("fit_range", [100, grid[-1]])
    n_sep = int(cfg.get("sep_exponent_n", grid[-1]))
    if n_sep not in grid:
        raise ConfigInvalid("sep_exponent_n must lie on the n-grid")
    R = cfg.replicates
    n_end = grid[-1]
    g = np.asarray(grid, float)
    fit_mask = (g >= fit_lo) & (g <= fit_hi)
    tab = Table(["separation", "n", "p_hat", "se", "replicates", "sqrt_n_p_hat"],
                plot={"x": "n", "y": "p_hat", "y_err": "se", "series": "separation"})
    fits, checks, at_n, cats_by_k = {"slopes": {}}, [], {}, {}
    for j, k in enumerate(seps):
        wb = _walks(cfg, "tails", R, [(0, 0), (k, 0)], n_end, track_pairs=True, stop_rule=1,
                    start_mode=_start_mode(cfg), r_offset=j * R)
        cats = _categories(wb.tmeet[:, 0], grid)
        cats_by_k[k] = cats
        tail = _tail_from_cats(cats, len(grid))
        se = core.binomial_se(tail, R)
        for n, q, s in zip(grid, tail, se):
            tab.add(k, n, float(q), float(s), R, float(math.sqrt(n) * q))
        at_n[k] = float(tail[grid.index(n_sep)])
        if k == 0:
            continue
        fit = core.loglog_slope(g[fit_mask], tail[fit_mask])
        ci = _slope_boot(cats, grid, fit_mask, cfg.seed, TAGS["tails"] * 100 + j)
        fits["slopes"][str(k)] = {"slope": fit.slope, "ci": list(ci), "r2": fit.r2}
        checks.append(Check(f"tails.slope.k{k}", fit.slope, -0.6 <= fit.slope <= -0.4,
                            f"log-log slope in n over [{fit_lo}, {fit_hi}] within [-0.6, -0.4]"))
        checks.append(Check(f"tails.monotone.k{k}", float(max(np.diff(tail), default=0.0)),
                            bool(np.all(np.diff(tail) <= 0)), "P(T_meet > n) non-increasing in n"))
    pos = [k for k in seps if k > 0]
    if len(pos) >= 2:
        ks_ = np.asarray(pos, float)
        ys = np.array([at_n[k] for k in pos])
        sf = core.loglog_slope(ks_, ys)
        jn = grid.index(n_sep)
        rng_streams = [cats_by_k[k] for k in pos]

        def stat(idx):
            ys_b = [(_tail_from_cats(c[idx], len(grid)))[jn] for c in rng_streams]
            return core.loglog_slope(ks_, ys_b).slope

        ci = core.percentile_ci(core.bootstrap(stat, R, cfg.seed, TAGS["tails"] * 100 + 99))
        fits["separation_exponent"] = {"slope": sf.slope, "ci": list(ci), "n": n_sep, "r2": sf.r2}
        checks.append(Check("tails.separation_exponent", sf.slope, 0.85 <= sf.slope <= 1.15,
                            f"log-log slope in separation at n={n_sep} within [0.85, 1.15]"))
        fits["constant_C"] = float(max(math.sqrt(n_sep) * at_n[k] / k for k in pos))
    return _result(cfg, t0, tables={"tails": tab}, fits=fits, checks=checks)


# -- near-to-meet gap -----------------------------------------------------------------

def _gap_curve(tnear, tmeet, n_end, Ms):
    out = []
    for M in Ms:
        elig = (tnear >= 0) & (tnear <= n_end - M)
        ev = elig & ((tmeet < 0) | (tmeet - tnear >= M))
        ne = int(elig.sum())
        out.append((int(ev.sum()) / ne if ne else math.nan, ne))
    return out


def gap(cfg: ExperimentConfig) -> ExperimentResult:
    """P(T_meet - T_near >= M), estimated on replicates with T_near <= n_end - M
    (the only ones for which the event is decided before the run ends)."""
    t0 = time.perf_counter()
    seps = [int(k) for k in cfg.get("separations", [1, 2, 4, 8, 16])]
    mixed = [tuple(int(v) for v in z) for z in cfg.get("mixed", [[3, 10], [8, 40]])]
    Ms = [int(M) for M in cfg.get("M_grid", [1, 3, 10, 30, 100, 300, 1000])]
    spreads = [int(s) for s in cfg.get("spread_grid", [1, 2, 4, 8, 16, 32, 64])]
    n_end = int(cfg.get("n_end", 5000))
    if max(Ms) >= n_end:
        raise ConfigInvalid("n_end must exceed every M")
    R = cfg.replicates
    configs = [((0, 0), (k, 0)) for k in seps] + [((0, 0), (x, t)) for x, t in mixed]
    tab = Table(["start", "M", "p_hat", "se", "eligible"],
                plot={"x": "M", "y": "p_hat", "y_err": "se", "series": "start"})
    stab = Table(["start", "s", "p_hat", "se", "eligible"],
                 plot={"x": "s", "y": "p_hat", "y_err": "se", "series": "start"})
    curves = {}
    for j, (z1, z2) in enumerate(configs):
        label = f"{z2[0]}@{z2[1]}"
        wb = _walks(cfg, "gap", R, [z1, z2], n_end, track_pairs=True, stop_rule=1,
                    start_mode=_start_mode(cfg), r_offset=j * R)
        tn, tm, sp = wb.tnear[:, 0], wb.tmeet[:, 0], wb.spread[:, 0]
        cur = _gap_curve(tn, tm, n_end, Ms)
        curves[label] = cur
        for M, (q, ne) in zip(Ms, cur):
            tab.add(label, M, q, float(core.binomial_se(q, ne)), ne)
        done = tm >= 0
        nd = int(done.sum())
        for s in spreads:
            q = float((sp[done] >= s).mean()) if nd else math.nan
            stab.add(label, s, q, float(core.binomial_se(q, nd)), nd)
        if z2[1] == 0 and abs(z2[0]) <= 1:
            curves[label + "_near0"] = bool(np.all(tn == 0))
    upper = [max(curves[c][i][0] for c in curves if not c.endswith("_near0")) for i in range(len(Ms))]
    mtab = Table(["M", "max_p_hat"], plot={"x": "M", "y": "max_p_hat"})
    for M, q in zip(Ms, upper):
        mtab.add(M, q)
    fits = {"max_curve": dict(zip(map(str, Ms), upper))}
    checks = [Check("gap.max_monotone", float(max(np.diff(upper), default=0.0)),
                    bool(np.all(np.diff(upper) <= 1e-12)), "max-over-separations curve non-increasing in M")]
    if 10 in Ms and 1000 in Ms:
        a, b = upper[Ms.index(10)], upper[Ms.index(1000)]
        ratio = a / b if b > 0 else math.inf
        fits["ratio_10_1000"] = ratio
        checks.append(Check("gap.decay", ratio, ratio >= 10.0, "max P(gap >= 10) / max P(gap >= 1000) >= 10"))
    return _result(cfg, t0, tables={"gap": tab, "gap_max": mtab, "spread": stab}, fits=fits, checks=checks)


# -- difference drift --------------------------------------------------------------

def drift(cfg: ExperimentConfig) -> ExperimentResult:
    """Per-step mean and variance of the increment of |X' - X| given the current
    separation x (raw chain, not the regeneration chain), plus hitting ratios."""
    t0 = time.perf_counter()
    seps = [int(k) for k in cfg.get("separations", [2, 4, 8, 16])]
    x_max = int(cfg.get("x_max", 32))
    n_end = int(cfg.get("n_end", 2000))
    hit_x = [int(x) for x in cfg.get("hit_x", [4, 8, 16, 32])]
    y = int(cfg.get("hit_y", 64))
    hit_n = int(cfg.get("hit_n_end", 10_000))
    R = cfg.replicates
    S = np.zeros(x_max + 1, np.int64)
    Q = np.zeros(x_max + 1, np.int64)
    N = np.zeros(x_max + 1, np.int64)
    for j, k in enumerate(seps):
        wb = _walks(cfg, "drift", R, [(0, 0), (k, 0)], n_end, track_pairs=True, stop_rule=1,
                    acc_size=x_max + 1, r_offset=j * R)
        S += wb.acc_sum
        Q += wb.acc_sq
        N += wb.acc_cnt
    tab = Table(["x", "mean", "mean_se", "var", "count"], plot={"x": "x", "y": "mean", "y_err": "mean_se"})
    xs, means, ses = [], [], []
    vmin = math.inf
    for x in range(1, x_max + 1):
        if N[x] < 2:
            continue
        m = S[x] / N[x]
        v = Q[x] / N[x] - m * m
        se = math.sqrt(max(v, 0.0) / N[x])
        tab.add(x, float(m), se, float(v), int(N[x]))
        xs.append(x)
        means.append(m)
        ses.append(se)
        vmin = min(vmin, v)
    xs_ = np.asarray(xs, float)
    am = np.abs(means)
    sig = am > 3 * np.asarray(ses)
    fits = {"variance_min": vmin, "significant_x": [int(x) for x in xs_[sig]]}
    if sig.sum() >= 2:
        f = core.ols(xs_[sig], np.log(am[sig]))
        fits["drift_decay_rate"] = -f.slope
        fits["drift_prefactor"] = math.exp(f.intercept)
    # hitting ratios: reach separation y before separation <= 1
    htab = Table(["x", "y", "p_hat", "se", "resolved", "shape"], plot={"x": "x", "y": "p_hat", "y_err": "se"})
    ph, res_n = [], []
    for j, x in enumerate(hit_x):
        wb = _walks(cfg, "drift-hit", R, [(0, 0), (x, 0)], hit_n, track_pairs=True, stop_rule=2,
                    far_thr=y, r_offset=j * R)
        tn, tf = wb.tnear[:, 0], wb.tfar[:, 0]
        far_first = (tf >= 0) & ((tn < 0) | (tf < tn))
        resolved = (tf >= 0) | (tn >= 0)
        nr = int(resolved.sum())
        ph.append(float(far_first.sum()) / nr if nr else math.nan)
        res_n.append(nr)
    ph = np.asarray(ph)
    shape = np.asarray(hit_x, float) / y
    c = float(np.dot(shape, ph) / np.dot(shape, shape))
    for x, q, nr, sh in zip(hit_x, ph, res_n, shape):
        htab.add(x, y, float(q), float(core.binomial_se(q, nr)), nr, float(c * sh))
    fits["hit_constant"] = c
    checks = [Check("drift.variance_positive", vmin, vmin > 0, "per-step variance bounded away from 0")]
    if 8 in hit_x:
        q8 = float(ph[hit_x.index(8)])
        ref = c * 8 / y
        checks.append(Check("drift.hit_ratio", q8 / ref, abs(q8 - ref) <= 0.3 * ref,
                            f"P(reach {y} before <=1 | x=8) within 30% of c * 8/{y}"))
    return _result(cfg, t0, tables={"drift": tab, "hitting": htab}, fits=fits, checks=checks)


# -- quenched tails ----------------------------------------------------------------

def _omega_seeds(cfg: ExperimentConfig, count: int, k: int, T: int, max_attempts: int = 1000) -> list[int]:
    """omega seeds for which both (0, 0) and (k, 0) lie in the horizon-T backbone."""
    out = []
    for j in range(count):
        for a in range(max_attempts):
            s = replicate_seed(cfg.seed, QUENCHED, j, a)
            lb = LazyBackbone(FieldConfig(cfg.p, s, T), width=1 << max(10, math.ceil(math.log2(8 * math.sqrt(T) + k + 64))))
            if lb.bit(0, 0) and lb.bit(k, 0):
                out.append(s)
                break
        else:
            raise RejectionBudgetExceeded(f"no omega seed with both starts in the backbone (p={cfg.p})")
    return out


def quenched(cfg: ExperimentConfig) -> ExperimentResult:
    """sqrt(n) P_omega(T_meet > n) for fixed omega, averaged over permutation fields."""
    t0 = time.perf_counter()
    k = int(cfg.get("separation", 4))
    count = int(cfg.get("omega_count", 4))
    grid = [int(n) for n in cfg.get("n_grid", core.geometric_grid(10, 10_000))]
    R = cfg.replicates
    n_end = grid[-1]
    T = n_end + cfg.margin
    seeds = _omega_seeds(cfg, count, k, T)
    tab = Table(["omega", "n", "p_hat", "se", "sqrt_n_p_hat", "sqrt_n_se"],
                plot={"x": "n", "y": "sqrt_n_p_hat", "y_err": "sqrt_n_se", "series": "omega"})
    curves = []
    for j, s in enumerate(seeds):
        wb = run_walks(seed=s, tag=TAGS["quenched"], R=R, p=cfg.p, horizon=T, starts=[(0, 0), (k, 0)],
                       n_end=n_end, track_pairs=True, stop_rule=1, quenched_omega=s, threads=cfg.threads)
        tail = _tail_from_cats(_categories(wb.tmeet[:, 0], grid), len(grid))
        se = core.binomial_se(tail, R)
        sq = np.sqrt(np.asarray(grid, float))
        for n, q, e, a, b in zip(grid, tail, se, sq * tail, sq * se):
            tab.add(j, n, float(q), float(e), float(a), float(b))
        curves.append((sq * tail, sq * se))
    # annealed reference over the same grid
    wb = _walks(cfg, "quenched-annealed", R, [(0, 0), (k, 0)], n_end, track_pairs=True, stop_rule=1)
    ann = _tail_from_cats(_categories(wb.tmeet[:, 0], grid), len(grid)) * np.sqrt(np.asarray(grid, float))
    atab = Table(["n", "sqrt_n_p_hat"], plot={"x": "n", "y": "sqrt_n_p_hat"})
    for n, a in zip(grid, ann):
        atab.add(n, float(a))
    ann_sup = float(ann[np.asarray(grid) >= min(100, n_end)].max())
    last = [float(c[0][-1]) for c in curves]
    last_se = [float(c[1][-1]) for c in curves]
    # stabilisation: relative change over the last decade
    i10 = int(np.searchsorted(grid, n_end / 10))
    stab = [float(abs(c[0][-1] - c[0][i10]) / c[0][-1]) if c[0][-1] > 0 else math.nan for c in curves]
    pairs, distinct = 0, 0
    for a in range(len(curves)):
        for b in range(a + 1, len(curves)):
            pairs += 1
            z = abs(last[a] - last[b]) / math.hypot(last_se[a], last_se[b]) if last_se[a] + last_se[b] > 0 else 0.0
            distinct += z > 3.0
    sup = max(float(c[0][np.asarray(grid) >= min(100, n_end)].max()) for c in curves)
    fits = {"omega_seeds": [str(s) for s in seeds], "final": last, "final_se": last_se,
            "relative_change_last_decade": stab, "distinct_pairs": distinct, "pairs": pairs,
            "dispersion": float(np.std(last)), "annealed_final": float(ann[-1]),
            "sup_ratio_to_annealed": sup / ann_sup if ann_sup > 0 else math.nan}
    # exploratory diagnostic: no pass/fail threshold
    return _result(cfg, t0, tables={"quenched": tab, "annealed": atab}, fits=fits, checks=[])
