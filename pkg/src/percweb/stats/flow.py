"""Experiments on the whole coalescing flow: density, interval counts,
crossing events and hole sizes.  Dense experiments build the exact
dependency cone of the sites they read, so window truncation adds no bias."""
from __future__ import annotations

import functools
import math
import time

import numpy as np

from .._lazy import SENTINEL
from ..errors import ConfigInvalid
from ..field import FieldConfig, compute_backbone
from ..rng import replicate_seed
from ..walks import flow_occupancy
from . import core
from .annealed import _result, clt_v_hat, lattice_cdf_band
from .core import Check, ExperimentConfig, ExperimentResult, Table
from .engine import pmap, run_crossing, run_walks

TAGS = {"density": 21, "eta": 22, "eta-mult": 23, "crossing": 24, "holes": 25}


@functools.lru_cache(maxsize=16)
def _cached_v(p: float, seed: int, margin: int, threads: int) -> float:
    return clt_v_hat(p, seed, margin, threads)


def v_hat_for(cfg: ExperimentConfig) -> float:
    v = cfg.get("v_hat")
    if v is not None:
        if not float(v) > 0:
            raise ConfigInvalid("v_hat must be positive")
        return float(v)
    return _cached_v(float(cfg.p), int(cfg.seed), int(cfg.margin), int(cfg.threads))


def _field(cfg: ExperimentConfig, tag: str, r: int, T: int, lo: int, hi: int) -> FieldConfig:
    return FieldConfig(cfg.p, replicate_seed(cfg.seed, TAGS[tag], r), T, lo, hi)


# -- density ---------------------------------------------------------------------

DEFAULT_M_GRID = [0] + sorted(set(core.geometric_grid(10, 10_000) + [100, 1000]))


def density(cfg: ExperimentConfig) -> ExperimentResult:
    """p_m = P(0 is occupied at time m by the flow of all row-0 backbone sites).

    Each replicate starts walks from every backbone site of [-(L + m_max), L + m_max],
    which contains every start that can reach [-L, L] by time m_max, and
    averages the occupancy over [-L, L]."""
    t0 = time.perf_counter()
    grid = sorted(set(int(m) for m in cfg.get("m_grid", DEFAULT_M_GRID)))
    L = int(cfg.get("L", 2000))
    fit_lo, fit_hi = cfg.get("fit_range", [100, 10_000])
    m_max = grid[-1]
    A = L + m_max
    R = cfg.replicates
    T = m_max + cfg.margin

    def one(r):
        fc = _field(cfg, "density", r, T, -A, A)
        b = compute_backbone(fc)
        occ, x_first = flow_occupancy(b, fc, -A, A, grid)
        return occ[:, -L - x_first: L - x_first + 1].mean(axis=1)

    F = np.array(pmap(one, list(range(R)), cfg.threads))      # R x len(grid)
    p_hat = F.mean(axis=0)
    se = F.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(len(grid), math.nan)
    g = np.asarray(grid, float)
    mask = (g >= fit_lo) & (g <= fit_hi)
    fit = core.loglog_slope(g[mask], p_hat[mask])
    ci = core.percentile_ci(core.bootstrap(
        lambda idx: core.loglog_slope(g[mask], F[idx].mean(axis=0)[mask]).slope, R, cfg.seed, TAGS["density"]))
    tab = Table(["m", "p_hat", "se", "sqrt_m_p_hat", "replicates"],
                plot={"x": "m", "y": "p_hat", "y_err": "se"})
    for m, q, s in zip(grid, p_hat, se):
        tab.add(m, float(q), float(s), float(math.sqrt(m) * q), R)
    C = float(np.max(np.sqrt(g[mask]) * p_hat[mask])) if mask.any() else math.nan
    fits = {"slope": fit.slope, "slope_ci": list(ci), "r2": fit.r2, "C": C, "L": L, "window": [-A, A]}
    checks = [Check("density.slope", fit.slope, -0.6 <= fit.slope <= -0.4,
                    f"log-log slope in m over [{fit_lo}, {fit_hi}] within [-0.6, -0.4]"),
              Check("density.monotone", float(max(np.diff(p_hat), default=0.0)),
                    lattice_cdf_band(p_hat, se), "p_m non-increasing within 3 sigma")]
    return _result(cfg, t0, tables={"density": tab}, fits=fits, checks=checks)


# -- interval counts -----------------------------------------------------------------

def _window_counts(occ_row: np.ndarray, x_first: int, lo: float, hi: float, L: int, Q: int) -> float:
    """Mean number of occupied integers in (s + lo, s + hi) over shifts
    s in (1/Q) Z with the window inside [-L, L]."""
    P = np.concatenate([[0], np.cumsum(occ_row, dtype=np.int64)])
    s = np.arange(-L * Q, int(math.floor((L - hi) * Q)) + 1) / Q
    s = s[s + lo >= -L]
    ylo = np.floor(s + lo).astype(np.int64) + 1
    yhi = np.ceil(s + hi).astype(np.int64) - 1
    c = np.where(yhi >= ylo, P[yhi - x_first + 1] - P[ylo - x_first], 0)
    return float(c.mean())


def eta(cfg: ExperimentConfig) -> ExperimentResult:
    """Mean of eta-hat(0, t; a, b) for the diffusively rescaled flow against
    (b - a) / sqrt(pi t)."""
    t0 = time.perf_counter()
    delta = float(cfg.get("delta", 0.05))
    ts = [float(t) for t in cfg.get("t_grid", [0.5, 1.0, 2.0])]
    intervals = [tuple(float(v) for v in ab) for ab in cfg.get("intervals", [[0.0, 1.0]])]
    L = int(cfg.get("L", 3000))
    Q = int(cfg.get("shifts_per_site", 8))
    for a, b in intervals:
        if not a < b:
            raise ConfigInvalid("intervals need a < b")
    v = v_hat_for(cfg)
    bs = math.sqrt(v)
    tt = sorted(set(int(round(t / delta ** 2)) for t in ts))
    t_of = {int(round(t / delta ** 2)): t for t in ts}
    span = max(max(abs(a), abs(b)) for a, b in intervals) * bs / delta
    Lw = L + int(math.ceil(span)) + 1
    A = Lw + tt[-1]
    T = tt[-1] + cfg.margin
    R = cfg.replicates

    def one(r):
        fc = _field(cfg, "eta", r, T, -A, A)
        b = compute_backbone(fc)
        occ, x_first = flow_occupancy(b, fc, -A, A, tt)
        out = []
        for k in range(len(tt)):
            row = occ[k]
            for a, b_ in intervals:
                out.append(_window_counts(row, x_first, a * bs / delta, b_ * bs / delta, Lw, Q))
        return out

    E = np.array(pmap(one, list(range(R)), cfg.threads))     # R x (len(tt) * len(intervals))
    mean = E.mean(axis=0)
    se = E.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(E.shape[1], math.nan)
    tab = Table(["interval", "t", "t_lattice", "mean", "se", "bound", "ratio"],
                plot={"x": "t", "y": "mean", "y_err": "se", "series": "interval"})
    checks, ratios = [], {}
    j = 0
    per_int = {ab: [] for ab in intervals}
    for k, tl in enumerate(tt):
        t = t_of[tl]
        for a, b_ in intervals:
            bound = (b_ - a) / math.sqrt(math.pi * t)
            q = float(mean[j])
            ratios[f"({a},{b_})@{t}"] = q / bound
            tab.add(f"({a},{b_})", t, tl, q, float(se[j]), bound, q / bound)
            per_int[(a, b_)].append((q, float(se[j])))
            checks.append(Check(f"eta.upper[{a},{b_}]@t={t}", q / bound, q <= 1.05 * bound,
                                "mean eta-hat <= 1.05 (b-a)/sqrt(pi t)"))
            checks.append(Check(f"eta.close[{a},{b_}]@t={t}", q / bound, abs(q - bound) <= 0.15 * bound,
                                "mean eta-hat within 15% of (b-a)/sqrt(pi t)"))
            j += 1
    for (a, b_), vals in per_int.items():
        q, s = zip(*vals)
        checks.append(Check(f"eta.monotone[{a},{b_}]", float(max(np.diff(q), default=0.0)),
                            lattice_cdf_band(q, s), "mean eta-hat non-increasing in t within 3 sigma"))
    # local finiteness: counts are finite and mean * sqrt(t) / (b - a) stays bounded
    env = {}
    j = 0
    for tl in tt:
        for a, b_ in intervals:
            env[f"({a},{b_})@{t_of[tl]}"] = float(mean[j]) * math.sqrt(t_of[tl]) / (b_ - a)
            j += 1
    fits = {"v_hat": v, "ratios": ratios, "envelope_constant": env,
            "max_count": float(E.max()), "max_count_finite": bool(np.all(np.isfinite(E)))}
    return _result(cfg, t0, tables={"eta": tab}, fits=fits, checks=checks)


# -- multiplicity -----------------------------------------------------------------

def eta_mult(cfg: ExperimentConfig) -> ExperimentResult:
    """P(eta(0, t; a - eps, a + eps) > 1): paths from the rescaled interval
    [a - eps, a + eps] x {0} still occupy more than one point at time t."""
    t0 = time.perf_counter()
    delta = float(cfg.get("delta", 0.05))
    ts = [float(t) for t in cfg.get("t_grid", [1.0, 2.0])]
    eps = sorted(float(e) for e in cfg.get("eps_grid", [0.01, 0.02, 0.05, 0.1, 0.2]))
    a = float(cfg.get("a", 0.0))
    v = v_hat_for(cfg)
    bs = math.sqrt(v)
    R = cfg.replicates
    ca = a * bs / delta
    e_max = eps[-1] * bs / delta
    sites = np.arange(math.ceil(ca - e_max - 1e-9), math.floor(ca + e_max + 1e-9) + 1)
    tt = sorted(set(int(round(t / delta ** 2)) for t in ts))
    t_of = {int(round(t / delta ** 2)): t for t in ts}
    wb = run_walks(seed=cfg.seed, tag=TAGS["eta-mult"], R=R, p=cfg.p, horizon=tt[-1] + cfg.margin,
                   starts=[(int(x), 0) for x in sites], n_end=tt[-1], start_mode=2, rec_t=tt,
                   threads=cfg.threads)
    tab = Table(["t", "eps", "eps_lattice", "p_hat", "se"],
                plot={"x": "eps", "y": "p_hat", "y_err": "se", "series": "t"})
    slopes, checks = {}, []
    for k, tl in enumerate(tt):
        t = t_of[tl]
        P = wb.pos[:, :, k]
        ph = []
        for e in eps:
            el = e * bs / delta
            cols = np.abs(sites - ca) <= el + 1e-9
            sub = P[:, cols]
            alive = sub != SENTINEL
            big = np.where(alive, sub, np.iinfo(np.int64).min).max(axis=1) if sub.shape[1] else np.zeros(R)
            small = np.where(alive, sub, np.iinfo(np.int64).max).min(axis=1) if sub.shape[1] else np.zeros(R)
            multi = alive.any(axis=1) & (big > small) if sub.shape[1] else np.zeros(R, bool)
            q = float(multi.mean())
            ph.append(q)
            tab.add(t, e, el, q, float(core.binomial_se(q, R)))
        ph = np.asarray(ph)
        e_ = np.asarray(eps)
        c = float(np.dot(e_, ph) / np.dot(e_, e_))
        slopes[str(t)] = {"slope": c, "slope_sqrt_t": c * math.sqrt(t)}
        checks.append(Check(f"eta_mult.monotone@t={t}", float(max(np.diff(ph), default=0.0)),
                            bool(np.all(np.diff(ph) >= -1e-12)), "P(eta > 1) non-decreasing in eps"))
        tiny = [q for e, q in zip(eps, ph) if e * bs / delta < 0.5]
        if tiny:
            checks.append(Check(f"eta_mult.single_site@t={t}", max(tiny), max(tiny) == 0.0,
                                "interval holding one lattice site gives P = 0"))
    vals = [s["slope_sqrt_t"] for s in slopes.values()]
    spread = (max(vals) - min(vals)) / np.mean(vals) if len(vals) > 1 and np.mean(vals) > 0 else 0.0
    checks.append(Check("eta_mult.stable", float(spread), bool(np.all(np.isfinite(vals)) and spread <= 0.3),
                        "slope * sqrt(t) agrees across t within 30%"))
    fits = {"v_hat": v, "slopes": slopes, "relative_spread": float(spread)}
    return _result(cfg, t0, tables={"eta_mult": tab}, fits=fits, checks=checks)


# -- crossing ---------------------------------------------------------------------

def crossing(cfg: ExperimentConfig) -> ExperimentResult:
    """P(A+): some flow path touches [-u~, u~] x [0, t~] and x = 20 u~ within
    [0, 2 t~], in lattice units u~ = u sqrt(v) / delta, t~ = t / delta^2."""
    t0 = time.perf_counter()
    us = [float(u) for u in cfg.get("u_grid", [1.0])]
    ts = sorted((float(t) for t in cfg.get("t_grid", [0.4, 0.2, 0.1])), reverse=True)
    deltas = [float(d) for d in cfg.get("delta_grid", [0.05])]
    v = v_hat_for(cfg)
    bs = math.sqrt(v)
    R = cfg.replicates
    tab = Table(["u", "delta", "t", "u_lattice", "t_lattice", "right", "p_hat", "se", "upper95", "p_over_t"],
                plot={"x": "t", "y": "p_over_t", "series": "delta"})
    checks = []
    j = 0
    for d in deltas:
        for u in us:
            ratios, ses = [], []
            for t in ts:
                ul = u * bs / d
                tl = int(round(t / d ** 2))
                right = int(math.ceil(20 * ul - 1e-9))
                ui = int(math.floor(ul + 1e-9))
                if 2 * tl < right - ui:
                    q = 0.0            # beyond the light cone
                else:
                    hits = run_crossing(cfg.seed, TAGS["crossing"] * 1000 + j, R, cfg.p,
                                        2 * tl + cfg.margin, ui, tl, right, cfg.threads)
                    q = float(hits.mean())
                j += 1
                up = q if q > 0 else 3.0 / R          # rule of three at zero counts
                se = float(core.binomial_se(q, R))
                tab.add(u, d, t, ul, tl, right, q, se, up, q / t)
                ratios.append(q / t)
                ses.append(se / t)
            ok = lattice_cdf_band(ratios, ses)
            checks.append(Check(f"crossing.trend[u={u},delta={d}]", ratios, ok,
                                "P(A+)/t non-increasing as t decreases, within 3 sigma"))
    fits = {"v_hat": v}
    return _result(cfg, t0, tables={"crossing": tab}, fits=fits, checks=checks)


# -- holes ------------------------------------------------------------------------

def _hole_hist(b, rows, kmax: int) -> np.ndarray:
    h = np.zeros(kmax + 2, np.int64)
    for n in rows:
        r = b.row(n)
        pos = np.arange(r.size)
        last = np.maximum.accumulate(np.where(r, pos, -1))
        g = (pos - last)[last >= 0]
        h += np.bincount(np.minimum(g, kmax + 1), minlength=kmax + 2)
    return h


def holes(cfg: ExperimentConfig) -> ExperimentResult:
    """Distribution of x - c((x, n)) over rows at depth >= margin below the horizon."""
    t0 = time.perf_counter()
    width = int(cfg.get("width", 100_000))
    depth = int(cfg.get("rows", 1000))
    kmin, kmax = (int(v) for v in cfg.get("k_range", [1, 30]))
    min_count = int(cfg.get("min_count", 10))
    deltas = [float(d) for d in cfg.get("delta_grid", [0.1, 0.05, 0.02])]
    R = cfg.replicates
    T = depth - 1 + cfg.margin

    def one(r):
        b = compute_backbone(_field(cfg, "holes", r, T, 0, width - 1))
        return _hole_hist(b, range(0, T - cfg.margin + 1), kmax)

    H = np.sum(pmap(one, list(range(R)), cfg.threads), axis=0)
    total = int(H.sum())
    ge = np.cumsum(H[::-1])[::-1]
    tail = ge / total
    tab = Table(["k", "p_hat", "count", "se"], plot={"x": "k", "y": "p_hat", "y_err": "se"})
    for k in range(kmax + 1):
        tab.add(k, float(tail[k]), int(ge[k]), float(core.binomial_se(tail[k], total)))
    ks = np.arange(kmin, kmax + 1)
    use = ks[ge[ks] >= min_count]
    fit = core.ols(use, np.log(tail[use]))
    lam = -fit.slope
    K = 2.0 / lam if lam > 0 else math.nan
    C = math.exp(fit.intercept)
    checks = [Check("holes.fit_r2", fit.r2, bool(fit.r2 >= 0.98),
                    f"log-linear fit of P(gap >= k), k in [{kmin}, {kmax}] with >= {min_count} counts, R^2 >= 0.98"),
              Check("holes.monotone", float(max(np.diff(tail), default=0.0)),
                    bool(np.all(np.diff(tail) <= 0)), "P(gap >= k) non-increasing in k")]
    dtab = Table(["delta", "k_star", "p_hat", "bound"], plot={"x": "delta", "y": "p_hat"})
    for d in deltas:
        if not math.isfinite(K) or not math.isfinite(C):
            # fewer than two usable tail points: no fitted constants to test
            checks.append(Check(f"holes.bound@delta={d}", math.nan, False, "needs a fitted K, C"))
            continue
        k_star = int(math.ceil(K * math.log(1 / d) - 1e-9))
        q = float(tail[k_star]) if k_star <= kmax else float(ge[-1]) / total
        bound = C * d * d
        dtab.add(d, k_star, q, bound)
        checks.append(Check(f"holes.bound@delta={d}", q / bound if bound > 0 else math.inf, q <= bound,
                            "P(gap >= K log(1/delta)) <= C delta^2 with fitted K, C"))
    fits = {"lambda": lam, "K": K, "C": C, "r2": fit.r2, "fit_k": [int(use.min()), int(use.max())] if use.size else [],
            "samples": total}
    return _result(cfg, t0, tables={"holes": tab, "holes_bound": dtab}, fits=fits, checks=checks)
