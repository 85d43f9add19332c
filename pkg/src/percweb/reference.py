"""Continuum references: coalescing Brownian motions and closed-form laws."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy import integrate, special

from .metrics import InterpolatedPath
from .rng import CBM, as_u64, derive, uniform


@dataclass(frozen=True)
class CBMConfig:
    starts: tuple
    dt: float
    t_end: float
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if len(self.starts) == 0:
            raise ValueError("need at least one start")
        if self.t_end < max(float(t) for _, t in self.starts):
            raise ValueError("t_end precedes a start time")
        object.__setattr__(self, "starts", tuple((float(x), float(t)) for x, t in self.starts))

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))


@njit(cache=True)
def _normal(key, i, k):
    u1 = uniform(key, 2 * i, k)
    u2 = uniform(key, 2 * i + 1, k)
    return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


@njit(nogil=True, cache=True)
def cbm_kernel(seed, sx, sk, dt, nsteps, r0, r1, rec_k, full):
    """Replicates r0..r1-1.  Returns positions at rec_k steps (or every step
    when `full`) and, per pair, the first grid time the two are merged."""
    m = sx.shape[0]
    R = r1 - r0
    nrec = nsteps + 1 if full else rec_k.shape[0]
    pos = np.full((R, m, nrec), np.nan)
    npairs = m * (m - 1) // 2
    tmerge = np.full((R, npairs), np.inf)
    x = np.empty(m)
    xn = np.empty(m)
    rep = np.empty(m, np.int64)
    sq = math.sqrt(dt)
    for r in range(r0, r1):
        ri = r - r0
        key = derive(seed, CBM, r, 0)
        for i in range(m):
            rep[i] = i
            x[i] = sx[i]
        k0 = nsteps
        for i in range(m):
            if sk[i] < k0:
                k0 = sk[i]
        ir = 0
        while ir < nrec and not full and rec_k[ir] < k0:
            ir += 1
        for k in range(k0, nsteps + 1):
            # activation: a start landing on an active path merges at once
            for i in range(m):
                if sk[i] == k:
                    for j in range(m):
                        if j != i and sk[j] <= k and rep[j] == j and x[j] == x[i] and rep[i] == i:
                            lo = min(i, j)
                            hi = max(i, j)
                            for q in range(m):
                                if rep[q] == hi:
                                    rep[q] = lo
            if full:
                for i in range(m):
                    if sk[i] <= k:
                        pos[ri, i, k] = x[i]
            else:
                while ir < nrec and rec_k[ir] == k:
                    for i in range(m):
                        if sk[i] <= k:
                            pos[ri, i, ir] = x[i]
                    ir += 1
            q = 0
            for i in range(m):
                for j in range(i + 1, m):
                    if tmerge[ri, q] == np.inf and sk[i] <= k and sk[j] <= k and rep[i] == rep[j]:
                        tmerge[ri, q] = k * dt
                    q += 1
            if k == nsteps:
                break
            if not full and ir >= nrec:
                merged = True
                for q in range(npairs):
                    if tmerge[ri, q] == np.inf:
                        merged = False
                if merged:
                    break
            for i in range(m):
                if sk[i] <= k and rep[i] == i:
                    xn[i] = x[i] + sq * _normal(key, i, k)
            for i in range(m):
                if sk[i] <= k and rep[i] != i:
                    xn[i] = xn[rep[i]]
            # pairwise crossing of representatives, lexicographic
            for i in range(m):
                for j in range(i + 1, m):
                    if sk[i] > k or sk[j] > k:
                        continue
                    a = rep[i]
                    b = rep[j]
                    if a == b or a != i or b != j:
                        continue
                    d1 = x[i] - x[j]
                    d2 = xn[i] - xn[j]
                    hit = d1 * d2 <= 0.0
                    if not hit:
                        hit = uniform(key, 2 * m + i * m + j, k) < math.exp(-d1 * d2 / dt)
                    if hit:
                        for q2 in range(m):
                            if rep[q2] == j:
                                rep[q2] = i
                                xn[q2] = xn[i]
            for i in range(m):
                if sk[i] <= k:
                    x[i] = xn[i]
    return pos, tmerge


def _grid(cfg: CBMConfig):
    sx = np.array([s[0] for s in cfg.starts], float)
    sk = np.array([int(round(s[1] / cfg.dt)) for s in cfg.starts], np.int64)
    return sx, sk


def sample_cbm(cfg: CBMConfig, replicate: int = 0) -> list[InterpolatedPath]:
    """One realisation of coalescing Brownian motions on the dt grid.

    Start times are snapped to the grid.  Pairs merge when their difference
    changes sign over a step, or, for same-sign endpoints d1, d2, with the
    bridge probability exp(-d1 d2 / dt) of the difference (variance 2 per
    unit time) touching zero inside the step.
    """
    sx, sk = _grid(cfg)
    pos, _ = cbm_kernel(as_u64(cfg.seed), sx, sk, float(cfg.dt), cfg.steps,
                        replicate, replicate + 1, np.zeros(0, np.int64), True)
    out = []
    t = np.arange(cfg.steps + 1) * cfg.dt
    for i in range(len(sx)):
        a = int(sk[i])
        out.append(InterpolatedPath(t[a:], pos[0, i, a:], {"cbm_start": cfg.starts[i]}))
    return out


def cbm_statistics(cfg: CBMConfig, replicates: int, rec_times: Sequence[float] = ()):
    """Batch run: (positions at rec_times, pairwise merge times), per replicate."""
    sx, sk = _grid(cfg)
    rec = np.array(sorted(int(round(t / cfg.dt)) for t in rec_times), np.int64)
    return cbm_kernel(as_u64(cfg.seed), sx, sk, float(cfg.dt), cfg.steps,
                      0, replicates, rec, False)


def pair_meet_cdf(d, t):
    """P(two independent standard BMs started d apart meet by time t)."""
    d = np.asarray(d, float)
    t = np.asarray(t, float)
    with np.errstate(divide="ignore"):
        out = special.erfc(np.abs(d) / (2.0 * np.sqrt(t)))
    out = np.where(t > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def eta_hat_bw_expectation(a: float, b: float, t: float) -> float:
    if not a < b or not t > 0:
        raise ValueError("need a < b and t > 0")
    return (b - a) / math.sqrt(math.pi * t)


def _integrand(c1):
    two = 2.0 / c1
    return lambda y: math.exp(two * math.exp(-c1 * y))


def _segment(c1, a, b):
    return integrate.quad(_integrand(c1), a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def superharmonic_f(x, c1: float):
    """f(x) = int_0^|x| exp(2 exp(-c1 y) / c1) dy by adaptive quadrature.

    Arrays are integrated piecewise between sorted |x| values and summed, so
    a grid of N points costs N short quadratures.
    """
    if not c1 > 0:
        raise ValueError("c1 must be positive")
    xa = np.abs(np.asarray(x, float))
    flat = xa.ravel()
    u, inv = np.unique(flat, return_inverse=True)
    ends = np.concatenate([[0.0], u])
    pieces = np.array([_segment(c1, lo, hi) if hi > lo else 0.0 for lo, hi in zip(ends[:-1], ends[1:])])
    vals = np.cumsum(pieces)[inv].reshape(xa.shape)
    return float(vals) if vals.ndim == 0 else vals


def superharmonic_f_closed(x, c1: float):
    """Closed form (Ei(2/c1) - Ei(2 e^{-c1|x|}/c1)) / c1, an independent check."""
    xa = np.abs(np.asarray(x, float))
    return (special.expi(2.0 / c1) - special.expi(2.0 * np.exp(-c1 * xa) / c1)) / c1


def ode_residual(x: float, c1: float, h: float = 1e-3) -> float:
    """|f''/2 + sgn(x) e^{-c1 |x|} f'| from 5-point central differences.

    Differences f(x + kh) - f(x) are integrated over the short stencil span
    directly, so the stencil never subtracts two large quadrature values.
    """
    sgn = 1.0 if x > 0 else -1.0
    g = _integrand(c1)

    def df(k):  # f(x + kh) - f(x), f even with f'(y) = sgn(y) g(|y|)
        lo, hi = sorted((x, x + k * h))
        val = integrate.quad(lambda y: math.copysign(1.0, y) * g(abs(y)), lo, hi,
                             epsabs=1e-15, epsrel=1e-14)[0]
        return val if k > 0 else -val

    f2, f1, m1, m2 = df(2), df(1), df(-1), df(-2)
    d1 = (-f2 + 8 * f1 - 8 * m1 + m2) / (12 * h)
    d2 = (-f2 + 16 * f1 + 16 * m1 - m2) / (12 * h * h)
    return abs(0.5 * d2 + sgn * math.exp(-c1 * abs(x)) * d1)
