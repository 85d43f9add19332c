"""Compactified plane, path metric, Hausdorff distance, diffusive scaling and
the two merge rules for finite tuples of piecewise-linear paths.

A point (x, t) is embedded as (tanh(x) / (1 + |t|), tanh(t)); the path metric
compares start times and the embedded graphs of two paths, each extended
backwards by its starting value and forwards by its last value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyCollection, GridMisaligned

STAR = "*"
_GOLD = (math.sqrt(5.0) - 1.0) / 2.0
ABS_TOL = 1e-10


@dataclass(frozen=True)
class CompactPoint:
    x: float | str
    t: float

    def __post_init__(self):
        if self.x == STAR and not math.isinf(self.t):
            raise ValueError("'*' requires t = +-inf")

    def embed(self) -> tuple[float, float]:
        if math.isinf(self.t):
            return 0.0, math.copysign(1.0, self.t)
        return math.tanh(self.x) / (1.0 + abs(self.t)), math.tanh(self.t)


def rho(a: CompactPoint, b: CompactPoint) -> float:
    ax, at = a.embed()
    bx, bt = b.embed()
    return max(abs(at - bt), abs(ax - bx))


@dataclass(frozen=True)
class InterpolatedPath:
    """Continuous piecewise-linear path on [sigma, inf), frozen past its last knot."""

    times: np.ndarray
    values: np.ndarray
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size == 0:
            raise ValueError("times and values must be equal-length 1-d arrays")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("knot times must increase strictly")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def sigma(self) -> float:
        return float(self.times[0])

    @property
    def t_last(self) -> float:
        return float(self.times[-1])

    def eval(self, t):
        return np.interp(t, self.times, self.values)

    __call__ = eval

    @classmethod
    def constant(cls, value: float, sigma: float = 0.0) -> "InterpolatedPath":
        return cls(np.array([sigma]), np.array([value]))


def _pieces(f: InterpolatedPath, g: InterpolatedPath):
    lo = min(f.sigma, g.sigma)
    knots = np.union1d(np.union1d(f.times, g.times), [lo])
    if lo < 0.0:
        knots = np.union1d(knots, [0.0])
    return knots[knots >= lo]


def _gap(f, g, t):
    # f(t v sigma) is f.eval(t) since eval is frozen below sigma
    return np.abs(np.tanh(f.eval(t)) - np.tanh(g.eval(t))) / (1.0 + np.abs(t))


def path_dist(f: InterpolatedPath, g: InterpolatedPath) -> float:
    head = abs(math.tanh(f.sigma) - math.tanh(g.sigma))
    knots = _pieces(f, g)
    best = float(np.max(_gap(f, g, knots)))
    if knots.size > 1:
        a = knots[:-1].copy()
        b = knots[1:].copy()
        # each piece is smooth; sample, then golden-section around the best sample
        k = 8
        s = a[:, None] + (b - a)[:, None] * (np.arange(1, k) / k)[None, :]
        gs = _gap(f, g, s)
        j = np.argmax(gs, axis=1)
        best = max(best, float(gs.max()))
        lo = a + (b - a) * (j / k)
        hi = a + (b - a) * ((j + 2) / k)
        lo = np.maximum(lo, a)
        hi = np.minimum(hi, b)
        while True:
            if np.all(hi - lo <= ABS_TOL):
                break
            c = hi - _GOLD * (hi - lo)
            d = lo + _GOLD * (hi - lo)
            fc = _gap(f, g, c)
            fd = _gap(f, g, d)
            left = fc >= fd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
        best = max(best, float(np.max(_gap(f, g, 0.5 * (lo + hi)))))
    return max(head, best)


def sup_dist(f: InterpolatedPath, g: InterpolatedPath) -> float:
    """Uncompactified distance |sigma - sigma'| v sup |f - g| (dominates path_dist)."""
    knots = _pieces(f, g)
    return max(abs(f.sigma - g.sigma), float(np.max(np.abs(f.eval(knots) - g.eval(knots)))))


def hausdorff(K1: Sequence[InterpolatedPath], K2: Sequence[InterpolatedPath]) -> float:
    if len(K1) == 0 or len(K2) == 0:
        raise EmptyCollection("Hausdorff distance needs two nonempty collections")
    D = np.array([[path_dist(f, g) for g in K2] for f in K1])
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def directed_deviation(K1, K2) -> float:
    """sup over K1 of the distance to K2."""
    if len(K1) == 0 or len(K2) == 0:
        raise EmptyCollection("directed deviation needs two nonempty collections")
    return float(max(min(path_dist(f, g) for g in K2) for f in K1))


def scale_path(p, b: float, delta: float) -> InterpolatedPath:
    """Diffusive scaling (x, t) -> (x delta / b, delta^2 t) of a LatticePath."""
    if b <= 0 or not 0 < delta <= 1:
        raise ValueError("need b > 0 and 0 < delta <= 1")
    t = np.arange(p.t0, p.t_end + 1) * (delta * delta)
    v = np.asarray(p.positions, dtype=float) * (delta / b)
    return InterpolatedPath(t, v, {"start": p.start, "b": b, "delta": delta})


def _first_coincidence(f: InterpolatedPath, g: InterpolatedPath, after: float) -> float:
    """inf{t > after : f(t) = g(t)} over real t (after >= both start times)."""
    kn = np.union1d(f.times, g.times)
    kn = np.concatenate([[after], kn[kn > after]])
    d = f.eval(kn) - g.eval(kn)
    z = np.abs(d) <= 1e-12
    if z[0] and (kn.size == 1 or z[1]):
        return float(after)
    hit = z[1:] | ((d[:-1] * d[1:] < 0) & ~z[:-1])
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return math.inf
    i = int(idx[0])
    if z[i + 1]:
        return float(kn[i + 1])
    return float(kn[i] + (kn[i + 1] - kn[i]) * d[i] / (d[i] - d[i + 1]))


def _first_grid_coincidence(f: InterpolatedPath, g: InterpolatedPath, after: float, h: float) -> float:
    """min{t in hZ : t >= after, f(t) = g(t)}."""
    k0 = math.ceil(round(after / h, 9))
    k1 = max(k0, math.ceil(round(max(f.t_last, g.t_last) / h, 9)))
    t = np.arange(k0, k1 + 1) * h
    idx = np.flatnonzero(np.abs(f.eval(t) - g.eval(t)) <= 1e-12)
    return float(t[idx[0]]) if idx.size else math.inf


def _merge(paths: Sequence[InterpolatedPath], meet):
    """Iterated merging; each class follows its smallest-index member.

    A representative has followed its own path since its start, so the next
    merge time of two classes is the first coincidence of their
    representatives' original paths.
    """
    m = len(paths)
    if m == 0:
        raise ValueError("need at least one path")
    rep = list(range(m))
    timeline = [[(-math.inf, i)] for i in range(m)]
    events = []
    while True:
        reps = sorted(set(rep))
        best, cand = math.inf, []
        for i, a in enumerate(reps):
            for b in reps[i + 1:]:
                t = meet(paths[a], paths[b], max(paths[a].sigma, paths[b].sigma))
                if t < best - 1e-12:
                    best, cand = t, [(a, b)]
                elif t < math.inf and abs(t - best) <= 1e-12:
                    cand.append((a, b))
        if best == math.inf:
            break
        for a, b in cand:
            lo, hi = sorted((rep[a], rep[b]))
            if lo == hi:
                continue
            for k in range(m):
                if rep[k] == hi:
                    rep[k] = lo
                    timeline[k].append((best, lo))
        events.append(best)
    return tuple(_compose(paths, k, timeline[k]) for k in range(m)), events


def _compose(paths, k, tl) -> InterpolatedPath:
    if len(tl) == 1:
        return paths[k]
    ts, vs = [], []
    for j, (t_from, src) in enumerate(tl):
        t_to = tl[j + 1][0] if j + 1 < len(tl) else math.inf
        f = paths[src]
        kn = f.times[(f.times > t_from) & (f.times < t_to)]
        pts = ([] if j == 0 else [t_from]) + list(kn)
        ts.extend(float(t) for t in pts)
        vs.extend(float(v) for v in f.eval(np.array(pts, dtype=float)))
    ts = np.array(ts)
    vs = np.array(vs)
    keep = np.concatenate([[True], np.diff(ts) > 0])
    return InterpolatedPath(ts[keep], vs[keep], {"merged": k, "timeline": tl})


def gamma_alpha(paths: Sequence[InterpolatedPath]) -> tuple[InterpolatedPath, ...]:
    """Merge at the first real time two interpolants coincide."""
    return _merge(list(paths), lambda f, g, s: _first_coincidence(f, g, s))[0]


def _on_grid(t: float, h: float) -> bool:
    return abs(t - round(t / h) * h) <= 1e-9 * max(1.0, abs(t))


def gamma_beta(paths: Sequence[InterpolatedPath], delta: float) -> tuple[InterpolatedPath, ...]:
    """Merge at the first grid time in delta^2 Z where two paths agree."""
    h = delta * delta
    for f in paths:
        if not _on_grid(f.sigma, h):
            raise GridMisaligned(f"start time {f.sigma} not on the grid {h} Z")
    return _merge(list(paths), lambda f, g, s: _first_grid_coincidence(f, g, s, h))[0]


def merge_times(paths, delta: float | None = None) -> list[float]:
    """Successive merge times of gamma_alpha (delta None) or gamma_beta."""
    if delta is None:
        return _merge(list(paths), lambda f, g, s: _first_coincidence(f, g, s))[1]
    h = delta * delta
    return _merge(list(paths), lambda f, g, s: _first_grid_coincidence(f, g, s, h))[1]


def _distinct(v: np.ndarray) -> int:
    if v.size == 0:
        return 0
    return int(np.unique(np.round(v, 9)).size)


def eta_count(K: Sequence[InterpolatedPath], t0: float, t: float, a: float, b: float) -> int:
    """Distinct positions at t0 + t of paths passing through [a, b] x {t0}."""
    if t <= 0 or a >= b:
        raise ValueError("need t > 0 and a < b")
    ends = [f.eval(t0 + t) for f in K if f.sigma <= t0 and a <= f.eval(t0) <= b]
    return _distinct(np.array(ends, dtype=float))


def eta_hat_count(K: Sequence[InterpolatedPath], t0: float, t: float, a: float, b: float) -> int:
    """Distinct points of (a, b) x {t0 + t} hit by paths started at or before t0."""
    if t <= 0 or a >= b:
        raise ValueError("need t > 0 and a < b")
    ends = np.array([f.eval(t0 + t) for f in K if f.sigma <= t0], dtype=float)
    return _distinct(ends[(ends > a) & (ends < b)])
