"""Percolation field, permutation field and the finite-horizon backbone.

The backbone is the set of open sites joined to level T by an open directed
path.  `compute_backbone` stores it for a widening cone: level n covers
[x_lo - n, x_hi + n], which is exactly the dependency cone of the base
window, so every stored bit equals the exact horizon-T answer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _lazy
from .errors import CapacityExceeded, ConfigInvalid, HorizonExceeded, RowExhausted
from .rng import OMEGA, PERM, REPLICATE, as_u64, perm_index, stream_key, uniform

DEFAULT_MARGIN = 128
DEFAULT_MAX_BITS = 1 << 33


@dataclass(frozen=True)
class FieldConfig:
    p: float
    master_seed: int
    horizon: int = 0
    x_lo: int = 0
    x_hi: int = 0
    omega_stream: int = 0

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ConfigInvalid(f"p must lie in (0, 1], got {self.p}")
        if self.horizon < 0:
            raise ConfigInvalid(f"horizon must be >= 0, got {self.horizon}")
        if self.x_lo > self.x_hi:
            raise ConfigInvalid(f"empty window [{self.x_lo}, {self.x_hi}]")
        object.__setattr__(self, "master_seed", int(self.master_seed) & ((1 << 64) - 1))

    @property
    def window(self) -> tuple[int, int]:
        return self.x_lo, self.x_hi

    @property
    def omega_key(self) -> np.uint64:
        return stream_key(self.master_seed, OMEGA, self.omega_stream)

    def perm_key(self, stream_id: int) -> np.uint64:
        return stream_key(self.master_seed, PERM, stream_id)


PERMUTATIONS = [tuple(int(v) for v in row) for row in _lazy.PERMS]


def omega(cfg: FieldConfig, x: int, n: int) -> bool:
    return bool(uniform(cfg.omega_key, np.int64(x), np.int64(n)) < cfg.p)


def permutation(cfg: FieldConfig, x: int, n: int, stream_id: int = 0) -> tuple[int, int, int]:
    if stream_id < 0:
        raise ValueError("stream_id must be >= 0")
    k = int(perm_index(cfg.perm_key(stream_id), np.int64(x), np.int64(n)))
    return tuple(x + d for d in PERMUTATIONS[k])


@njit(nogil=True, cache=True)
def _fill(key, p, x_lo, base_bits, T, words):
    nw = words.shape[1]
    one = np.uint64(1)
    for n in range(T, -1, -1):
        lo = x_lo - n
        nbits = base_bits + 2 * n
        row = words[n]
        for i in range(nbits):
            if uniform(key, lo + i, n) < p:
                row[i >> 6] |= one << np.uint64(i & 63)
        if n == T:
            continue
        up = words[n + 1]
        # site index i at level n sits at index i + 1 at level n + 1
        for w in range(nw):
            a = up[w]
            b = up[w + 1] if w + 1 < nw else np.uint64(0)
            s1 = (a >> np.uint64(1)) | (b << np.uint64(63))
            s2 = (a >> np.uint64(2)) | (b << np.uint64(62))
            row[w] &= a | s1 | s2
        # clear bits beyond this row's extent
        full = nbits >> 6
        rem = nbits & 63
        if full < nw:
            if rem:
                row[full] &= (one << np.uint64(rem)) - one
            else:
                row[full] = 0
            for w in range(full + 1, nw):
                row[w] = 0


@njit(cache=True)
def _get(row, i):
    return (row[i >> 6] >> np.uint64(i & 63)) & np.uint64(1)


@njit(cache=True)
def _scan_left(row, i):
    while i >= 0:
        if _get(row, i):
            return i
        i -= 1
    return -1


class Backbone:
    """Horizon-T backbone over the widening cone of a base window."""

    def __init__(self, config: FieldConfig, words: np.ndarray):
        self.config = config
        self.words = words
        self.words.setflags(write=False)

    @property
    def horizon(self) -> int:
        return self.config.horizon

    def row_bounds(self, n: int) -> tuple[int, int]:
        c = self.config
        return c.x_lo - n, c.x_hi + n

    def stored(self, x: int, n: int) -> bool:
        if n < 0 or n > self.horizon:
            return False
        lo, hi = self.row_bounds(n)
        return lo <= x <= hi

    def bit(self, x: int, n: int) -> bool:
        if not self.stored(x, n):
            return False
        return bool(_get(self.words[n], x - self.config.x_lo + n))

    def __contains__(self, z) -> bool:
        return self.bit(*z)

    def row(self, n: int) -> np.ndarray:
        lo, hi = self.row_bounds(n)
        bits = np.unpackbits(self.words[n].view(np.uint8), bitorder="little")
        return bits[: hi - lo + 1].astype(bool)

    def count(self, n: int) -> int:
        return int(self.row(n).sum())

    def next_left(self, x: int, n: int) -> int:
        return next_left(self, x, n)

    def dumps(self) -> str:
        c = self.config
        lines = [f"p={c.p!r} seed={c.master_seed} T={c.horizon} xlo={c.x_lo} xhi={c.x_hi}"]
        for n in range(self.horizon, -1, -1):
            bits = self.row(n)
            lines.append(" " * (self.horizon - n) + "".join("1" if b else "0" for b in bits))
        return "\n".join(lines) + "\n"

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def backbone_bits(cfg: FieldConfig) -> int:
    base = cfg.x_hi - cfg.x_lo + 1
    T = cfg.horizon
    return (T + 1) * base + T * (T + 1)


def compute_backbone(cfg: FieldConfig, max_bits: int = DEFAULT_MAX_BITS) -> Backbone:
    need = backbone_bits(cfg)
    if need > max_bits:
        raise CapacityExceeded(f"backbone cone needs {need} bits, budget is {max_bits}")
    base = cfg.x_hi - cfg.x_lo + 1
    T = cfg.horizon
    nw = (base + 2 * T + 63) // 64
    words = np.zeros((T + 1, nw), dtype=np.uint64)
    _fill(cfg.omega_key, float(cfg.p), np.int64(cfg.x_lo), np.int64(base), np.int64(T), words)
    return Backbone(cfg, words)


def next_left(b: Backbone, x: int, n: int) -> int:
    if n < 0 or n > b.horizon:
        raise HorizonExceeded(f"level {n} outside [0, {b.horizon}]")
    lo, hi = b.row_bounds(n)
    if not lo <= x <= hi:
        raise RowExhausted(f"x={x} outside stored row [{lo}, {hi}] at level {n}")
    i = _scan_left(b.words[n], np.int64(x - lo))
    if i < 0:
        raise RowExhausted(f"no backbone site <= {x} in stored row at level {n}")
    return int(lo + i)


class LazyBackbone:
    """Exact horizon-T membership over Z, evaluated on demand.

    Used where a dense cone would be wasteful: walk experiments touch a thin
    tube of sites around the trajectories.  `width` bounds the x-range of the
    memo; queries that would leave it raise CapacityExceeded.
    """

    def __init__(self, cfg: FieldConfig, width: int = 4096, centre: int = 0):
        self.config = cfg
        self.x0 = centre - width // 2
        self.centre = centre
        self.memo = np.zeros((width, cfg.horizon + 2), np.uint32)
        self.stk = np.empty((cfg.horizon + 2, 3), np.int64)
        self.flags = np.zeros(2, np.int64)
        self._key = cfg.omega_key

    def _check(self):
        if self.flags[_lazy.F_OVERFLOW]:
            self.flags[:] = 0
            raise CapacityExceeded("lazy backbone memo too narrow")

    def bit(self, x: int, n: int) -> bool:
        if n < 0 or n > self.config.horizon:
            return False
        r = _lazy.member(self.memo, 1, np.int64(self.x0), self._key, float(self.config.p),
                         np.int64(self.config.horizon), np.int64(x), np.int64(n),
                         self.stk, self.flags, np.int64(self.centre))
        self._check()
        return bool(r)

    def next_left(self, x: int, n: int) -> int:
        y = int(_lazy.next_left(self.memo, 1, np.int64(self.x0), self._key, float(self.config.p),
                                np.int64(self.config.horizon), np.int64(x), np.int64(n),
                                self.stk, self.flags, np.int64(self.centre)))
        if self.flags[_lazy.F_OVERFLOW]:
            self.flags[:] = 0
            raise RowExhausted(f"no backbone site <= {x} inside the memo at level {n}")
        return y


@dataclass(frozen=True)
class SurvivalEstimate:
    theta: float
    stderr: float
    replicates: int
    hits: int = field(default=0)


def _survival_hits(p: float, T: int, replicates: int, seed: int) -> np.ndarray:
    width = 64
    while True:
        w = max(width, 2 * int(4 * math.sqrt(T + 1)) + 64)
        hits, flags = _lazy.survival_kernel(as_u64(seed), np.uint64(REPLICATE), 0,
                                            replicates, float(p), T, w)
        if not flags[_lazy.F_OVERFLOW]:
            return hits
        width = 2 * w


def survival_estimate(p: float, T: int, replicates: int, seed: int) -> SurvivalEstimate:
    """Fraction of replicate fields in which (0, 0) joins level T.

    Replicate r uses the field of FieldConfig(master_seed=replicate_seed(seed, REPLICATE, r)).
    """
    if replicates < 1:
        raise ConfigInvalid("replicates must be >= 1")
    if p <= 0.0:
        return SurvivalEstimate(0.0, 0.0, replicates, 0)
    hits = _survival_hits(p, T, replicates, seed)
    k = int(hits.sum())
    th = k / replicates
    return SurvivalEstimate(th, math.sqrt(th * (1 - th) / replicates), replicates, k)


def horizon_stability(p: float, T: int, deltas, width: int, seed: int) -> list[tuple[int, float]]:
    """Fraction of base-row sites whose backbone bit changes when the horizon
    grows from T to T + delta on the same field."""
    ref = compute_backbone(FieldConfig(p, seed, T, 0, width - 1)).row(0)
    out = []
    for d in deltas:
        r0 = compute_backbone(FieldConfig(p, seed, T + d, 0, width - 1)).row(0)
        out.append((int(d), float(np.mean(r0 != ref))))
    return out
