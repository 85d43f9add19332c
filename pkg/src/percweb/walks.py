"""Walk dynamics on a stored backbone.

From (x, n) the walk reads the permutation attached to that site and moves
to the first of its three entries lying in the backbone at level n + 1,
falling back to the first entry when none does.  Sharing the permutation
stream between walks makes the family a coalescing flow.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit

from ._lazy import PERMS
from .errors import DisjointRanges, HorizonExceeded, RowExhausted
from .field import Backbone, FieldConfig, compute_backbone, next_left
from .rng import perm_index


class FlowMode(enum.Enum):
    COALESCING = "coalescing"
    INDEPENDENT_PERMS = "independent_perms"
    INDEPENDENT_CLUSTERS = "independent_clusters"


@dataclass(frozen=True)
class LatticePath:
    start: tuple[int, int]
    positions: np.ndarray
    origin: tuple[int, int] | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if pos.size == 0:
            raise ValueError("a path holds at least its start")
        if pos[0] != self.start[0]:
            raise ValueError("positions[0] must equal the start site")

    @property
    def t0(self) -> int:
        return int(self.start[1])

    @property
    def t_end(self) -> int:
        return self.t0 + len(self.positions) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.t0, self.t_end + 1)

    def at(self, t: int) -> int:
        if not self.t0 <= t <= self.t_end:
            raise IndexError(f"time {t} outside [{self.t0}, {self.t_end}]")
        return int(self.positions[t - self.t0])

    def __call__(self, t: float) -> float:
        """Linear interpolation, frozen outside the lattice range."""
        return float(np.interp(t, self.times, self.positions))

    def __len__(self):
        return len(self.positions)

    def __eq__(self, other):
        if not isinstance(other, LatticePath):
            return NotImplemented
        return self.start == other.start and np.array_equal(self.positions, other.positions)

    __hash__ = None


def _stream_for(mode: FlowMode, k: int) -> tuple[int, int]:
    """(permutation stream, omega stream) of walk k under `mode`."""
    if mode is FlowMode.COALESCING:
        return 0, 0
    if mode is FlowMode.INDEPENDENT_PERMS:
        return k + 1, 0
    return k + 1, k + 1


def step(b: Backbone, cfg: FieldConfig, x: int, n: int, stream_id: int = 0) -> int:
    if n >= b.horizon or n < 0:
        raise HorizonExceeded(f"step from level {n} with horizon {b.horizon}")
    k = int(perm_index(cfg.perm_key(stream_id), np.int64(x), np.int64(n)))
    perm = PERMS[k]
    for d in perm:
        y = x + int(d)
        if not b.stored(y, n + 1):
            raise RowExhausted(f"neighbour ({y}, {n + 1}) outside the stored cone")
        if b.bit(y, n + 1):
            return y
    return x + int(perm[0])


@njit(nogil=True, cache=True)
def _walk(words, x_lo, base, pkey, x, t0, t_end, out):
    """Returns 0 on success, 1 if a query leaves the stored cone."""
    out[0] = x
    for n in range(t0, t_end):
        pi = perm_index(pkey, x, n)
        nxt = x + PERMS[pi, 0]
        lo = x_lo - (n + 1)
        width = base + 2 * (n + 1)
        for j in range(3):
            y = x + PERMS[pi, j]
            i = y - lo
            if i < 0 or i >= width:
                return 1
            if (words[n + 1, i >> 6] >> np.uint64(i & 63)) & np.uint64(1):
                nxt = y
                break
        x = nxt
        out[n - t0 + 1] = x
    return 0


def run_walk(b: Backbone, cfg: FieldConfig, z: tuple[int, int], t_end: int,
             stream_id: int = 0) -> LatticePath:
    x, t0 = int(z[0]), int(z[1])
    if t_end < t0:
        raise ValueError("t_end must be >= start time")
    if t_end > b.horizon:
        raise HorizonExceeded(f"t_end={t_end} beyond horizon {b.horizon}")
    lo, hi = b.row_bounds(t0)
    if not lo <= x <= hi:
        raise RowExhausted(f"start ({x}, {t0}) outside stored cone")
    out = np.empty(t_end - t0 + 1, np.int64)
    base = b.config.x_hi - b.config.x_lo + 1
    code = _walk(b.words, np.int64(b.config.x_lo), np.int64(base),
                 cfg.perm_key(stream_id), np.int64(x), np.int64(t0), np.int64(t_end), out)
    if code:
        raise RowExhausted("walk left the stored cone; widen the window")
    return LatticePath((x, t0), out, meta={"stream": stream_id})


def run_flow(b: Backbone, cfg: FieldConfig, starts: Sequence[tuple[int, int]], t_end: int,
             mode: FlowMode = FlowMode.COALESCING,
             backbones: dict | None = None) -> list[LatticePath]:
    """One path per start; off-backbone starts move to next_left first.

    Non-coalescing modes give walk k permutation stream k + 1; with
    INDEPENDENT_CLUSTERS it also gets omega stream k + 1 (and a backbone
    built on demand over the same cone, cached in `backbones`).
    """
    cache = {} if backbones is None else backbones
    paths = []
    for k, z in enumerate(starts):
        ps, os_ = _stream_for(mode, k)
        bk, ck = b, cfg
        if os_:
            ck = FieldConfig(cfg.p, cfg.master_seed, cfg.horizon, cfg.x_lo, cfg.x_hi, os_)
            if os_ not in cache:
                cache[os_] = compute_backbone(ck)
            bk = cache[os_]
        x, t0 = int(z[0]), int(z[1])
        y = next_left(bk, x, t0)
        path = run_walk(bk, ck, (y, t0), t_end, ps)
        paths.append(LatticePath((y, t0), path.positions, origin=(x, t0),
                                 meta={"stream": ps, "omega_stream": os_}))
    return paths


@njit(nogil=True, cache=True)
def _occupancy(words, x_lo, base, pkey, lo, hi, t_end, rec, out):
    """Coalescing flow of every row-0 backbone site in [lo, hi].  Row k of
    `out` marks the sites occupied at time rec[k], indexed from lo - t_end.
    Returns the number of walks alive at time t_end, or -1 on leaving the cone."""
    off = lo - t_end
    mark = np.full(out.shape[1], -1, np.int64)
    cur = np.empty(hi - lo + 1, np.int64)
    nxt = np.empty(hi - lo + 1, np.int64)
    c = 0
    for x in range(lo, hi + 1):
        i = x - x_lo
        if (words[0, i >> 6] >> np.uint64(i & 63)) & np.uint64(1):
            cur[c] = x
            c += 1
    ir = 0
    for n in range(t_end + 1):
        while ir < rec.shape[0] and rec[ir] == n:
            for j in range(c):
                out[ir, cur[j] - off] = True
            ir += 1
        if n == t_end:
            break
        rlo = x_lo - (n + 1)
        width = base + 2 * (n + 1)
        c2 = 0
        for j in range(c):
            x = cur[j]
            pi = perm_index(pkey, x, n)
            y = x + PERMS[pi, 0]
            for q in range(3):
                z = x + PERMS[pi, q]
                i = z - rlo
                if i < 0 or i >= width:
                    return -1
                if (words[n + 1, i >> 6] >> np.uint64(i & 63)) & np.uint64(1):
                    y = z
                    break
            if mark[y - off] != n:
                mark[y - off] = n
                nxt[c2] = y
                c2 += 1
        for j in range(c2):
            cur[j] = nxt[j]
        c = c2
    return c


def flow_occupancy(b: Backbone, cfg: FieldConfig, lo: int, hi: int,
                   rec_times: Sequence[int], stream_id: int = 0) -> tuple[np.ndarray, int]:
    """Occupied sites of the coalescing flow started from all backbone sites
    of [lo, hi] x {0}.  Returns (occ, x_first): occ[k, i] is True iff
    x_first + i is occupied at time sorted(rec_times)[k]."""
    rec = np.array(sorted(set(int(t) for t in rec_times)), np.int64)
    if rec.size == 0 or rec[0] < 0:
        raise ValueError("need nonnegative record times")
    t_end = int(rec[-1])
    if t_end > b.horizon:
        raise HorizonExceeded(f"t_end={t_end} beyond horizon {b.horizon}")
    blo, bhi = b.row_bounds(0)
    if not blo <= lo <= hi <= bhi:
        raise RowExhausted(f"start interval [{lo}, {hi}] outside stored row [{blo}, {bhi}]")
    out = np.zeros((rec.size, hi - lo + 1 + 2 * t_end), np.bool_)
    base = b.config.x_hi - b.config.x_lo + 1
    code = _occupancy(b.words, np.int64(b.config.x_lo), np.int64(base), cfg.perm_key(stream_id),
                      np.int64(lo), np.int64(hi), np.int64(t_end), rec, out)
    if code < 0:
        raise RowExhausted("flow left the stored cone")
    return out, lo - t_end


def _overlap(p1: LatticePath, p2: LatticePath) -> tuple[int, int]:
    lo, hi = max(p1.t0, p2.t0), min(p1.t_end, p2.t_end)
    if lo > hi:
        raise DisjointRanges(f"[{p1.t0}, {p1.t_end}] and [{p2.t0}, {p2.t_end}] do not overlap")
    return lo, hi


def _first(p1, p2, pred):
    lo, hi = _overlap(p1, p2)
    a = p1.positions[lo - p1.t0: hi - p1.t0 + 1]
    b = p2.positions[lo - p2.t0: hi - p2.t0 + 1]
    idx = np.flatnonzero(pred(a, b))
    return int(lo + idx[0]) if idx.size else None


def meet_time(p1: LatticePath, p2: LatticePath) -> int | None:
    return _first(p1, p2, lambda a, b: a == b)


def near_time(p1: LatticePath, p2: LatticePath) -> int | None:
    return _first(p1, p2, lambda a, b: np.abs(a - b) <= 1)


def write_trace(paths: Iterable[LatticePath], csv_path, meta: dict | None = None) -> None:
    """CSV "walk_id,t,x" plus a JSON sidecar next to it."""
    paths = list(paths)
    with open(csv_path, "w", newline="") as fh:
        fh.write("walk_id,t,x\n")
        for k, pth in enumerate(paths):
            for t, x in zip(pth.times, pth.positions):
                fh.write(f"{k},{int(t)},{int(x)}\n")
    side = dict(meta or {})
    side.setdefault("walks", len(paths))
    with open(str(csv_path) + ".json", "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def read_trace(csv_path) -> list[LatticePath]:
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    out = []
    for k in np.unique(data[:, 0]) if data.size else []:
        rows = data[data[:, 0] == k]
        rows = rows[np.argsort(rows[:, 1])]
        out.append(LatticePath((int(rows[0, 2]), int(rows[0, 1])), rows[:, 2]))
    return out


def trace_meta(cfg: FieldConfig, mode: FlowMode, **extra) -> dict:
    return {"p": cfg.p, "master_seed": cfg.master_seed, "horizon": cfg.horizon,
            "window": [cfg.x_lo, cfg.x_hi], "mode": mode.value, **extra}
