"""Replicate-parallel drivers for the lazy walk kernels.

Replicates are cut into fixed-size chunks independent of the thread count;
each replicate's outcome depends only on (master_seed, tag, index), so the
merged arrays do not depend on scheduling.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import _lazy
from ..errors import CapacityExceeded, RejectionBudgetExceeded
from ..rng import as_u64

CHUNK = 2000
MAX_WIDTH = 1 << 16


def default_threads() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)


def chunks(R: int, size: int = CHUNK):
    return [(a, min(R, a + size)) for a in range(0, R, size)]


def pmap(fn, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks))


def memo_width(extent: int, n_end: int, T: int) -> int:
    w = 2 * (extent + int(8 * math.sqrt(n_end + 1)) + int(4 * math.sqrt(T + 1))) + 256
    return 1 << max(8, math.ceil(math.log2(w)))


@dataclass
class WalkBatch:
    pos: np.ndarray
    tmeet: np.ndarray
    tnear: np.ndarray
    tfar: np.ndarray
    spread: np.ndarray
    attempts: np.ndarray
    acc_sum: np.ndarray
    acc_sq: np.ndarray
    acc_cnt: np.ndarray


def run_walks(*, seed: int, tag: int, R: int, p: float, horizon: int, starts, n_end: int,
              perm_mode: int = 0, n_clusters: int = 1, start_mode: int = 0, rec_t=(),
              track_pairs: bool = False, stop_rule: int = 0, far_thr: int = 0,
              acc_size: int = 0, quenched_omega: int | None = None,
              max_attempts: int = 10_000, threads: int = 1, chunk: int = CHUNK,
              r_offset: int = 0) -> WalkBatch:
    sx = np.array([int(s[0]) for s in starts], np.int64)
    st = np.array([int(s[1]) for s in starts], np.int64)
    rec = np.array(sorted(set(int(t) for t in rec_t)), np.int64)
    xc = int(round(float(np.mean(sx))))
    extent = int(np.max(np.abs(sx - xc))) + max(far_thr, 0)
    W0 = memo_width(extent, n_end, horizon)

    def one(task):
        a, b = task
        W = W0
        while True:
            acc = [np.zeros(acc_size, np.int64) for _ in range(3)]
            out = _lazy.walks_kernel(
                as_u64(seed), np.uint64(tag), a + r_offset, b + r_offset, float(p), int(horizon), W, xc,
                sx, st, int(n_end), int(perm_mode), int(n_clusters), int(start_mode), rec,
                bool(track_pairs), int(stop_rule), int(far_thr), acc[0], acc[1], acc[2],
                quenched_omega is not None, as_u64(quenched_omega or 0), int(max_attempts))
            flags = out[-1]
            if flags[_lazy.F_BUDGET]:
                raise RejectionBudgetExceeded(
                    f"no admissible start configuration within {max_attempts} attempts (p={p})")
            if not flags[_lazy.F_OVERFLOW]:
                return out[:-1], acc
            if W >= MAX_WIDTH:
                raise CapacityExceeded(f"lazy memo width {W} exhausted")
            W *= 2

    parts = pmap(one, chunks(R, chunk), threads)
    cat = [np.concatenate([p_[0][k] for p_ in parts]) for k in range(6)]
    acc = [sum(p_[1][k] for p_ in parts) if parts else np.zeros(acc_size, np.int64) for k in range(3)]
    return WalkBatch(*cat, *acc)


def run_survival(seed: int, tag: int, R: int, p: float, T: int, threads: int = 1) -> np.ndarray:
    W0 = memo_width(0, 0, T)

    def one(task):
        a, b = task
        W = W0
        while True:
            hits, flags = _lazy.survival_kernel(as_u64(seed), np.uint64(tag), a, b, float(p), int(T), W)
            if not flags[_lazy.F_OVERFLOW]:
                return hits
            W *= 2

    return np.concatenate(pmap(one, chunks(R), threads))


def run_crossing(seed: int, tag: int, R: int, p: float, T: int, u: int, tt: int, right: int,
                 threads: int = 1) -> np.ndarray:
    W0 = 1 << max(8, math.ceil(math.log2(2 * (right + 2 * tt + u + 64) + 4 * math.sqrt(T))))

    def one(task):
        a, b = task
        W = W0
        while True:
            hit, flags = _lazy.crossing_kernel(as_u64(seed), np.uint64(tag), a, b, float(p),
                                               int(T), W, int(u), int(tt), int(right), 1)
            if not flags[_lazy.F_OVERFLOW]:
                return hit
            W *= 2

    return np.concatenate(pmap(one, chunks(R), threads))
