"""Independent reference computations used by the tests."""
import itertools

import numpy as np

from percweb.field import FieldConfig, omega


def omega_table(cfg: FieldConfig) -> dict:
    """Open/closed state of every site of the stored cone."""
    T = cfg.horizon
    return {(x, n): omega(cfg, x, n)
            for n in range(T + 1) for x in range(cfg.x_lo - n, cfg.x_hi + n + 1)}


def _open(om, x, n):
    return om.get((x, n), False)


def enumerate_rows(cfg: FieldConfig) -> list[np.ndarray]:
    """Backbone rows by listing every directed path from each site to level T
    (3^(T-n) move sequences per site)."""
    om = omega_table(cfg)
    T = cfg.horizon
    rows = []
    for n in range(T + 1):
        row = []
        for x in range(cfg.x_lo - n, cfg.x_hi + n + 1):
            ok = False
            for moves in itertools.product((-1, 0, 1), repeat=T - n):
                y, good = x, _open(om, x, n)
                for k, d in enumerate(moves):
                    if not good:
                        break
                    y += d
                    good = _open(om, y, n + k + 1)
                if good:
                    ok = True
                    break
            row.append(ok)
        rows.append(np.array(row, bool))
    return rows


def forward_rows(cfg: FieldConfig) -> list[np.ndarray]:
    """Backbone rows by pushing, from every start at once, the set of sites
    reachable along open directed paths up to level T."""
    T = cfg.horizon
    lo, hi = cfg.x_lo - T, cfg.x_hi + T
    W = hi - lo + 1
    om = np.zeros((T + 1, W), bool)
    for (x, n), v in omega_table(cfg).items():
        om[n, x - lo] = v
    rows = []
    for n in range(T + 1):
        a, b = cfg.x_lo - n, cfg.x_hi + n
        S = b - a + 1
        reach = np.zeros((S, W), bool)
        reach[np.arange(S), np.arange(S) + (a - lo)] = True
        reach &= om[n][None, :]
        for k in range(n + 1, T + 1):
            nxt = reach.copy()
            nxt[:, 1:] |= reach[:, :-1]
            nxt[:, :-1] |= reach[:, 1:]
            reach = nxt & om[k][None, :]
        rows.append(reach.any(axis=1))
    return rows


def difference_walk_tail(d0: int, grid, R: int, seed: int) -> np.ndarray:
    """P(T_meet > n) for two coalescing uniform {-1,0,1} walks started d0
    apart, from the difference chain D + xi - xi' (meeting = hitting 0)."""
    rng = np.random.default_rng(seed)
    n_max = max(grid)
    d = np.full(R, d0, np.int64)
    alive = np.ones(R, bool)
    tmeet = np.full(R, np.iinfo(np.int64).max)
    for n in range(1, n_max + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        d[idx] += rng.integers(-1, 2, idx.size) - rng.integers(-1, 2, idx.size)
        hit = idx[d[idx] == 0]
        tmeet[hit] = n
        alive[hit] = False
    return np.array([(tmeet > n).mean() for n in grid])
