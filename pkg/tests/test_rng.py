import numpy as np
from numba import njit
from scipy import stats

from percweb.field import PERMUTATIONS, FieldConfig, permutation
from percweb.rng import OMEGA, PERM, perm_index, replicate_seed, stream_key, uniform


@njit(cache=True)
def _grid_perm(key, w, h):
    out = np.empty(w * h, np.int64)
    for n in range(h):
        for x in range(w):
            out[n * w + x] = perm_index(key, x - w // 2, n)
    return out


@njit(cache=True)
def _grid_unif(key, w, h):
    out = np.empty(w * h)
    for n in range(h):
        for x in range(w):
            out[n * w + x] = uniform(key, x, n)
    return out


def test_permutations_are_the_six_orders():
    assert sorted(PERMUTATIONS) == sorted({(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1)
                                           for c in (-1, 0, 1) if len({a, b, c}) == 3})


def test_permutation_uniform_chi_square():
    idx = _grid_perm(stream_key(7, PERM, 0), 1000, 600)
    counts = np.bincount(idx, minlength=6)
    assert counts.sum() == 600_000
    assert stats.chisquare(counts).pvalue > 1e-3


def test_uniform_range_and_mean():
    u = _grid_unif(stream_key(3, OMEGA, 0), 1000, 200)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)


def test_streams_uncorrelated():
    a = _grid_unif(stream_key(5, OMEGA, 0), 1000, 200)
    b = _grid_unif(stream_key(5, OMEGA, 1), 1000, 200)
    c = _grid_unif(stream_key(5, PERM, 0), 1000, 200)
    lim = 4 / np.sqrt(a.size)
    assert abs(np.corrcoef(a, b)[0, 1]) < lim
    assert abs(np.corrcoef(a, c)[0, 1]) < lim


def test_permutation_is_a_shift_of_the_site():
    cfg = FieldConfig(0.8, 11)
    for x in (-3, 0, 9):
        nb = permutation(cfg, x, 4)
        assert sorted(nb) == [x - 1, x, x + 1]
        assert permutation(cfg, x, 4) == nb


def test_replicate_seeds_distinct_and_stable():
    s = [replicate_seed(1, 12, r) for r in range(1000)]
    assert len(set(s)) == 1000
    assert replicate_seed(1, 12, 5) == s[5]
    assert replicate_seed(1, 12, 5, 1) != s[5]
    assert replicate_seed(2, 12, 5) != s[5]
