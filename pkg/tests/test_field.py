import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import enumerate_rows, forward_rows
from percweb.errors import CapacityExceeded, ConfigInvalid, HorizonExceeded, RowExhausted
from percweb.field import (Backbone, FieldConfig, LazyBackbone, compute_backbone, horizon_stability,
                           next_left, omega, survival_estimate)


def rows(b: Backbone):
    return [b.row(n) for n in range(b.horizon + 1)]


def test_p_one_all_ones():
    b = compute_backbone(FieldConfig(1.0, 3, 12, -4, 5))
    assert all(r.all() for r in rows(b))


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_eight_by_eight_matches_path_enumeration(seed):
    cfg = FieldConfig(0.65, seed, 7, 0, 7)
    b = compute_backbone(cfg)
    for got, want in zip(rows(b), enumerate_rows(cfg)):
        np.testing.assert_array_equal(got, want)


@given(seed=st.integers(0, 2**64 - 1), p=st.floats(0.3, 1.0), w=st.integers(1, 10),
       T=st.integers(0, 9), x_lo=st.integers(-100, 100))
def test_matches_forward_reachability(seed, p, w, T, x_lo):
    cfg = FieldConfig(p, seed, T, x_lo, x_lo + w - 1)
    for got, want in zip(rows(compute_backbone(cfg)), forward_rows(cfg)):
        np.testing.assert_array_equal(got, want)


def test_closed_row_kills_everything_below():
    # find a field with a fully closed row strictly below the top
    for seed in range(2000):
        cfg = FieldConfig(0.3, seed, 6, 0, 3)
        b = compute_backbone(cfg)
        closed = [n for n in range(cfg.horizon)
                  if not any(omega(cfg, x, n) for x in range(cfg.x_lo - n, cfg.x_hi + n + 1))]
        if closed:
            n0 = max(closed)
            assert all(not b.row(n).any() for n in range(n0 + 1))
            return
    pytest.fail("no fixture found")


def test_top_row_is_omega():
    cfg = FieldConfig(0.5, 9, 5, -3, 3)
    b = compute_backbone(cfg)
    lo, hi = b.row_bounds(5)
    assert [bool(v) for v in b.row(5)] == [omega(cfg, x, 5) for x in range(lo, hi + 1)]


def test_deterministic():
    cfg = FieldConfig(0.7, 123, 50, -20, 20)
    assert np.array_equal(compute_backbone(cfg).words, compute_backbone(cfg).words)


@given(seed=st.integers(0, 2**32), p1=st.floats(0.2, 1.0), p2=st.floats(0.2, 1.0))
def test_coupled_monotone_in_p(seed, p1, p2):
    lo, hi = sorted((p1, p2))
    a = compute_backbone(FieldConfig(lo, seed, 20, -10, 10))
    b = compute_backbone(FieldConfig(hi, seed, 20, -10, 10))
    for ra, rb in zip(rows(a), rows(b)):
        assert not np.any(ra & ~rb)


@given(seed=st.integers(0, 2**32), T=st.integers(0, 60))
def test_lazy_agrees_with_dense(seed, T):
    cfg = FieldConfig(0.72, seed, T, -15, 15)
    b = compute_backbone(cfg)
    lz = LazyBackbone(cfg, width=512)
    for n in range(0, T + 1, max(1, T // 5)):
        lo, hi = b.row_bounds(n)
        for x in range(max(lo, -15), min(hi, 15) + 1):
            assert lz.bit(x, n) == b.bit(x, n)


def test_next_left_cases():
    b = compute_backbone(FieldConfig(1.0, 1, 5, 0, 10))
    assert next_left(b, 7, 2) == 7
    cfg = FieldConfig(0.7, 4, 30, 0, 40)
    b = compute_backbone(cfg)
    r = b.row(0)
    ones = np.flatnonzero(r)
    for x in range(ones[0], 40):
        y = next_left(b, x, 0)
        assert b.bit(y, 0) and y <= x and not r[y + 1: x + 1].any()


def test_next_left_pattern_one_zero_zero():
    cfg = FieldConfig(0.7, 4, 30, 0, 40)
    b = compute_backbone(cfg)
    r = b.row(0)
    hits = [x for x in range(2, r.size) if r[x - 2] and not r[x - 1] and not r[x]]
    assert hits
    for x in hits:
        assert next_left(b, x, 0) == x - 2


def test_next_left_errors():
    cfg = FieldConfig(0.3, 2, 40, 0, 5)
    b = compute_backbone(cfg)
    assert not b.row(0).any()
    with pytest.raises(RowExhausted):
        next_left(b, 3, 0)
    with pytest.raises(RowExhausted):
        next_left(b, 500, 0)
    with pytest.raises(HorizonExceeded):
        next_left(b, 0, 41)


def test_capacity_and_config_errors():
    with pytest.raises(CapacityExceeded):
        compute_backbone(FieldConfig(0.8, 1, 1000, 0, 1000), max_bits=10_000)
    with pytest.raises(ConfigInvalid):
        FieldConfig(0.0, 1)
    with pytest.raises(ConfigInvalid):
        FieldConfig(0.5, 1, -1)
    with pytest.raises(ConfigInvalid):
        FieldConfig(0.5, 1, 3, 4, 2)


def test_survival_extremes_and_monotone():
    assert survival_estimate(1.0, 100, 50, 1).theta == 1.0
    assert survival_estimate(0.0, 100, 50, 1).theta == 0.0
    th = [survival_estimate(0.7, T, 500, 1).theta for T in (1, 5, 20, 100, 400)]
    assert all(a >= b for a, b in zip(th, th[1:]))


def test_survival_matches_dense_replicates():
    from percweb.rng import REPLICATE, replicate_seed
    est = survival_estimate(0.7, 30, 200, 5)
    dense = [compute_backbone(FieldConfig(0.7, replicate_seed(5, REPLICATE, r), 30)).bit(0, 0)
             for r in range(200)]
    assert est.hits == sum(dense)


def test_horizon_stability_decays():
    st_ = horizon_stability(0.8, 100, [4, 16, 64], 3000, 1)
    f = [v for _, v in st_]
    assert f[0] >= f[-1]
    assert f[-1] < 0.01


def test_dump_format(tmp_path):
    cfg = FieldConfig(0.75, 42, 3, 0, 2)
    b = compute_backbone(cfg)
    path = tmp_path / "bb.txt"
    b.dump(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "p=0.75 seed=42 T=3 xlo=0 xhi=2"
    assert len(lines) == 5
    assert lines[1] == "".join("1" if v else "0" for v in b.row(3))
    assert lines[-1].strip() == "".join("1" if v else "0" for v in b.row(0))
    assert set(lines[2].strip()) <= {"0", "1"}
