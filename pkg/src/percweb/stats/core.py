"""Shared plumbing for experiments: configs, result records, fits, KS."""
from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats as sps

from ..errors import ConfigInvalid
from ..field import DEFAULT_MARGIN, survival_estimate
from ..rng import BOOTSTRAP, numpy_rng
from .engine import default_threads

SCHEMA_VERSION = 1
N_BOOT = 1000
GUARD_T = 1000
GUARD_R = 400
GUARD_MIN = 0.5


@dataclass
class ExperimentConfig:
    tag: str
    p: float = 0.8
    seed: int = 1
    replicates: int = 1000
    margin: int = DEFAULT_MARGIN
    threads: int = field(default_factory=default_threads)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.p, (int, float)) or not (0.0 < self.p <= 1.0):
            raise ConfigInvalid(f"p must lie in (0, 1], got {self.p}")
        if int(self.replicates) < 1:
            raise ConfigInvalid("replicates must be >= 1")
        if int(self.margin) < 0:
            raise ConfigInvalid("margin must be >= 0")
        if int(self.threads) < 1:
            raise ConfigInvalid("threads must be >= 1")
        self.seed = int(self.seed) & ((1 << 64) - 1)
        self.replicates = int(self.replicates)
        for k, v in self.params.items():
            if isinstance(v, (list, tuple)) and len(v) == 0:
                raise ConfigInvalid(f"grid {k!r} is empty")

    def get(self, key: str, default=None):
        return self.params.get(key, default)

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("threads")          # scheduling only; never changes results
        return d


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)
    plot: dict | None = None      # {"x": col, "y": col, "y_err": col|None, "series": col|None}

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError("row width does not match columns")
        self.rows.append([_plain(v) for v in row])

    def column(self, name) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_csv(self) -> str:
        out = [",".join(self.columns)]
        for r in self.rows:
            out.append(",".join(_fmt(v) for v in r))
        return "\n".join(out) + "\n"


@dataclass
class Check:
    name: str
    value: Any
    passed: bool
    criterion: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)
        self.value = _plain(self.value)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.criterion} (measured {_fmt(self.value)})"


@dataclass
class ExperimentResult:
    tag: str
    config: dict
    tables: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    wall_time: float = 0.0
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.tag,
            "config": self.config,
            "tables": {k: asdict(t) for k, t in self.tables.items()},
            "fits": _plain(self.fits),
            "checks": [_plain(asdict(c)) for c in self.checks],
            "wall_time": self.wall_time,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        return cls(
            tag=d["experiment"], config=d["config"],
            tables={k: Table(**t) for k, t in d["tables"].items()},
            fits=d.get("fits", {}),
            checks=[Check(**c) for c in d.get("checks", [])],
            wall_time=d.get("wall_time", 0.0), provenance=d.get("provenance", {}),
        )


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    return v


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


# -- grids -------------------------------------------------------------------

def geometric_grid(lo: float, hi: float, ratio: float = 2.0) -> list[int]:
    """lo, lo*ratio, ... (rounded), always ending exactly at hi."""
    out = []
    v = float(lo)
    while v < hi * (1 - 1e-9):
        out.append(int(round(v)))
        v *= ratio
    out.append(int(hi))
    return sorted(set(out))


# -- fits --------------------------------------------------------------------

@dataclass
class LineFit:
    slope: float
    intercept: float
    r2: float
    n: int


def ols(x, y) -> LineFit:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.size < 2:
        return LineFit(math.nan, math.nan, math.nan, int(x.size))
    A = np.vstack([x, np.ones_like(x)]).T
    (b, a), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a + b * x)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return LineFit(float(b), float(a), r2, int(x.size))


def loglog_slope(x, y) -> LineFit:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    return ols(np.log(x[ok]), np.log(y[ok]))


def bootstrap(stat: Callable[[np.ndarray], Any], R: int, seed: int, tag: int,
              n_boot: int = N_BOOT) -> np.ndarray:
    """stat(indices) over n_boot resamples of range(R) with replacement."""
    rng = numpy_rng(seed, BOOTSTRAP * 1000 + tag)
    out = []
    for _ in range(n_boot):
        out.append(stat(rng.integers(0, R, R)))
    return np.asarray(out, float)


def percentile_ci(samples, level: float = 0.95) -> tuple[float, float]:
    s = np.asarray(samples, float)
    s = s[np.isfinite(s)]
    if s.size == 0:
        return math.nan, math.nan
    a = (1 - level) / 2
    return float(np.quantile(s, a)), float(np.quantile(s, 1 - a))


def survival_curve(values: np.ndarray, grid: Sequence[int], censored_above: int | None = None) -> np.ndarray:
    """P(value > n) for n in grid; negative values stand for 'beyond the run'."""
    v = np.where(values < 0, np.iinfo(np.int64).max, values)
    return np.array([(v > n).mean() for n in grid])


def binomial_se(p: np.ndarray, n) -> np.ndarray:
    p = np.asarray(p, float)
    n = np.asarray(n, float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, np.sqrt(p * (1 - p) / np.maximum(n, 1)), math.nan)


# -- KS distances --------------------------------------------------------------

def ks_continuous(sample, cdf) -> float:
    s = np.sort(np.asarray(sample, float))
    if s.size == 0:
        return math.nan
    F = cdf(s)
    n = s.size
    return float(max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n)))


def ks_lattice(sample, scale: float, loc: float = 0.0) -> float:
    """KS distance of an integer-valued sample to N(loc, scale^2) with the
    half-integer continuity correction: compares F_emp(k) to
    Phi((k + 1/2 - loc) / scale) at every integer k in the sample range.
    (The uncorrected distance has a floor of half the largest atom.)"""
    s = np.asarray(sample, np.int64)
    if s.size == 0:
        return math.nan
    ks = np.arange(s.min() - 1, s.max() + 1)
    counts = np.bincount(s - ks[0], minlength=ks.size)[: ks.size]
    F = np.cumsum(counts) / s.size
    G = sps.norm.cdf((ks + 0.5 - loc) / scale)
    return float(np.max(np.abs(F - G)))


def ks_censored(times, cdf, t_max: float) -> float:
    """sup over [0, t_max] of |F_emp - F| for times observed up to t_max
    (inf or negative entries are 'not yet by t_max')."""
    t = np.asarray(times, float)
    n = t.size
    obs = np.sort(t[np.isfinite(t) & (t >= 0) & (t <= t_max)])
    if n == 0:
        return math.nan
    # epmirical CDF just after and just before each jump
    uniq, cnt = np.unique(obs, return_counts=True)
    after = np.cumsum(cnt) / n
    before = after - cnt / n
    F = cdf(uniq) if uniq.size else np.zeros(0)
    d = 0.0
    if uniq.size:
        d = max(float(np.max(np.abs(after - F))), float(np.max(np.abs(before - F))))
    d = max(d, abs(obs.size / n - float(cdf(t_max))), abs(float(cdf(0.0))))
    return d


# -- guard -------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _guard(p: float, seed: int) -> float:
    if p >= 1.0:
        return 1.0
    return survival_estimate(p, GUARD_T, GUARD_R, seed).theta


def supercritical_guard(cfg: ExperimentConfig) -> float:
    th = _guard(float(cfg.p), int(cfg.seed))
    if th < GUARD_MIN:
        raise ConfigInvalid(
            f"subcritical guard failed: survival estimate {th:.3f} < {GUARD_MIN} at p={cfg.p}, T={GUARD_T}")
    return th
