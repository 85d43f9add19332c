"""Counter-based randomness.

Every random quantity in the package is a pure function of a 64-bit key and
integer coordinates, so fields of unbounded extent cost no memory and any
replicate can be regenerated in isolation.  The mixer is the splitmix64
finalizer applied twice.
"""
import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1

# stream tags; disjoint by construction
OMEGA = 1
PERM = 2
REPLICATE = 3
CBM = 4
BOOTSTRAP = 5
QUENCHED = 6

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_LO32 = np.uint64(0xFFFFFFFF)
_INV53 = 1.0 / 9007199254740992.0
_SIX = np.uint64(6)


@njit(inline="always", cache=True)
def mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always", cache=True)
def prf(key, x, n):
    """64 random bits at lattice site (x, n) under `key`."""
    c = (np.uint64(n) << _S32) ^ (np.uint64(x) & _LO32)
    return mix(mix(key + c * _GOLDEN))


@njit(inline="always", cache=True)
def uniform(key, x, n):
    return (prf(key, x, n) >> _S11) * _INV53


@njit(inline="always", cache=True)
def perm_index(key, x, n):
    return prf(key, x, n) % _SIX


@njit(inline="always", cache=True)
def derive(seed, tag, a, b):
    """Child key from a parent key, a stream tag and two counters."""
    return prf(mix(seed ^ (np.uint64(tag) * _GOLDEN)), a, b)


def as_u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & MASK64)


def stream_key(seed: int, tag: int, sub: int = 0) -> np.uint64:
    return np.uint64(derive(as_u64(seed), np.uint64(tag), np.int64(sub), np.int64(0)))


def replicate_seed(seed: int, tag: int, index: int, attempt: int = 0) -> int:
    """Seed of replicate `index` (rejection attempt `attempt`) in experiment stream `tag`."""
    return int(derive(as_u64(seed), np.uint64(tag), np.int64(index), np.int64(attempt)))


def numpy_rng(seed: int, tag: int) -> np.random.Generator:
    """Generator for auxiliary sampling (bootstrap); deterministic in (seed, tag)."""
    return np.random.default_rng([int(seed) & MASK64, tag])
