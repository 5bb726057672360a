"""Reproducible random streams.

Every stochastic routine in the package draws from a :class:`Stream`, a
xoshiro256** generator whose 256-bit state is derived from a
``(master_seed, stream_id)`` pair by a fixed SplitMix64-style mix:

    mix64(z) = z3 where
        z1 = (z  ^ (z  >> 30)) * 0xBF58476D1CE4E5B9
        z2 = (z1 ^ (z1 >> 27)) * 0x94D049BB133111EB
        z3 =  z2 ^ (z2 >> 31)                         (all mod 2**64)

    key  = mix64(mix64(master_seed ^ 0x243F6A8885A308D3) ^ stream_id)
    s[i] = mix64(key + (i + 1) * 0x9E3779B97F4A7C15),  i = 0..3

``mix64`` is a bijection of 64-bit words, so two distinct stream ids under
the same master seed always get distinct keys.  A uniform is built from the
top 53 bits of one xoshiro256** output as ``((x >> 11) + 0.5) * 2**-53``,
which lies strictly inside (0, 1).  Exponentials use inversion,
``-log1p(-u) / rate``, so every exponential costs exactly one uniform.

The state lives in a ``uint64[5]`` array (four generator words plus a draw
counter) so that numba kernels can advance it in place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

__all__ = [
    "SeedSpec",
    "Stream",
    "derive_stream",
    "derive_states",
    "uniform01",
    "exp_sample",
    "exp_from_uniform",
    "mix64",
]

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MUL1 = 0xBF58476D1CE4E5B9
MIX_MUL2 = 0x94D049BB133111EB
MASTER_SALT = 0x243F6A8885A308D3

_U = np.uint64
_S11 = _U(11)
_S17 = _U(17)
_ONE = _U(1)
_FIVE = _U(5)
_NINE = _U(9)
_TWO53_INV = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python integer (mod 2**64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX_MUL1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MUL2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> _U(30)
    z *= _U(MIX_MUL1)
    z ^= z >> _U(27)
    z *= _U(MIX_MUL2)
    z ^= z >> _U(31)
    return z


def _check_word(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value <= MASK64:
        raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")
    return value


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", _check_word("master_seed", self.master_seed))
        object.__setattr__(self, "stream_id", _check_word("stream_id", self.stream_id))


class Stream:
    """Single-owner random stream.

    ``state`` is the raw ``uint64[5]`` array handed to compiled kernels;
    index 4 counts draws.  Do not share a Stream between threads.
    """

    __slots__ = ("state",)

    def __init__(self, state: np.ndarray):
        state = np.asarray(state, dtype=np.uint64)
        if state.shape != (5,):
            raise ValueError("stream state must have shape (5,)")
        self.state = state

    @property
    def counter(self) -> int:
        return int(self.state[4])

    def uniform01(self) -> float:
        return _next_uniform(self.state)

    def exp_sample(self, rate: float) -> float:
        return exp_sample(self, rate)

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` consecutive uniforms; identical to ``n`` calls of :meth:`uniform01`."""
        return _fill_uniform(self.state, int(n))

    def exponentials(self, n: int, rate: float = 1.0) -> np.ndarray:
        if not rate > 0:
            raise ValueError(f"rate must be positive, got {rate}")
        return _fill_exp(self.state, int(n), float(rate))

    def copy(self) -> "Stream":
        return Stream(self.state.copy())

    def __repr__(self) -> str:
        return f"Stream(counter={self.counter})"


def derive_states(master_seed: int, stream_ids) -> np.ndarray:
    """Vectorized derivation: one ``uint64[5]`` row per stream id."""
    master_seed = _check_word("master_seed", master_seed)
    ids = np.asarray(stream_ids, dtype=np.uint64).reshape(-1)
    salted = _U(mix64(master_seed ^ MASTER_SALT))
    keys = _mix64_array(ids ^ salted)
    out = np.zeros((ids.size, 5), dtype=np.uint64)
    for i in range(4):
        out[:, i] = _mix64_array(keys + _U(((i + 1) * GOLDEN_GAMMA) & MASK64))
    return out


def derive_stream(spec: SeedSpec) -> Stream:
    key = mix64(mix64(spec.master_seed ^ MASTER_SALT) ^ spec.stream_id)
    words = [mix64(key + (i + 1) * GOLDEN_GAMMA) for i in range(4)]
    return Stream(np.array(words + [0], dtype=np.uint64))


def uniform01(stream: Stream) -> float:
    return _next_uniform(stream.state)


def exp_from_uniform(u: float, rate: float) -> float:
    """The inversion used by :func:`exp_sample`, exposed for checking."""
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return -math.log1p(-u) / rate


def exp_sample(stream: Stream, rate: float) -> float:
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return _next_exp(stream.state, float(rate))


# ---------------------------------------------------------------------------
# compiled primitives; ``state`` is always the uint64[5] array of a Stream

@nb.njit(inline="always")
def _rotl(x, k):
    return (x << _U(k)) | (x >> _U(64 - k))


@nb.njit(nogil=True, cache=True)
def _next_u64(state):
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    result = _rotl(s1 * _FIVE, 7) * _NINE
    t = s1 << _S17
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    state[4] += _ONE
    return result


@nb.njit(nogil=True, cache=True)
def _next_uniform(state):
    return (float(_next_u64(state) >> _S11) + 0.5) * _TWO53_INV


@nb.njit(nogil=True, cache=True)
def _next_exp(state, rate):
    return -math.log1p(-_next_uniform(state)) / rate


@nb.njit(nogil=True, cache=True)
def _fill_uniform(state, n):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = _next_uniform(state)
    return out


@nb.njit(nogil=True, cache=True)
def _fill_exp(state, n, rate):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        out[i] = _next_exp(state, rate)
    return out


@nb.njit(nogil=True, cache=True)
def _next_normal(state):
    # Box-Muller, second variate discarded so each normal costs two uniforms
    u1 = _next_uniform(state)
    u2 = _next_uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@nb.njit(nogil=True, cache=True)
def _next_gamma(state, shape):
    """Marsaglia-Tsang; ``shape >= 1`` only."""
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = _next_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = _next_uniform(state)
        if math.log(u) < 0.5 * x * x + d - d * v + d * math.log(v):
            return d * v


@nb.njit(nogil=True, cache=True)
def _binomial_inversion(state, n, p):
    # p <= 0.5 and n * p small: walk the pmf from 0
    q = 1.0 - p
    f = math.exp(n * math.log1p(-p))
    r = p / q
    u = _next_uniform(state)
    k = 0
    while u > f and k < n:
        u -= f
        k += 1
        f *= r * (n - k + 1) / k
    return k


@nb.njit(nogil=True, cache=True)
def _next_binomial(state, n, p):
    """Exact Binomial(n, p).

    Large cases are split by Knuth's beta recursion (the median order
    statistic of ``n`` uniforms is Beta(a, b)); once ``n * min(p, 1 - p)``
    is small the remainder is drawn by pmf inversion.
    """
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    k = 0
    while n > 0 and n * min(p, 1.0 - p) > 16.0:
        a = 1 + n // 2
        b = n - a + 1
        ga = _next_gamma(state, float(a))
        gb = _next_gamma(state, float(b))
        x = ga / (ga + gb)
        if x >= p:
            n = a - 1
            p = p / x
        else:
            k += a
            n = b - 1
            p = (p - x) / (1.0 - x)
    if n <= 0:
        return k
    if p > 0.5:
        return k + n - _binomial_inversion(state, n, 1.0 - p)
    return k + _binomial_inversion(state, n, p)


@nb.njit(nogil=True, cache=True)
def _next_poisson(state, lam):
    # counts unit-rate exponential gaps inside [0, lam]; O(lam), used rarely
    s = _next_exp(state, 1.0)
    k = 0
    while s <= lam:
        k += 1
        s += _next_exp(state, 1.0)
    return k


def binomial(stream: Stream, n: int, p: float) -> int:
    return int(_next_binomial(stream.state, int(n), float(p)))


def poisson(stream: Stream, lam: float) -> int:
    return int(_next_poisson(stream.state, float(lam)))
