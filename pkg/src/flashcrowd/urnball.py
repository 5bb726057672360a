"""Urn-and-ball reductions of the first regime.

Random model: the creation times ``T_n = sum_{k<=n} E_k / k`` cut the half
line into urns ``(T_{n-1}, T_n]`` and the N wake-up times (Exp(rho)) are the
balls, so urn ``n`` is hit with probability
``P_n = exp(-rho T_{n-1}) (1 - exp(-rho E_n / n))``.

Deterministic model: urn ``n`` is hit with a fixed probability ``q_n``,
typically ``alpha * n**-delta``.

Two samplers are provided for the random model.  ``method="sort"`` draws the
N ball positions, sorts them and walks the urn boundaries; ``"binomial"``
uses memorylessness instead: given ``m`` balls beyond ``T_{n-1}``, urn ``n``
receives Binomial(m, 1 - exp(-rho E_n / n)) of them.  Both are exact in
law; the binomial walk costs O(number of urns visited) rather than
O(N log N).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import special

from .rngcore import Stream, _next_binomial, _next_exp, _next_poisson

__all__ = [
    "RandomUrnRealization",
    "DetUrnProfile",
    "Occupancy",
    "PrefixExhausted",
    "realize_random_urns",
    "realize_T_batch",
    "cell_probabilities",
    "realize_T",
    "throw_balls_random",
    "throw_balls_det",
    "first_low_urn",
    "count_empty_upto",
    "expected_W_exact",
    "time_of_index",
    "nu3_index",
]


class PrefixExhausted(LookupError):
    """The requested urn lies beyond the realized prefix; extend ``k_max``."""


@dataclass(frozen=True)
class RandomUrnRealization:
    rho: float
    E: np.ndarray  # E_1..E_k, unit exponentials
    T: np.ndarray  # T_0..T_k, T_0 = 0

    @property
    def k_max(self) -> int:
        return len(self.E)

    @property
    def P(self) -> np.ndarray:
        """Cell probabilities P_1..P_k."""
        return cell_probabilities(self.rho, self.E, self.T)

    @property
    def X(self) -> np.ndarray:
        """X_n = (n+1)**rho * exp(-rho T_n) for n = 0..k."""
        n = np.arange(0, self.k_max + 1)
        return np.exp(self.rho * (np.log(n + 1.0) - self.T))

    @property
    def Z(self) -> np.ndarray:
        """Z_n = (n / rho)(1 - exp(-rho E_n / n)) for n = 1..k."""
        n = np.arange(1, self.k_max + 1)
        return n / self.rho * -np.expm1(-self.rho * self.E / n)

    def to_csv(self, path) -> None:
        from ._io import write_realization_csv

        write_realization_csv(path, self)


@dataclass(frozen=True)
class DetUrnProfile:
    """Fixed cell probabilities ``q_1..q_k`` plus the mass of everything beyond.

    Balls landing beyond ``k_max`` are kept as overflow and never inspected.
    """

    q: np.ndarray
    tail: float
    alpha: float | None = None
    delta: float | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64)
        if q.ndim != 1:
            raise ValueError("q must be one-dimensional")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise ValueError("cell probabilities must be finite and non-negative")
        if np.any(np.diff(q) > 1e-15):
            raise ValueError("cell probabilities must be non-increasing")
        total = math.fsum(q)
        if total > 1.0 + 1e-12:
            raise ValueError(f"cell probabilities sum to {total:.12g} > 1")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "tail", max(0.0, float(self.tail)))

    @property
    def k_max(self) -> int:
        return len(self.q)

    @classmethod
    def from_probs(cls, q) -> "DetUrnProfile":
        q = np.asarray(q, dtype=np.float64)
        return cls(q, 1.0 - math.fsum(q))

    @classmethod
    def power_law(cls, alpha: float, delta: float, k_max: int,
                  normalization: str = "tail") -> "DetUrnProfile":
        """``q_n = alpha * n**-delta`` on ``1..k_max``.

        ``normalization="tail"`` keeps every ``q_n`` as is and gives the
        missing mass to the region beyond ``k_max``; it fails when
        ``sum q_n > 1``.  ``"head"`` keeps the power law for ``n > h`` on the
        whole half line and spreads the remaining mass evenly over urns
        ``1..h``, with ``h`` the smallest value keeping ``q`` non-increasing;
        the mass beyond ``k_max`` is then ``alpha * zeta(delta, k_max + 1)``.
        For ``alpha=1, delta=3`` this gives ``h=1`` and
        ``q_1 = 1 - (zeta(3) - 1)``.
        """
        if not alpha > 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        if not delta > 1:
            raise ValueError(f"delta must exceed 1, got {delta}")
        if k_max < 1:
            raise ValueError("k_max must be at least 1")
        n = np.arange(1, k_max + 1, dtype=np.float64)
        q = alpha * n ** -delta
        if normalization == "tail":
            total = math.fsum(q)
            if total > 1.0 + 1e-12:
                raise ValueError(
                    f"alpha * sum n**-delta = {total:.6g} > 1 on 1..{k_max}; "
                    "use normalization='head' or a smaller alpha")
            return cls(q, 1.0 - total, alpha, delta)
        if normalization == "head":
            h = _flat_head_size(alpha, delta)
            if h >= k_max:
                raise ValueError(f"k_max={k_max} does not reach past the flat head of {h} urns")
            q[:h] = (1.0 - alpha * special.zeta(delta, h + 1.0)) / h
            tail = alpha * special.zeta(delta, k_max + 1.0)
            return cls(q, tail, alpha, delta)
        raise ValueError(f"unknown normalization {normalization!r}")

    def suffix_mass(self) -> np.ndarray:
        """``rem[i]`` = mass of urns ``i+1..k_max`` plus tail (0-based i)."""
        rem = np.empty(self.k_max + 1)
        rem[-1] = self.tail
        acc = self.tail
        for i in range(self.k_max - 1, -1, -1):
            acc += self.q[i]
            rem[i] = acc
        return rem


def _flat_head_size(alpha: float, delta: float, limit: int = 1_000_000) -> int:
    for h in range(1, limit):
        rest = 1.0 - alpha * special.zeta(delta, h + 1.0)
        if rest >= 0 and rest / h >= alpha * (h + 1.0) ** -delta:
            return h
    raise ValueError(f"no flat head makes alpha={alpha}, delta={delta} a distribution")


@dataclass(frozen=True)
class Occupancy:
    """Ball counts ``eta[i-1]`` for urns ``i = 1..k_max``.

    ``overflow`` counts balls beyond the prefix.  When it is zero every urn
    past the prefix is known to be empty.
    """

    eta: np.ndarray
    n_balls: int
    overflow: int
    realization: RandomUrnRealization | None = None

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=np.int64)
        object.__setattr__(self, "eta", eta)
        if np.any(eta < 0) or self.overflow < 0:
            raise ValueError("ball counts must be non-negative")
        if int(eta.sum()) + self.overflow != self.n_balls:
            raise ValueError("ball counts do not add up to n_balls")

    @property
    def k_max(self) -> int:
        return len(self.eta)

    def to_csv(self, path) -> None:
        from ._io import write_occupancy_csv

        write_occupancy_csv(path, self)


# ---------------------------------------------------------------------------
# compiled walks

@nb.njit(nogil=True, cache=True)
def _fill_T(state, k):
    E = np.empty(k)
    T = np.empty(k + 1)
    T[0] = 0.0
    for n in range(1, k + 1):
        e = _next_exp(state, 1.0)
        E[n - 1] = e
        T[n] = T[n - 1] + e / n
    return E, T


@nb.njit(nogil=True, cache=True)
def _grow(a, n):
    out = np.empty(2 * len(a), dtype=a.dtype)
    out[:n] = a[:n]
    return out


@nb.njit(nogil=True, cache=True)
def _walk_binomial(n_balls, rho, state, k_min, k_cap):
    """Sequential binomial placement; stops at ``k_cap``, or once no ball is
    left and at least ``k_min`` urns exist."""
    cap = 64
    E = np.empty(cap)
    eta = np.empty(cap, dtype=np.int64)
    m = n_balls
    n = 0
    while (m > 0 or n < k_min) and n < k_cap:
        if n == cap:
            E = _grow(E, n)
            eta = _grow(eta, n)
            cap *= 2
        e = _next_exp(state, 1.0)
        p = -math.expm1(-rho * e / (n + 1))
        c = _next_binomial(state, m, p)
        E[n] = e
        eta[n] = c
        m -= c
        n += 1
    return E[:n], eta[:n], m


@nb.njit(nogil=True, cache=True)
def _walk_sorted(positions, state, k_min, k_cap):
    """Count sorted ball positions per urn, drawing boundaries lazily."""
    cap = 64
    E = np.empty(cap)
    eta = np.empty(cap, dtype=np.int64)
    nb_ = len(positions)
    j = 0
    n = 0
    T = 0.0
    while (j < nb_ or n < k_min) and n < k_cap:
        if n == cap:
            E = _grow(E, n)
            eta = _grow(eta, n)
            cap *= 2
        e = _next_exp(state, 1.0)
        T += e / (n + 1)
        c = 0
        while j < nb_ and positions[j] <= T:
            c += 1
            j += 1
        E[n] = e
        eta[n] = c
        n += 1
    return E[:n], eta[:n], nb_ - j


@nb.njit(nogil=True, cache=True)
def _walk_det(n_balls, q, rem, state):
    k = len(q)
    eta = np.zeros(k, dtype=np.int64)
    m = n_balls
    for i in range(k):
        if m == 0:
            break
        if rem[i] <= 0.0:
            break
        p = q[i] / rem[i]
        if p > 1.0:
            p = 1.0
        c = _next_binomial(state, m, p)
        eta[i] = c
        m -= c
    return eta, m


def _realization(rho, E) -> RandomUrnRealization:
    T = np.empty(len(E) + 1)
    T[0] = 0.0
    np.cumsum(E / np.arange(1, len(E) + 1), out=T[1:])
    return RandomUrnRealization(float(rho), E, T)


def _check_rho(rho):
    if not (rho > 0 and math.isfinite(rho)):
        raise ValueError(f"rho must be positive, got {rho}")


def cell_probabilities(rho: float, E: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``P_n = exp(-rho T_{n-1}) (1 - exp(-rho E_n / n))`` along the last axis."""
    n = np.arange(1, E.shape[-1] + 1)
    return np.exp(-rho * T[..., :-1]) * -np.expm1(-rho * E / n)


def realize_T_batch(k_max: int, reps: int, stream: Stream) -> tuple[np.ndarray, np.ndarray]:
    """``reps`` independent prefixes at once: ``E`` of shape (reps, k), ``T`` (reps, k+1).

    Row ``r`` uses the draws a sequential call would make for replication ``r``.
    """
    if k_max < 1 or reps < 1:
        raise ValueError("k_max and reps must be at least 1")
    E = stream.exponentials(k_max * reps).reshape(reps, k_max)
    T = np.zeros((reps, k_max + 1))
    np.cumsum(E / np.arange(1, k_max + 1), axis=1, out=T[:, 1:])
    return E, T


def realize_T(k_max: int, stream: Stream) -> np.ndarray:
    """``T_0..T_k`` from fresh unit exponentials."""
    return _fill_T(stream.state, int(k_max))[1]


def realize_random_urns(rho: float, k_max: int, stream: Stream) -> RandomUrnRealization:
    _check_rho(rho)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    E, T = _fill_T(stream.state, int(k_max))
    return RandomUrnRealization(float(rho), E, T)


def throw_balls_random(n_balls: int, rho: float, stream: Stream, *,
                       method: str = "sort", k_max: int | None = None,
                       min_urns: int = 0, poissonize: bool = False) -> Occupancy:
    """Throw the balls of the random model; the realization rides along.

    Urns are realized lazily until every ball is placed (and at least
    ``min_urns`` exist), or up to ``k_max`` with the rest reported as
    overflow.  ``poissonize`` replaces the ball count by a Poisson(n_balls)
    draw.  Uncapped throws need about ``n_balls**(1/rho)`` urns, so pass
    ``k_max`` when rho is small.
    """
    _check_rho(rho)
    if n_balls < 0:
        raise ValueError("n_balls must be non-negative")
    if poissonize:
        n_balls = int(_next_poisson(stream.state, float(n_balls)))
    cap = np.iinfo(np.int64).max if k_max is None else int(k_max)
    if method == "sort":
        positions = np.sort(stream.exponentials(n_balls, rho)) if n_balls else np.empty(0)
        E, eta, rest = _walk_sorted(positions, stream.state, int(min_urns), cap)
    elif method == "binomial":
        E, eta, rest = _walk_binomial(int(n_balls), float(rho), stream.state,
                                      int(min_urns), cap)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Occupancy(eta, int(n_balls), int(rest), _realization(rho, E))


def throw_balls_det(n_balls: int, profile: DetUrnProfile, stream: Stream, *,
                    poissonize: bool = False) -> Occupancy:
    """Exact multinomial throw by sequential binomial conditioning."""
    if n_balls < 0:
        raise ValueError("n_balls must be non-negative")
    if poissonize:
        n_balls = int(_next_poisson(stream.state, float(n_balls)))
    eta, rest = _walk_det(int(n_balls), profile.q, profile.suffix_mass(), stream.state)
    return Occupancy(eta, int(n_balls), int(rest))


def first_low_urn(occ: Occupancy, m: int = 0) -> int:
    """Smallest urn index holding at most ``m`` balls (``m=0``: first empty urn)."""
    if m < 0:
        raise ValueError("m must be non-negative")
    hits = np.flatnonzero(occ.eta <= m)
    if hits.size:
        return int(hits[0]) + 1
    if occ.overflow == 0:
        return occ.k_max + 1
    raise PrefixExhausted(f"no urn with <= {m} balls among the first {occ.k_max}")


def count_empty_upto(occ: Occupancy, k: int) -> int:
    """Number of empty urns among the first ``k``."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k > occ.k_max:
        raise PrefixExhausted(f"k={k} beyond realized prefix of {occ.k_max} urns")
    return int(np.count_nonzero(occ.eta[:k] == 0))


def expected_W_exact(n_balls: int, profile: DetUrnProfile, k: int) -> float:
    """``sum_{i<=k} (1 - q_i)**N``, evaluated in log space."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > profile.k_max:
        raise PrefixExhausted(f"k={k} beyond profile support of {profile.k_max} urns")
    q = profile.q[:k]
    with np.errstate(divide="ignore"):
        terms = np.exp(n_balls * np.log1p(-q))
    return math.fsum(terms)


def time_of_index(realization: RandomUrnRealization | np.ndarray, n: int) -> float:
    T = realization.T if isinstance(realization, RandomUrnRealization) else realization
    if n < 0:
        raise ValueError("n must be non-negative")
    if n >= len(T):
        raise PrefixExhausted(f"T_{n} not realized (prefix {len(T) - 1})")
    return float(T[n])


def nu3_index(occ: Occupancy, rho: float) -> int:
    """First ``x`` with ``N - sum_{i<=x} eta_i < x / rho``."""
    _check_rho(rho)
    residual = occ.n_balls - np.cumsum(occ.eta)
    x = np.arange(1, occ.k_max + 1)
    hits = np.flatnonzero(residual < x / rho)
    if hits.size:
        return int(hits[0]) + 1
    if occ.overflow == 0:
        return occ.k_max + 1
    # residual stays >= overflow beyond the prefix; the crossing may still be far
    raise PrefixExhausted(f"rate crossing not reached within {occ.k_max} urns")
