"""Closed forms and limit laws used as oracles against the simulations.

The mixed-Poisson integrals are taken over the exponential representation of
the Weibull variable, ``X = E**rho`` with ``E ~ Exp(1)``.  After the change of
variable ``u = exp(s)`` the integrand is smooth on the whole line, so a
composite Simpson rule on ``s in [log(1e-14), log(U)]`` with
``U = -log(1e-12)`` is used; the discarded pieces are bounded by ``1e-14``
(below) and ``exp(-U) = 1e-12`` (above).
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy import special

from .rngcore import Stream, _next_exp

__all__ = [
    "LimitLawParams",
    "Cutoff",
    "gumbel_cdf",
    "weibull_tail",
    "sample_X_infinity",
    "kappa_x",
    "kappa_random",
    "limit_mean_W",
    "det_nu_recenter",
    "det_nu_limit_tail",
    "det_T_recenter",
    "cutoff_classify",
    "rand_nu_limit_tail",
    "mixed_poisson_pmf",
    "mixed_poisson_cdf",
    "moment_X_n",
    "moment_X_limit",
    "mean_P_n_exact",
    "mean_P_n_gamma_rho",
    "poisson_bound_check",
    "BoundViolation",
]

DEFAULT_QUADRATURE = 4096
MIN_QUADRATURE = 64
_U_LOW = 1e-14
_U_HIGH = -math.log(1e-12)
CRITICAL_RTOL = 1e-9


class BoundViolation(ArithmeticError):
    pass


class LimitLawParams:
    """Parameters shared by the limit laws.

    Plain holder with validation; ``quadrature`` is the Simpson node count.
    """

    def __init__(self, rho: float = 2.0, alpha: float = 1.0, delta: float = 3.0,
                 quadrature: int = DEFAULT_QUADRATURE):
        if not rho > 0:
            raise ValueError("rho must be positive")
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        if not delta > 1:
            raise ValueError("delta must exceed 1")
        _check_quadrature(quadrature)
        self.rho = float(rho)
        self.alpha = float(alpha)
        self.delta = float(delta)
        self.quadrature = int(quadrature)

    def kappa(self, n_balls: int) -> float:
        return kappa_random(n_balls, self.rho)

    def __repr__(self) -> str:
        return (f"LimitLawParams(rho={self.rho}, alpha={self.alpha}, "
                f"delta={self.delta}, quadrature={self.quadrature})")


def gumbel_cdf(x):
    """P(T_inf <= x) = exp(-exp(-x))."""
    return np.exp(-np.exp(-np.asarray(x, dtype=float)))[()]


def weibull_tail(x, rho: float):
    """P(X_inf >= x) = exp(-x**(1/rho)) for x >= 0."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("weibull_tail is defined for x >= 0")
    return np.exp(-x ** (1.0 / rho))[()]


def sample_X_infinity(stream: Stream, rho: float) -> float:
    """One draw of the limit X_inf, as E**rho."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return _next_exp(stream.state, 1.0) ** rho


def kappa_x(n_balls: int, alpha: float, delta: float, x: float = 1.0) -> int:
    if n_balls < 3:
        raise ValueError("kappa_x needs N >= 3 so that log log N is defined")
    if not x > 0:
        raise ValueError("x must be positive")
    log_n = math.log(n_balls)
    scale = (alpha * delta * n_balls / log_n) ** (1.0 / delta)
    bracket = 1.0 + (1.0 + delta) / delta * math.log(log_n) / log_n + math.log(x) / log_n
    return math.floor(scale * bracket)


def kappa_random(n_balls: int, rho: float) -> float:
    """N**(1/(rho+2)), the scale of the first empty urn in the random model."""
    return n_balls ** (1.0 / (rho + 2.0))


def limit_mean_W(alpha: float, delta: float, x: float) -> float:
    return (alpha * delta) ** (1.0 / delta) * x


def det_nu_recenter(nu, n_balls: int, alpha: float, delta: float):
    log_n = math.log(n_balls)
    a = log_n ** ((1.0 + delta) / delta) / (alpha * delta * n_balls) ** (1.0 / delta)
    return (a * np.asarray(nu, dtype=float) - log_n
            - (1.0 + delta) / delta * math.log(log_n))[()]


def det_nu_limit_tail(x, alpha: float, delta: float):
    """P(Y >= x) = exp(-(alpha delta)**(1/delta) e**x)."""
    return np.exp(-(alpha * delta) ** (1.0 / delta) * np.exp(np.asarray(x, dtype=float)))[()]


def det_T_recenter(T, n_balls: int, alpha: float, delta: float):
    log_n = math.log(n_balls)
    return (delta * np.asarray(T, dtype=float) - log_n + math.log(log_n)
            - math.log(alpha * delta))[()]


class Cutoff(enum.Enum):
    DIVERGES = "diverges"
    VANISHES = "vanishes"
    CRITICAL = "critical"


def cutoff_classify(beta: float, alpha: float, delta: float) -> Cutoff:
    if not beta > 0:
        raise ValueError("beta must be positive")
    threshold = (alpha * delta) ** (1.0 / delta)
    if abs(beta - threshold) <= CRITICAL_RTOL * threshold:
        return Cutoff.CRITICAL
    return Cutoff.DIVERGES if beta > threshold else Cutoff.VANISHES


# ---------------------------------------------------------------------------
# mixed Poisson limit of the random model

def _check_quadrature(quadrature: int) -> None:
    if quadrature < MIN_QUADRATURE:
        raise ValueError(
            f"quadrature={quadrature} too small for the stated accuracy; "
            f"use at least {MIN_QUADRATURE} nodes")


def _simpson_nodes(quadrature: int):
    _check_quadrature(quadrature)
    n = quadrature + (quadrature % 2)  # Simpson needs an even panel count
    s = np.linspace(math.log(_U_LOW), math.log(_U_HIGH), n + 1)
    h = s[1] - s[0]
    w = np.full(n + 1, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    u = np.exp(s)
    # du = u ds; e^{-u} is the Exp(1) density
    return u, w * (h / 3.0) * u * np.exp(-u)


def _intensity(u, x, rho):
    return x ** (rho + 2.0) * u ** (-rho) / (rho * (rho + 2.0))


def rand_nu_limit_tail(x, rho: float, quadrature: int = DEFAULT_QUADRATURE):
    """P(Y >= x) for the limit of nu^R / N**(1/(rho+2))."""
    u, w = _simpson_nodes(quadrature)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < 0):
        raise ValueError("x must be non-negative")
    out = np.array([math.fsum(w * np.exp(-_intensity(u, xi, rho))) if xi > 0 else 1.0
                    for xi in xs])
    return out.reshape(np.shape(x))[()]


def mixed_poisson_pmf(j: int, x: float, rho: float, quadrature: int = DEFAULT_QUADRATURE) -> float:
    """P(W = j) for the Poisson law whose parameter is x**(rho+2) / (X rho (rho+2))."""
    if j < 0:
        raise ValueError("j must be non-negative")
    if x == 0:
        return 1.0 if j == 0 else 0.0
    u, w = _simpson_nodes(quadrature)
    lam = _intensity(u, x, rho)
    log_pois = -lam + j * np.log(lam) - special.gammaln(j + 1.0)
    return math.fsum(w * np.exp(log_pois))


def mixed_poisson_cdf(j: int, x: float, rho: float, quadrature: int = DEFAULT_QUADRATURE) -> float:
    """P(W <= j), integrating the Poisson CDF (regularized gamma) directly."""
    if j < 0:
        return 0.0
    if x == 0:
        return 1.0
    u, w = _simpson_nodes(quadrature)
    lam = _intensity(u, x, rho)
    return math.fsum(w * special.gammaincc(j + 1.0, lam))


# ---------------------------------------------------------------------------
# exact moments

def moment_X_n(n: int, q: float, rho: float) -> float:
    """E(X_n**q) = (n+1)**(q rho) prod_{i<=n} 1 / (1 + q rho / i)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if q < 0:
        raise ValueError("q must be non-negative")
    a = q * rho
    i = np.arange(1, n + 1, dtype=np.float64)
    log_val = a * math.log(n + 1.0) - math.fsum(np.log1p(a / i))
    return math.exp(log_val)


def moment_X_limit(q: float, rho: float) -> float:
    """lim E(X_n**q) = Gamma(q rho + 1), the q-th moment of E**rho."""
    return math.gamma(q * rho + 1.0)


def mean_P_n_exact(n: int, rho: float) -> float:
    """E(P_n) = prod_{k<n} k / (k + rho) * rho / (n + rho)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    k = np.arange(1, n, dtype=np.float64)
    log_val = -math.fsum(np.log1p(rho / k)) + math.log(rho / (n + rho))
    return math.exp(log_val)


def mean_P_n_gamma_rho(rho: float) -> float:
    """rho * Gamma(rho), an alternative constant for n**(rho+1) E(P_n); off by the factor rho."""
    return rho * math.gamma(rho)


def poisson_bound_check(n_balls: int, grid: int = 100_001) -> float:
    """max |exp(-N x) - (1 - x)**N| over a dense grid of [0, 1].

    The grid is refined near x = 2/N where the gap peaks.  Raises
    :class:`BoundViolation` if the maximum exceeds 2/N.
    """
    if n_balls < 1:
        raise ValueError("N must be at least 1")
    if grid < 2:
        raise ValueError("grid needs at least two points")
    x = np.unique(np.concatenate([
        np.linspace(0.0, 1.0, grid),
        np.linspace(0.0, min(1.0, 10.0 / n_balls), grid),
    ]))
    with np.errstate(divide="ignore"):
        binom = np.exp(n_balls * np.log1p(-x))
    dev = float(np.max(np.abs(np.exp(-n_balls * x) - binom)))
    if dev > 2.0 / n_balls:
        raise BoundViolation(f"deviation {dev:.3g} exceeds 2/N = {2.0 / n_balls:.3g}")
    return dev
