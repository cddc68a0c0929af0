"""Distributions for chunk sizes, per-chunk service times and queue waiting tails.

Chunk sizes are Pareto(x_m, alpha) in Mb, the per-Mb service time at a server
is exponential with rate mu, and a chunk's service time is their product
``B = X * L``.  Its complementary CDF has the closed form

    P(B > y) = alpha * (x_m / mu)**alpha * gamma(alpha, mu*y/x_m) / y**alpha

where ``gamma`` is the lower incomplete gamma function.  Waiting times at an
M/G/1 server fed by such chunks have tail index ``alpha - 1``.

Utilization is always ``rho = Lambda * E[B]`` with ``E[B] = E[L] / mu``; the
per-Mb rate alone is not comparable to an arrival rate.

All samplers take explicit uniform variates in (0, 1), so callers own the
randomness and every result is reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NumericsError",
    "UnstableQueueError",
    "ParetoParams",
    "ServerRate",
    "ServiceLawB",
    "WaitingTailParams",
    "sample_pareto",
    "pareto_mean",
    "pareto_second_moment",
    "lower_incomplete_gamma",
    "service_mean",
    "service_second_moment",
    "service_ccdf",
    "slowly_varying_factor",
    "sample_service_time",
    "waiting_tail_asymptote",
    "pk_mean_waiting",
]

GAMMA_TOL = 1e-15  # relative; gives ~1e-12 absolute for moderate a
GAMMA_MAX_ITER = 500
_TINY = 1e-300


class NumericsError(ArithmeticError):
    """An iterative evaluation failed to converge."""


class UnstableQueueError(ValueError):
    """Utilization is at or above one, so no stationary regime exists."""


@dataclass(frozen=True)
class ParetoParams:
    """Pareto chunk-size law with CCDF ``(x_m / x)**alpha`` for ``x >= x_m``.

    ``alpha`` must exceed 2 (finite variance) unless ``allow_heavy`` is set,
    which admits ``1 < alpha <= 2`` for exploration.  ``alpha <= 1`` has an
    infinite mean and is always rejected.
    """

    x_m: float
    alpha: float
    allow_heavy: bool = False

    def __post_init__(self):
        if not (self.x_m > 0 and math.isfinite(self.x_m)):
            raise ValueError(f"x_m must be positive and finite, got {self.x_m!r}")
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1 (finite mean), got {self.alpha!r}")
        if self.alpha <= 2 and not self.allow_heavy:
            raise ValueError(
                f"alpha={self.alpha!r} <= 2 gives infinite variance; "
                "pass allow_heavy=True to permit it"
            )


@dataclass(frozen=True)
class ServerRate:
    """Exponential service rate per Mb, in 1/(s*Mb)."""

    mu: float

    def __post_init__(self):
        if not (self.mu > 0 and math.isfinite(self.mu)):
            raise ValueError(f"mu must be positive and finite, got {self.mu!r}")


@dataclass(frozen=True)
class ServiceLawB:
    """Per-chunk service time ``B = X * L`` at one server."""

    pareto: ParetoParams
    rate: ServerRate

    @property
    def alpha(self) -> float:
        return self.pareto.alpha

    @property
    def scale(self) -> float:
        """``x_m / mu``, the scale of B in seconds."""
        return self.pareto.x_m / self.rate.mu


@dataclass(frozen=True)
class WaitingTailParams:
    lambda_total: float
    rho: float
    law: ServiceLawB

    def __post_init__(self):
        if not self.lambda_total > 0:
            raise ValueError(f"lambda_total must be positive, got {self.lambda_total!r}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho!r}")
        if self.rho >= 1:
            raise UnstableQueueError(f"rho={self.rho!r} >= 1; waiting-time tail undefined")

    @classmethod
    def from_load(cls, lambda_total: float, law: ServiceLawB) -> "WaitingTailParams":
        """Build with ``rho = lambda_total * E[B]``."""
        return cls(lambda_total, lambda_total * service_mean(law), law)


def _as_open_unit(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("uniform variates must lie strictly inside (0, 1)")
    return u


def _ret(arr):
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr


def sample_pareto(p: ParetoParams, u):
    """Inverse-CDF Pareto draw ``x_m * u**(-1/alpha)``; vectorized over ``u``."""
    u = _as_open_unit(u)
    return _ret(p.x_m * u ** (-1.0 / p.alpha))


def pareto_mean(p: ParetoParams) -> float:
    if p.alpha <= 1:
        raise ValueError("Pareto mean is infinite for alpha <= 1")
    return p.alpha * p.x_m / (p.alpha - 1)


def pareto_second_moment(p: ParetoParams) -> float:
    if p.alpha <= 2:
        raise ValueError("Pareto second moment is infinite for alpha <= 2")
    return p.alpha * p.x_m**2 / (p.alpha - 2)


def _gamma_series(a, x):
    # sum_{n>=0} x^n / (a (a+1) ... (a+n)); multiply by exp(-x) x^a afterwards.
    term = 1.0 / a
    total = term.copy()
    ap = a.copy()
    done = np.zeros(a.shape, dtype=bool)
    for _ in range(GAMMA_MAX_ITER):
        ap = ap + 1.0
        term = np.where(done, 0.0, term * x / ap)
        total = total + term
        done |= np.abs(term) <= np.abs(total) * GAMMA_TOL
        if done.all():
            return total * np.exp(-x + a * np.log(x))
    raise NumericsError(f"incomplete gamma series did not converge in {GAMMA_MAX_ITER} terms")


def _gamma_upper_cf(a, x):
    # Modified Lentz evaluation of the continued fraction for Gamma(a, x).
    b = x + 1.0 - a
    c = np.full(a.shape, 1.0 / _TINY)
    d = 1.0 / np.where(np.abs(b) < _TINY, _TINY, b)
    h = d.copy()
    done = np.zeros(a.shape, dtype=bool)
    for i in range(1, GAMMA_MAX_ITER + 1):
        an = -i * (i - a)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = b + an / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = np.where(done, 1.0, d * c)
        h = h * delta
        done |= np.abs(delta - 1.0) <= GAMMA_TOL
        if done.all():
            return np.exp(-x + a * np.log(x)) * h
    raise NumericsError(f"incomplete gamma continued fraction did not converge in {GAMMA_MAX_ITER} terms")


def lower_incomplete_gamma(a, x):
    """Lower incomplete gamma ``int_0^x u**(a-1) exp(-u) du`` (not regularized).

    Uses the power series for ``x < a + 1`` and ``Gamma(a) - Gamma(a, x)`` via
    a continued fraction otherwise.  Accepts scalars or broadcastable arrays.
    Raises NumericsError when either expansion exceeds its iteration cap.
    """
    a, x = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    if np.any(~(a > 0)):
        raise ValueError("a must be positive")
    if np.any(~(x >= 0)):
        raise ValueError("x must be nonnegative")
    out = np.zeros(a.shape)
    inf = np.isinf(x)
    gamma_a = np.vectorize(math.gamma, otypes=[float])
    if inf.any():
        out[inf] = gamma_a(a[inf])
    series = (x > 0) & (x < a + 1) & ~inf
    cf = (x >= a + 1) & ~inf
    if series.any():
        out[series] = _gamma_series(a[series], x[series])
    if cf.any():
        out[cf] = gamma_a(a[cf]) - _gamma_upper_cf(a[cf], x[cf])
    return _ret(out)


def service_mean(law: ServiceLawB) -> float:
    """E[B] = E[L] / mu."""
    return pareto_mean(law.pareto) / law.rate.mu


def service_second_moment(law: ServiceLawB) -> float:
    """E[B^2] = (2 / mu^2) * alpha x_m^2 / (alpha - 2); needs alpha > 2."""
    return 2.0 / law.rate.mu**2 * pareto_second_moment(law.pareto)


def service_ccdf(law: ServiceLawB, y):
    """Closed-form ``P(B > y)``; clamped to [0, 1], vectorized over ``y``."""
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise ValueError("y must be positive")
    alpha = law.alpha
    z = y / law.scale
    # alpha * gamma(alpha, z) / z**alpha, written in terms of z = mu y / x_m
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        g = lower_incomplete_gamma(alpha, z)
        val = alpha * np.exp(np.log(np.maximum(g, _TINY)) - alpha * np.log(z))
    val = np.where(z < 1e-12, 1.0, val)
    return _ret(np.clip(val, 0.0, 1.0))


def sample_service_time(law: ServiceLawB, chunk_size, u):
    """Service time ``chunk_size * (-ln u) / mu`` for a chunk of the given size."""
    chunk_size = np.asarray(chunk_size, dtype=float)
    if np.any(chunk_size < law.pareto.x_m):
        raise ValueError("chunk_size must be at least x_m")
    u = _as_open_unit(u)
    return _ret(chunk_size * -np.log(u) / law.rate.mu)


def slowly_varying_factor(law: ServiceLawB, y):
    """``L(y) = alpha (x_m/mu)**alpha gamma(alpha, mu y / x_m)``, so ``P(B>y) = L(y)/y**alpha``."""
    y = np.asarray(y, dtype=float)
    return _ret(law.alpha * law.scale**law.alpha * lower_incomplete_gamma(law.alpha, y / law.scale))


def waiting_tail_asymptote(p: WaitingTailParams, x):
    """Heavy-traffic tail approximation of ``P(W > x)`` at one server.

    ``(Lambda / (1 - rho)) * x**(1 - alpha) / (alpha - 1) * L(x)``.  This is an
    asymptote for large ``x``, not a CCDF: it can exceed 1 for small ``x`` and
    is returned unclamped.
    """
    if p.rho >= 1:
        raise UnstableQueueError(f"rho={p.rho!r} >= 1")
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("x must be positive")
    alpha = p.law.alpha
    val = (
        p.lambda_total / (1.0 - p.rho)
        * x ** (1.0 - alpha) / (alpha - 1.0)
        * slowly_varying_factor(p.law, x)
    )
    return _ret(val)


def pk_mean_waiting(lambda_total: float, law: ServiceLawB) -> float:
    """Pollaczek-Khinchine mean wait ``lambda E[B^2] / (2 (1 - rho))``."""
    if law.alpha <= 2:
        raise ValueError("mean waiting time is infinite for alpha <= 2")
    if lambda_total < 0:
        raise ValueError("lambda_total must be nonnegative")
    rho = lambda_total * service_mean(law)
    if rho >= 1:
        raise UnstableQueueError(f"rho={rho!r} >= 1")
    return lambda_total * service_second_moment(law) / (2.0 * (1.0 - rho))
