"""Empirical tail analytics: CCDF curves, log-log regression and Hill estimates.

The tail index ``d`` of a positive random variable is the exponent in
``P(T > x) ~ x**(-d)``.  Two estimators are provided:

* ``loglog_slope`` fits a least-squares line to ``log p`` against ``log x``
  on an empirical CCDF restricted to a window.
* ``hill_estimator`` uses the mean log-ratio of the top ``m`` order
  statistics to the ``(m+1)``-th largest.

Both report a 95% percentile bootstrap interval.  Resampling is done on
sufficient statistics (multinomial bin counts for the CCDF, the top of the
order statistics for Hill) so that bootstrapping 10**6 samples stays cheap;
the resample distribution is exactly that of a full with-replacement draw.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "InsufficientDataError",
    "CcdfCurve",
    "TailEstimate",
    "TailReport",
    "empirical_ccdf",
    "default_window",
    "loglog_slope",
    "hill_estimator",
    "hill_sweep",
    "verify_tail_index",
    "LOGLOG",
    "HILL",
]

LOGLOG = "loglog_regression"
HILL = "hill"

DEFAULT_ORDER_FRACTION = 0.05
HILL_SWEEP = (0.01, 0.02, 0.05, 0.10)
N_BOOT = 200
HARD_FLOOR = 10**3
SOFT_FLOOR = 10**5
VERIFY_MIN_ORDER = 100
WINDOW_DECADES = 1.5
WINDOW_SKIP_TOP = 10
WINDOW_POINTS = 25


class InsufficientDataError(ValueError):
    """Too few samples (or curve points) for the requested estimate."""


@dataclass(frozen=True)
class CcdfCurve:
    """Empirical ``P(T > x)`` on a strictly increasing grid, zero-survivor points dropped."""

    x: np.ndarray
    p: np.ndarray
    sample_count: int
    # sorted samples the curve was built from; used for bootstrap
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def points(self):
        return list(zip(self.x.tolist(), self.p.tolist()))

    def __len__(self):
        return len(self.x)


@dataclass(frozen=True)
class TailEstimate:
    index_hat: float
    method: str
    order_fraction: Optional[float]
    ci_low: float
    ci_high: float
    sample_count: int

    def as_dict(self):
        return {
            "method": self.method,
            "index_hat": self.index_hat,
            "ci": [self.ci_low, self.ci_high],
            "order_fraction": self.order_fraction,
            "sample_count": self.sample_count,
        }


@dataclass
class TailReport:
    passed: bool
    predicted: float
    tolerance: float
    hill: TailEstimate
    loglog: TailEstimate
    window: tuple
    curve: CcdfCurve
    sample_count: int
    reasons: list

    def as_dict(self):
        return {
            "verdict": "pass" if self.passed else "fail",
            "predicted": self.predicted,
            "tolerance": self.tolerance,
            "sample_count": self.sample_count,
            "window": list(self.window),
            "hill": self.hill.as_dict(),
            "loglog": self.loglog.as_dict(),
            "reasons": list(self.reasons),
        }


def _sorted_samples(samples) -> np.ndarray:
    arr = np.asarray(samples, dtype=float).ravel()
    if arr.size == 0:
        raise InsufficientDataError("empty sample set")
    if np.any(np.isnan(arr)):
        raise ValueError("samples contain NaN")
    return np.sort(arr)


def empirical_ccdf(samples, grid: Union[int, Sequence[float]] = 64) -> CcdfCurve:
    """Fraction of samples strictly above each grid point.

    ``grid`` is either a point count (log-spaced between the smallest positive
    sample and the largest sample) or an explicit list of thresholds.
    """
    xs = _sorted_samples(samples)
    n = xs.size
    if n < 2:
        raise InsufficientDataError("need at least 2 samples")
    if xs[0] < 0:
        raise ValueError("samples must be nonnegative")
    if isinstance(grid, (int, np.integer)):
        pos = xs[xs > 0]
        if pos.size == 0:
            return CcdfCurve(np.empty(0), np.empty(0), n, xs)
        lo, hi = pos[0], pos[-1]
        g = np.geomspace(lo, hi, int(grid)) if hi > lo else np.array([lo])
    else:
        g = np.asarray(grid, dtype=float)
    g = np.unique(g)
    survivors = n - np.searchsorted(xs, g, side="right")
    keep = survivors > 0
    return CcdfCurve(g[keep], survivors[keep] / n, n, xs)


def default_window(samples, decades: float = WINDOW_DECADES, skip_top: int = WINDOW_SKIP_TOP):
    """Regression window: ``decades`` below the ``skip_top``-th largest sample.

    The lower edge is clipped to the smallest positive sample so the window
    never reaches into the flat region below the observed range.
    """
    xs = _sorted_samples(samples)
    if xs.size <= skip_top + 1:
        raise InsufficientDataError("too few samples for a tail window")
    hi = xs[-(skip_top + 1)]
    if not hi > 0:
        raise InsufficientDataError("upper window edge is not positive")
    lo = max(hi / 10.0**decades, xs[xs > 0][0])
    return (lo, hi)


def _ols_slope(lx, lp):
    lx_c = lx - lx.mean()
    return float(np.dot(lx_c, lp - lp.mean()) / np.dot(lx_c, lx_c))


def _percentile_ci(boot, hat):
    boot = np.asarray(boot)
    boot = boot[np.isfinite(boot)]
    if boot.size == 0:
        return hat, hat
    lo, hi = np.percentile(boot, [2.5, 97.5])
    # a percentile interval need not cover a biased point estimate
    return float(min(lo, hat)), float(max(hi, hat))


def loglog_slope(curve: CcdfCurve, window, n_boot: int = N_BOOT, seed: int = 0) -> TailEstimate:
    """Tail index as minus the least-squares slope of the log-log CCDF inside ``window``."""
    x_lo, x_hi = window
    sel = (curve.x >= x_lo) & (curve.x <= x_hi)
    if sel.sum() < 5:
        raise InsufficientDataError(f"window {window} holds {int(sel.sum())} curve points, need 5")
    gx = curve.x[sel]
    lx = np.log(gx)
    hat = -_ols_slope(lx, np.log(curve.p[sel]))

    ci = (hat, hat)
    if n_boot and curve.samples is not None:
        xs = curve.samples
        n = curve.sample_count
        # bin counts: at/below gx[0], (gx[i], gx[i+1]], above gx[-1]
        cuts = np.searchsorted(xs, gx, side="right")
        counts = np.diff(np.concatenate(([0], cuts, [n])))
        rng = np.random.default_rng(seed)
        boot = np.empty(n_boot)
        for b in range(n_boot):
            c = rng.multinomial(n, counts / n)
            surv = np.cumsum(c[::-1])[::-1][1:]
            ok = surv > 0
            if ok.sum() < 2:
                boot[b] = np.nan
                continue
            boot[b] = -_ols_slope(lx[ok], np.log(surv[ok] / n))
        ci = _percentile_ci(boot, hat)
    return TailEstimate(float(hat), LOGLOG, None, ci[0], ci[1], curve.sample_count)


def _hill_from_top(top_desc, m):
    # top_desc holds at least m+1 values in descending order
    return 1.0 / np.mean(np.log(top_desc[:m] / top_desc[m]))


def hill_estimator(
    samples,
    order_fraction: float = DEFAULT_ORDER_FRACTION,
    n_boot: int = N_BOOT,
    seed: int = 0,
    min_order: int = 10,
) -> TailEstimate:
    """Hill tail index from the top ``m = ceil(order_fraction * N)`` order statistics."""
    if not 0 < order_fraction < 1:
        raise ValueError("order_fraction must lie in (0, 1)")
    xs = _sorted_samples(samples)
    n = xs.size
    m = math.ceil(order_fraction * n)
    if m < min_order:
        raise InsufficientDataError(f"m={m} order statistics, need at least {min_order}")
    if m + 1 > n:
        raise InsufficientDataError("order fraction leaves no threshold statistic")
    top = xs[::-1][: m + 1]
    if top[-1] <= 0:
        raise ValueError("nonpositive order statistic among the top m+1")
    hat = float(_hill_from_top(top, m))

    ci = (hat, hat)
    if n_boot:
        rng = np.random.default_rng(seed)
        # With-replacement resample restricted to the top T originals: the
        # number of draws landing there is Binomial(n, T/n), each uniform on them.
        t = min(n, 2 * m + 10 * int(math.sqrt(m)) + 20)
        pool = xs[::-1][:t]
        boot = np.empty(n_boot)
        for b in range(n_boot):
            hits = rng.binomial(n, t / n) if t < n else n
            if hits >= m + 1:
                draw = pool[rng.integers(0, t, hits)]
            else:
                draw = xs[rng.integers(0, n, n)]
            part = -np.partition(-draw, m)[: m + 1]
            part.sort()
            part = part[::-1]
            boot[b] = _hill_from_top(part, m) if part[m] > 0 else np.nan
        ci = _percentile_ci(boot, hat)
    return TailEstimate(hat, HILL, order_fraction, ci[0], ci[1], int(n))


def hill_sweep(samples, fractions=HILL_SWEEP, n_boot: int = N_BOOT, seed: int = 0, min_order: int = 10):
    """Hill estimates across several order fractions, skipping ones with too few statistics."""
    out = []
    for f in fractions:
        try:
            out.append(hill_estimator(samples, f, n_boot=n_boot, seed=seed, min_order=min_order))
        except InsufficientDataError as exc:
            log.info("hill sweep: skipping fraction %s (%s)", f, exc)
    return out


def verify_tail_index(
    samples,
    predicted: float,
    tolerance: float,
    order_fraction: float = DEFAULT_ORDER_FRACTION,
    window=None,
    n_boot: int = N_BOOT,
    seed: int = 0,
) -> TailReport:
    """Check a predicted tail index against both estimators.

    Passes iff the Hill estimate is within ``tolerance`` of ``predicted`` and
    the two estimators agree within ``2 * tolerance``.  Exact zeros (an empty
    queue on arrival) are dropped from the Hill input but kept in the CCDF.
    """
    xs = _sorted_samples(samples)
    n = xs.size
    if n < HARD_FLOOR:
        raise InsufficientDataError(f"{n} samples is below the hard floor of {HARD_FLOOR}")
    if n < SOFT_FLOOR:
        log.warning("only %d samples; tail estimates below %d are unreliable", n, SOFT_FLOOR)
    positive = xs[xs > 0]
    hill = hill_estimator(positive, order_fraction, n_boot=n_boot, seed=seed, min_order=VERIFY_MIN_ORDER)
    if window is None:
        window = default_window(positive)
    reg_curve = empirical_ccdf(xs, np.geomspace(window[0], window[1], WINDOW_POINTS))
    slope = loglog_slope(reg_curve, window, n_boot=n_boot, seed=seed + 1)

    reasons = []
    if abs(hill.index_hat - predicted) > tolerance:
        reasons.append(f"hill {hill.index_hat:.4g} outside {predicted} +/- {tolerance}")
    if abs(hill.index_hat - slope.index_hat) > 2 * tolerance:
        reasons.append(f"estimators disagree: hill {hill.index_hat:.4g} vs loglog {slope.index_hat:.4g}")
    return TailReport(
        passed=not reasons,
        predicted=predicted,
        tolerance=tolerance,
        hill=hill,
        loglog=slope,
        window=(float(window[0]), float(window[1])),
        curve=empirical_ccdf(xs, 64),
        sample_count=int(n),
        reasons=reasons,
    )
