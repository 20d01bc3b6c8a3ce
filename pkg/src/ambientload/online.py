"""
Recursive (streaming) estimation with exponential forgetting.

After seeding from a batch window, each new state sample ``x_j`` updates::

    z_j    = x_j - xbar_{j-1}
    xbar_j = (1 - a) xbar_{j-1} + a x_j
    G_j    = (1 - a) [G_{j-1} + a (x_j - xbar_j)(x_{j-k} - xbar_{j-1})^T]
    Cinv_j = 1/(1 - a) [Cinv - a Cinv z z^T Cinv / (1 + a z^T Cinv z)]

The covariance inverse is the Sherman-Morrison form of
``C_j = (1 - a)(C_{j-1} + a z z^T)``.  The lagged partner ``x_{j-k}`` comes
from a ring buffer of the last ``k`` samples, so the recursive ``G``
targets the same lag ``k dt`` as the batch estimator.
"""
from __future__ import annotations

import copy
import logging
from collections import deque

import numpy as np

from .errors import (InsufficientSamples, NegativeRealAxisEigenvalue, NumericalBreakdown,
                     OutOfRange, SingularCovariance, SingularInput)
from .estimator import (
    EstimationResult,
    StateSeries,
    drift_from_moments,
    extract_time_constants,
    sample_stats,
)

log = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-12


class RecursiveEstimator:
    """Streaming statistics ``(xbar, G, C^-1)`` for one PMU stream.

    Single-writer: feed :meth:`update` in sample order from one owner.  Use
    :meth:`snapshot` to hand a consistent copy to another thread.
    """

    def __init__(self, mean, lag_corr, c_inv, lag_buffer, alpha, v_bar, kappa, dt,
                 sample_count):
        self.mean = np.array(mean, dtype=float)
        self.lag_corr = np.array(lag_corr, dtype=float)
        self.c_inv = np.array(c_inv, dtype=float)
        self.lag_buffer = deque((np.array(x, dtype=float) for x in lag_buffer), maxlen=kappa)
        self.v_bar = np.array(v_bar, dtype=float)
        self.kappa = int(kappa)
        self.dt = float(dt)
        self.sample_count = int(sample_count)
        self.last_asymmetry = 0.0
        self.set_alpha(alpha)

    @classmethod
    def from_window(cls, window: StateSeries, kappa: int, alpha=None) -> "RecursiveEstimator":
        """Seed from batch statistics; ``alpha`` defaults to ``1/n``."""
        stats = sample_stats(window, kappa)
        try:
            cond = np.linalg.cond(stats.cov)
            if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
                raise np.linalg.LinAlgError
            c_inv = np.linalg.inv(stats.cov)
        except np.linalg.LinAlgError as exc:
            raise SingularCovariance("initial sample covariance is singular") from exc
        c_inv = 0.5 * (c_inv + c_inv.T)
        alpha = 1.0 / window.n if alpha is None else alpha
        return cls(stats.mean, stats.lag_corr, c_inv, window.x[-kappa:], alpha,
                   window.v_bar, kappa, window.dt, window.n)

    @property
    def lag(self):
        return self.kappa * self.dt

    def set_alpha(self, alpha):
        alpha = float(alpha)
        if not 0.0 < alpha < 1.0:
            raise OutOfRange(f"alpha must lie in (0, 1), got {alpha}")
        self.alpha = alpha
        return self

    def update(self, x, v=None):
        """Consume one state sample (and optionally load voltage magnitudes)."""
        a = self.alpha
        x = np.asarray(x, dtype=float)
        z = x - self.mean
        mean_prev = self.mean
        mean_new = (1.0 - a) * mean_prev + a * x
        if len(self.lag_buffer) == self.kappa:
            lagged = self.lag_buffer[0]
            self.lag_corr = (1.0 - a) * (
                self.lag_corr + a * np.outer(x - mean_new, lagged - mean_prev))
        Cz = self.c_inv @ z
        denom = 1.0 + a * (z @ Cz)
        if denom <= BREAKDOWN_TOL:
            raise NumericalBreakdown(f"Sherman-Morrison denominator {denom:.3g}")
        c_inv = (self.c_inv - (a / denom) * np.outer(Cz, Cz)) / (1.0 - a)
        scale = np.max(np.abs(c_inv))
        self.last_asymmetry = float(np.max(np.abs(c_inv - c_inv.T)) / scale) if scale else 0.0
        self.c_inv = 0.5 * (c_inv + c_inv.T)
        self.mean = mean_new
        self.lag_buffer.append(x)
        if v is not None:
            self.v_bar = (1.0 - a) * self.v_bar + a * np.asarray(v, dtype=float)
        self.sample_count += 1
        return self

    def estimate(self, lag=None) -> EstimationResult:
        """Drift and time constants from the current statistics."""
        lag = self.lag if lag is None else lag
        a_hat, diag = drift_from_moments(self.lag_corr, lag, C_inv=self.c_inv)
        return extract_time_constants(a_hat, self.v_bar, diag)

    def snapshot(self) -> "RecursiveEstimator":
        return copy.deepcopy(self)



def stream_estimates(samples, n_init, kappa, dt, alpha=None, every=50, v_bar=None):
    """Seed on the first ``n_init`` samples, then stream the rest.

    ``samples`` yields ``(t, x, v)``; when ``v`` is None throughout, the
    fixed ``v_bar`` is used instead.  Yields ``(t, result)`` after every
    ``every`` streamed samples and once more for the last sample if it was
    not already reported.  Nothing is yielded for the seed window itself.
    A report whose matrix logarithm fails is logged and skipped.
    """
    it = iter(samples)
    head = [s for _, s in zip(range(n_init), it)]
    if len(head) < n_init:
        raise InsufficientSamples(f"stream ended after {len(head)} of {n_init} init samples")
    xs = np.array([s[1] for s in head], dtype=float)
    vs = None if head[0][2] is None else np.array([s[2] for s in head], dtype=float)
    seed = StateSeries(xs, dt, v_bar=None if vs is not None else v_bar, v=vs, t0=head[0][0])
    est = RecursiveEstimator.from_window(seed, kappa, alpha)
    every = max(1, int(every))
    count = 0
    t = None
    for t, x, v in it:
        est.update(x, v)
        count += 1
        if count % every == 0:
            res = _try_estimate(est, t)
            if res is not None:
                yield t, res
    if count and count % every:
        res = _try_estimate(est, t)
        if res is not None:
            yield t, res


def _try_estimate(est, t):
    try:
        return est.estimate()
    except (NegativeRealAxisEigenvalue, SingularInput) as exc:
        log.warning("t=%.3f s: no estimate (%s)", t, exc)
        return None


def track(series: StateSeries, init_seconds, kappa, alpha=None, report_period=1.0):
    """Seed on the leading ``init_seconds`` and stream the rest.

    Returns ``(times, results)``: the time stamp of the last consumed sample
    at each report and the corresponding estimates.  The first report is
    the seed estimate at the end of the init window.
    """
    n0 = int(round(init_seconds / series.dt))
    seed = series.window(0, n0)
    times = [seed.t0 + (n0 - 1) * series.dt]
    results = [RecursiveEstimator.from_window(seed, kappa, alpha).estimate()]
    t = series.t0 + series.dt * np.arange(series.n)
    v = [None] * series.n if series.v is None else series.v
    every = int(round(report_period / series.dt))
    for ti, res in stream_estimates(zip(t, series.x, v), n0, kappa, series.dt, alpha,
                                    every, v_bar=series.v_bar):
        times.append(ti)
        results.append(res)
    return np.array(times), results

def convergence_time(times, values, target, t_event, band=0.05):
    """Seconds after ``t_event`` until ``values`` enter and stay in the band.

    The band is ``|value - target| <= band * |target|``.  Returns None when
    the last report is still outside it.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    after = times >= t_event
    inside = np.abs(values - target) <= band * abs(target)
    idx = np.flatnonzero(after)
    if idx.size == 0 or not inside[idx[-1]]:
        return None
    outside = idx[~inside[idx]]
    first = idx[0] if outside.size == 0 else outside[-1] + 1
    return float(times[first] - t_event)
