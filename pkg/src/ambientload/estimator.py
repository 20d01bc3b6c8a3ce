"""
Batch estimation of dynamic-load time constants from PMU phasors.

Pipeline: phasors -> ``x = [g; b]`` series and mean voltages -> sample mean,
covariance ``C`` and lag correlation ``G`` -> ``A = logm(G C^-1)/lag`` ->
diagonal blocks -> ``tau = -V^2 / A_kk``.

``G`` is formed as the outer product
``(F[:, k:] - xbar) (F[:, :n-k] - xbar)^T / (n - 1)`` so that ``G[i, j]``
correlates state ``i`` at ``t + lag`` with state ``j`` at ``t``.  Both
normalizers are ``n - 1`` and the full-window mean is used for both
shifted factors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InsufficientSamples,
    SingularCovariance,
    ValidationError,
    ZeroVoltageSample,
)
from .ou import LoadBlockSpec, build_load_ou_model, matlog

log = logging.getLogger(__name__)

MIN_VOLTAGE = 1e-6
COND_WARN = 1e8


@dataclass(frozen=True)
class StateSeries:
    """Load states ``x`` of shape ``(n, 2m)``, columns ``[g_1..g_m, b_1..b_m]``.

    ``v`` optionally holds the load-bus voltage magnitudes ``(n, m)``; when
    given, ``v_bar`` defaults to their mean.
    """

    x: np.ndarray
    dt: float
    v_bar: np.ndarray | None = None
    v: np.ndarray | None = None
    t0: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 2 or x.shape[1] % 2:
            raise ValidationError(f"x must be (n, 2m), got {x.shape}")
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        m = x.shape[1] // 2
        v = None if self.v is None else np.asarray(self.v, dtype=float)
        if v is not None and v.shape != (x.shape[0], m):
            raise DimensionMismatch(f"v must be {(x.shape[0], m)}, got {v.shape}")
        v_bar = self.v_bar
        if v_bar is None:
            if v is None:
                raise ValidationError("either v_bar or v is required")
            v_bar = v.mean(axis=0)
        v_bar = np.array(np.broadcast_to(np.asarray(v_bar, dtype=float), (m,)))
        if np.any(v_bar <= 0):
            raise ValidationError("v_bar must be strictly positive")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "v_bar", v_bar)

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def m(self):
        return self.x.shape[1] // 2

    def window(self, start=0, stop=None) -> "StateSeries":
        """Sample-index slice; ``v_bar`` is recomputed when ``v`` is present."""
        sl = slice(start, stop)
        if self.v is None:
            return StateSeries(self.x[sl], self.dt, v_bar=self.v_bar,
                               t0=self.t0 + (start or 0) * self.dt)
        return StateSeries(self.x[sl], self.dt, v=self.v[sl],
                           t0=self.t0 + (start or 0) * self.dt)

    def first_seconds(self, seconds) -> "StateSeries":
        return self.window(0, int(round(seconds / self.dt)))


@dataclass(frozen=True)
class SampleStats:
    mean: np.ndarray
    cov: np.ndarray
    lag_corr: np.ndarray
    kappa: int
    lag: float
    n: int


@dataclass
class ErrorReport:
    rel_err_g: np.ndarray
    rel_err_b: np.ndarray
    frobenius: float
    frobenius_projected: float

    @property
    def rel_errors(self):
        return np.concatenate([self.rel_err_g, self.rel_err_b])

    def to_dict(self):
        return {"rel_err_g": self.rel_err_g.tolist(), "rel_err_b": self.rel_err_b.tolist(),
                "frobenius": self.frobenius, "frobenius_projected": self.frobenius_projected,
                "max_abs_rel_err": float(np.max(np.abs(self.rel_errors))),
                "median_abs_rel_err": float(np.median(np.abs(self.rel_errors)))}


@dataclass
class EstimationResult:
    a_hat: np.ndarray
    a_tg_hat: np.ndarray
    a_tb_hat: np.ndarray
    tau_g_hat: np.ndarray
    tau_b_hat: np.ndarray
    v_bar: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    nonphysical: list = field(default_factory=list)
    errors: ErrorReport | None = None

    @property
    def m(self):
        return self.tau_g_hat.size

    @property
    def tau_hat(self):
        return np.concatenate([self.tau_g_hat, self.tau_b_hat])

    def to_dict(self):
        d = {"tau_g_hat": self.tau_g_hat.tolist(), "tau_b_hat": self.tau_b_hat.tolist(),
             "a_hat": self.a_hat.tolist(), "v_bar": self.v_bar.tolist(),
             "nonphysical": list(self.nonphysical),
             "diagnostics": {k: (float(v) if isinstance(v, (np.floating, float)) else v)
                             for k, v in self.diagnostics.items()}}
        if self.errors is not None:
            d["errors_vs_truth"] = self.errors.to_dict()
        return d


def phasors_to_states(window) -> StateSeries:
    """``g = Re(I/V)``, ``b = Im(I/V)`` at every load bus; ``v_bar = mean |V|``."""
    V = window.load_voltage()
    mag = np.abs(V)
    if np.any(mag < MIN_VOLTAGE):
        i, k = np.argwhere(mag < MIN_VOLTAGE)[0]
        raise ZeroVoltageSample(
            f"|V| = {mag[i, k]:.3g} p.u. at sample {i}, load bus {window.load_buses[k]}")
    y = window.current / V
    return StateSeries(np.hstack([y.real, y.imag]), window.dt, v=mag, t0=window.t0)


def moments(x, kappa: int):
    """Mean, covariance and lag-``kappa`` correlation of the rows of ``x``."""
    kappa = int(kappa)
    if kappa < 1:
        raise ValidationError("kappa must be a positive integer")
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n <= kappa + 1:
        raise InsufficientSamples(f"need more than {kappa + 1} samples, got {n}")
    mean = x.mean(axis=0)
    dev = x - mean
    # constant channels: drop the rounding residue of the mean
    dev[:, np.ptp(x, axis=0) == 0] = 0.0
    cov = dev.T @ dev / (n - 1)
    cov = 0.5 * (cov + cov.T)
    lag_corr = dev[kappa:].T @ dev[:n - kappa] / (n - 1)
    return mean, cov, lag_corr


def sample_stats(series: StateSeries, kappa: int) -> SampleStats:
    mean, cov, lag_corr = moments(series.x, kappa)
    return SampleStats(mean, cov, lag_corr, int(kappa), int(kappa) * series.dt, series.n)


def estimate_drift(stats: SampleStats, lag=None):
    """``A_hat = logm(G C^-1) / lag`` with diagnostics.

    Returns
    -------
    a_hat : ndarray
    diagnostics : dict
        ``imag_residual_fraction``, ``imag_warning``, ``cond_c``,
        ``matlog_method``, ``lag``.
    """
    lag = stats.lag if lag is None else float(lag)
    return drift_from_moments(stats.lag_corr, lag, C=stats.cov)


def drift_from_moments(G, lag, C=None, C_inv=None):
    """Drift from a lag correlation and either ``C`` or a maintained ``C^-1``."""
    if C_inv is None:
        if not np.any(C):
            raise SingularCovariance("sample covariance is identically zero")
        cond = float(np.linalg.cond(C))
        if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
            raise SingularCovariance(f"sample covariance is singular (cond {cond:.3g})")
        # G C^-1 = (C^-T G^T)^T, LU with partial pivoting
        R = np.linalg.solve(C.T, G.T).T
    else:
        cond = float(np.linalg.cond(C_inv))
        R = G @ C_inv
    if cond > COND_WARN:
        log.warning("sample covariance is ill-conditioned (cond %.3g)", cond)
    L, info = matlog(R, full_output=True)
    if info["warning"]:
        log.warning("matrix log discarded %.1f%% imaginary mass", 100 * info["imag_fraction"])
    return L / lag, {"imag_residual_fraction": info["imag_fraction"],
                     "imag_warning": info["warning"], "cond_c": cond,
                     "matlog_method": info["method"], "lag": lag}


def extract_time_constants(a_hat, v_bar, diagnostics=None) -> EstimationResult:
    """Project onto the diagonal blocks and convert to time constants.

    Entries with ``A_kk >= 0`` are reported as computed and named in
    ``nonphysical``.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    v_bar = np.asarray(v_bar, dtype=float)
    m = v_bar.size
    if a_hat.shape != (2 * m, 2 * m):
        raise DimensionMismatch(f"a_hat must be {(2 * m, 2 * m)}, got {a_hat.shape}")
    d = np.diag(a_hat)
    a_g, a_b = d[:m], d[m:]
    v2 = v_bar ** 2
    with np.errstate(divide="ignore"):
        tau_g = -v2 / a_g
        tau_b = -v2 / a_b
    bad = [f"tau_g{k + 1}" for k in np.flatnonzero(a_g >= 0)]
    bad += [f"tau_b{k + 1}" for k in np.flatnonzero(a_b >= 0)]
    total = np.linalg.norm(a_hat)
    off = np.linalg.norm(a_hat - np.diag(d))
    diagnostics = dict(diagnostics or {})
    diagnostics["offdiag_fraction"] = float(off / total) if total > 0 else 0.0
    return EstimationResult(a_hat, np.diag(a_g), np.diag(a_b), tau_g, tau_b, v_bar,
                            diagnostics, bad)


def error_report(result: EstimationResult, truth: LoadBlockSpec) -> ErrorReport:
    """Relative errors ``(tau_hat - tau)/tau`` and normalized Frobenius drift errors."""
    if truth.m != result.m:
        raise DimensionMismatch(f"truth has {truth.m} loads, estimate has {result.m}")
    A = build_load_ou_model(truth).drift
    nA = np.linalg.norm(A)
    proj = np.diag(np.diag(result.a_hat))
    return ErrorReport(
        rel_err_g=(result.tau_g_hat - truth.tau_g) / truth.tau_g,
        rel_err_b=(result.tau_b_hat - truth.tau_b) / truth.tau_b,
        frobenius=float(np.linalg.norm(A - result.a_hat) / nA),
        frobenius_projected=float(np.linalg.norm(A - proj) / nA))


def estimate(series: StateSeries, kappa: int, truth: LoadBlockSpec | None = None) -> EstimationResult:
    """Full batch pipeline on a state series."""
    stats = sample_stats(series, kappa)
    a_hat, diag = estimate_drift(stats)
    res = extract_time_constants(a_hat, series.v_bar, diag)
    if truth is not None:
        res.errors = error_report(res, truth)
    return res


def window_sweep(series: StateSeries, kappa: int, lengths, truth=None):
    """Estimate on the leading ``L`` seconds for each ``L`` in ``lengths``.

    Returns a list of ``(L, EstimationResult)``.
    """
    out = []
    for L in lengths:
        n = int(round(L / series.dt))
        if n > series.n:
            raise InsufficientSamples(f"window {L} s exceeds the {series.n * series.dt:g} s of data")
        out.append((float(L), estimate(series.window(0, n), kappa, truth)))
    return out
