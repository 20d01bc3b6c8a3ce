"""
Vector Ornstein-Uhlenbeck model and its matrix-function kernel.

The linearized dynamic-load equations take the form

    dx = A x dt + B dW

with ``x = [g; b]`` (conductances then susceptances of the ``m`` loads).
For a stable drift ``A`` the process is stationary with covariance ``C``
solving the continuous Lyapunov equation

    A C + C A^T + B B^T = 0

and its lag autocorrelation ``G(tau) = <x(t+tau) x(t)^T>`` obeys the
regression theorem

    G(tau) = expm(A tau) C,

so that ``A = logm(G(tau) C^-1) / tau``.

Sign note
---------
The regression theorem is sometimes written ``dG/dtau = -A G``.  Taken
literally that contradicts ``A = logm(G C^-1)/tau`` for a stable ``A``.
This module uses ``dG/dtau = +A G`` (equivalently ``G = expm(A tau) C``),
which is the form consistent with the logarithmic inversion used by the
estimators.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.signal

from .errors import (
    NegativeRealAxisEigenvalue,
    SingularInput,
    UnstableDrift,
    ValidationError,
)

EIG_TOL = 1e-12
IMAG_WARN_FRACTION = 0.10
# eigenvector conditioning above which the eigendecomposition log is not trusted
_EIGVEC_COND_MAX = 1e10


def _as_square(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class OuModel:
    """Drift ``A`` (1/s) and diffusion ``B`` of a vector OU process.

    Stability is not enforced at construction; operations that need it
    raise :class:`UnstableDrift`.
    """

    drift: np.ndarray
    diffusion: np.ndarray

    def __post_init__(self):
        A = _as_square(self.drift, "drift")
        B = np.asarray(self.diffusion, dtype=float)
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise ValidationError(
                f"diffusion must have {A.shape[0]} rows, got shape {B.shape}")
        if not np.any(B):
            raise ValidationError(
                "diffusion is identically zero; stationary covariance would be singular")
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "drift", A)
        object.__setattr__(self, "diffusion", B)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def is_stable(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.drift).real < 0))

    def check_stable(self):
        ev = np.linalg.eigvals(self.drift)
        if np.any(ev.real >= 0):
            raise UnstableDrift(
                f"drift has eigenvalue with real part {ev.real.max():.3g} >= 0")

    def to_dict(self):
        return {"dim": self.dim, "drift": self.drift.tolist(),
                "diffusion": self.diffusion.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["drift"], dtype=float),
                   np.array(d["diffusion"], dtype=float))


@dataclass(frozen=True)
class LoadBlockSpec:
    """Per-load parameters for ``m`` dynamic admittance loads.

    All fields are length-``m`` vectors; ``p_s``/``q_s`` are steady-state
    load powers and ``sigma_p``/``sigma_q`` the stochastic intensities.
    """

    tau_g: np.ndarray
    tau_b: np.ndarray
    v_bar: np.ndarray
    p_s: np.ndarray
    q_s: np.ndarray
    sigma_p: np.ndarray
    sigma_q: np.ndarray

    def __post_init__(self):
        m = np.size(self.tau_g)
        for name in ("tau_g", "tau_b", "v_bar", "p_s", "q_s", "sigma_p", "sigma_q"):
            v = np.array(np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (m,)))
            if not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} has non-finite entries")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if m == 0:
            raise ValidationError("at least one load is required")
        for name in ("tau_g", "tau_b"):
            if np.any(getattr(self, name) <= 0):
                raise ValidationError(f"{name} must be strictly positive")
        if np.any(self.v_bar <= 0):
            raise ValidationError("v_bar must be strictly positive")

    @property
    def m(self) -> int:
        return self.tau_g.size

    def replace(self, **changes) -> "LoadBlockSpec":
        fields = {k: np.array(getattr(self, k)) for k in
                  ("tau_g", "tau_b", "v_bar", "p_s", "q_s", "sigma_p", "sigma_q")}
        fields.update(changes)
        return LoadBlockSpec(**fields)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in
                ("tau_g", "tau_b", "v_bar", "p_s", "q_s", "sigma_p", "sigma_q")}

    @classmethod
    def from_dict(cls, d):
        m = len(d["tau_g"])
        ones = np.ones(m)
        return cls(
            tau_g=d["tau_g"], tau_b=d["tau_b"], v_bar=d.get("v_bar", ones),
            p_s=d.get("p_s", ones), q_s=d.get("q_s", ones),
            sigma_p=d.get("sigma_p", ones), sigma_q=d.get("sigma_q", ones),
        )


@dataclass(frozen=True)
class StationaryStats:
    covariance: np.ndarray
    lag: float
    lag_autocorr: np.ndarray


def build_load_ou_model(spec: LoadBlockSpec) -> OuModel:
    """Diagonal-approximation OU model of the dynamic loads.

    ``A = blkdiag(-V^2 T_g^-1, -V^2 T_b^-1)`` and
    ``B = blkdiag(T_g^-1 P^s Sigma^p, T_b^-1 Q^s Sigma^q)``.
    """
    v2 = spec.v_bar ** 2
    drift = np.diag(np.concatenate([-v2 / spec.tau_g, -v2 / spec.tau_b]))
    diffusion = np.diag(np.concatenate([
        spec.p_s * spec.sigma_p / spec.tau_g,
        spec.q_s * spec.sigma_q / spec.tau_b,
    ]))
    return OuModel(drift, diffusion)


def matexp(M) -> np.ndarray:
    """Matrix exponential ``e^M``."""
    return scipy.linalg.expm(_as_square(M))


def matlog(M, tol=EIG_TOL, full_output=False, warn_fraction=IMAG_WARN_FRACTION):
    """Real principal matrix logarithm via complex eigendecomposition.

    Parameters
    ----------
    M : (n, n) array_like
        Real matrix with no eigenvalue at zero or on the negative real axis.
    tol : float
        Eigenvalues with magnitude below ``tol`` are treated as zero.
    full_output : bool
        If True, also return an info dict with keys ``imag_fraction``
        (Frobenius mass of the discarded imaginary part relative to the
        complex logarithm), ``warning`` (``imag_fraction > warn_fraction``)
        and ``method``.

    Returns
    -------
    L : (n, n) ndarray
        Real matrix with ``expm(L) ~= M``.
    info : dict
        Only when ``full_output`` is True.

    Raises
    ------
    SingularInput
        Some ``|lambda| < tol``.
    NegativeRealAxisEigenvalue
        Some eigenvalue is real and negative.
    """
    M = _as_square(M)
    lam, V = np.linalg.eig(M)
    mag = np.abs(lam)
    if np.any(mag < tol):
        raise SingularInput(f"eigenvalue of magnitude {mag.min():.3g} below tol={tol:g}")
    on_axis = (lam.real < 0) & (np.abs(lam.imag) <= tol * np.maximum(mag, 1.0))
    if np.any(on_axis):
        raise NegativeRealAxisEigenvalue(
            f"eigenvalue {lam[on_axis][0].real:.4g} on the negative real axis; "
            "the principal logarithm does not exist (lag too long or too little data?)")

    method = "eig"
    if np.linalg.cond(V) > _EIGVEC_COND_MAX:
        # nearly defective: fall back to Schur-based inverse scaling and squaring
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            Lc = np.asarray(scipy.linalg.logm(M), dtype=complex)
        method = "schur"
    else:
        Lc = (V * np.log(lam)) @ np.linalg.inv(V)

    L = Lc.real.copy()
    total = np.linalg.norm(Lc)
    imag_fraction = float(np.linalg.norm(Lc.imag) / total) if total > 0 else 0.0
    if not full_output:
        return L
    return L, {"imag_fraction": imag_fraction,
               "warning": imag_fraction > warn_fraction,
               "method": method}


def solve_lyapunov(A, Q) -> np.ndarray:
    """Solve ``A X + X A^T + Q = 0`` by Kronecker vectorization.

    Cost is O(n^6); intended for the small analytic oracles only.
    """
    A = _as_square(A, "A")
    n = A.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, A) + np.kron(A, eye)
    X = np.linalg.solve(K, -np.asarray(Q, dtype=float).reshape(-1, order="F"))
    X = X.reshape((n, n), order="F")
    return 0.5 * (X + X.T)


def stationary_covariance(model: OuModel) -> np.ndarray:
    """Stationary covariance ``C`` of a stable OU model."""
    model.check_stable()
    B = model.diffusion
    return solve_lyapunov(model.drift, B @ B.T)


def analytic_lag_autocorr(model: OuModel, lag: float, covariance=None) -> np.ndarray:
    """``G(lag) = expm(A lag) C``; ``G(0)`` is exactly the covariance."""
    if lag < 0:
        raise ValidationError("lag must be nonnegative")
    C = stationary_covariance(model) if covariance is None else covariance
    if lag == 0:
        return C.copy()
    return matexp(model.drift * lag) @ C


def stationary_stats(model: OuModel, lag: float) -> StationaryStats:
    C = stationary_covariance(model)
    return StationaryStats(C, float(lag), analytic_lag_autocorr(model, lag, C))


def discretize(model: OuModel, dt: float):
    """Exact transition ``(Phi, Q)`` over a step of length ``dt``.

    ``x[k+1] = Phi x[k] + w``, ``w ~ N(0, Q)``, with
    ``Q = C - Phi C Phi^T`` for the stationary covariance ``C``.
    """
    Phi = matexp(model.drift * dt)
    C = stationary_covariance(model)
    Q = C - Phi @ C @ Phi.T
    return Phi, 0.5 * (Q + Q.T)


def _noise_factor(Q):
    # Q is PSD up to round-off; eigh tolerates semidefinite blocks
    w, U = np.linalg.eigh(Q)
    return U * np.sqrt(np.clip(w, 0.0, None))


def simulate_exact(model: OuModel, n: int, dt: float, rng=None, x0=None) -> np.ndarray:
    """Sample ``n`` points of the zero-mean process at spacing ``dt``.

    Uses the exact Gaussian transition, so there is no discretization bias.
    If ``x0`` is None the first sample is drawn from the stationary law.

    Returns
    -------
    x : (n, dim) ndarray
    """
    rng = np.random.default_rng(rng)
    Phi, Q = discretize(model, dt)
    L = _noise_factor(Q)
    d = model.dim
    if x0 is None:
        x0 = _noise_factor(stationary_covariance(model)) @ rng.standard_normal(d)
    noise = rng.standard_normal((n, d)) @ L.T
    out = np.empty((n, d))
    out[0] = x0
    if np.count_nonzero(Phi - np.diag(np.diag(Phi))) == 0:
        # diagonal drift: first-order recursion per channel
        _ar1_filter(np.diag(Phi), noise, out)
    else:
        x = np.asarray(x0, dtype=float)
        for k in range(1, n):
            x = Phi @ x + noise[k]
            out[k] = x
    return out


def _ar1_filter(phi, noise, out):
    # in place: out[k] = phi * out[k-1] + noise[k] for k >= 1
    for j, p in enumerate(phi):
        y, _ = scipy.signal.lfilter([1.0], [1.0, -p], noise[1:, j], zi=[p * out[0, j]])
        out[1:, j] = y
