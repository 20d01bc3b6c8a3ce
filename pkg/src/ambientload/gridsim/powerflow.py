"""Bus admittance matrix and Newton-Raphson power flow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import LowVoltage, NonConvergence
from .case import GridCase

MISMATCH_TOL = 1e-8


def build_admittance(case: GridCase) -> np.ndarray:
    """Complex bus admittance matrix ``Y = G + jB`` in case bus order.

    Each branch contributes its series admittance ``y = 1/(r + jx)`` and
    half of its total charging ``jb/2`` at either end.
    """
    n = case.n_bus
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        i, j = case.bus_index(br.from_bus), case.bus_index(br.to_bus)
        y = 1.0 / complex(br.r, br.x)
        shunt = 0.5j * br.b
        Y[i, i] += y + shunt
        Y[j, j] += y + shunt
        Y[i, j] -= y
        Y[j, i] -= y
    return Y


@dataclass(frozen=True)
class OperatingPoint:
    """Converged power-flow solution and the dynamic equilibrium it implies.

    ``emf`` is per generator (case order); ``g_eq``/``b_eq`` per load.
    """

    voltage: np.ndarray
    s_injection: np.ndarray
    emf: np.ndarray
    g_eq: np.ndarray
    b_eq: np.ndarray
    iterations: int
    mismatch: float

    def load_voltages(self, case: GridCase):
        idx = [case.bus_index(b) for b in case.load_buses]
        return np.abs(self.voltage[idx])


def _scheduled(case: GridCase):
    n = case.n_bus
    P = np.zeros(n)
    Q = np.zeros(n)
    for g in case.generators:
        P[case.bus_index(g.bus)] += g.p_m
    for ld in case.loads:
        k = case.bus_index(ld.bus)
        # I = (g + jb) V  =>  consumed S = (g - jb)|V|^2 = p_s - j q_s
        P[k] -= ld.p_s
        Q[k] += ld.q_s
    return P, Q


def _mismatch(Y, V, P, Q, pv, pq):
    S = V * np.conj(Y @ V)
    dP = P - S.real
    dQ = Q - S.imag
    return np.concatenate([dP[pv], dP[pq], dQ[pq]])


def solve_power_flow(case: GridCase, tol=1e-12, max_iter=50, accept_tol=MISMATCH_TOL,
                     min_voltage=0.5) -> OperatingPoint:
    """Polar Newton-Raphson from a flat start.

    Iterates until the mismatch infinity-norm drops below ``tol`` (tight, so
    the dynamic equilibrium is accurate) and accepts the solution when it is
    at most ``accept_tol``.

    Raises
    ------
    NonConvergence
        Mismatch above ``accept_tol`` after ``max_iter`` iterations, or the
        iteration diverged.
    LowVoltage
        Some ``|V| < min_voltage`` at the solution.
    """
    Y = build_admittance(case)
    n = case.n_bus
    P, Q = _scheduled(case)
    types = [b.type for b in case.buses]
    pv = np.array([i for i, t in enumerate(types) if t == "generator"], dtype=int)
    pq = np.array([i for i, t in enumerate(types) if t in ("load", "passive")], dtype=int)
    ang_idx = np.concatenate([pv, pq])

    vm = np.array([b.voltage if b.type in ("slack", "generator") else 1.0 for b in case.buses])
    va = np.zeros(n)
    V = vm * np.exp(1j * va)
    F = _mismatch(Y, V, P, Q, pv, pq)
    err = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while err > tol and it < max_iter:
        J = _jacobian(Y, V, ang_idx, pq)
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            break
        va[ang_idx] += dx[:ang_idx.size]
        vm[pq] += dx[ang_idx.size:]
        V = vm * np.exp(1j * va)
        F = _mismatch(Y, V, P, Q, pv, pq)
        new_err = np.max(np.abs(F))
        it += 1
        if not np.isfinite(new_err) or np.any(vm <= 0):
            err = np.inf
            break
        if err <= accept_tol and new_err >= err:
            # round-off floor reached
            err = min(err, new_err)
            break
        err = new_err
    if not err <= accept_tol:
        raise NonConvergence(
            f"power flow did not converge after {it} iterations (mismatch {err:.3g})",
            mismatch=err, iterations=it)
    if np.min(vm) < min_voltage:
        k = int(np.argmin(vm))
        raise LowVoltage(f"bus {case.buses[k].id} voltage {vm[k]:.4f} p.u. below {min_voltage}")

    S = V * np.conj(Y @ V)
    emf = []
    for g in case.generators:
        k = case.bus_index(g.bus)
        i_gen = np.conj(S[k] / V[k])
        emf.append(V[k] + 1j * g.x_d * i_gen)
    idx = [case.bus_index(b) for b in case.load_buses]
    v2 = np.abs(V[idx]) ** 2
    p_s = np.array([ld.p_s for ld in case.loads])
    q_s = np.array([ld.q_s for ld in case.loads])
    return OperatingPoint(
        voltage=V, s_injection=S, emf=np.array(emf, dtype=complex),
        g_eq=p_s / v2, b_eq=q_s / v2, iterations=it, mismatch=float(err))


def _jacobian(Y, V, ang_idx, pq):
    # dS/dVa and dS/dVm in complex form
    Ibus = Y @ V
    diagV = np.diag(V)
    diagI = np.diag(Ibus)
    Vn = V / np.abs(V)
    dS_dVa = 1j * diagV @ np.conj(diagI - Y @ diagV)
    dS_dVm = diagV @ np.conj(Y @ np.diag(Vn)) + np.conj(diagI) @ np.diag(Vn)
    J11 = dS_dVa.real[np.ix_(ang_idx, ang_idx)]
    J12 = dS_dVm.real[np.ix_(ang_idx, pq)]
    J21 = dS_dVa.imag[np.ix_(pq, ang_idx)]
    J22 = dS_dVm.imag[np.ix_(pq, pq)]
    return np.block([[J11, J12], [J21, J22]])
