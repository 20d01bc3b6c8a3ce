"""
Stochastic time-domain simulation of classical generators and dynamic loads.

State per generator: rotor angle ``delta`` (rad) and speed deviation
``omega`` (rad/s), with constant EMF magnitude behind ``x_d``::

    d(delta)/dt = omega
    M d(omega)/dt = P_m - P_e - D omega

State per load: admittance ``g + j b``::

    dg = -(g V^2 - P^s)/tau_g dt + P^s sigma_p / tau_g dW
    db = -(b V^2 - Q^s)/tau_b dt + Q^s sigma_q / tau_b dW

Generators enter the network as Norton sources ``E/(j x_d)`` and loads as
shunt admittances, so each step needs one linear solve for the bus
voltages.  Swing states use semi-implicit (symplectic) Euler.  Load states
use a linearly implicit trapezoidal step with the diagonal Jacobian
``V^2/tau``; for the linear part it reproduces the OU stationary variance
exactly.  Plain Euler-Maruyama is available as ``load_scheme="euler"``.
"""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass

import numpy as np

from ..errors import InstabilityDetected, ValidationError
from .case import LOAD_FIELDS, GridCase
from .pmu import PhasorWindow
from .powerflow import OperatingPoint, build_admittance, solve_power_flow

log = logging.getLogger(__name__)

_PARAM = re.compile(r"^(%s)(\d+)$" % "|".join(LOAD_FIELDS))


@dataclass(frozen=True)
class Event:
    """Instantaneous change of a load parameter, e.g. ``tau_g1`` -> 0.12 at 400 s.

    ``parameter`` is a load field name followed by the 1-based load index
    in case order.
    """

    t: float
    parameter: str
    value: float

    def resolve(self, n_loads):
        m = _PARAM.match(self.parameter)
        if not m:
            raise ValidationError(
                f"event parameter {self.parameter!r}: expected <field><k> with field in {LOAD_FIELDS}")
        k = int(m.group(2))
        if not 1 <= k <= n_loads:
            raise ValidationError(f"event parameter {self.parameter!r}: no load #{k}")
        return k - 1, m.group(1)

    def to_dict(self):
        return {"t": self.t, "parameter": self.parameter, "value": self.value}

    @classmethod
    def parse(cls, text):
        try:
            t, name, value = text.split(":")
            return cls(float(t), name.strip(), float(value))
        except ValueError as exc:
            raise ValidationError(f"bad event {text!r}; expected t:param:value") from exc


@dataclass(frozen=True)
class SimConfig:
    duration: float
    h: float = 0.02
    dt_pmu: float | None = None
    seed: int = 0
    sigma_scale: float = 1.0
    omega_max: float = 5.0
    v_limits: tuple = (0.5, 1.5)
    load_scheme: str = "trapezoidal"

    def __post_init__(self):
        if not self.h > 0:
            raise ValidationError("integration step h must be positive")
        if not self.duration > 0:
            raise ValidationError("duration must be positive")
        dt = self.h if self.dt_pmu is None else self.dt_pmu
        ratio = dt / self.h
        if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-9:
            raise ValidationError("dt_pmu must be an integer multiple of h")
        if self.sigma_scale < 0:
            raise ValidationError("sigma_scale must be nonnegative")
        if self.load_scheme not in ("trapezoidal", "euler"):
            raise ValidationError(f"unknown load_scheme {self.load_scheme!r}")
        object.__setattr__(self, "dt_pmu", float(dt))

    @property
    def decimation(self):
        return int(round(self.dt_pmu / self.h))

    @property
    def n_samples(self):
        return int(round(self.duration / self.dt_pmu))


@dataclass
class NetworkModel:
    """Linear network with generator Norton admittances folded in.

    Buses whose voltage is fixed (a slack without a machine) are eliminated
    from the solve.
    """

    case: GridCase
    Y_free: np.ndarray
    Y_fixed: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    v_fixed: np.ndarray
    gen_idx: np.ndarray
    gen_free_pos: np.ndarray
    gen_y: np.ndarray
    load_idx: np.ndarray
    load_free_pos: np.ndarray

    @classmethod
    def build(cls, case: GridCase, op: OperatingPoint):
        Y = build_admittance(case)
        gen_idx = np.array([case.bus_index(g.bus) for g in case.generators], dtype=int)
        gen_y = np.array([1.0 / (1j * g.x_d) for g in case.generators], dtype=complex)
        Yg = Y.copy()
        Yg[gen_idx, gen_idx] += gen_y
        machine_buses = set(gen_idx.tolist())
        fixed = np.array([i for i, b in enumerate(case.buses)
                          if b.type == "slack" and i not in machine_buses], dtype=int)
        free = np.array([i for i in range(case.n_bus) if i not in set(fixed.tolist())], dtype=int)
        pos = {b: k for k, b in enumerate(free.tolist())}
        load_idx = np.array([case.bus_index(b) for b in case.load_buses], dtype=int)
        return cls(
            case=case, Y_free=Yg[np.ix_(free, free)], Y_fixed=Yg[np.ix_(free, fixed)],
            free=free, fixed=fixed, v_fixed=op.voltage[fixed].copy(),
            gen_idx=gen_idx, gen_free_pos=np.array([pos[i] for i in gen_idx], dtype=int),
            gen_y=gen_y, load_idx=load_idx,
            load_free_pos=np.array([pos[i] for i in load_idx], dtype=int))

    def system(self, emf, y_load):
        """Matrix and right-hand side of the free-bus equations."""
        A = self.Y_free.copy()
        A[self.load_free_pos, self.load_free_pos] += y_load
        rhs = -(self.Y_fixed @ self.v_fixed) if self.fixed.size else np.zeros(self.free.size, complex)
        np.add.at(rhs, self.gen_free_pos, emf * self.gen_y)
        return A, rhs

    def solve(self, emf, y_load):
        """Bus voltages (all buses, case order) for given EMFs and load admittances."""
        A, rhs = self.system(emf, y_load)
        V = np.empty(self.case.n_bus, dtype=complex)
        V[self.free] = np.linalg.solve(A, rhs)
        V[self.fixed] = self.v_fixed
        return V

    def residual(self, V, emf, y_load):
        A, rhs = self.system(emf, y_load)
        return float(np.max(np.abs(A @ V[self.free] - rhs)))

    def generator_power(self, V, emf):
        i_gen = (emf - V[self.gen_idx]) * self.gen_y
        return (emf * np.conj(i_gen)).real


@dataclass
class _Params:
    tau_g: np.ndarray
    tau_b: np.ndarray
    p_s: np.ndarray
    q_s: np.ndarray
    sigma_p: np.ndarray
    sigma_q: np.ndarray

    @classmethod
    def from_case(cls, case, scale):
        cols = {f: np.array([getattr(ld, f) for ld in case.loads], dtype=float) for f in LOAD_FIELDS}
        cols["sigma_p"] *= scale
        cols["sigma_q"] *= scale
        return cls(**cols)


def initial_state(case: GridCase, op: OperatingPoint | None = None):
    """Equilibrium ``(net, delta, emf_mag, p_m, g, b)`` implied by the power flow.

    Mechanical powers are taken from the same linear network solve the
    simulator uses, so the initial point is a fixed point of the discrete
    dynamics to round-off.
    """
    op = solve_power_flow(case) if op is None else op
    net = NetworkModel.build(case, op)
    delta = np.angle(op.emf)
    emf_mag = np.abs(op.emf)
    g, b = op.g_eq.copy(), op.b_eq.copy()
    V = net.solve(op.emf, g + 1j * b)
    p_m = net.generator_power(V, op.emf)
    return net, delta, emf_mag, p_m, g, b


def simulate(case: GridCase, cfg: SimConfig, events=(), op: OperatingPoint | None = None,
             record_states=True) -> PhasorWindow:
    """Integrate the stochastic DAE and emit PMU samples every ``cfg.dt_pmu``.

    Samples are taken at ``t = 0, dt_pmu, ...`` (``cfg.n_samples`` of them),
    the first being the equilibrium.  Output is a deterministic function of
    ``(case, cfg, events)``.

    Raises
    ------
    InstabilityDetected
        A bus voltage leaves ``cfg.v_limits`` or a speed exceeds
        ``cfg.omega_max``.
    """
    if len(case.generators) == 0 and not any(b.type == "slack" for b in case.buses):
        raise ValidationError("case needs a voltage source")
    events = sorted(events, key=lambda e: e.t)
    resolved = [(e, *e.resolve(len(case.loads))) for e in events]
    for e in events:
        if not 0 <= e.t <= cfg.duration:
            raise ValidationError(f"event at t={e.t} outside [0, {cfg.duration}]")
    max_tau = max(max(ld.tau_g, ld.tau_b) for ld in case.loads) if case.loads else 0.0
    if cfg.duration < 10 * max_tau:
        log.warning("duration %.3g s is shorter than 10 x the largest time constant (%.3g s)",
                    cfg.duration, max_tau)

    net, delta, emf_mag, p_m, g, b = initial_state(case, op)
    v_eq = np.abs(net.solve(emf_mag * np.exp(1j * delta), g + 1j * b))[net.load_idx]
    truth = case.scaled_noise(cfg.sigma_scale).load_block_spec(v_bar=v_eq) if case.loads else None
    par = _Params.from_case(case, cfg.sigma_scale)
    M = np.array([gen.inertia for gen in case.generators], dtype=float)
    D = np.array([gen.damping for gen in case.generators], dtype=float)
    omega = np.zeros_like(delta)
    m = g.size
    h = cfg.h
    sqrt_h = math.sqrt(h)
    rng = np.random.default_rng(cfg.seed)
    n_out = cfg.n_samples
    dec = cfg.decimation
    n_steps = (n_out - 1) * dec + 1
    vmin, vmax = cfg.v_limits
    trapezoid = cfg.load_scheme == "trapezoidal"

    V_out = np.empty((n_out, case.n_bus), dtype=complex)
    I_out = np.empty((n_out, m), dtype=complex)
    X_out = np.empty((n_out, 2 * m)) if record_states else None
    max_residual = 0.0
    next_event = 0
    load_idx = net.load_idx

    for k in range(n_steps):
        t = k * h
        while next_event < len(resolved) and resolved[next_event][0].t <= t + 1e-9 * h:
            e, i_load, name = resolved[next_event]
            getattr(par, name)[i_load] = e.value
            log.info("t=%.3f s: %s -> %g", t, e.parameter, e.value)
            next_event += 1
        emf = emf_mag * np.exp(1j * delta)
        y_load = g + 1j * b
        V = net.solve(emf, y_load)
        vabs = np.abs(V)
        if not (np.all(np.isfinite(vabs)) and vabs.min() >= vmin and vabs.max() <= vmax):
            raise InstabilityDetected(
                f"t={t:.2f} s: bus voltage outside [{vmin}, {vmax}] p.u. "
                f"(min {np.nanmin(vabs):.3f}, max {np.nanmax(vabs):.3f})")
        if omega.size and np.max(np.abs(omega)) > cfg.omega_max:
            raise InstabilityDetected(f"t={t:.2f} s: |omega| exceeds {cfg.omega_max} rad/s")
        if k % dec == 0:
            j = k // dec
            V_out[j] = V
            I_out[j] = y_load * V[load_idx]
            if record_states:
                X_out[j, :m] = g
                X_out[j, m:] = b
            max_residual = max(max_residual, net.residual(V, emf, y_load))
        if k == n_steps - 1:
            break

        v2 = vabs[load_idx] ** 2
        dW = rng.standard_normal(2 * m) * sqrt_h
        inc_g = -(g * v2 - par.p_s) / par.tau_g * h + par.p_s * par.sigma_p / par.tau_g * dW[:m]
        inc_b = -(b * v2 - par.q_s) / par.tau_b * h + par.q_s * par.sigma_q / par.tau_b * dW[m:]
        if trapezoid:
            inc_g /= 1.0 + 0.5 * h * v2 / par.tau_g
            inc_b /= 1.0 + 0.5 * h * v2 / par.tau_b
        g = g + inc_g
        b = b + inc_b
        if omega.size:
            p_e = net.generator_power(V, emf)
            omega = omega + h / M * (p_m - p_e - D * omega)
            delta = delta + h * omega

    return PhasorWindow(
        dt=cfg.dt_pmu, voltage=V_out, current=I_out,
        bus_ids=tuple(bus.id for bus in case.buses), load_buses=tuple(case.load_buses),
        truth=truth, states=X_out,
        meta={"seed": cfg.seed, "events": [e.to_dict() for e in events],
              "max_network_residual": max_residual, "p_m": p_m.tolist()})
