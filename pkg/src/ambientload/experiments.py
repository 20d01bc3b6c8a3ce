"""Ready-made experiment setups on the idealized OU load model.

The "ten-load" configuration has ten loads with ``tau_g = 0.1, 0.6, ..., 4.6``
and ``tau_b = 0.5, 1.0, ..., 5.0`` seconds, unit intensities and unit
voltages, sampled every 0.02 s and estimated with a lag of 10 samples.
"""
from __future__ import annotations

import numpy as np

from .estimator import StateSeries
from .gridsim.dynamics import Event
from .ou import LoadBlockSpec, build_load_ou_model, simulate_exact

TEN_LOAD_TAU_G = np.round(0.1 + 0.5 * np.arange(10), 12)
TEN_LOAD_TAU_B = 0.5 * np.arange(1, 11)
DT = 0.02
KAPPA = 10


def ten_load_spec(v_bar=1.0, p_s=1.0, q_s=1.0, sigma=1.0) -> LoadBlockSpec:
    return LoadBlockSpec(tau_g=TEN_LOAD_TAU_G, tau_b=TEN_LOAD_TAU_B, v_bar=v_bar,
                         p_s=p_s, q_s=q_s, sigma_p=sigma, sigma_q=sigma)


def ou_state_series(spec: LoadBlockSpec, duration, dt=DT, seed=None, events=()):
    """Exact-discretization sample of the diagonal OU load model.

    States fluctuate around the equilibrium ``g = P^s/V^2``, ``b = Q^s/V^2``;
    voltages are held at ``spec.v_bar``.  ``events`` (see
    :class:`~ambientload.gridsim.Event`) switch load parameters mid-run.

    Returns
    -------
    series : StateSeries
        Carries the constant voltage magnitudes in ``v``.
    truth : list of (t_start, LoadBlockSpec)
        The parameter set in effect on each segment.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration / dt))
    m = spec.m
    events = sorted(events, key=lambda e: e.t)
    bounds = [0] + [min(n, int(np.ceil(e.t / dt - 1e-9))) for e in events] + [n]
    x = np.empty((n, 2 * m))
    segments = []
    current = spec
    last = None
    for k in range(len(bounds) - 1):
        if k > 0:
            i_load, name = events[k - 1].resolve(m)
            vals = np.array(getattr(current, name))
            vals[i_load] = events[k - 1].value
            current = current.replace(**{name: vals})
        lo, hi = bounds[k], bounds[k + 1]
        segments.append((lo * dt, current))
        if hi <= lo:
            continue
        model = build_load_ou_model(current)
        if last is None:
            x[lo:hi] = simulate_exact(model, hi - lo, dt, rng)
        else:
            x[lo:hi] = simulate_exact(model, hi - lo + 1, dt, rng, x0=last)[1:]
        last = x[hi - 1]
    v2 = spec.v_bar ** 2
    x += np.concatenate([spec.p_s / v2, spec.q_s / v2])
    v = np.tile(spec.v_bar, (n, 1))
    return StateSeries(x, dt, v=v), segments


def scenario_events(which):
    """The two step-change scenarios: 1 -> tau_g1 0.1 to 0.12, 2 -> tau_g4 1.6 to 0.8."""
    return {1: [Event(400.0, "tau_g1", 0.12)], 2: [Event(400.0, "tau_g4", 0.8)]}[which]
