"""Additive measurement noise for robustness experiments.

Noise is added to the derived ``g, b`` states (after the ``I/V``
division) and to the load-bus voltage magnitudes; phasor angles are left
untouched.  The state-noise scale of each channel is a fraction of that
channel's largest absolute step over the whole window.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .estimator import StateSeries


@dataclass(frozen=True)
class NoiseSpec:
    state_noise_fraction: float = 0.10
    voltage_sigma: float = 1e-3
    seed: int | None = 0

    def __post_init__(self):
        if self.state_noise_fraction < 0 or self.voltage_sigma < 0:
            raise ValidationError("noise levels must be nonnegative")

    @classmethod
    def parse(cls, text):
        """``"frac:vsigma:seed"`` as used on the command line."""
        try:
            frac, vsig, seed = text.split(":")
            return cls(float(frac), float(vsig), int(seed))
        except ValueError as exc:
            raise ValidationError(f"bad noise spec {text!r}; expected frac:vsigma:seed") from exc


def state_noise_scale(x, fraction):
    """Per-channel noise std: ``fraction * max_i |x[i+1] - x[i]|``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 2:
        return np.zeros(x.shape[1])
    return fraction * np.max(np.abs(np.diff(x, axis=0)), axis=0)


def add_measurement_noise(series: StateSeries, v_series=None, spec: NoiseSpec = NoiseSpec()):
    """Return ``(noisy_series, noisy_v)``.

    ``v_series`` defaults to ``series.v``; if neither is available only the
    states are perturbed and ``noisy_v`` is None.  The noisy series carries
    ``v_bar`` recomputed from the noisy magnitudes.
    """
    v = series.v if v_series is None else np.asarray(v_series, dtype=float)
    rng = np.random.default_rng(spec.seed)
    scale = state_noise_scale(series.x, spec.state_noise_fraction)
    x = series.x + rng.standard_normal(series.x.shape) * scale
    if v is None:
        return replace(series, x=x), None
    v_noisy = v + rng.standard_normal(v.shape) * spec.voltage_sigma
    return StateSeries(x, series.dt, v=v_noisy, t0=series.t0), v_noisy
