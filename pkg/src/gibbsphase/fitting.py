"""Exponential decay fits shared by the decay scans."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np


@dataclass(frozen=True)
class DecayFit:
    """value(x) ~ prefactor * exp(-rate * x).

    `slope` and `intercept` come from least squares on log(value) over the
    points above the floor; `prefactor` is then raised so that the envelope
    prefactor*exp(-rate*x) dominates every point of the curve.
    """

    rate: float
    prefactor: float
    slope: float
    intercept: float
    residual: float
    points_used: int

    def envelope(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.prefactor == 0.0:
            return np.zeros_like(x)
        return self.prefactor * np.exp(-self.rate * x)

    def as_dict(self) -> dict:
        return asdict(self)


def fit_decay(xs, values, floor: float = 1e-12) -> DecayFit:
    xs = np.asarray(xs, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    above = v > floor
    if not above.any():
        return DecayFit(math.inf, 0.0, -math.inf, -math.inf, 0.0, 0)
    if above.sum() == 1:
        i = int(np.nonzero(above)[0][0])
        later = xs[xs > xs[i]]
        if later.size:
            slope = (math.log(floor) - math.log(v[i])) / (later.min() - xs[i])
        else:
            slope = 0.0
        intercept = math.log(v[i]) - slope * xs[i]
        rate = -slope
        return DecayFit(rate, float(v[i] * math.exp(rate * xs[i])), slope, intercept, 0.0, 1)
    slope, intercept = np.polyfit(xs[above], np.log(v[above]), 1)
    resid = float(np.sqrt(np.mean((np.log(v[above]) - (slope * xs[above] + intercept)) ** 2)))
    rate = -float(slope)
    pref = float(np.max(v[above] * np.exp(rate * xs[above])))
    return DecayFit(rate, pref, float(slope), float(intercept), resid, int(above.sum()))
