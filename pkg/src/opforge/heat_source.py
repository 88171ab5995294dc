"""Gaussian point, line and hybrid laser heat sources.

Units: mm, ms, W. Sources return volumetric power density in W/mm^3.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

PARAM_NAMES = ("P", "v", "r", "eta", "alpha")

# (low, high) per input, and the nominal process point.
BOUNDS = {
    "P": (250.0, 400.0),
    "v": (0.004, 0.020),
    "r": (0.25, 0.40),
    "eta": (0.3, 0.4),
    "alpha": (1.0, 2.0),
}
NOMINAL = {"P": 300.0, "v": 0.01058, "r": 0.3, "eta": 0.36, "alpha": 1.6}

GAUSS_ORDER = 16
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_ORDER)


@dataclass(frozen=True)
class ProcessParams:
    P: float
    v: float
    r: float
    eta: float
    alpha: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"process parameter {name} must be positive and finite, got {value}")

    @classmethod
    def nominal(cls):
        return cls(**NOMINAL)

    @classmethod
    def from_array(cls, values):
        return cls(*(float(x) for x in values))

    def as_array(self):
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    def as_dict(self):
        return asdict(self)

    def within_bounds(self, bounds=None):
        bounds = bounds or BOUNDS
        return all(bounds[n][0] <= getattr(self, n) <= bounds[n][1] for n in PARAM_NAMES)


@dataclass(frozen=True)
class ScanPath:
    """Straight scan ``p(t) = origin + direction * speed * t``."""

    origin: tuple = (0.0, 0.0, 0.0)
    direction: tuple = (0.0, 1.0, 0.0)
    speed: float = NOMINAL["v"]

    def __post_init__(self):
        norm = math.sqrt(sum(c * c for c in self.direction))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"scan direction must be a unit vector (|d| = {norm})")
        if self.speed < 0:
            raise ValueError("scan speed must be non-negative")

    @classmethod
    def along_y(cls, speed, origin=(0.0, 0.0, 0.0)):
        return cls(tuple(origin), (0.0, 1.0, 0.0), speed)

    def position(self, t):
        t = np.asarray(t, dtype=float)
        return np.asarray(self.origin) + np.multiply.outer(t * self.speed, np.asarray(self.direction))


def peak_intensity(pp):
    return 2.0 * pp.alpha * pp.eta * pp.P / (math.pi * pp.r ** 3)


def point_source(x, t, pp, path):
    """Gaussian point source at points ``x`` (..., 3) and time ``t``."""
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x - path.position(t)) ** 2, axis=-1)
    return peak_intensity(pp) * np.exp(-2.0 * d2 / pp.r ** 2)


def line_source(x, t0, dt, pp, path):
    """Time average of the point source over ``[t0, t0 + dt]``.

    Evaluated by fixed 16-point Gauss-Legendre quadrature.
    """
    if not dt > 0:
        raise ValueError(f"line source needs dt > 0, got {dt}")
    x = np.asarray(x, dtype=float)
    times = t0 + 0.5 * dt * (_GL_NODES + 1.0)
    centers = path.position(times)                          # (16, 3)
    d2 = np.sum((x[..., None, :] - centers) ** 2, axis=-1)  # (..., 16)
    vals = np.exp(-2.0 * d2 / pp.r ** 2)
    return peak_intensity(pp) * 0.5 * (vals @ _GL_WEIGHTS)


def use_line_source(dt, pp):
    """Line source is needed once a step moves the beam further than r."""
    return pp.v > 0 and dt > pp.r / pp.v


def hybrid_source(x, t0, dt, pp, path):
    """Line source for long steps, otherwise the point source at the step midpoint."""
    if not dt > 0:
        raise ValueError(f"hybrid source needs dt > 0, got {dt}")
    if use_line_source(dt, pp):
        return line_source(x, t0, dt, pp, path)
    return point_source(x, t0 + 0.5 * dt, pp, path)
