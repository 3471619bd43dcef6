"""Angle arithmetic, line-of-sight geometry and the Length-on-Range-Profile measure.

Angles follow the mathematical convention: counterclockwise from +x (east),
wrapped to [0, 2*pi). Everything here works in double precision.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


class GeometryError(ValueError):
    """Raised for degenerate geometry or invalid angular input."""


class PlanarPoint(NamedTuple):
    x: float
    y: float


def wrap_angle(r):
    """Wrap ``r`` (radians, scalar or array) to [0, 2*pi) via r - 2*pi*floor(r / 2*pi)."""
    arr = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise GeometryError("cannot wrap a non-finite angle")
    out = arr - TWO_PI * np.floor(arr / TWO_PI)
    # floor can land exactly on 2*pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def wrapped_error(a, b):
    """Distance on the circle between two angles, in [0, pi]."""
    d = np.mod(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)), TWO_PI)
    out = np.minimum(d, TWO_PI - d)
    if out.ndim == 0:
        return float(out)
    return out


def los_azimuth(target: PlanarPoint, radar: PlanarPoint) -> float:
    """Bearing from ``radar`` to ``target``."""
    dx = target[0] - radar[0]
    dy = target[1] - radar[1]
    if dx == 0.0 and dy == 0.0:
        raise GeometryError("target and radar positions coincide")
    return wrap_angle(math.atan2(dy, dx))


def aspect_angle(hdg: float, theta: float) -> float:
    """Aspect angle: target heading minus radar LOS azimuth, wrapped."""
    return wrap_angle(hdg - theta)


def lrp(profile, delta_r: float, threshold_frac: float = 0.1) -> float:
    """Length on Range Profile.

    The extent between the first and last bins whose value reaches
    ``threshold_frac`` of the profile peak, inclusive, times the bin size.

    Args:
        profile: Non-negative range profile.
        delta_r: Range-bin size in meters.
        threshold_frac: Detection threshold relative to the peak, in (0, 1).

    Returns:
        The occupied range extent in meters.
    """
    p = np.asarray(profile, dtype=np.float64)
    if not 0.0 < threshold_frac < 1.0:
        raise ValueError("threshold_frac must lie in (0, 1)")
    if p.ndim != 1 or p.size == 0:
        raise ValueError("profile must be a non-empty vector")
    peak = p.max()
    if not peak > 0.0:
        raise GeometryError("profile has no target response")
    idx = np.flatnonzero(p >= threshold_frac * peak)
    return float(idx[-1] - idx[0] + 1) * delta_r
