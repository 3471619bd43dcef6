"""Causal constant-velocity Kalman filtering and online aspect-angle estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import GeometryError, PlanarPoint, aspect_angle, los_azimuth, wrap_angle, wrapped_error
from .simulator import TrajectorySample, reference_aspects

MIN_SPEED = 0.2  # m/s; below this the heading is held
MAX_GAP = 1200.0  # s


class LowSpeedError(ValueError):
    pass


class OrderingError(ValueError):
    pass


@dataclass(frozen=True)
class KfParams:
    q: float = 0.05
    r: float = 100.0
    p0: float = 10.0

    def __post_init__(self):
        if not (self.q > 0 and self.r > 0 and self.p0 > 0):
            raise ValueError("q, r and p0 must be positive")

    @classmethod
    def for_noise(cls, meas_sigma: float, q: float = 0.05, p0: float = 10.0) -> "KfParams":
        return cls(q=q, r=max(meas_sigma, 1e-3) ** 2, p0=p0)


@dataclass(frozen=True)
class TrackState:
    """Filter state ``(x, y, vx, vy)`` with its 4x4 covariance.

    ``rejected`` is set when the step that produced this state skipped the
    update because the measurement was not finite.
    """

    mean: np.ndarray
    cov: np.ndarray
    rejected: bool = False

    @property
    def position(self) -> PlanarPoint:
        return PlanarPoint(float(self.mean[0]), float(self.mean[1]))

    @property
    def velocity(self) -> tuple[float, float]:
        return float(self.mean[2]), float(self.mean[3])


_H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


def kf_init(first_meas: PlanarPoint, params: KfParams) -> TrackState:
    mean = np.array([first_meas[0], first_meas[1], 0.0, 0.0], dtype=np.float64)
    cov = params.p0 * np.diag([1.0, 1.0, 100.0, 100.0])
    return TrackState(mean, cov)


def transition(dt: float, q: float) -> tuple[np.ndarray, np.ndarray]:
    """CV transition matrix and white-acceleration process noise for step ``dt``."""
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    q11, q12, q22 = q * dt**3 / 3.0, q * dt**2 / 2.0, q * dt
    Q = np.array(
        [
            [q11, 0.0, q12, 0.0],
            [0.0, q11, 0.0, q12],
            [q12, 0.0, q22, 0.0],
            [0.0, q12, 0.0, q22],
        ]
    )
    return F, Q


def kf_predict(state: TrackState, dt: float, params: KfParams) -> TrackState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    F, Q = transition(dt, params.q)
    cov = F @ state.cov @ F.T + Q
    return TrackState(F @ state.mean, 0.5 * (cov + cov.T))


def kf_update(state: TrackState, meas: PlanarPoint, params: KfParams) -> TrackState:
    z = np.array([meas[0], meas[1]], dtype=np.float64)
    if not np.all(np.isfinite(z)):
        return TrackState(state.mean, state.cov, rejected=True)
    P = state.cov
    S = _H @ P @ _H.T + params.r * np.eye(2)
    K = np.linalg.solve(S, _H @ P).T
    mean = state.mean + K @ (z - _H @ state.mean)
    # Joseph form keeps the covariance symmetric PSD
    A = np.eye(4) - K @ _H
    cov = A @ P @ A.T + params.r * (K @ K.T)
    return TrackState(mean, 0.5 * (cov + cov.T))


def kf_step(state: TrackState, dt: float, meas: PlanarPoint, params: KfParams) -> TrackState:
    """One predict/update cycle; non-finite measurements give a flagged predict-only step."""
    return kf_update(kf_predict(state, dt, params), meas, params)


def estimate_heading(state: TrackState, min_speed: float = MIN_SPEED) -> float:
    vx, vy = state.velocity
    if math.hypot(vx, vy) < min_speed:
        raise LowSpeedError(f"speed below {min_speed} m/s")
    return wrap_angle(math.atan2(vy, vx))


def heading_from_positions(prev: PlanarPoint, curr: PlanarPoint) -> float:
    dx, dy = curr[0] - prev[0], curr[1] - prev[1]
    if dx == 0.0 and dy == 0.0:
        raise GeometryError("successive positions coincide")
    return wrap_angle(math.atan2(dy, dx))


def _check_times(samples: Sequence[TrajectorySample]) -> None:
    ts = np.array([s.t for s in samples], dtype=np.float64)
    if ts.size > 1 and not np.all(np.diff(ts) > 0):
        raise OrderingError("sample timestamps must be strictly increasing")


def estimate_aspect_series(
    samples: Sequence[TrajectorySample],
    radar: PlanarPoint,
    params: KfParams,
    heading_mode: str = "velocity",
    min_speed: float = MIN_SPEED,
) -> list[tuple[float, float]]:
    """Online aspect estimates, one per sample.

    The estimate at sample i depends only on measurements 0..i. Samples where
    no heading is available yet (the first one, or low speed before any valid
    heading) carry NaN; later low-speed samples hold the last valid heading.

    Returns:
        ``[(t, aspect_est), ...]`` aligned with ``samples``.
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    if heading_mode not in ("velocity", "positions"):
        raise ValueError(f"unknown heading_mode {heading_mode!r}")
    _check_times(samples)
    out = []
    state = kf_init(samples[0].meas, params)
    last_hdg = math.nan
    prev_pos = state.position
    for i, s in enumerate(samples):
        if i > 0:
            state = kf_step(state, s.t - samples[i - 1].t, s.meas, params)
            try:
                if heading_mode == "velocity":
                    last_hdg = estimate_heading(state, min_speed)
                else:
                    last_hdg = heading_from_positions(prev_pos, state.position)
            except (LowSpeedError, GeometryError):
                pass
            prev_pos = state.position
        if math.isnan(last_hdg):
            out.append((s.t, math.nan))
        else:
            out.append((s.t, aspect_angle(last_hdg, los_azimuth(state.position, radar))))
    return out


def segment_trajectory(samples: Sequence[TrajectorySample], max_gap: float = MAX_GAP) -> list[list]:
    """Split wherever consecutive timestamps are more than ``max_gap`` apart."""
    if not samples:
        return []
    ts = np.array([s.t for s in samples], dtype=np.float64)
    if np.any(np.diff(ts) < 0):
        raise OrderingError("samples must be sorted by time")
    cuts = np.flatnonzero(np.diff(ts) > max_gap) + 1
    bounds = [0, *cuts.tolist(), len(samples)]
    return [list(samples[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]


def windows(segments: Sequence[Sequence], length: int) -> list[list]:
    """Cut gap-free segments into consecutive non-overlapping windows of ``length`` samples."""
    out = []
    for seg in segments:
        for start in range(0, len(seg) - length + 1, length):
            out.append(list(seg[start : start + length]))
    return out


@dataclass
class EstimatorReport:
    k_values: list[int]
    per_k_mean: list[float]  # radians, mean over segments of the error at step k
    per_k_median: list[float]
    segment_scores: np.ndarray  # radians, per-segment mean over k
    worst_k_mean: list[float] = field(default_factory=list)  # per-k mean over the worst decile
    skipped: int = 0
    errors: np.ndarray | None = None  # (segments, k) radians
    segment_index: list[int] = field(default_factory=list)  # input position of each scored segment

    @property
    def median(self) -> float:
        return float(np.median(self.segment_scores))

    @property
    def mean(self) -> float:
        return float(np.mean(self.segment_scores))

    @property
    def deciles(self) -> list[float]:
        return np.quantile(self.segment_scores, np.linspace(0.1, 0.9, 9)).tolist()

    def worst_mask(self) -> np.ndarray:
        cut = np.quantile(self.segment_scores, 0.9)
        return self.segment_scores >= cut

    @property
    def worst_decile_mean(self) -> float:
        return float(np.mean(self.segment_scores[self.worst_mask()]))

    @property
    def worst_decile_median(self) -> float:
        return float(np.median(self.segment_scores[self.worst_mask()]))

    def to_dict(self, degrees: bool = True) -> dict:
        f = math.degrees if degrees else float
        return {
            "units": "deg" if degrees else "rad",
            "n_segments": int(len(self.segment_scores)),
            "skipped": self.skipped,
            "k": self.k_values,
            "per_k_mean": [f(v) for v in self.per_k_mean],
            "per_k_median": [f(v) for v in self.per_k_median],
            "worst_decile_per_k_mean": [f(v) for v in self.worst_k_mean],
            "median": f(self.median),
            "mean": f(self.mean),
            "deciles": [f(v) for v in self.deciles],
            "worst_decile_mean": f(self.worst_decile_mean),
            "worst_decile_median": f(self.worst_decile_median),
        }


def evaluate_estimator(
    segments: Sequence[Sequence[TrajectorySample]],
    radar: PlanarPoint,
    params: KfParams,
    k_range: Sequence[int] = range(2, 11),
    heading_mode: str = "velocity",
) -> EstimatorReport:
    """Wrapped aspect error at each context length k, averaged over k per segment.

    The error at context k is the error of the latest causal estimate after k
    samples. Because the filter is causal, one pass over the first max(k)
    samples yields exactly what k separate truncated runs would.
    """
    ks = sorted(int(k) for k in k_range)
    if not ks or ks[0] < 1:
        raise ValueError("k values must be >= 1")
    k_max = ks[-1]
    errs, used, skipped = [], [], 0
    for i, seg in enumerate(segments):
        if len(seg) < max(k_max, 2):
            skipped += 1
            continue
        head = seg[:k_max]
        est = np.array([a for _, a in estimate_aspect_series(head, radar, params, heading_mode)])
        ref = reference_aspects(head, radar)
        idx = np.array(ks) - 1
        e = np.asarray(wrapped_error(np.nan_to_num(est[idx], nan=ref[idx] + math.pi), ref[idx]))
        errs.append(e)
        used.append(i)
    if not errs:
        raise ValueError("no segment is long enough for the requested k range")
    E = np.vstack(errs)  # (segments, k)
    scores = E.mean(axis=1)
    rep = EstimatorReport(
        k_values=ks,
        per_k_mean=E.mean(axis=0).tolist(),
        per_k_median=np.median(E, axis=0).tolist(),
        segment_scores=scores,
        skipped=skipped,
        errors=E,
        segment_index=used,
    )
    rep.worst_k_mean = E[rep.worst_mask()].mean(axis=0).tolist()
    return rep
