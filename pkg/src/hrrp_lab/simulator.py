"""Synthetic aspect-dependent range profiles and ship trajectories.

Targets are 2D point-scatterer models. A profile is formed by projecting every
scatterer onto the radar line of sight and summing amplitudes into range bins
(single bounce, no occlusion). Trajectories are constant-speed paths with a
piecewise-constant turn rate and noisy position measurements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import rng as rngmod
from .geometry import PlanarPoint, aspect_angle, los_azimuth, wrap_angle


class SimulationError(ValueError):
    """Invalid render or dataset configuration."""


@dataclass(frozen=True)
class Scatterer:
    dx: float
    dy: float
    amplitude: float


@dataclass(frozen=True)
class TargetModel:
    class_id: int
    length: float
    width: float
    scatterers: tuple[Scatterer, ...]

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise SimulationError("target dimensions must be positive")
        if len(self.scatterers) < 3:
            raise SimulationError("a target needs at least 3 scatterers")
        tol = 1e-9
        for s in self.scatterers:
            if abs(s.dx) > self.length / 2 + tol or abs(s.dy) > self.width / 2 + tol:
                raise SimulationError(f"scatterer {s} lies outside the hull")
            if s.amplitude < 0:
                raise SimulationError("scatterer amplitude must be non-negative")
        dx = np.array([s.dx for s in self.scatterers])
        end = 0.4 * self.length / 2
        if not (np.any(dx >= end) and np.any(dx <= -end)):
            raise SimulationError("target needs a scatterer near each end")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.scatterers
        return (
            np.array([x.dx for x in s], dtype=np.float64),
            np.array([x.dy for x in s], dtype=np.float64),
            np.array([x.amplitude for x in s], dtype=np.float64),
        )

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "length": self.length,
            "width": self.width,
            "scatterers": [[s.dx, s.dy, s.amplitude] for s in self.scatterers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetModel":
        return cls(
            class_id=int(d["class_id"]),
            length=float(d["length"]),
            width=float(d["width"]),
            scatterers=tuple(Scatterer(*map(float, s)) for s in d["scatterers"]),
        )


@dataclass(frozen=True)
class RenderParams:
    n_bins: int = 128
    delta_r: float = 2.0
    noise_sigma: float = 0.0
    amp_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_bins < 2 or self.delta_r <= 0:
            raise SimulationError("n_bins must be >= 2 and delta_r > 0")
        if self.noise_sigma < 0 or self.amp_jitter < 0:
            raise SimulationError("noise levels must be non-negative")

    @property
    def span(self) -> float:
        return self.n_bins * self.delta_r

    def check_target(self, target: TargetModel) -> None:
        """Reject targets whose worst-case extent would not fit twice into the window."""
        extent = math.hypot(target.length, target.width)
        if self.n_bins < 2 * extent / self.delta_r:
            raise SimulationError(
                f"n_bins={self.n_bins} too small for a {extent:.1f} m target at {self.delta_r} m/bin"
            )


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    pos: PlanarPoint
    meas: PlanarPoint
    hdg_true: float


@dataclass
class ProfileRecord:
    profile: np.ndarray
    class_id: int
    t: float
    aspect_ref: float
    aspect_pred: Optional[float] = None


def project_scatterers(target: TargetModel, aspect: float) -> list[tuple[float, float]]:
    """Range offset of every scatterer along the LOS at the given aspect."""
    dx, dy, amp = target.arrays()
    offsets = dx * math.cos(aspect) + dy * math.sin(aspect)
    return list(zip(offsets.tolist(), amp.tolist()))


def render_hrrp(
    target: TargetModel,
    aspect: float,
    params: RenderParams,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Bin-and-sum range profile of ``target`` seen at ``aspect``, normalized to unit max."""
    dx, dy, amp = target.arrays()
    offsets = dx * math.cos(aspect) + dy * math.sin(aspect)
    bins = np.floor((offsets + params.span / 2) / params.delta_r).astype(np.int64)
    if bins.min() < 0 or bins.max() >= params.n_bins:
        raise SimulationError("scatterer falls outside the range window; increase n_bins")
    if params.amp_jitter > 0 or params.noise_sigma > 0:
        if rng is None:
            raise SimulationError("a random stream is required for noisy rendering")
    if params.amp_jitter > 0:
        amp = amp * np.exp(params.amp_jitter * rng.standard_normal(amp.shape))
    profile = np.bincount(bins, weights=amp, minlength=params.n_bins).astype(np.float64)
    if params.noise_sigma > 0:
        profile = np.maximum(profile + params.noise_sigma * rng.standard_normal(params.n_bins), 0.0)
    peak = profile.max()
    if peak > 0:
        profile = profile / peak
    return profile


def gen_trajectory(
    speed: float,
    turn_rate,
    duration: float,
    dt: float,
    meas_sigma: float,
    seed: int | np.random.Generator = 0,
    start: PlanarPoint = PlanarPoint(0.0, 0.0),
    heading0: float = 0.0,
    t0: float = 0.0,
) -> list[TrajectorySample]:
    """Constant-speed track with a piecewise-constant turn rate.

    Args:
        speed: Ground speed in m/s.
        turn_rate: A constant rate (rad/s) or a sequence of ``(t_start, rate)``
            pairs, times relative to the track start, applied from ``t_start`` on.
        duration: Track length in seconds.
        dt: Sampling period in seconds.
        meas_sigma: Std of the isotropic Gaussian position noise, meters.
        seed: Seed or generator for the measurement noise.
        start: Initial true position.
        heading0: Initial heading in radians.
        t0: Timestamp of the first sample.
    """
    if dt <= 0:
        raise SimulationError("dt must be positive")
    if duration < 2 * dt:
        raise SimulationError("duration must cover at least two steps")
    gen = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if np.isscalar(turn_rate):
        schedule = [(0.0, float(turn_rate))]
    else:
        schedule = sorted((float(a), float(b)) for a, b in turn_rate)
        if not schedule or schedule[0][0] > 0:
            schedule.insert(0, (0.0, 0.0))
    n = int(math.floor(duration / dt + 1e-9)) + 1
    x, y, h = float(start[0]), float(start[1]), float(heading0)
    out = []
    seg = 0
    noise = meas_sigma * gen.standard_normal((n, 2)) if meas_sigma > 0 else np.zeros((n, 2))
    for i in range(n):
        t_rel = i * dt
        out.append(
            TrajectorySample(
                t=t0 + t_rel,
                pos=PlanarPoint(x, y),
                meas=PlanarPoint(x + noise[i, 0], y + noise[i, 1]),
                hdg_true=wrap_angle(h),
            )
        )
        # exact arc integration; a rate change inside a step takes effect at the next step
        while seg + 1 < len(schedule) and schedule[seg + 1][0] <= t_rel:
            seg += 1
        w = schedule[seg][1]
        if abs(w) < 1e-12:
            x += speed * dt * math.cos(h)
            y += speed * dt * math.sin(h)
        else:
            h_next = h + w * dt
            x += speed / w * (math.sin(h_next) - math.sin(h))
            y += speed / w * (math.cos(h) - math.cos(h_next))
            h = h_next
    return out


def reference_aspects(samples: Sequence[TrajectorySample], radar: PlanarPoint) -> np.ndarray:
    """Ground-truth aspect of each sample from true heading and true position."""
    return np.array([aspect_angle(s.hdg_true, los_azimuth(s.pos, radar)) for s in samples])


# ---------------------------------------------------------------------------
# target and dataset generation


def make_target(
    class_id: int,
    length: float,
    width: float,
    rng: np.random.Generator,
    n_interior: int = 8,
    hull_amp: float = 1.0,
) -> TargetModel:
    """Random ship-like target: four hull corners plus interior scatterers.

    The corners carry the strongest returns so the profile support follows the
    projected hull; interior scatterers (superstructure) are weaker and drawn
    uniformly inside the hull.
    """
    hl, hw = length / 2, width / 2
    sc = [Scatterer(sx * hl, sy * hw, hull_amp) for sx in (1, -1) for sy in (1, -1)]
    for _ in range(n_interior):
        sc.append(
            Scatterer(
                float(rng.uniform(-0.9, 0.9) * hl),
                float(rng.uniform(-0.8, 0.8) * hw),
                float(rng.uniform(0.2, 0.8) * hull_amp),
            )
        )
    return TargetModel(class_id, float(length), float(width), tuple(sc))


def mirror_target(target: TargetModel, class_id: int) -> TargetModel:
    """Sister ship: identical hull, superstructure mirrored fore/aft."""
    return TargetModel(
        class_id,
        target.length,
        target.width,
        tuple(Scatterer(-s.dx, s.dy, s.amplitude) for s in target.scatterers),
    )


@dataclass
class DatasetConfig:
    """Everything needed to regenerate a synthetic dataset from its seed."""

    n_classes: int = 10
    preset: str = "ambiguous"
    n_lengths: int = 3
    min_length: float = 60.0
    max_length: float = 110.0
    widths: tuple[float, ...] = (12.0, 16.0)
    n_interior: int = 8
    trajectories_per_class: int = 3
    samples_per_trajectory: int = 100
    dt: float = 10.0
    speed_min: float = 5.0
    speed_max: float = 12.0
    turn_rate_max_deg: float = 0.6
    turn_segment: float = 200.0
    range_min: float = 5000.0
    range_max: float = 15000.0
    meas_sigma: float = 10.0
    radar_x: float = 0.0
    radar_y: float = 0.0
    n_bins: int = 128
    delta_r: float = 2.0
    noise_sigma: float = 0.05
    amp_jitter: float = 0.3
    trajectory_gap: float = 3600.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise SimulationError("need at least 2 classes")
        if self.trajectories_per_class < 1 or self.samples_per_trajectory < 2:
            raise SimulationError("need >= 1 trajectory and >= 2 samples per class")
        if self.preset not in ("ambiguous", "diverse"):
            raise SimulationError(f"unknown preset {self.preset!r}")
        if self.trajectory_gap <= 1200.0:
            raise SimulationError("trajectory_gap must exceed the 1200 s segmenting gap")
        if not self.widths:
            raise SimulationError("widths must not be empty")

    @property
    def radar(self) -> PlanarPoint:
        return PlanarPoint(self.radar_x, self.radar_y)

    def render_params(self) -> RenderParams:
        return RenderParams(self.n_bins, self.delta_r, self.noise_sigma, self.amp_jitter, self.seed)


def build_targets(cfg: DatasetConfig) -> list[TargetModel]:
    """Class table for ``cfg``.

    ``ambiguous``: lengths come from ``n_lengths`` shared values, and classes
    come in sister pairs (class 2j+1 mirrors class 2j), which produce the same
    profiles at aspects mirrored about broadside.
    ``diverse``: every class draws its own length and superstructure.
    """
    gen = rngmod.stream(cfg.seed, rngmod.TARGETS)
    targets: list[TargetModel] = []
    if cfg.preset == "ambiguous":
        lengths = np.linspace(cfg.min_length, cfg.max_length, cfg.n_lengths)
        for cid in range(cfg.n_classes):
            if cid % 2 == 1:
                targets.append(mirror_target(targets[cid - 1], cid))
                continue
            pair = cid // 2
            length = float(lengths[pair % cfg.n_lengths])
            width = float(cfg.widths[pair % len(cfg.widths)])
            targets.append(make_target(cid, length, width, gen, cfg.n_interior))
    else:
        for cid in range(cfg.n_classes):
            length = float(gen.uniform(cfg.min_length, cfg.max_length))
            width = float(gen.choice(cfg.widths))
            targets.append(make_target(cid, length, width, gen, cfg.n_interior))
    return targets


def ship_trajectories(cfg: DatasetConfig, class_id: int) -> list[list[TrajectorySample]]:
    """All trajectories of one ship, laid out on one time axis separated by ``trajectory_gap``."""
    gen = rngmod.stream(cfg.seed, rngmod.TRAJECTORIES, class_id)
    duration = (cfg.samples_per_trajectory - 1) * cfg.dt
    out = []
    t0 = 0.0
    for _ in range(cfg.trajectories_per_class):
        rng_range = gen.uniform(cfg.range_min, cfg.range_max)
        bearing = gen.uniform(0, 2 * math.pi)
        start = PlanarPoint(
            cfg.radar_x + rng_range * math.cos(bearing), cfg.radar_y + rng_range * math.sin(bearing)
        )
        n_seg = max(1, int(math.ceil(duration / cfg.turn_segment)))
        w_max = math.radians(cfg.turn_rate_max_deg)
        schedule = [(k * cfg.turn_segment, float(gen.uniform(-w_max, w_max))) for k in range(n_seg)]
        traj = gen_trajectory(
            speed=float(gen.uniform(cfg.speed_min, cfg.speed_max)),
            turn_rate=schedule,
            duration=duration,
            dt=cfg.dt,
            meas_sigma=cfg.meas_sigma,
            seed=gen,
            start=start,
            heading0=float(gen.uniform(0, 2 * math.pi)),
            t0=t0,
        )
        out.append(traj)
        t0 = traj[-1].t + cfg.trajectory_gap
    return out


@dataclass
class Dataset:
    """In-memory dataset: parallel per-record arrays plus the generating metadata."""

    profiles: np.ndarray  # (M, n_bins) float32 as stored
    class_id: np.ndarray  # (M,) int
    t: np.ndarray  # (M,) float64
    aspect_ref: np.ndarray  # (M,) float64
    ship_id: np.ndarray  # (M,) int
    traj_id: np.ndarray  # (M,) int
    targets: list[TargetModel]
    config: DatasetConfig
    aspect_pred: Optional[np.ndarray] = None  # (M,) NaN where flagged
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.class_id)

    @property
    def n_classes(self) -> int:
        return len(self.targets)

    def record(self, i: int) -> ProfileRecord:
        pred = None
        if self.aspect_pred is not None and np.isfinite(self.aspect_pred[i]):
            pred = float(self.aspect_pred[i])
        return ProfileRecord(
            self.profiles[i].astype(np.float64), int(self.class_id[i]), float(self.t[i]),
            float(self.aspect_ref[i]), pred,
        )


def gen_dataset(cfg: DatasetConfig) -> tuple[Dataset, dict[int, list[list[TrajectorySample]]]]:
    """Generate targets, trajectories and one rendered profile per trajectory sample."""
    targets = build_targets(cfg)
    params = cfg.render_params()
    for tgt in targets:
        params.check_target(tgt)
    profiles, cls, ts, ref, ship, tid = [], [], [], [], [], []
    trajectories: dict[int, list[list[TrajectorySample]]] = {}
    for tgt in targets:
        cid = tgt.class_id
        trajs = ship_trajectories(cfg, cid)
        trajectories[cid] = trajs
        render_rng = rngmod.stream(cfg.seed, rngmod.RENDER, cid)
        for j, traj in enumerate(trajs):
            aspects = reference_aspects(traj, cfg.radar)
            for s, a in zip(traj, aspects):
                profiles.append(render_hrrp(tgt, a, params, render_rng))
                cls.append(cid)
                ts.append(s.t)
                ref.append(a)
                ship.append(cid)
                tid.append(j)
    ds = Dataset(
        profiles=np.asarray(profiles, dtype=np.float32),
        class_id=np.asarray(cls, dtype=np.int64),
        t=np.asarray(ts, dtype=np.float64),
        aspect_ref=np.asarray(ref, dtype=np.float64),
        ship_id=np.asarray(ship, dtype=np.int64),
        traj_id=np.asarray(tid, dtype=np.int64),
        targets=targets,
        config=cfg,
    )
    return ds, trajectories
