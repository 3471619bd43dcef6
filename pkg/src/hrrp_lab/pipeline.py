"""Splitting, sequence construction, training and evaluation."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from . import rng as rngmod
from .datasets import DataError, read_trajectory_csv, trajectory_path
from .geometry import wrap_angle
from .kalman import KfParams, estimate_aspect_series, segment_trajectory
from .metrics import MetricsReport
from .models import BackboneSpec, SequenceModel, SequenceSpec, build_model
from .nn import checkpoint as ckpt
from .nn.conditioning import encode_angle
from .nn.tensor import Tensor, softmax_cross_entropy
from .simulator import Dataset

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
ANGLE_SOURCES = ("none", "reference", "predicted")


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


class MissingEstimatesError(DataError):
    """Predicted aspects were requested but never attached."""


# ---------------------------------------------------------------------------
# splits, weights, jitter


@dataclass
class SplitAssignment:
    codes: np.ndarray  # per record: 0 train, 1 val, 2 test

    def indices(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.codes == SPLITS.index(name))

    def name_of(self, i: int) -> str:
        return SPLITS[int(self.codes[i])]


def stratified_split(labels, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> SplitAssignment:
    """Per-class shuffle, then proportional assignment; every class gets >= 1 val and test record."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) <= 0:
        raise ValueError("ratios must be three positive numbers summing to 1")
    codes = np.full(len(labels), -1, dtype=np.int64)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        n = len(idx)
        if n < 3:
            raise ValueError(f"class {cls} has {n} records; at least 3 are needed")
        idx = rngmod.stream(seed, rngmod.SPLIT, int(cls)).permutation(idx)
        n_val = max(1, int(round(ratios[1] * n)))
        n_test = max(1, int(round(ratios[2] * n)))
        n_train = n - n_val - n_test
        codes[idx[:n_train]] = 0
        codes[idx[n_train : n_train + n_val]] = 1
        codes[idx[n_train + n_val :]] = 2
    return SplitAssignment(codes)


def class_weights(labels, n_classes: int | None = None) -> np.ndarray:
    """Inverse class frequencies scaled to mean 1."""
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError("every class needs at least one record")
    w = 1.0 / counts
    return w * (k / w.sum())


def jitter_angle(phi, sigma_deg: float = 2.0, rng: np.random.Generator | None = None):
    """wrap(phi + eps), eps ~ N(0, sigma_deg in radians)."""
    if sigma_deg == 0:
        return wrap_angle(phi)
    eps = rng.normal(0.0, math.radians(sigma_deg), size=np.shape(phi))
    return wrap_angle(np.asarray(phi, dtype=np.float64) + eps)


# ---------------------------------------------------------------------------
# multi-view sequences


@dataclass
class SequenceSet:
    members: np.ndarray  # (S, T) record indices, time-ordered
    labels: np.ndarray  # (S,)
    split: np.ndarray  # (S,) split codes
    dropped: int = 0

    def select(self, name: str) -> "SequenceSet":
        m = self.split == SPLITS.index(name)
        return SequenceSet(self.members[m], self.labels[m], self.split[m], 0)


def build_sequences(ship_id, t, labels, split: SplitAssignment, length: int, valid=None) -> SequenceSet:
    """Chunk each (ship, split) bucket, sorted by time, into non-overlapping length-T runs.

    Remainders shorter than T are dropped and counted. ``valid`` masks out
    records that may not be used (e.g. no predicted aspect).
    """
    ship_id = np.asarray(ship_id)
    t = np.asarray(t, dtype=np.float64)
    labels = np.asarray(labels)
    keep = np.ones(len(ship_id), bool) if valid is None else np.asarray(valid, bool)
    members, labs, codes = [], [], []
    dropped = 0
    for sid in np.unique(ship_id):
        for code in range(len(SPLITS)):
            idx = np.flatnonzero((ship_id == sid) & (split.codes == code) & keep)
            idx = idx[np.argsort(t[idx], kind="stable")]
            n_seq = len(idx) // length
            if n_seq == 0:
                log.info("ship %s / %s: %d records, shorter than T=%d", sid, SPLITS[code], len(idx), length)
            dropped += len(idx) - n_seq * length
            for j in range(n_seq):
                chunk = idx[j * length : (j + 1) * length]
                members.append(chunk)
                labs.append(int(labels[chunk[0]]))
                codes.append(code)
    return SequenceSet(
        np.asarray(members, dtype=np.int64).reshape(-1, length),
        np.asarray(labs, dtype=np.int64),
        np.asarray(codes, dtype=np.int64),
        dropped,
    )


# ---------------------------------------------------------------------------
# predicted aspects


def attach_predicted_aspects(ds: Dataset, data_dir, params: KfParams | None = None, warmup: int = 2,
                             heading_mode: str = "velocity", context: int | None = None) -> np.ndarray:
    """Causal Kalman aspect estimate for every record, NaN where unavailable.

    Each ship's trajectory CSV is split at gaps longer than 20 minutes and
    filtered segment by segment. Records within the first ``warmup`` steps of
    a segment, and records whose ship has no trajectory file, are NaN.

    With ``context = k`` the estimate of a record uses only the k samples
    ending at its timestamp, a fresh filter per record; records with fewer
    than k samples of history in their segment are NaN.
    """
    if context is not None and context < 2:
        raise ValueError("context must be at least 2 samples")
    params = params or KfParams.for_noise(ds.config.meas_sigma)
    radar = ds.config.radar
    pred = np.full(len(ds), np.nan)
    for sid in np.unique(ds.ship_id):
        path = trajectory_path(data_dir, int(sid))
        rec = np.flatnonzero(ds.ship_id == sid)
        if not path.exists():
            log.warning("no trajectory for ship %d; %d records flagged", sid, len(rec))
            continue
        est: dict[float, float] = {}
        for seg in segment_trajectory(read_trajectory_csv(path)):
            if len(seg) < 2:
                continue
            if context is None:
                for step, (ts, a) in enumerate(estimate_aspect_series(seg, radar, params, heading_mode)):
                    if step >= warmup:
                        est[ts] = a
            else:
                for end in range(context, len(seg) + 1):
                    ts, a = estimate_aspect_series(seg[end - context : end], radar, params, heading_mode)[-1]
                    est[ts] = a
        for i in rec:
            pred[i] = est.get(float(ds.t[i]), np.nan)
    return pred


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    mode: str = "one_view"
    family: str = "resnet"
    widths: tuple[int, ...] = ()
    kernel: int = 7
    conditioning: str = "none"
    angle_source: str = "reference"
    aggregator: str = "gru"
    hidden: int = 32
    seq_len: int = 10
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    jitter_sigma_deg: float = 2.0
    seed: int = 0

    GRID = ("family", "conditioning", "angle_source", "aggregator", "seed")

    def __post_init__(self):
        if self.mode not in ("one_view", "multi_view"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.angle_source not in ANGLE_SOURCES:
            raise ValueError(f"unknown angle_source {self.angle_source!r}")
        if self.conditioning != "none" and self.angle_source == "none":
            raise ValueError("a conditioned model needs angle_source reference or predicted")
        if self.epochs < 1 or self.batch_size < 2 or self.lr <= 0 or self.seq_len < 1:
            raise ValueError("invalid optimization settings")
        self.widths = tuple(self.widths)

    @property
    def effective_angle_source(self) -> str:
        return "none" if self.conditioning == "none" else self.angle_source

    def backbone_spec(self, n_classes: int, n_bins: int) -> BackboneSpec:
        return BackboneSpec(self.family, self.widths, self.kernel, self.conditioning, n_classes, n_bins)

    def sequence_spec(self) -> Optional[SequenceSpec]:
        if self.mode != "multi_view":
            return None
        return SequenceSpec(self.aggregator, self.hidden, self.seq_len)

    def to_text(self) -> str:
        return cfgmod.dump(self)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["widths"] = tuple(d.get("widths", ()))
        return cls(**d)


@dataclass
class TrainResult:
    model: object
    config: TrainConfig
    history: list[dict]
    best_epoch: int
    val_report: MetricsReport
    test_report: MetricsReport


class _Data:
    """Split-resolved view of a dataset for one training configuration."""

    def __init__(self, cfg: TrainConfig, ds: Dataset):
        self.cfg = cfg
        self.ds = ds
        src = cfg.effective_angle_source
        if src == "predicted":
            if ds.aspect_pred is None:
                raise MissingEstimatesError(
                    "angle source 'predicted' needs Kalman estimates; run the attach-aspects step first"
                )
            self.angles = ds.aspect_pred
            valid = np.isfinite(ds.aspect_pred)
        else:
            self.angles = ds.aspect_ref
            valid = np.ones(len(ds), bool)
        self.split = stratified_split(ds.class_id, seed=cfg.seed)
        self.valid = valid
        self.profiles = ds.profiles.astype(np.float64)
        if cfg.mode == "multi_view":
            self.seqs = build_sequences(ds.ship_id, ds.t, ds.class_id, self.split, cfg.seq_len, valid)

    def items(self, name: str) -> np.ndarray:
        """Record indices (one-view) or sequence rows (multi-view) of a split."""
        if self.cfg.mode == "multi_view":
            return np.flatnonzero(self.seqs.split == SPLITS.index(name))
        idx = self.split.indices(name)
        return idx[self.valid[idx]]

    def labels(self, items: np.ndarray) -> np.ndarray:
        if self.cfg.mode == "multi_view":
            return self.seqs.labels[items]
        return self.ds.class_id[items]

    def batch(self, items: np.ndarray, jitter_rng=None):
        rec = self.seqs.members[items] if self.cfg.mode == "multi_view" else items
        x = self.profiles[rec]  # (B, L) or (B, T, L)
        x = x[..., None, :]
        c = None
        if self.cfg.effective_angle_source != "none":
            phi = self.angles[rec]
            if jitter_rng is not None:
                phi = jitter_angle(phi, self.cfg.jitter_sigma_deg, jitter_rng)
            c = Tensor(encode_angle(phi))
        return Tensor(x), c


def predict(model, data: _Data, items: np.ndarray, batch_size: int = 256) -> np.ndarray:
    model.eval()
    preds = []
    for lo in range(0, len(items), batch_size):
        x, c = data.batch(items[lo : lo + batch_size])
        preds.append(np.argmax(model(x, c).data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def _metrics(model, data: _Data, name: str) -> MetricsReport:
    items = data.items(name)
    return MetricsReport.from_predictions(data.labels(items), predict(model, data, items), data.ds.n_classes)


def train(cfg: TrainConfig, ds: Dataset) -> TrainResult:
    """Mini-batch SGD with momentum on the weighted cross-entropy.

    The checkpoint with the best validation macro-F1 (earliest on ties) is
    kept and scored on the test split.
    """
    data = _Data(cfg, ds)
    model = build_model(cfg.backbone_spec(ds.n_classes, ds.config.n_bins), cfg.sequence_spec(), cfg.seed)
    params = model.parameters()
    velocity = [np.zeros_like(p.data) for p in params]
    train_items = data.items("train")
    if len(train_items) < 2:
        raise DataError("training split is empty")
    weights = class_weights(data.labels(train_items), ds.n_classes)
    history = []
    best = (-1.0, 0, None)
    for epoch in range(cfg.epochs):
        model.train()
        order = rngmod.stream(cfg.seed, rngmod.SHUFFLE, epoch).permutation(train_items)
        jrng = rngmod.stream(cfg.seed, rngmod.JITTER, epoch)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            items = order[lo : lo + cfg.batch_size]
            if len(items) < 2:
                continue
            x, c = data.batch(items, jrng)
            loss = softmax_cross_entropy(model(x, c), data.labels(items), weights)
            lv = float(loss.data)
            if not math.isfinite(lv):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting {lo}")
            model.zero_grad()
            loss.backward()
            for p, v in zip(params, velocity):
                if p.grad is None:
                    continue
                v *= cfg.momentum
                v += p.grad
                with np.errstate(over="ignore", invalid="ignore"):
                    p.data = p.data - cfg.lr * v
                if not np.all(np.isfinite(p.data)):
                    raise DivergenceError(f"non-finite parameters after the update at epoch {epoch}, batch starting {lo}")
            losses.append(lv)
        val = _metrics(model, data, "val")
        history.append(
            {"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": val.accuracy,
             "val_macro_f1": val.macro_f1}
        )
        log.info("epoch %d loss %.4f val acc %.4f f1 %.4f", epoch, history[-1]["loss"], val.accuracy, val.macro_f1)
        if val.macro_f1 > best[0]:
            best = (val.macro_f1, epoch, ckpt.snapshot(model))
    ckpt.restore(model, best[2])
    return TrainResult(
        model=model,
        config=cfg,
        history=history,
        best_epoch=best[1],
        val_report=_metrics(model, data, "val"),
        test_report=_metrics(model, data, "test"),
    )


def evaluate(model, cfg: TrainConfig, ds: Dataset, split: str = "test", angle_source: str | None = None) -> MetricsReport:
    """Deterministic eval-mode metrics of ``model`` on one split of ``ds``."""
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    if model.spec.n_classes != ds.n_classes or model.spec.n_bins != ds.config.n_bins:
        raise DataError("checkpoint topology does not match the dataset")
    if angle_source is not None and angle_source != cfg.angle_source:
        cfg = TrainConfig(**{**asdict(cfg), "angle_source": angle_source})
    return _metrics(model, _Data(cfg, ds), split)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(result_or_model, cfg: TrainConfig, path) -> bytes:
    from .datasets import atomic_write_bytes
    from .models import model_header

    model = getattr(result_or_model, "model", result_or_model)
    meta = {"model": model_header(model), "train_config": {**asdict(cfg), "widths": list(cfg.widths)}}
    buf = ckpt.encode(model, meta)
    if path is not None:
        atomic_write_bytes(Path(path), buf)
    return buf


def load_checkpoint(path):
    from .models import model_from_header

    header, arrays = ckpt.read_header(path)
    meta = header["meta"]
    model = model_from_header(meta["model"])
    ckpt.load_into(model, arrays)
    return model, TrainConfig.from_dict(meta["train_config"])
