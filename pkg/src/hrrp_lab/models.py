"""Backbones (MLP, ConvNet, ResNet-1D) with per-block conditioning, and sequence aggregators.

Every backbone is an extractor, mapping (N, 1, L) profiles to (N, F) latents,
followed by a linear head. Conditioning is injected at the end of every block
(residual block, conv block, hidden layer) right before its ReLU.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import rng as rngmod
from .nn import tensor as T
from .nn.conditioning import COND_DIM, NormPoint
from .nn.layers import BatchNorm1d, Conv1d, Linear, Module
from .nn.tensor import Parameter, ShapeError, Tensor

FAMILIES = ("mlp", "conv", "resnet")
CONDITIONINGS = ("none", "concat", "film", "cbn")
AGGREGATORS = ("mean_pool", "gru")

DEFAULT_WIDTHS = {"resnet": (16, 32, 64), "conv": (16, 32, 64), "mlp": (256, 128, 64)}


@dataclass(frozen=True)
class BackboneSpec:
    family: str = "resnet"
    widths: tuple[int, ...] = ()
    kernel: int = 7
    conditioning: str = "none"
    n_classes: int = 10
    n_bins: int = 128
    cond_dim: int = COND_DIM

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown backbone family {self.family!r}")
        if self.conditioning not in CONDITIONINGS:
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        if not self.widths:
            object.__setattr__(self, "widths", DEFAULT_WIDTHS[self.family])
        if len(self.widths) < 1 or min(self.widths) < 1:
            raise ValueError("need at least one block with positive width")
        if self.n_classes < 2 or self.kernel < 1 or self.cond_dim < 1:
            raise ValueError("invalid backbone spec")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


@dataclass(frozen=True)
class SequenceSpec:
    aggregator: str = "gru"
    hidden: int = 32
    length: int = 10

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.length < 1 or self.hidden < 1:
            raise ValueError("invalid sequence spec")


class ResBlock(Module):
    def __init__(self, c_in, c_out, kernel, cond, cond_dim, rng, cond_rng, extra_in=0):
        self.conv1 = Conv1d(c_in, c_out, kernel, rng, stride=2, extra_in=extra_in, extra_rng=cond_rng)
        self.bn1 = BatchNorm1d(c_out)
        self.conv2 = Conv1d(c_out, c_out, kernel, rng)
        self.short = Conv1d(c_in, c_out, 1, rng, stride=2, padding=0, extra_in=extra_in, extra_rng=cond_rng)
        self.norm = NormPoint(c_out, cond, cond_dim, cond_rng)

    def __call__(self, x, c):
        h = T.relu(self.bn1(self.conv1(x)))
        s = T.add(self.conv2(h), self.short(x))
        return T.relu(self.norm(s, c))


class ConvBlock(Module):
    def __init__(self, c_in, c_out, kernel, cond, cond_dim, rng, cond_rng, extra_in=0):
        self.conv = Conv1d(c_in, c_out, kernel, rng, stride=2, extra_in=extra_in, extra_rng=cond_rng)
        self.norm = NormPoint(c_out, cond, cond_dim, cond_rng)

    def __call__(self, x, c):
        return T.relu(self.norm(self.conv(x), c))


class DenseBlock(Module):
    def __init__(self, n_in, n_out, cond, cond_dim, rng, cond_rng, extra_in=0):
        self.fc = Linear(n_in, n_out, rng, extra_in=extra_in, extra_rng=cond_rng)
        self.norm = NormPoint(n_out, cond, cond_dim, cond_rng)

    def __call__(self, x, c):
        h = T.reshape(self.fc(x), (x.shape[0], -1, 1))
        y = T.relu(self.norm(h, c))
        return T.reshape(y, (x.shape[0], -1))


class Backbone(Module):
    def __init__(self, spec: BackboneSpec, seed: int = 0):
        self.spec = spec
        rng = rngmod.stream(seed, rngmod.INIT)
        cond_rng = rngmod.stream(seed, rngmod.COND_INIT)
        extra = 1 if spec.conditioning == "concat" else 0
        blocks = []
        prev, prev_extra = (spec.n_bins if spec.family == "mlp" else 1), 0
        for w in spec.widths:
            if spec.family == "resnet":
                b = ResBlock(prev, w, spec.kernel, spec.conditioning, spec.cond_dim, rng, cond_rng, prev_extra)
            elif spec.family == "conv":
                b = ConvBlock(prev, w, spec.kernel, spec.conditioning, spec.cond_dim, rng, cond_rng, prev_extra)
            else:
                b = DenseBlock(prev, w, spec.conditioning, spec.cond_dim, rng, cond_rng, prev_extra)
            blocks.append(b)
            prev, prev_extra = w, extra
        self.blocks = blocks
        self.n_features = prev + prev_extra
        self.head = Linear(prev, spec.n_classes, rng, extra_in=prev_extra, extra_rng=cond_rng)

    @property
    def conditioned(self) -> bool:
        return self.spec.conditioning != "none"

    def _check(self, x: Tensor, c) -> None:
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != self.spec.n_bins:
            raise ShapeError(f"expected profiles of shape (N, 1, {self.spec.n_bins}), got {x.shape}")
        if self.conditioned:
            if c is None:
                raise ValueError("conditioned model needs an angle input")
            if c.shape != (x.shape[0], self.spec.cond_dim):
                raise ShapeError(f"angle encoding must have shape (N, {self.spec.cond_dim})")
        elif c is not None:
            raise ValueError("unconditioned model takes no angle input")

    def features(self, x: Tensor, c: Tensor | None = None) -> Tensor:
        self._check(x, c)
        h = T.reshape(x, (x.shape[0], -1)) if self.spec.family == "mlp" else x
        for b in self.blocks:
            h = b(h, c)
        if self.spec.family != "mlp":
            h = T.mean(h, axis=2)
        return h

    def __call__(self, x: Tensor, c: Tensor | None = None) -> Tensor:
        return self.head(self.features(x, c))


class GRUCell(Module):
    """h' = (1 - z) * n + z * h with r, z gates and candidate n (reset applied to the hidden term)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        s = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.w_x = Parameter(rng.uniform(-s, s, (3 * hidden, n_in)))
        self.w_h = Parameter(rng.uniform(-s, s, (3 * hidden, hidden)))
        self.b_x = Parameter(np.zeros(3 * hidden))
        self.b_h = Parameter(np.zeros(3 * hidden))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        H = self.hidden
        gx = T.linear(x, self.w_x, self.b_x)
        gh = T.linear(h, self.w_h, self.b_h)
        r = T.sigmoid(T.add(gx[:, :H], gh[:, :H]))
        z = T.sigmoid(T.add(gx[:, H : 2 * H], gh[:, H : 2 * H]))
        n = T.tanh(T.add(gx[:, 2 * H :], T.mul(r, gh[:, 2 * H :])))
        return T.add(T.mul(T.add(1.0, T.neg(z)), n), T.mul(z, h))


class SequenceModel(Module):
    """Shared per-profile extractor, temporal aggregator, linear head."""

    def __init__(self, backbone_spec: BackboneSpec, seq_spec: SequenceSpec, seed: int = 0):
        self.spec = backbone_spec
        self.seq_spec = seq_spec
        self.backbone = Backbone(backbone_spec, seed)
        rng = rngmod.stream(seed, rngmod.INIT, 1)
        f = self.backbone.n_features
        if seq_spec.aggregator == "gru":
            self.gru = GRUCell(f, seq_spec.hidden, rng)
            self.seq_head = Linear(seq_spec.hidden, backbone_spec.n_classes, rng)
        else:
            self.seq_head = Linear(f, backbone_spec.n_classes, rng)

    @property
    def conditioned(self) -> bool:
        return self.backbone.conditioned

    def latents(self, seqs: Tensor, angles) -> Tensor:
        """Per-step extractor latents, shape (N, T, F)."""
        if seqs.ndim != 4 or seqs.shape[2] != 1:
            raise ShapeError(f"expected sequences of shape (N, T, 1, L), got {seqs.shape}")
        n, t, _, length = seqs.shape
        flat = T.reshape(seqs, (n * t, 1, length))
        c = None
        if angles is not None:
            if angles.shape[:2] != (n, t):
                raise ShapeError("angle encodings must have shape (N, T, D)")
            c = T.reshape(angles, (n * t, angles.shape[2]))
        return T.reshape(self.backbone.features(flat, c), (n, t, -1))

    def aggregate(self, lat: Tensor) -> Tensor:
        if self.seq_spec.aggregator == "mean_pool":
            return T.mean(lat, axis=1)
        h = Tensor(np.zeros((lat.shape[0], self.seq_spec.hidden)))
        for step in range(lat.shape[1]):
            h = self.gru(lat[:, step, :], h)
        return h

    def __call__(self, seqs: Tensor, angles: Tensor | None = None) -> Tensor:
        return self.seq_head(self.aggregate(self.latents(seqs, angles)))


def build_backbone(spec: BackboneSpec, seed: int = 0) -> Backbone:
    return Backbone(spec, seed)


def _as_input(a) -> Tensor | None:
    if a is None:
        return None
    return a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64))


def forward_one_view(model: Backbone, profiles, angles=None) -> Tensor:
    """Logits (N, n_classes) for profiles (N, 1, L) and optional angle encodings (N, D)."""
    return model(_as_input(profiles), _as_input(angles))


def forward_multi_view(model: SequenceModel, sequences, angles=None) -> Tensor:
    """Logits (N, n_classes) for sequences (N, T, 1, L) and optional encodings (N, T, D)."""
    seqs = _as_input(sequences)
    ang = _as_input(angles)
    if model.conditioned != (ang is not None):
        raise ValueError("angle input must be given exactly when the model is conditioned")
    return model(seqs, ang)


def build_model(spec: BackboneSpec, seq_spec: SequenceSpec | None = None, seed: int = 0):
    return Backbone(spec, seed) if seq_spec is None else SequenceModel(spec, seq_spec, seed)


def model_header(model) -> dict:
    """Topology description stored in checkpoint headers."""
    d = {"backbone": model.spec.to_dict()}
    if isinstance(model, SequenceModel):
        d["sequence"] = asdict(model.seq_spec)
    return d


def model_from_header(d: dict, seed: int = 0):
    b = dict(d["backbone"])
    b["widths"] = tuple(b["widths"])
    spec = BackboneSpec(**b)
    seq = SequenceSpec(**d["sequence"]) if "sequence" in d else None
    return build_model(spec, seq, seed)
