"""Angle encoding and the three ways of injecting it: concat, FiLM and CBN."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import BatchNorm1d, Linear, Module
from .tensor import Parameter, ShapeError, Tensor

COND_DIM = 4


def encode_angle(phi) -> np.ndarray:
    """(sin, cos, sin 2phi, cos 2phi) per angle; a scalar gives one row of shape (4,)."""
    p = np.asarray(phi, dtype=np.float64)
    out = np.stack([np.sin(p), np.cos(p), np.sin(2 * p), np.cos(2 * p)], axis=-1)
    return out


class AffinePredictor(Module):
    """Linear map from the conditioning vector to (gamma, beta), each of width C.

    Starts at the identity modulation: zero weights, bias (1, ..., 1, 0, ..., 0).
    """

    def __init__(self, cond_dim: int, channels: int):
        self.channels = channels
        self.weight = Parameter(np.zeros((2 * channels, cond_dim)))
        self.bias = Parameter(np.concatenate([np.ones(channels), np.zeros(channels)]))

    def __call__(self, c: Tensor) -> tuple[Tensor, Tensor]:
        gb = T.linear(c, self.weight, self.bias)
        return gb[:, : self.channels], gb[:, self.channels :]


def _check_batch(x: Tensor, c: Tensor) -> None:
    if x.ndim != 3:
        raise ShapeError(f"expected a (N, C, L) feature tensor, got {x.shape}")
    if c.ndim != 2 or c.shape[0] != x.shape[0]:
        raise ShapeError(f"conditioning {c.shape} does not match batch of {x.shape}")


def concat_condition(x: Tensor, c: Tensor, proj: Linear) -> Tensor:
    """Append proj(c), broadcast along length, as channel C+1."""
    _check_batch(x, c)
    if proj.weight.shape != (1, c.shape[1]):
        raise ShapeError("concat projection must map D -> 1")
    n, _, length = x.shape
    token = T.reshape(proj(c), (n, 1, 1))
    plane = T.mul(token, np.ones((1, 1, length)))
    return T.concat([x, plane], axis=1)


def film(x: Tensor, c: Tensor, pred: AffinePredictor) -> Tensor:
    """y[n, ch, l] = gamma[n, ch] * x[n, ch, l] + beta[n, ch]."""
    _check_batch(x, c)
    n, ch, _ = x.shape
    if pred.channels != ch:
        raise ShapeError(f"predictor width {pred.channels} != {ch} channels")
    gamma, beta = pred(c)
    return T.add(T.mul(x, T.reshape(gamma, (n, ch, 1))), T.reshape(beta, (n, ch, 1)))


def cbn(x: Tensor, c: Tensor, pred: AffinePredictor, training: bool, state: dict,
        eps: float = 1e-5, momentum: float = 0.1) -> Tensor:
    """Conditional batch norm: film applied to the non-affine batch normalization of x."""
    _check_batch(x, c)
    return film(T.batchnorm(x, training, state, eps, momentum), c, pred)


class NormPoint(Module):
    """Normalization + conditioning at one injection point (applied before the nonlinearity).

    ``none``   -> BN with learned affine
    ``concat`` -> BN with learned affine, then proj(c) appended as an extra channel
    ``film``   -> BN with learned affine, then FiLM
    ``cbn``    -> BN without affine, modulated by predicted (gamma, beta)

    FiLM and CBN start as the identity modulation, so at initialization all
    three of none/film/cbn compute the same function.
    """

    def __init__(self, channels: int, conditioning: str, cond_dim: int, cond_rng: np.random.Generator,
                 eps: float = 1e-5, momentum: float = 0.1):
        if conditioning not in ("none", "concat", "film", "cbn"):
            raise ValueError(f"unknown conditioning {conditioning!r}")
        self.conditioning = conditioning
        self.bn = BatchNorm1d(channels, affine=conditioning != "cbn", eps=eps, momentum=momentum)
        if conditioning in ("film", "cbn"):
            self.pred = AffinePredictor(cond_dim, channels)
        elif conditioning == "concat":
            self.proj = Linear(cond_dim, 1, cond_rng)

    @property
    def extra_channels(self) -> int:
        return 1 if self.conditioning == "concat" else 0

    def __call__(self, x: Tensor, c: Tensor | None) -> Tensor:
        if self.conditioning == "cbn":
            return cbn(x, c, self.pred, self.training, self.bn.state, self.bn.eps, self.bn.momentum)
        y = self.bn(x)
        if self.conditioning == "film":
            return film(y, c, self.pred)
        if self.conditioning == "concat":
            return concat_condition(y, c, self.proj)
        return y
