"""Model checkpoints: ``MAGIC | u64 header length | JSON header | float64 payload``.

The header (UTF-8 JSON, sorted keys) lists every tensor with its name, shape
and offset (in float64 elements) into the little-endian payload, plus any
caller metadata such as the model spec.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Module

MAGIC = b"HRRPCKPT"


class CheckpointError(ValueError):
    pass


def state_arrays(model: Module) -> list[tuple[str, np.ndarray]]:
    out = [(f"param:{n}", p.data) for n, p in model.named_parameters()]
    out += [(f"buffer:{n}", d[k]) for n, d, k in model.named_buffers()]
    return out


def snapshot(model: Module) -> list[np.ndarray]:
    return [a.copy() for _, a in state_arrays(model)]


def restore(model: Module, arrays: list[np.ndarray]) -> None:
    params = [p for _, p in model.named_parameters()]
    buffers = [(d, k) for _, d, k in model.named_buffers()]
    if len(arrays) != len(params) + len(buffers):
        raise CheckpointError("snapshot does not match model topology")
    for p, a in zip(params, arrays):
        if p.data.shape != a.shape:
            raise CheckpointError("snapshot shape mismatch")
        p.data = a.copy()
    for (d, k), a in zip(buffers, arrays[len(params):]):
        d[k] = a.copy()


def encode(model: Module, meta: dict) -> bytes:
    entries, offset, chunks = [], 0, []
    for name, arr in state_arrays(model):
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = json.dumps({"tensors": entries, "n_values": offset, "meta": meta}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode(buf: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16 : 16 + hlen].decode("utf-8"))
    payload = np.frombuffer(buf[16 + hlen :], dtype="<f8")
    if payload.size != header["n_values"]:
        raise CheckpointError("checkpoint payload is truncated")
    arrays = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = payload[e["offset"] : e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return header, arrays


def load_into(model: Module, arrays: dict[str, np.ndarray]) -> None:
    expected = [name for name, _ in state_arrays(model)]
    if sorted(expected) != sorted(arrays):
        raise CheckpointError("checkpoint topology does not match the model")
    for n, p in model.named_parameters():
        a = arrays[f"param:{n}"]
        if a.shape != p.data.shape:
            raise CheckpointError(f"shape mismatch for {n}")
        p.data = a.copy()
    for n, d, k in model.named_buffers():
        d[k] = arrays[f"buffer:{n}"].copy()


def read_header(path) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes())
