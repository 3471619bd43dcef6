"""On-disk dataset layout.

A dataset directory holds::

    manifest.json          class table, render params, radar position, record index
    records.bin            per record: n_bins profile values, aspect_ref, t, class_id
                           (all little-endian float32, in that order)
    trajectories/ship_NNN.csv   t,x_meas,y_meas,x_true,y_true,hdg_true
    aspect_pred.bin        optional; one little-endian float64 per record, NaN = flagged

Directories are written to a temporary sibling and renamed into place, so a
failed write never leaves a partial dataset behind.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import json
import os
import shutil
import tempfile
from pathlib import Path

import numpy as np

from .geometry import PlanarPoint
from .simulator import Dataset, DatasetConfig, TargetModel, TrajectorySample

FORMAT_VERSION = 1
TRAJ_COLUMNS = ("t", "x_meas", "y_meas", "x_true", "y_true", "hdg_true")


class DataError(ValueError):
    """Malformed or missing dataset files."""


@contextlib.contextmanager
def atomic_dir(final: Path):
    """Yield a temp directory that replaces ``final`` only if the block succeeds."""
    final = Path(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}.", dir=final.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def encode_records(ds: Dataset) -> bytes:
    m, n_bins = ds.profiles.shape
    block = np.empty((m, n_bins + 3), dtype="<f4")
    block[:, :n_bins] = ds.profiles
    block[:, n_bins] = ds.aspect_ref
    block[:, n_bins + 1] = ds.t
    block[:, n_bins + 2] = ds.class_id
    return block.tobytes()


def decode_records(buf: bytes, n_bins: int) -> np.ndarray:
    width = (n_bins + 3) * 4
    if len(buf) % width:
        raise DataError(f"records.bin size {len(buf)} is not a multiple of {width}")
    return np.frombuffer(buf, dtype="<f4").reshape(-1, n_bins + 3)


def write_trajectory_csv(path: Path, samples) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_COLUMNS)
        for s in samples:
            w.writerow([repr(float(v)) for v in (s.t, s.meas[0], s.meas[1], s.pos[0], s.pos[1], s.hdg_true)])


def read_trajectory_csv(path) -> list[TrajectorySample]:
    """Parse a trajectory CSV; raises DataError on missing columns or bad numbers."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRAJ_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {', '.join(missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                v = {c: float(row[c]) for c in TRAJ_COLUMNS}
            except (TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: non-numeric field") from None
            out.append(
                TrajectorySample(
                    t=v["t"],
                    pos=PlanarPoint(v["x_true"], v["y_true"]),
                    meas=PlanarPoint(v["x_meas"], v["y_meas"]),
                    hdg_true=v["hdg_true"],
                )
            )
    return out


def manifest_dict(ds: Dataset) -> dict:
    cfg = ds.config
    return {
        "format_version": FORMAT_VERSION,
        "config": dataclasses.asdict(cfg),
        "radar": [cfg.radar_x, cfg.radar_y],
        "render": dataclasses.asdict(cfg.render_params()),
        "classes": [t.to_dict() for t in ds.targets],
        "n_records": len(ds),
        "record_layout": {
            "dtype": "<f4",
            "fields": ["profile[n_bins]", "aspect_ref", "t", "class_id"],
        },
        # exact float64 copies of t / aspect_ref; records.bin only carries float32
        "records": [
            [int(s), int(j), float(t), float(a)]
            for s, j, t, a in zip(ds.ship_id, ds.traj_id, ds.t, ds.aspect_ref)
        ],
        "meta": ds.meta,
    }


def write_dataset(ds: Dataset, trajectories: dict, out) -> Path:
    out = Path(out)
    with atomic_dir(out) as tmp:
        (tmp / "manifest.json").write_text(
            json.dumps(manifest_dict(ds), indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
        (tmp / "records.bin").write_bytes(encode_records(ds))
        tdir = tmp / "trajectories"
        tdir.mkdir()
        for sid in sorted(trajectories):
            samples = [s for traj in trajectories[sid] for s in traj]
            write_trajectory_csv(tdir / f"ship_{sid:03d}.csv", samples)
        if ds.aspect_pred is not None:
            (tmp / "aspect_pred.bin").write_bytes(np.asarray(ds.aspect_pred, dtype="<f8").tobytes())
    return out


def trajectory_path(data_dir, ship_id: int) -> Path:
    return Path(data_dir) / "trajectories" / f"ship_{ship_id:03d}.csv"


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        man = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
        raw = (path / "records.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset at {path}: {exc}") from None
    if man.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported dataset format {man.get('format_version')!r}")
    cfg_d = dict(man["config"])
    cfg_d["widths"] = tuple(cfg_d["widths"])
    cfg = DatasetConfig(**cfg_d)
    block = decode_records(raw, cfg.n_bins)
    index = np.asarray(man["records"], dtype=np.float64).reshape(-1, 4)
    if len(block) != len(index) or len(block) != man["n_records"]:
        raise DataError("records.bin and manifest disagree on the record count")
    pred = None
    pred_path = path / "aspect_pred.bin"
    if pred_path.exists():
        pred = np.frombuffer(pred_path.read_bytes(), dtype="<f8").copy()
        if len(pred) != len(block):
            raise DataError("aspect_pred.bin has the wrong length")
    return Dataset(
        profiles=np.ascontiguousarray(block[:, : cfg.n_bins]),
        class_id=block[:, cfg.n_bins + 2].astype(np.int64),
        t=index[:, 2].copy(),
        aspect_ref=index[:, 3].copy(),
        ship_id=index[:, 0].astype(np.int64),
        traj_id=index[:, 1].astype(np.int64),
        targets=[TargetModel.from_dict(d) for d in man["classes"]],
        config=cfg,
        aspect_pred=pred,
        meta=man.get("meta", {}),
    )


def copy_dataset(src, dst, aspect_pred: np.ndarray, meta: dict) -> Path:
    """Copy ``src`` to ``dst`` with predicted aspects attached; ``src`` is left untouched."""
    ds = read_dataset(src)
    ds.aspect_pred = np.asarray(aspect_pred, dtype=np.float64)
    ds.meta = {**ds.meta, **meta}
    src = Path(src)
    with atomic_dir(Path(dst)) as tmp:
        (tmp / "manifest.json").write_text(
            json.dumps(manifest_dict(ds), indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
        shutil.copyfile(src / "records.bin", tmp / "records.bin")
        shutil.copytree(src / "trajectories", tmp / "trajectories")
        (tmp / "aspect_pred.bin").write_bytes(ds.aspect_pred.astype("<f8").tobytes())
    return Path(dst)
