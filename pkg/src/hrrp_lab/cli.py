"""Command line entry point: ``hrrp-lab <command> ...``.

Commands
    gen-data        simulate a dataset directory
    attach-aspects  copy a dataset with causal Kalman aspect estimates attached
    kalman-eval     score the aspect estimator on trajectory CSVs
    train           train one run or a grid of runs, append result rows
    eval            score a checkpoint on one split, append a result row
    report          pivot result rows into a markdown table and a bar chart

Every command writes a run manifest next to its main output
(``<out>.run.json``) with the SHA-256 of its inputs and outputs.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .datasets import (
    DataError,
    atomic_dir,
    atomic_write_bytes,
    atomic_write_text,
    copy_dataset,
    read_dataset,
    read_trajectory_csv,
    write_dataset,
)
from .geometry import GeometryError, PlanarPoint
from .kalman import KfParams, OrderingError, evaluate_estimator, segment_trajectory, windows
from .nn.checkpoint import CheckpointError
from .pipeline import (
    SPLITS,
    DivergenceError,
    TrainConfig,
    attach_predicted_aspects,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .simulator import DatasetConfig, SimulationError, gen_dataset

log = logging.getLogger("hrrp_lab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

RESULT_COLUMNS = (
    "run_id", "mode", "family", "conditioning", "angle_source", "aggregator", "seed", "epochs",
    "best_epoch", "split", "accuracy", "macro_f1", "metrics", "checkpoint",
)

CONDITIONING_ORDER = ("none", "concat", "film", "cbn")
FAMILY_ORDER = ("mlp", "conv", "resnet")


class UsageError(ValueError):
    """Arguments that parse but make no sense together."""


# ---------------------------------------------------------------------------
# hashing and run manifests


def sha256_path(path) -> str:
    """Digest of a file, or of a directory tree (relative paths and contents, sorted)."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(f.relative_to(path).as_posix().encode("utf-8") + b"\0")
            h.update(hashlib.sha256(f.read_bytes()).digest())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    command: str
    config: str | None
    seed: int | None
    inputs: dict[str, str]
    outputs: dict[str, str]
    duration_s: float
    version: str = __version__

    @classmethod
    def build(cls, command, config, seed, inputs, outputs, started) -> "RunManifest":
        return cls(
            command=command,
            config=None if config is None else str(config),
            seed=seed,
            inputs={str(p): sha256_path(p) for p in inputs},
            outputs={str(p): sha256_path(p) for p in outputs},
            duration_s=round(time.monotonic() - started, 3),
        )

    def write(self, primary_out) -> Path:
        path = Path(str(primary_out).rstrip("/") + ".run.json")
        atomic_write_text(path, json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# result rows


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_metrics(csv_path: Path, run_id: str, split: str, report) -> str:
    """Full per-class report next to a results CSV; returns its path relative to the CSV."""
    rel = f"metrics/{run_id}-{split}.json"
    atomic_write_text(Path(csv_path).parent / rel, json.dumps(report.to_dict(), indent=1) + "\n")
    return rel


def result_row(cfg: TrainConfig, report, split: str, run_id: str, checkpoint: str, best_epoch="",
               metrics: str = "") -> dict:
    return {
        "run_id": run_id,
        "mode": cfg.mode,
        "family": cfg.family,
        "conditioning": cfg.conditioning,
        "angle_source": cfg.effective_angle_source,
        "aggregator": cfg.aggregator if cfg.mode == "multi_view" else "",
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "best_epoch": best_epoch,
        "split": split,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "metrics": metrics,
        "checkpoint": checkpoint,
    }


def append_rows(path: Path, rows: list[dict]) -> None:
    """Append to a results CSV, writing the header on first use; the file is replaced atomically."""
    path = Path(path)
    old = ""
    if path.exists():
        old = path.read_text(encoding="utf-8")
        header = old.splitlines()[0] if old else ""
        if header and header != ",".join(RESULT_COLUMNS):
            raise DataError(f"{path} has unexpected columns: {header}")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    if not old:
        w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r[k]) for k in RESULT_COLUMNS})
    atomic_write_text(path, old + buf.getvalue())


def read_rows(path) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path} has no result rows")
    missing = {"family", "conditioning", "accuracy", "macro_f1"} - set(rows[0])
    if missing:
        raise DataError(f"{path} lacks columns {sorted(missing)}")
    return rows


# ---------------------------------------------------------------------------
# report table


def _row_label(r: dict) -> str:
    cond = r["conditioning"]
    if cond != "none" and r.get("angle_source") == "predicted":
        return f"{cond} (pred)"
    return cond


def _col_label(r: dict) -> str:
    if r.get("mode") == "multi_view":
        return f"{r['family']}+{r.get('aggregator') or 'gru'}"
    return r["family"]


def _order(labels, ref):
    def key(s):
        base = s.split(" ")[0].split("+")[0]
        return (ref.index(base) if base in ref else len(ref), s)

    return sorted(set(labels), key=key)


def pivot(rows: list[dict]) -> tuple[list[str], list[str], dict]:
    """Mean test accuracy and macro-F1 in percent per (row label, column label)."""
    cells: dict[tuple[str, str], list[tuple[float, float]]] = {}
    for r in rows:
        if r.get("split", "test") != "test":
            continue
        cells.setdefault((_row_label(r), _col_label(r)), []).append((float(r["accuracy"]), float(r["macro_f1"])))
    if not cells:
        raise DataError("no test-split rows to report")
    row_labels = _order([k[0] for k in cells], CONDITIONING_ORDER)
    col_labels = _order([k[1] for k in cells], FAMILY_ORDER)
    table = {k: (100 * float(np.mean([a for a, _ in v])), 100 * float(np.mean([f for _, f in v])), len(v))
             for k, v in cells.items()}
    return row_labels, col_labels, table


def markdown_table(rows: list[dict]) -> str:
    """Conditioning x backbone table of ``acc | macro-F1`` cells.

    In each column the largest accuracy and the largest macro-F1 are bolded
    separately. Ties are judged on the printed one-decimal values, and every
    tied cell is bolded.
    """
    row_labels, col_labels, table = pivot(rows)
    best = {}
    for c in col_labels:
        vals = [table[(r, c)] for r in row_labels if (r, c) in table]
        best[c] = (max(round(v[0], 1) for v in vals), max(round(v[1], 1) for v in vals))

    def cell(r, c):
        if (r, c) not in table:
            return "n/a"
        acc, f1, _ = table[(r, c)]
        a, f = f"{acc:.1f}", f"{f1:.1f}"
        if round(acc, 1) == best[c][0]:
            a = f"**{a}**"
        if round(f1, 1) == best[c][1]:
            f = f"**{f}**"
        return f"{a} \\| {f}"

    lines = [
        "| conditioning | " + " | ".join(col_labels) + " |",
        "|" + "---|" * (len(col_labels) + 1),
    ]
    for r in row_labels:
        lines.append(f"| {r} | " + " | ".join(cell(r, c) for c in col_labels) + " |")
    n_runs = sorted({v[2] for v in table.values()})
    note = f"Test accuracy \\| macro-F1 in %, mean over {'/'.join(map(str, n_runs))} run(s) per cell."
    return "\n".join(lines) + "\n\n" + note + "\n"


# ---------------------------------------------------------------------------
# commands


def _seeded_dataset_config(args) -> DatasetConfig:
    cfg = cfgmod.load_file(DatasetConfig, args.config)[0] if args.config else DatasetConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    started = time.monotonic()
    cfg = _seeded_dataset_config(args)
    ds, trajs = gen_dataset(cfg)
    out = write_dataset(ds, trajs, args.out)
    outputs = [out]
    if args.figure:
        from .plots import lrp_vs_aspect

        outputs.append(lrp_vs_aspect(ds.targets, cfg.render_params(), args.figure))
    log.info("wrote %d records of %d classes to %s", len(ds), ds.n_classes, out)
    inputs = [args.config] if args.config else []
    RunManifest.build("gen-data", args.config, cfg.seed, inputs, outputs, started).write(out)
    return EXIT_OK


def cmd_attach_aspects(args) -> int:
    started = time.monotonic()
    data = Path(args.data)
    if data.resolve() == Path(args.out).resolve():
        raise UsageError("--out must differ from --data; inputs are never modified")
    ds = read_dataset(data)
    sigma = ds.config.meas_sigma if args.meas_sigma is None else args.meas_sigma
    params = KfParams.for_noise(sigma, q=args.q, p0=args.p0)
    pred = attach_predicted_aspects(ds, data, params, warmup=args.warmup, heading_mode=args.heading_mode,
                                    context=args.context)
    n_flag = int(np.sum(~np.isfinite(pred)))
    meta = {"kalman": {"q": params.q, "r": params.r, "p0": params.p0, "warmup": args.warmup,
                       "heading_mode": args.heading_mode, "context": args.context, "flagged": n_flag}}
    out = copy_dataset(data, args.out, pred, meta)
    log.info("attached aspects to %d records, %d flagged", len(pred) - n_flag, n_flag)
    RunManifest.build("attach-aspects", None, None, [data], [out], started).write(out)
    return EXIT_OK


def _trajectory_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if (path / "trajectories").is_dir():
        path = path / "trajectories"
    files = sorted(path.glob("*.csv")) if path.is_dir() else []
    if not files:
        raise DataError(f"no trajectory CSV files under {path}")
    return files


def cmd_kalman_eval(args) -> int:
    started = time.monotonic()
    if args.k_min < 1 or args.k_max < args.k_min:
        raise UsageError(f"need 1 <= --k-min <= --k-max, got {args.k_min} and {args.k_max}")
    window = args.window or args.k_max
    if window < args.k_max:
        raise UsageError("--window must be at least --k-max")
    files = _trajectory_files(Path(args.trajectories))
    segs, origin = [], []
    for f in files:
        for seg in segment_trajectory(read_trajectory_csv(f)):
            for w in windows([seg], window):
                segs.append(w)
                origin.append(f.name)
    if not segs:
        raise DataError(f"no gap-free stretch of {window} samples in the input")
    params = KfParams.for_noise(args.meas_sigma, q=args.q, p0=args.p0)
    radar = PlanarPoint(args.radar_x, args.radar_y)
    rep = evaluate_estimator(segs, radar, params, range(args.k_min, args.k_max + 1), args.heading_mode)
    out = Path(args.out)
    report = rep.to_dict(degrees=True)
    report["params"] = {"q": params.q, "r": params.r, "p0": params.p0, "radar": list(radar),
                        "window": window, "heading_mode": args.heading_mode}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment", "file", "t_start", "score_deg", *(f"err_k{k}_deg" for k in rep.k_values)])
    for row, i in enumerate(rep.segment_index):
        w.writerow([i, origin[i], repr(segs[i][0].t), repr(math.degrees(rep.segment_scores[row])),
                    *(repr(math.degrees(e)) for e in rep.errors[row])])
    from .plots import kalman_error_vs_k

    with atomic_dir(out) as tmp:
        (tmp / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        (tmp / "segments.csv").write_text(buf.getvalue(), encoding="utf-8")
        kalman_error_vs_k(report, tmp / "error_vs_k.png")
    print(f"segments {report['n_segments']}  median {report['median']:.3f} deg  "
          f"worst-decile mean {report['worst_decile_mean']:.3f} deg")
    RunManifest.build("kalman-eval", None, None, files, [out], started).write(out)
    return EXIT_OK


def _train_one(cfg: TrainConfig, data_dir: str):
    """Worker body shared by the inline and the process-pool paths."""
    ds = read_dataset(data_dir)
    res = train(cfg, ds)
    buf = save_checkpoint(res, cfg, None)
    return res.test_report, res.best_epoch, res.history, buf


def _train_configs(args) -> list[TrainConfig]:
    configs = cfgmod.load_file(TrainConfig, args.config, TrainConfig.GRID) if args.config else [TrainConfig()]
    if args.seed is not None:
        text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
        seed_entry = cfgmod.parse_kv(text).get("seed")
        if seed_entry and "|" in seed_entry[0]:
            raise UsageError("--seed conflicts with a seed grid in the config")
        configs = [dataclasses.replace(c, seed=args.seed) for c in configs]
    return configs


def cmd_train(args) -> int:
    started = time.monotonic()
    configs = _train_configs(args)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    read_dataset(args.data)  # fail fast on a bad dataset
    out = Path(args.out)
    if args.jobs == 1 or len(configs) == 1:
        results = [_train_one(c, args.data) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_one, configs, [args.data] * len(configs)))
    rows, outputs = [], []
    for cfg, (report, best_epoch, history, buf) in zip(configs, results):
        run_id = cfg.config_hash()
        ck = out / "checkpoints" / f"{run_id}.ckpt"
        atomic_write_bytes(ck, buf)
        atomic_write_text(out / "configs" / f"{run_id}.cfg", cfg.to_text())
        atomic_write_text(out / "history" / f"{run_id}.json", json.dumps(history, indent=1) + "\n")
        metrics = write_metrics(out / "results.csv", run_id, "test", report)
        rows.append(result_row(cfg, report, "test", run_id, ck.relative_to(out).as_posix(), best_epoch, metrics))
        outputs.append(ck)
        print(f"{run_id}  {cfg.mode} {cfg.family} {cfg.conditioning}/{cfg.effective_angle_source} "
              f"seed {cfg.seed}: acc {report.accuracy:.4f} macro-F1 {report.macro_f1:.4f}")
    append_rows(out / "results.csv", rows)
    seed = configs[0].seed if len({c.seed for c in configs}) == 1 else None
    inputs = [args.data] + ([args.config] if args.config else [])
    RunManifest.build("train", args.config, seed, inputs, [out / "results.csv", *outputs], started).write(out)
    return EXIT_OK


def cmd_eval(args) -> int:
    started = time.monotonic()
    model, cfg = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.data)
    src = args.angle_source
    if src is not None and cfg.conditioning == "none" and src != "none":
        raise UsageError("an unconditioned checkpoint takes no angle source")
    if src == "none" and cfg.conditioning != "none":
        raise UsageError("a conditioned checkpoint needs angle source reference or predicted")
    if src is not None and src != "none":
        cfg = dataclasses.replace(cfg, angle_source=src)
    report = evaluate(model, cfg, ds, args.split)
    run_id = cfg.config_hash()
    metrics = write_metrics(Path(args.out), run_id, args.split, report)
    row = result_row(cfg, report, args.split, run_id, Path(args.checkpoint).as_posix(), metrics=metrics)
    append_rows(Path(args.out), [row])
    print(f"{args.split}: acc {report.accuracy:.4f} macro-F1 {report.macro_f1:.4f}")
    RunManifest.build("eval", None, cfg.seed, [args.checkpoint, args.data], [args.out], started).write(args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    started = time.monotonic()
    rows = read_rows(args.results_csv)
    md = markdown_table(rows)
    out = Path(args.out_md)
    atomic_write_text(out, md)
    fig = Path(args.figure) if args.figure else out.with_suffix(".png")
    from .plots import results_bars

    row_labels, col_labels, table = pivot(rows)
    bars = {r: {c: table[(r, c)][0] for c in col_labels if (r, c) in table} for r in row_labels}
    results_bars(bars, fig)
    sys.stdout.write(md)
    RunManifest.build("report", None, None, [args.results_csv], [out, fig], started).write(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hrrp-lab", description="Aspect-conditioned HRRP recognition experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="simulate a dataset")
    g.add_argument("--config", help="key = value dataset config (defaults if omitted)")
    g.add_argument("--out", required=True, help="dataset directory to create")
    g.add_argument("--seed", type=int, help="overrides the config seed")
    g.add_argument("--figure", help="also plot noiseless LRP against aspect for every class")
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("attach-aspects", help="copy a dataset with Kalman aspect estimates")
    a.add_argument("--data", required=True, help="dataset directory to read")
    a.add_argument("--out", required=True, help="new dataset directory; a copy with estimates attached")
    a.add_argument("--q", type=float, default=0.05, help="white-acceleration density [m^2/s^3]")
    a.add_argument("--p0", type=float, default=10.0, help="initial position variance [m^2]")
    a.add_argument("--meas-sigma", type=float, help="measurement noise [m]; dataset value if omitted")
    a.add_argument("--warmup", type=int, default=2, help="leading filter steps flagged per segment")
    a.add_argument("--heading-mode", choices=("velocity", "positions"), default="velocity")
    a.add_argument("--context", type=int, help="estimate each record from only its last K samples")
    a.set_defaults(func=cmd_attach_aspects)

    k = sub.add_parser("kalman-eval", help="aspect error against context length")
    k.add_argument("--trajectories", required=True, help="CSV file, directory of CSVs, or dataset directory")
    k.add_argument("--radar-x", type=float, default=0.0)
    k.add_argument("--radar-y", type=float, default=0.0)
    k.add_argument("--k-min", type=int, default=2)
    k.add_argument("--k-max", type=int, default=10)
    k.add_argument("--window", type=int, help="samples per scored segment (default: k-max)")
    k.add_argument("--meas-sigma", type=float, default=10.0, help="measurement noise [m]")
    k.add_argument("--q", type=float, default=0.05)
    k.add_argument("--p0", type=float, default=10.0)
    k.add_argument("--heading-mode", choices=("velocity", "positions"), default="velocity")
    k.add_argument("--out", required=True, help="report directory to create")
    k.set_defaults(func=cmd_kalman_eval)

    t = sub.add_parser("train", help="train one configuration or a grid")
    t.add_argument("--config", help="key = value train config; 'a | b' on a grid key expands the grid")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="run directory; results.csv is appended")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--split", choices=SPLITS, default="test")
    e.add_argument("--angle-source", choices=("none", "reference", "predicted"))
    e.add_argument("--out", required=True, help="results CSV to append to")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="markdown table and bar chart from result rows")
    r.add_argument("--results-csv", required=True)
    r.add_argument("--out-md", required=True)
    r.add_argument("--figure", help="bar chart path (default: next to the markdown file)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"hrrp-lab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, SimulationError, GeometryError, OrderingError) as exc:
        print(f"hrrp-lab {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"hrrp-lab {args.command}: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # invalid option combinations surface as ValueError from the config dataclasses
        print(f"hrrp-lab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
