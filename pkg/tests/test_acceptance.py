"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest -m acceptance -s``. The training criteria take
several minutes on one CPU core.
"""

import math
import time

import numpy as np
import pytest

from hrrp_lab.cli import main, sha256_path
from hrrp_lab.datasets import read_dataset, write_dataset
from hrrp_lab.geometry import TWO_PI, lrp
from hrrp_lab.kalman import KfParams, evaluate_estimator, windows
from hrrp_lab.metrics import MetricsReport
from hrrp_lab.models import (
    BackboneSpec,
    GRUCell,
    build_backbone,
    forward_one_view,
)
from hrrp_lab.nn import (
    AffinePredictor,
    BatchNorm1d,
    Conv1d,
    Linear,
    NormPoint,
    Parameter,
    Tensor,
    batchnorm,
    cbn,
    concat_condition,
    encode_angle,
    film,
    grad_check,
    softmax_cross_entropy,
)
from hrrp_lab.nn import tensor as T
from hrrp_lab.pipeline import TrainConfig, attach_predicted_aspects, train
from hrrp_lab.simulator import DatasetConfig, RenderParams, build_targets, gen_dataset, render_hrrp, ship_trajectories

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)
GRAD_TOL = 1e-4

# one-view: ambiguous preset, 10 classes, 3000 profiles
ONE_VIEW_DATA = DatasetConfig(n_classes=10, trajectories_per_class=3, seed=0)
ONE_VIEW_TRAIN = dict(family="resnet", epochs=12)

# multi-view: 1000 sequences of 10 profiles
MULTI_VIEW_DATA = DatasetConfig(n_classes=10, trajectories_per_class=10, seed=0)
MULTI_VIEW_TRAIN = dict(mode="multi_view", family="conv", aggregator="gru", epochs=30, batch_size=16, lr=0.03)


def _param(shape, seed, scale=1.0):
    return Parameter(np.random.default_rng(seed).normal(0, scale, shape))


def _perturb(module, seed, scale=0.2):
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        p.data = p.data + rng.normal(0, scale, p.shape)


def _sq(t):
    w = np.random.default_rng(99).normal(size=t.shape)
    return T.mean(T.mul(t, w))


# ---------------------------------------------------------------------------
# 1. gradients


def _layer_checks():
    rng = np.random.default_rng(0)
    lin = Linear(6, 3, rng)
    x2 = _param((5, 6), 1)
    yield "linear", lambda: _sq(lin(x2)), [x2, *lin.parameters()]
    for stride, padding in ((1, 1), (2, 0), (2, 2)):
        conv = Conv1d(3, 4, 3, rng, stride=stride, padding=padding)
        x3 = _param((2, 3, 11), 2)
        yield f"conv1d s{stride} p{padding}", (lambda c=conv, x=x3: _sq(c(x))), [x3, *conv.parameters()]
    # shift away from the kink so the difference quotient is well defined
    xr = Parameter(np.random.default_rng(3).choice([-1, 1], (4, 6)) * np.random.default_rng(4).uniform(0.1, 1, (4, 6)))
    yield "relu", lambda: _sq(T.relu(xr)), [xr]
    xs = _param((4, 6), 5)
    yield "sigmoid", lambda: _sq(T.sigmoid(xs)), [xs]
    yield "tanh", lambda: _sq(T.tanh(xs)), [xs]
    for training in (True, False):
        bn = BatchNorm1d(3)
        bn.state["running_var"] = np.array([0.5, 1.5, 2.0])
        bn.train(training)
        _perturb(bn, 6)
        xb = _param((4, 3, 5), 7)
        yield f"batchnorm {'train' if training else 'eval'}", (lambda b=bn, x=xb: _sq(b(x))), [xb, *bn.parameters()]
    for cond in ("none", "concat", "film", "cbn"):
        point = NormPoint(3, cond, 4, np.random.default_rng(8))
        _perturb(point, 9, 0.3)
        xn, cn = _param((4, 3, 6), 10), _param((4, 4), 11)
        yield f"norm point {cond}", (lambda p=point, x=xn, c=cn: _sq(p(x, c))), [xn, cn, *point.parameters()]
    cell = GRUCell(3, 4, np.random.default_rng(12))
    xg = _param((2, 3, 3), 13)

    def gru_loss():
        h = Tensor(np.zeros((2, 4)))
        for step in range(3):
            h = cell(xg[:, step, :], h)
        return _sq(h)

    yield "gru over 3 steps", gru_loss, [xg, *cell.parameters()]
    logits = _param((6, 4), 14)
    yield "weighted cross-entropy", lambda: softmax_cross_entropy(logits, [0, 1, 2, 3, 1, 0], [0.5, 2.0, 1.0, 1.5]), [logits]


def _backbone_checks():
    for family in ("mlp", "conv", "resnet"):
        for cond in ("concat", "film", "cbn"):
            m = build_backbone(BackboneSpec(family, (3, 4), 3, cond, 3, 16), seed=1)
            _perturb(m, 3)
            x = np.random.default_rng(0).random((4, 1, 16))
            c = Tensor(encode_angle(np.random.default_rng(1).uniform(0, TWO_PI, 4)), requires_grad=True)
            yield f"{family} {cond}", (lambda m=m, x=x, c=c: softmax_cross_entropy(m(Tensor(x), c), [0, 1, 2, 1])), \
                m.parameters() + [c]


def test_c1_gradient_integrity(verdict):
    t0 = time.perf_counter()
    errors = {}
    for name, loss, inputs in _layer_checks():
        errors[f"layer {name}"] = grad_check(loss, inputs)
    for name, loss, inputs in _backbone_checks():
        errors[f"backbone {name}"] = grad_check(loss, inputs, max_entries=12)
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] <= GRAD_TOL and elapsed < 60
    verdict(1, "gradient integrity", ok,
            f"{len(errors)} checks, max rel err {errors[worst]:.2e} ({worst}), tol {GRAD_TOL:g}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. conditioning identities


def test_c2_conditioning_identities(verdict):
    rng = np.random.default_rng(0)
    results = {}
    x = Tensor(rng.normal(size=(3, 5, 7)))
    c = Tensor(rng.normal(size=(3, 4)))
    results["film identity"] = np.array_equal(film(x, c, AffinePredictor(4, 5)).data, x.data)

    fresh = lambda: {"running_mean": np.zeros(5), "running_var": np.ones(5)}  # noqa: E731
    a = cbn(x, c, AffinePredictor(4, 5), True, fresh()).data
    b = batchnorm(x, True, fresh()).data
    results["cbn reduces to bn"] = np.array_equal(a, b)

    proj = Linear(4, 1, rng)
    proj.weight.data[:] = 0.0
    y = concat_condition(x, c, proj).data
    results["concat zero projection"] = np.array_equal(y[:, :5], x.data) and np.all(y[:, 5] == 0.0)

    prof = rng.random((5, 1, 32))
    ang = encode_angle(rng.uniform(0, TWO_PI, 5))
    same = True
    for family in ("mlp", "conv", "resnet"):
        for cond in ("film", "cbn"):
            for training in (True, False):
                base = build_backbone(BackboneSpec(family, (4, 6), 3, "none", 3, 32), seed=7).train(training)
                m = build_backbone(BackboneSpec(family, (4, 6), 3, cond, 3, 32), seed=7).train(training)
                same &= np.array_equal(forward_one_view(m, prof, ang).data, forward_one_view(base, prof).data)
        base = build_backbone(BackboneSpec(family, (4, 6), 3, "none", 3, 32), seed=7).eval()
        m = build_backbone(BackboneSpec(family, (4, 6), 3, "concat", 3, 32), seed=7).eval()
        for name, p in m.named_parameters():
            if name.endswith("proj.weight") or name.endswith("proj.bias"):
                p.data[:] = 0.0
        same &= np.array_equal(forward_one_view(m, prof, ang).data, forward_one_view(base, prof).data)
    results["identity-start logits"] = bool(same)

    ok = all(results.values())
    failed = [k for k, v in results.items() if not v]
    verdict(2, "conditioning identities", ok, f"{len(results)} identities exact" if ok else f"not exact: {failed}")
    assert ok


# ---------------------------------------------------------------------------
# 3. metrics


def _brute_force(cm):
    k = len(cm)
    f1s = []
    for c in range(k):
        tp = cm[c][c]
        fp = sum(cm[r][c] for r in range(k)) - tp
        fn = sum(cm[c]) - tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
    total = sum(map(sum, cm))
    acc = sum(cm[c][c] for c in range(k)) / total if total else 0.0
    macro = 0.0
    for f in f1s:
        macro += f
    return acc, f1s, macro / k


def test_c3_metrics_oracle(verdict):
    rng = np.random.default_rng(2024)
    mismatches, largest = 0, 0
    for _ in range(1000):
        k = int(rng.integers(2, 21))
        largest = max(largest, k)
        cm = rng.integers(0, 8, (k, k)) * (rng.random((k, k)) < 0.6)
        acc, f1s, macro = _brute_force(cm.tolist())
        r = MetricsReport.from_confusion(cm)
        mismatches += not (r.accuracy == acc and r.f1.tolist() == f1s and r.macro_f1 == macro)
    ok = mismatches == 0
    verdict(3, "metrics oracle", ok, f"{mismatches} mismatches over 1000 matrices up to {largest} classes")
    assert ok


# ---------------------------------------------------------------------------
# 4 and 5. Kalman aspect estimation


def _segments(cfg):
    return windows([tr for c in range(cfg.n_classes) for tr in ship_trajectories(cfg, c)], 10)


def test_c4_kalman_noiseless(verdict):
    # no measurement noise, straight tracks: the constant-velocity model is exact
    cfg = DatasetConfig(n_classes=10, trajectories_per_class=10, meas_sigma=0.0, turn_rate_max_deg=0.0, seed=4)
    segs = _segments(cfg)
    rep = evaluate_estimator(segs, cfg.radar, KfParams.for_noise(0.0), k_range=range(3, 11))
    med = math.degrees(float(np.median(rep.errors)))
    ok = len(rep.segment_scores) >= 1000 and med < 0.2
    verdict(4, "kalman noiseless", ok, f"median {med:.2e} deg over {len(rep.segment_scores)} segments (< 0.2)")
    assert ok


def test_c5_kalman_noisy(verdict):
    t0 = time.perf_counter()
    cfg = DatasetConfig(n_classes=10, trajectories_per_class=100, seed=5)
    segs = _segments(cfg)
    rep = evaluate_estimator(segs, cfg.radar, KfParams.for_noise(cfg.meas_sigma))
    elapsed = time.perf_counter() - t0
    d = rep.to_dict()
    ok = (d["n_segments"] >= 10_000 and d["median"] <= 6.0 and d["worst_decile_mean"] <= 25.0
          and d["per_k_mean"][-1] <= d["per_k_mean"][0] and elapsed < 120)
    verdict(5, "kalman noisy", ok,
            f"{d['n_segments']} segments, median {d['median']:.2f} deg (<= 6), worst decile {d['worst_decile_mean']:.2f}"
            f" deg (<= 25), mean k=10 {d['per_k_mean'][-1]:.2f} vs k=2 {d['per_k_mean'][0]:.2f}, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 6 to 8. training effects


@pytest.fixture(scope="module")
def one_view_data():
    ds, _ = gen_dataset(ONE_VIEW_DATA)
    return ds


@pytest.fixture(scope="module")
def multi_view_data(tmp_path_factory):
    ds, trajs = gen_dataset(MULTI_VIEW_DATA)
    d = tmp_path_factory.mktemp("mv") / "ds"
    write_dataset(ds, trajs, d)
    ds = read_dataset(d)
    ds.aspect_pred = attach_predicted_aspects(ds, d)
    return ds


def _accuracies(ds, **kw):
    """Test accuracy in percent for each seed, and the slowest run in seconds."""
    accs, slowest = [], 0.0
    for seed in SEEDS:
        t0 = time.perf_counter()
        accs.append(100 * train(TrainConfig(seed=seed, **kw), ds).test_report.accuracy)
        slowest = max(slowest, time.perf_counter() - t0)
    return accs, slowest


@pytest.fixture(scope="module")
def one_view_results(one_view_data):
    runs = {
        "none": _accuracies(one_view_data, conditioning="none", angle_source="none", **ONE_VIEW_TRAIN),
        "cbn": _accuracies(one_view_data, conditioning="cbn", **ONE_VIEW_TRAIN),
        "film": _accuracies(one_view_data, conditioning="film", **ONE_VIEW_TRAIN),
    }
    return {k: v[0] for k, v in runs.items()}, max(v[1] for v in runs.values())


def test_c6_one_view_conditioning_benefit(verdict, one_view_results):
    accs, slowest = one_view_results
    base, cbn_acc, film_acc = (float(np.mean(accs[k])) for k in ("none", "cbn", "film"))
    ok = cbn_acc - base >= 3 and film_acc - base >= 3 and slowest <= 600
    verdict(6, "one-view conditioning benefit", ok,
            f"resnet none {base:.1f}%, cbn {cbn_acc:.1f}% ({cbn_acc - base:+.1f}), film {film_acc:.1f}%"
            f" ({film_acc - base:+.1f}), need +3; slowest run {slowest:.0f}s")
    assert ok


def test_every_conditioned_seed_beats_every_unconditioned_seed(one_view_results):
    accs, _ = one_view_results
    assert min(accs["cbn"] + accs["film"]) > max(accs["none"])


@pytest.fixture(scope="module")
def multi_view_results(multi_view_data):
    runs = {
        "none": dict(conditioning="none", angle_source="none"),
        "reference": dict(conditioning="cbn", angle_source="reference"),
        "predicted": dict(conditioning="cbn", angle_source="predicted"),
    }
    return {k: float(np.mean(_accuracies(multi_view_data, **kw, **MULTI_VIEW_TRAIN)[0])) for k, kw in runs.items()}


def test_c7_multi_view_benefit(verdict, multi_view_results):
    r = multi_view_results
    ok = r["reference"] - r["none"] >= 3
    verdict(7, "multi-view benefit", ok,
            f"gru none {r['none']:.1f}%, cbn {r['reference']:.1f}% ({r['reference'] - r['none']:+.1f}), need +3")
    assert ok


def test_c8_predicted_angle_robustness(verdict, multi_view_results):
    r = multi_view_results
    loss = r["reference"] - r["predicted"]
    ok = loss <= 2
    verdict(8, "predicted-angle robustness", ok,
            f"cbn reference {r['reference']:.1f}%, predicted {r['predicted']:.1f}%, loss {loss:.1f} points (<= 2)")
    assert ok


# ---------------------------------------------------------------------------
# 9. simulator geometry


def test_c9_simulator_geometry(verdict):
    targets = build_targets(DatasetConfig(n_classes=10, seed=9)) + build_targets(
        DatasetConfig(n_classes=10, preset="diverse", seed=9))
    params = RenderParams(n_bins=128, delta_r=2.0)
    grid = np.arange(32) * TWO_PI / 32
    worst_period, worst_law = 0.0, 0.0
    for t in targets:
        for phi in grid:
            a = lrp(render_hrrp(t, phi, params), params.delta_r)
            b = lrp(render_hrrp(t, phi + math.pi, params), params.delta_r)
            law = abs(t.length * math.cos(phi)) + abs(t.width * math.sin(phi))
            worst_period = max(worst_period, abs(a - b))
            worst_law = max(worst_law, abs(a - law))
    ok = worst_period <= 2 * params.delta_r and worst_law <= 3 * params.delta_r
    verdict(9, "simulator geometry", ok,
            f"{len(targets)} targets, max |LRP(phi) - LRP(phi+pi)| {worst_period:.2f} m (<= 4),"
            f" max extent-law gap {worst_law:.2f} m (<= 6)")
    assert ok


# ---------------------------------------------------------------------------
# 10. reproducibility


def _run_twice(tmp_path, build):
    """Run ``build(root)`` twice at the same path, moving the first result aside."""
    root = tmp_path / "run"
    root.mkdir()
    build(root)
    first = root.rename(tmp_path / "first")
    root.mkdir()
    build(root)
    return first, root


def test_c10_reproducibility(verdict, tmp_path):
    (tmp_path / "data.cfg").write_text("n_classes = 4\ntrajectories_per_class = 2\nsamples_per_trajectory = 30\n")
    common = "family = conv\nwidths = 4, 4\nkernel = 3\nepochs = 2\nbatch_size = 8\nconditioning = cbn\n"
    (tmp_path / "one.cfg").write_text(common + "angle_source = reference | predicted\n")
    (tmp_path / "multi.cfg").write_text(common + "mode = multi_view\nseq_len = 5\naggregator = gru | mean_pool\n")
    cfg = str(tmp_path / "data.cfg")

    def pipeline(root):
        r = str(root)
        assert main(["gen-data", "--config", cfg, "--out", f"{r}/ds", "--seed", "11"]) == 0
        assert main(["attach-aspects", "--data", f"{r}/ds", "--out", f"{r}/pred"]) == 0
        assert main(["kalman-eval", "--trajectories", f"{r}/ds", "--out", f"{r}/kal"]) == 0
        for tcfg in ("one.cfg", "multi.cfg"):
            assert main(["train", "--config", str(tmp_path / tcfg), "--data", f"{r}/pred", "--out", f"{r}/runs",
                         "--seed", "3"]) == 0
        for ck in sorted((root / "runs" / "checkpoints").iterdir()):
            assert main(["eval", "--checkpoint", str(ck), "--data", f"{r}/pred", "--out", f"{r}/eval.csv"]) == 0

    a, b = _run_twice(tmp_path, pipeline)
    artifacts = ["ds", "pred", "kal", "runs/checkpoints", "runs/results.csv", "eval.csv", "runs/metrics", "metrics"]
    differ = [p for p in artifacts if sha256_path(a / p) != sha256_path(b / p)]
    n_ckpt = len(list((a / "runs" / "checkpoints").iterdir()))
    ok = not differ and n_ckpt == 4
    verdict(10, "reproducibility", ok,
            f"{len(artifacts)} artifacts ({n_ckpt} checkpoints) byte-identical across reruns" if ok
            else f"differ: {differ}")
    assert ok
