import math

import numpy as np
import pytest

from hrrp_lab.datasets import read_dataset, write_dataset
from hrrp_lab.geometry import TWO_PI, PlanarPoint, lrp, wrapped_error
from hrrp_lab.simulator import (
    DatasetConfig,
    RenderParams,
    Scatterer,
    SimulationError,
    TargetModel,
    build_targets,
    gen_dataset,
    gen_trajectory,
    make_target,
    project_scatterers,
    reference_aspects,
    render_hrrp,
)


def _target(*scatterers, length=20.0, width=10.0):
    return TargetModel(0, length, width, tuple(Scatterer(*s) for s in scatterers))


def test_projection_examples():
    t = _target((10, 0, 1), (-10, 0, 0), (3, 4, 2))
    at0 = project_scatterers(t, 0.0)
    assert at0[0] == (10.0, 1.0)
    assert project_scatterers(t, math.pi / 2)[0][0] == pytest.approx(0.0, abs=1e-12)
    off, amp = project_scatterers(t, math.pi / 4)[2]
    assert off == pytest.approx(7 / math.sqrt(2), abs=1e-12)
    assert off == pytest.approx(4.9497, abs=1e-4)
    assert amp == 2.0


def test_single_deposit_at_center():
    t = _target((0, 0, 1), (10, 0, 0), (-10, 0, 0))
    p = render_hrrp(t, 0.3, RenderParams(n_bins=64, delta_r=1.0))
    assert np.count_nonzero(p) == 1
    assert p[32] == 1.0


def test_two_end_target_lrp_matches_projection_oracle():
    t = TargetModel(0, 100.0, 4.0, (Scatterer(50, 0, 1), Scatterer(-50, 0, 1), Scatterer(0, 0, 0.5)))
    params = RenderParams(n_bins=256, delta_r=1.0)
    # oracle: offsets +-50 land in bins floor((+-50 + 128) / 1) = 78 and 178
    expected = (178 - 78 + 1) * 1.0
    assert lrp(render_hrrp(t, 0.0, params), 1.0) == expected
    assert abs(expected - 100.0) <= 2.0


def test_render_rejects_overflow():
    t = TargetModel(0, 100.0, 4.0, (Scatterer(50, 0, 1), Scatterer(-50, 0, 1), Scatterer(0, 0, 1)))
    with pytest.raises(SimulationError):
        render_hrrp(t, 0.0, RenderParams(n_bins=64, delta_r=1.0))


def test_noisy_render_requires_stream_and_is_nonnegative():
    t = make_target(0, 80, 12, np.random.default_rng(0))
    params = RenderParams(n_bins=128, delta_r=2.0, noise_sigma=0.2, amp_jitter=0.3)
    with pytest.raises(SimulationError):
        render_hrrp(t, 0.0, params)
    p = render_hrrp(t, 0.0, params, np.random.default_rng(1))
    assert p.min() >= 0.0 and p.max() == 1.0


@pytest.fixture(scope="module")
def targets():
    cfg = DatasetConfig(n_classes=6, preset="diverse", seed=3)
    return build_targets(cfg) + build_targets(DatasetConfig(n_classes=6, seed=4))


GRID = np.arange(32) * TWO_PI / 32


def test_lrp_pi_periodicity(targets):
    params = RenderParams(n_bins=128, delta_r=2.0)
    for t in targets:
        for phi in GRID:
            a = lrp(render_hrrp(t, phi, params), params.delta_r)
            b = lrp(render_hrrp(t, phi + math.pi, params), params.delta_r)
            assert abs(a - b) <= 2 * params.delta_r


def test_projected_extent_law(targets):
    params = RenderParams(n_bins=128, delta_r=2.0)
    for t in targets:
        for phi in GRID:
            law = abs(t.length * math.cos(phi)) + abs(t.width * math.sin(phi))
            assert abs(lrp(render_hrrp(t, phi, params), params.delta_r) - law) <= 3 * params.delta_r


def test_target_invariants():
    with pytest.raises(SimulationError):
        _target((0, 0, 1), (1, 0, 1))
    with pytest.raises(SimulationError):
        _target((0, 0, 1), (1, 0, 1), (2, 0, 1))  # no scatterer near the ends
    with pytest.raises(SimulationError):
        _target((11, 0, 1), (-10, 0, 1), (0, 0, 1))  # outside the hull


def test_straight_trajectory():
    tr = gen_trajectory(speed=10, turn_rate=0.0, duration=100, dt=1, meas_sigma=0, seed=0, heading0=0.7)
    pos = np.array([s.pos for s in tr])
    d = pos[1:] - pos[0]
    cross = d[:, 0] * math.sin(0.7) - d[:, 1] * math.cos(0.7)
    assert np.max(np.abs(cross)) < 1e-9
    assert all(s.hdg_true == tr[0].hdg_true for s in tr)
    assert all(s.meas == s.pos for s in tr)


def test_turn_rate_advances_heading():
    w = 0.01
    tr = gen_trajectory(speed=5, turn_rate=w, duration=50, dt=2, meas_sigma=0, seed=0)
    h = np.unwrap([s.hdg_true for s in tr])
    assert np.allclose(np.diff(h), w * 2, atol=1e-12)
    # heading equals the direction of motion at the midpoint of each arc
    pos = np.array([s.pos for s in tr])
    chord = np.arctan2(np.diff(pos[:, 1]), np.diff(pos[:, 0]))
    assert np.allclose(np.unwrap(chord), h[:-1] + w, atol=1e-9)


def test_measurement_noise_rayleigh_mean():
    tr = gen_trajectory(speed=10, turn_rate=0.0, duration=999, dt=1, meas_sigma=25, seed=11)
    assert len(tr) == 1000
    err = [math.hypot(s.meas[0] - s.pos[0], s.meas[1] - s.pos[1]) for s in tr]
    # planar isotropic noise: the error norm is Rayleigh with mean sigma * sqrt(pi / 2)
    assert np.mean(err) == pytest.approx(25 * math.sqrt(math.pi / 2), abs=2.5)


def test_timestamps_increase_and_piecewise_schedule():
    tr = gen_trajectory(10, [(0, 0.0), (50, 0.02)], 100, 10, 0, t0=500.0)
    ts = [s.t for s in tr]
    assert ts[0] == 500.0 and np.all(np.diff(ts) > 0)
    h = np.unwrap([s.hdg_true for s in tr])
    assert np.allclose(np.diff(h)[:5], 0.0) and np.allclose(np.diff(h)[5:], 0.2)


def test_circular_track_covers_all_aspects():
    tr = gen_trajectory(speed=10, turn_rate=TWO_PI / 1000, duration=1000, dt=10, meas_sigma=0,
                        start=PlanarPoint(10000, 0))
    assert len(tr) >= 100
    a = np.sort(reference_aspects(tr, PlanarPoint(0, 0)))
    gaps = np.diff(np.concatenate([a, [a[0] + TWO_PI]]))
    assert gaps.max() < TWO_PI / 10


def test_dataset_counts_and_round_trip(tmp_path):
    cfg = DatasetConfig(n_classes=2, trajectories_per_class=1, samples_per_trajectory=100,
                        turn_rate_max_deg=0.0, seed=5)
    ds, trajs = gen_dataset(cfg)
    assert len(ds) == 200
    assert np.bincount(ds.class_id).tolist() == [100, 100]
    write_dataset(ds, trajs, tmp_path / "d")
    back = read_dataset(tmp_path / "d")
    assert np.array_equal(back.profiles, ds.profiles)
    assert np.array_equal(back.t, ds.t) and np.array_equal(back.aspect_ref, ds.aspect_ref)
    assert back.targets == ds.targets
    raw = np.frombuffer((tmp_path / "d" / "records.bin").read_bytes(), dtype="<f4").reshape(200, -1)
    assert raw.shape[1] == cfg.n_bins + 3
    assert np.array_equal(raw[:, -1], ds.class_id.astype(np.float32))
    assert np.array_equal(raw[:, -2], ds.t.astype(np.float32))
    assert np.array_equal(raw[:, -3], ds.aspect_ref.astype(np.float32))


def test_dataset_is_byte_reproducible(tmp_path):
    cfg = DatasetConfig(n_classes=4, trajectories_per_class=2, samples_per_trajectory=30, seed=9)
    for name in ("a", "b"):
        ds, trajs = gen_dataset(cfg)
        write_dataset(ds, trajs, tmp_path / name)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_ambiguous_preset_shares_lengths_and_mirrors_pairs():
    cfg = DatasetConfig(n_classes=10, n_lengths=3, seed=1)
    ts = build_targets(cfg)
    assert len({t.length for t in ts}) == 3
    params = RenderParams(n_bins=128, delta_r=2.0)
    # a sister ship seen at phi looks exactly like its twin seen at pi - phi
    for phi in GRID[:8]:
        assert np.allclose(render_hrrp(ts[1], phi, params), render_hrrp(ts[0], math.pi - phi, params))


def test_trajectory_gap_exceeds_segmenting_threshold():
    cfg = DatasetConfig(n_classes=2, trajectories_per_class=3, samples_per_trajectory=10, seed=2)
    ds, trajs = gen_dataset(cfg)
    ts = np.array([s.t for tr in trajs[0] for s in tr])
    assert np.sum(np.diff(ts) > 1200) == 2
    assert wrapped_error(ds.aspect_ref[0], ds.aspect_ref[0]) == 0.0
