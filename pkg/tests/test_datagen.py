import math
from dataclasses import replace

import numpy as np
import pytest

from abrnet.dataset import DomainDataset, export_csv, load_dataset, save_dataset
from abrnet.datagen import (
    EnvironmentSpec,
    FloorEnvironment,
    ImageTaskSpec,
    Trajectory,
    generate_environment,
    generate_image_task,
    image_label_to_pixels,
    make_domain_pair,
    path_loss_rssi,
    render_shapes,
    simulate_trajectory,
    synthesize_signals,
    write_domain_pair,
)
from abrnet.exceptions import CheckpointError, ConfigError, LabelAccessError

SMALL = dict(n_windows=300, n_test_windows=100)


def test_default_anchor_counts():
    src, _ = generate_environment(EnvironmentSpec(), 0)
    assert src.anchor_kinds.count("wifi") == 11
    assert src.anchor_kinds.count("uwb") == 3


def test_environment_deterministic():
    a, _ = generate_environment(EnvironmentSpec(), 5)
    b, _ = generate_environment(EnvironmentSpec(), 5)
    np.testing.assert_array_equal(a.anchors, b.anchors)
    np.testing.assert_array_equal(a.obstacles, b.obstacles)


def test_target_moves_only_region_obstacles():
    spec = EnvironmentSpec()
    src, tgt = generate_environment(spec, 0)
    moved = np.any(src.obstacles != tgt.obstacles, axis=1)
    assert moved.any()
    x0, y0, x1, y1 = spec.shift_region
    for o in np.vstack([src.obstacles[moved], tgt.obstacles[moved]]):
        assert o[0] >= x0 and o[1] >= y0 and o[2] <= x1 and o[3] <= y1
    np.testing.assert_array_equal(src.anchors, tgt.anchors)


def test_zero_obstacles_means_no_shift():
    spec = EnvironmentSpec(n_obstacles=0, n_region_obstacles=0, **SMALL)
    src, tgt = generate_environment(spec, 0)
    traj = simulate_trajectory(src, 50, seed=1)
    a, la = synthesize_signals(src, traj, noise=False)
    b, lb = synthesize_signals(tgt, traj, noise=False)
    np.testing.assert_array_equal(a, b)


def test_obstacle_outside_floor_rejected():
    src, _ = generate_environment(EnvironmentSpec(), 0)
    with pytest.raises(ConfigError):
        FloorEnvironment(src.extents, src.anchors, src.anchor_kinds,
                         np.array([[11.0, 7.0, 13.0, 7.5]]), np.array([3.0]), src.spec)
    with pytest.raises(ConfigError):
        EnvironmentSpec(shift_region=(0, 0, 20, 4))


def test_trajectory_contracts():
    src, _ = generate_environment(EnvironmentSpec(), 0)
    with pytest.raises(ConfigError):
        simulate_trajectory(src, 9, seed=0)
    traj = simulate_trajectory(src, 10, seed=0)
    windows, labels = synthesize_signals(src, traj)
    assert windows.shape == (1, 10, 63) and labels.shape == (1, 2)
    long = simulate_trajectory(src, 3000, seed=4, max_speed=1.0, dt=0.1)
    steps = np.hypot(*np.diff(long.points, axis=0).T)
    assert steps.max() <= 0.1 + 1e-12
    L, W = src.extents
    assert long.points.min() >= 0 and (long.points[:, 0] <= L).all() and (long.points[:, 1] <= W).all()
    again = simulate_trajectory(src, 3000, seed=4)
    np.testing.assert_array_equal(long.points, again.points)


def test_path_loss_endpoints():
    assert path_loss_rssi(0.1, p0=-30, eta=2.2, d0=0.1) == -30.0
    drop = path_loss_rssi(2.0, eta=2.0) - path_loss_rssi(4.0, eta=2.0)
    assert drop == pytest.approx(20 * math.log10(2), abs=1e-12)
    assert path_loss_rssi(3.0, extra_db=5.0) == pytest.approx(path_loss_rssi(3.0) - 5.0)


def _one_anchor_env(obstacles, att):
    spec = EnvironmentSpec(**SMALL)
    anchors = np.array([[2.0, 2.0]] * 11 + [[0.5, 0.5], [11.5, 0.5], [6.0, 7.5]])
    kinds = ["wifi"] * 11 + ["uwb"] * 3
    return FloorEnvironment(spec.extents, anchors, kinds, np.array(obstacles, dtype=float).reshape(-1, 4),
                            np.array(att, dtype=float), spec)


def test_colocated_anchor_rssi_equals_p0():
    env = _one_anchor_env([], [])
    traj = Trajectory(np.tile([[2.0, 2.0]], (10, 1)), 0.1)
    windows, _ = synthesize_signals(env, traj, noise=False)
    rssi_db = windows[0, -1, 0] * 15.0 - 60.0
    assert rssi_db == pytest.approx(env.spec.p0_dbm, abs=1e-4)


def test_obstacle_on_line_of_sight_drops_rssi_by_attenuation():
    traj = Trajectory(np.tile([[6.0, 2.0]], (10, 1)), 0.1)
    clear, _ = synthesize_signals(_one_anchor_env([], []), traj, noise=False)
    blocked, _ = synthesize_signals(_one_anchor_env([[3.5, 1.5, 4.0, 2.5]], [6.5]), traj, noise=False)
    drop_db = (clear[0, -1, :8] - blocked[0, -1, :8]) * 15.0
    np.testing.assert_allclose(drop_db, 6.5, atol=1e-4)


def test_window_labels_are_last_step_and_inside():
    src, _ = generate_environment(EnvironmentSpec(), 0)
    traj = simulate_trajectory(src, 40, seed=2)
    windows, labels = synthesize_signals(src, traj)
    assert windows.shape == (31, 10, 63)
    np.testing.assert_array_equal(labels, traj.points[9:])
    a, _ = synthesize_signals(src, traj)
    np.testing.assert_array_equal(a, windows)


def test_domain_pair_label_access():
    pair = make_domain_pair(EnvironmentSpec(**SMALL), 0)
    assert pair.source.labels.shape == (300, 2)
    with pytest.raises(LabelAccessError):
        pair.target.labels
    ev = pair.target.evaluation_view()
    L, W = pair.spec.extents
    assert (ev.labels >= 0).all() and (ev.labels[:, 0] <= L).all() and (ev.labels[:, 1] <= W).all()


def test_dataset_file_roundtrip(tmp_path):
    pair = make_domain_pair(EnvironmentSpec(**SMALL), 1)
    for ds in (pair.source, pair.target):
        save_dataset(ds, tmp_path / "d.abrds")
        back = load_dataset(tmp_path / "d.abrds")
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        assert back.labels_visible == ds.labels_visible
        np.testing.assert_array_equal(back.evaluation_view().labels, ds.evaluation_view().labels)
    manifest = write_domain_pair(pair, tmp_path / "pair")
    assert manifest.exists()


def test_dataset_file_corruption(tmp_path):
    ds = DomainDataset(np.zeros((3, 10, 63)), np.zeros((3, 2)))
    p = tmp_path / "d.abrds"
    save_dataset(ds, p)
    raw = p.read_bytes()
    p.write_bytes(raw[:-5])
    with pytest.raises(CheckpointError):
        load_dataset(p)
    p.write_bytes(b"garbage")
    with pytest.raises(CheckpointError):
        load_dataset(p)


def test_csv_export(tmp_path):
    ds = DomainDataset(np.arange(2 * 2 * 3).reshape(2, 2, 3), np.ones((2, 2)))
    export_csv(ds, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].split(",")[-1] == "y1"


def test_image_task_determinism_and_marginals():
    spec = ImageTaskSpec(n_images=64, n_test_images=16)
    s1, _, t1 = generate_image_task(spec, 0)
    s2, _, t2 = generate_image_task(spec, 0)
    np.testing.assert_array_equal(s1.inputs, s2.inputs)
    np.testing.assert_array_equal(t1.inputs, t2.inputs)
    np.testing.assert_array_equal(s1.labels, t1.evaluation_view().labels)
    assert s1.inputs.shape == (64, 32, 32, 3)
    assert not np.array_equal(s1.inputs, t1.inputs)


def test_image_centroid_matches_label():
    spec = ImageTaskSpec()
    labels = np.random.default_rng(0).uniform(0, 1, (500, 3))
    masks = render_shapes(labels, spec)
    _, cx, cy = image_label_to_pixels(labels, spec)
    rows, cols = np.indices((spec.size, spec.size)) + 0.5
    for m, x, y in zip(masks, cx, cy):
        assert m.any()
        assert abs(cols[m].mean() - x) <= 1.0
        assert abs(rows[m].mean() - y) <= 1.0
