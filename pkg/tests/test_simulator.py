import numpy as np
import pytest

from radarseg.exceptions import SceneConfigError
from radarseg.features import RadarPoint, frames_to_features
from radarseg.labeling import ClassLabel, ground_truth_by_side
from radarseg.pipeline import frame_to_dict
from radarseg.simulator import (
    ObjectSpec,
    Resolutions,
    SceneConfig,
    default_car,
    default_pedestrian,
    default_scene,
    paper_scale_configs,
    quantize_measurement,
    sample_features,
    simulate_scene,
)


def test_same_seed_bit_identical():
    a = simulate_scene(default_scene(50, seed=4))
    b = simulate_scene(default_scene(50, seed=4))
    assert [frame_to_dict(f) for f in a.frames] == [frame_to_dict(f) for f in b.frames]
    assert all(np.array_equal(x, y) for x, y in zip(a.truth, b.truth))


def test_different_seed_differs():
    a = simulate_scene(default_scene(5, seed=1))
    b = simulate_scene(default_scene(5, seed=2))
    assert [frame_to_dict(f) for f in a.frames] != [frame_to_dict(f) for f in b.frames]


def test_side_rule_recovers_configured_classes():
    cfg = SceneConfig(objects=(default_pedestrian(cross_range=4.0), default_car(cross_range=-4.0)),
                      n_frames=200, seed=3)
    scene = simulate_scene(cfg)
    n_tracked = 0
    for frame, truth in zip(scene.frames, scene.truth):
        assert np.array_equal(ground_truth_by_side(frame), truth)
        n_tracked += sum(p.track_id is not None for p in frame.points)
    assert n_tracked > 1000
    labels = scene.all_truth()
    assert {0, 1, 2} <= set(labels.tolist())


def test_empty_scene():
    scene = simulate_scene(SceneConfig(objects=(), clutter_rate=0.0, n_frames=10))
    assert len(scene.frames) == 10
    assert all(f.points == () and f.centroids == () for f in scene.frames)


def test_label_consistency():
    scene = simulate_scene(default_scene(100, seed=8))
    for frame, truth in zip(scene.frames, scene.truth):
        ids = {c.track_id for c in frame.centroids}
        for p, y in zip(frame.points, truth):
            if y == ClassLabel.CLUTTER:
                assert p.track_id is None
            else:
                assert p.track_id in ids


def test_feature_round_trip():
    scene, drawn = simulate_scene(default_scene(200, seed=6), return_features=True)
    # drawn rows are grouped per object then clutter in each frame, same as point order
    X = frames_to_features(scene.frames)
    assert X.shape == drawn.shape
    np.testing.assert_allclose(X, drawn, rtol=0, atol=1e-9)


def test_statistical_fidelity():
    cfg = default_scene(13000, seed=21)
    scene = simulate_scene(cfg)
    X = frames_to_features(scene.frames)
    y = scene.all_truth()
    for obj in cfg.objects:
        Xc = X[y == obj.label]
        assert Xc.shape[0] >= 100_000
        mean, cov = obj.feature_mean(), obj.feature_cov()
        std = np.sqrt(np.diag(cov))
        assert (np.abs(Xc.mean(axis=0) - mean) <= 0.02 * std).all()
        emp = np.cov(Xc.T)
        assert np.linalg.norm(emp - cov) <= 0.02 * np.linalg.norm(cov)
    clutter = X[y == ClassLabel.CLUTTER]
    assert (clutter[:, :3] == 0).all()
    assert clutter[:, 3].std() == pytest.approx(cfg.clutter_doppler_std, rel=0.02)
    assert clutter[:, 4].std() == pytest.approx(cfg.clutter_rcs_std, rel=0.02)


def test_trajectory_must_stay_in_area():
    with pytest.raises(SceneConfigError, match="detection area"):
        ObjectSpec(ClassLabel.CAR, (1, 1, 1), 0.2, 10, 3, 5, start=(-4, 13, -2),
                   velocity=(0, 5, 0), transit_time=2.0)
    with pytest.raises(SceneConfigError):
        ObjectSpec(ClassLabel.PEDESTRIAN, (1, 1, 1), 0.2, 0, 3, 5, start=(9.5, 5, 0),
                   velocity=(0, 0, 0), transit_time=1.0)


def test_config_validation():
    with pytest.raises(SceneConfigError):
        SceneConfig(n_frames=0)
    with pytest.raises(SceneConfigError):
        SceneConfig(quantize=True, resolutions=(0.09, 0.0, 15, 28))


def test_config_dict_round_trip():
    cfg = default_scene(30, seed=9, quantize=True)
    again = SceneConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(SceneConfigError):
        SceneConfig.from_dict({**cfg.to_dict(), "bogus": 1})


def test_paper_scale_defaults():
    train, test = paper_scale_configs()
    assert (train.n_frames, test.n_frames) == (8000, 1200)
    assert train.seed != test.seed
    assert train.frame_period == 0.1
    assert train.resolutions == Resolutions(0.09, 0.8, 15.0, 28.0)


def test_duty_cycle_thins_car_presence():
    car = default_car(duty_cycle=0.4)
    present = [car.state_at(0.1 * i) is not None for i in range(1000)]
    assert np.mean(present) == pytest.approx(0.4, abs=0.01)


def test_quantize_nearest():
    p = RadarPoint(10.037, 0, 0, 1.1, 12, 10)
    q = quantize_measurement(p, Resolutions(0.09, 0.8, 15, 28))
    assert q.r == pytest.approx(112 * 0.09)
    assert q.vD == pytest.approx(0.8)
    assert (q.snr, q.noise) == (12, 10)


def test_quantize_floor_bins():
    q = quantize_measurement(RadarPoint(10.037, 0, 0, 1.1, 0, 0), Resolutions(), mode="floor")
    assert q.r == pytest.approx(111 * 0.09)
    assert q.vD == pytest.approx(0.8)


def test_quantize_angles():
    q = quantize_measurement(RadarPoint(5, 37, -20, 0, 0, 0), Resolutions())
    assert (q.theta_az, q.theta_el) == (30.0, -28.0)


def test_quantize_vanishing_resolution_is_identity():
    p = RadarPoint(7.123456, 12.3456, -3.21, 0.987, 1, 2)
    q = quantize_measurement(p, (1e-12,) * 4)
    for name in ("r", "theta_az", "theta_el", "vD"):
        assert getattr(q, name) == pytest.approx(getattr(p, name), abs=1e-11)


def test_simulated_quantized_scene_is_on_grid():
    scene = simulate_scene(default_scene(20, seed=1, quantize=True))
    for f in scene.frames:
        for p in f.points:
            assert p.r / 0.09 == pytest.approx(round(p.r / 0.09), abs=1e-6)
            assert p.theta_az % 15 == pytest.approx(0, abs=1e-9)


def test_sample_features_degenerate_spread():
    eps = 1e-10
    mean = np.array([0.1, -0.2, 0.3, 1.0, 12.0])
    x = sample_features(mean, eps * np.eye(5), 1, seed=0)
    assert np.abs(x[0] - mean).max() <= 3 * np.sqrt(eps)


def test_sample_features_law_of_large_numbers():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 5))
    cov = A @ A.T + np.eye(5)
    mean = rng.normal(0, 5, 5)
    X = sample_features(mean, cov, 100_000, seed=42)
    assert np.abs(X.mean(axis=0) - mean).max() <= 0.02
    assert np.linalg.norm(np.cov(X.T) - cov) <= 0.02 * np.linalg.norm(cov)


def test_sample_features_deterministic_and_validated():
    cov = np.diag([1.0, 2.0])
    assert np.array_equal(sample_features([0, 0], cov, 5, 3), sample_features([0, 0], cov, 5, 3))
    with pytest.raises(ValueError):
        sample_features([0, 0], [[1, 2], [2, 1]], 5, 3)
