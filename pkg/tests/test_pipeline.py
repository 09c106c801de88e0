"""End-to-end pipeline behavior on simulated worlds."""

import numpy as np
import pytest

from semslam.config import RunConfig
from semslam.core import LabelRegistry, SemanticMeasurement
from semslam.geometry import Pose
from semslam.pipeline import evaluate, integrate_odometry, run_pipeline
from semslam.sim import DetectorSpec, OdometrySpec, WorldSpec, generate_world, simulate


def world_spec_for(cfg):
    per_class = cfg.n_landmarks // cfg.n_classes
    counts = [per_class] * cfg.n_classes
    for i in range(cfg.n_landmarks - per_class * cfg.n_classes):
        counts[i] += 1
    return WorldSpec(
        cfg.world_seed, cfg.arena_size, tuple(counts), cfg.trajectory, cfg.steps, cfg.step_length
    )


def simulate_for(cfg):
    world = generate_world(world_spec_for(cfg))
    det = DetectorSpec(
        cfg.detection_range,
        cfg.fov_deg,
        cfg.miss_rate,
        cfg.sim_fp_rate,
        None,
        cfg.meas_noise_std**2 * np.eye(3),
    )
    odo = OdometrySpec(cfg.odom_sigma_t, cfg.odom_sigma_r, cfg.odom_bias_drift)
    measurements, increments = simulate(world, det, odo, cfg.run_seed)
    body = []
    for step, ms in enumerate(measurements):
        pose = world.trajectory[step]
        body.append(
            [
                SemanticMeasurement(m.scene_id, m.time, pose.transform_inverse(m.position), m.label)
                for m in ms
            ]
        )
    return world, body, increments


def run_for(cfg):
    world, body, increments = simulate_for(cfg)
    return run_pipeline(cfg, body, increments, world.registry, world.trajectory), world


class TestIntegrateOdometry:
    def test_identity_chain(self):
        incs = [Pose(np.array([1.0, 0.0, 0.0]))] * 3
        poses = integrate_odometry(incs)
        assert len(poses) == 4
        assert np.allclose(poses[-1].translation, [3.0, 0.0, 0.0])

    def test_custom_start(self):
        start = Pose(np.array([5.0, 0.0, 0.0]))
        poses = integrate_odometry([], start)
        assert np.allclose(poses[0].translation, [5.0, 0.0, 0.0])


class TestValidation:
    def test_empty_log_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            run_pipeline(RunConfig(), [], [], LabelRegistry())

    def test_odometry_count_mismatch_rejected(self):
        reg = LabelRegistry()
        with pytest.raises(ValueError, match="odometry increments"):
            run_pipeline(RunConfig(steps=3), [[], [], []], [], reg)


class TestNoiselessRun:
    """Exact odometry and measurements: the estimate should be near-perfect."""

    CFG = RunConfig(
        steps=24,
        n_landmarks=24,
        n_classes=4,
        meas_noise_std=0.0,
        odom_sigma_t=0.0,
        odom_sigma_r=0.0,
        submap_length=8,
    )

    def test_rmse_tiny(self):
        result, world = run_for(self.CFG)
        assert result.final_rmse < 0.05

    def test_map_positions_match_world(self):
        result, world = run_for(self.CFG)
        truth = {tuple(np.round(lm.position, 6)): lm.label for lm in world.landmarks}
        matched = 0
        for flm in result.fused_map.values():
            close = [
                p for p in truth if np.linalg.norm(np.array(p) - flm.mean) < 0.1
            ]
            if close:
                matched += 1
        assert matched >= 0.9 * len(result.fused_map)

    def test_metrics_rows_shape(self):
        result, _ = run_for(self.CFG)
        rows = result.metrics_rows()
        assert len(rows) == self.CFG.steps
        assert all(len(r) == 5 for r in rows)
        assert [r[0] for r in rows] == list(range(self.CFG.steps))


class TestDeterminism:
    CFG = RunConfig(
        steps=24,
        n_landmarks=24,
        n_classes=4,
        meas_noise_std=0.15,
        odom_sigma_t=0.02,
        odom_sigma_r=0.002,
        submap_length=8,
        run_seed=3,
    )

    def test_repeat_runs_identical(self):
        r1, _ = run_for(self.CFG)
        r2, _ = run_for(self.CFG)
        assert r1.metrics_rows() == r2.metrics_rows()
        for a, b in zip(r1.trajectory, r2.trajectory):
            assert np.array_equal(a.translation, b.translation)
            assert np.array_equal(a.rotation, b.rotation)


class TestModes:
    BASE = dict(
        steps=24,
        n_landmarks=24,
        n_classes=4,
        meas_noise_std=0.15,
        odom_sigma_t=0.02,
        odom_sigma_r=0.002,
        submap_length=8,
    )

    @pytest.mark.parametrize("mode", ["dpmhm", "mhm_threshold", "single_ukf"])
    def test_mode_runs_and_beats_nothing(self, mode):
        cfg = RunConfig(mode=mode, **self.BASE)
        result, world = run_for(cfg)
        assert len(result.trajectory) == cfg.steps
        assert result.fused_map
        assert np.isfinite(result.final_rmse)

    def test_single_ukf_always_one_hypothesis(self):
        cfg = RunConfig(mode="single_ukf", **self.BASE)
        result, _ = run_for(cfg)
        assert set(result.hypothesis_counts) == {1}


class TestEvaluate:
    def test_perfect_match(self):
        t = [Pose(np.array([float(i), 0, 0])) for i in range(3)]
        rep = evaluate(t, t)
        assert rep.rmse == 0.0 and rep.max_error == 0.0

    def test_misaligned_times_rejected(self):
        t = [Pose()] * 2
        with pytest.raises(ValueError, match="aligned"):
            evaluate(t, t, [0.0, 1.0], [0.0, 2.0])
