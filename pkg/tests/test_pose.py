import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echopose.calibration import CalibrationData, geometric_standoffs
from echopose.geometry import HeadGeometry, HeadPose, gaze_angles, mic_distances, mic_world_positions
from echopose.pose import (
    FusionConfig,
    GyroModel,
    PoseEstimate,
    PoseTracker,
    estimate_pose,
    fuse_imu,
    median_length,
    pitch_from_distances,
    simulate_gyro,
    yaw_from_distances,
)
from echopose.ranging import RangeEstimate


def make_cal(geometry=None):
    geometry = geometry or HeadGeometry()
    return CalibrationData(
        f_ref=np.array([375.0, 567.0, 573.0]),
        slope=np.zeros(3),
        coarse_offset=0,
        calibrated_at=0.0,
        standoffs=geometric_standoffs(geometry),
        geometry=geometry,
    )


def make_range(d, dropped=(False, False, False), t=1.0):
    return RangeEstimate(
        t=t,
        distances=np.asarray(d, dtype=float),
        dropped=np.asarray(dropped, dtype=bool),
        freqs=np.zeros(3),
        confidence=np.ones(3),
    )


class TestMedianLength:
    def test_symmetric_case(self):
        # direct evaluation: sqrt(2 + 2 - 0.235^2) / 2
        assert median_length(1.0, 1.0, 0.235) == pytest.approx(0.9930729, abs=1e-6)

    def test_placement_oracle_case(self):
        assert median_length(1.063629, 0.946735, 0.235) == pytest.approx(1.0, abs=1e-6)

    def test_degenerate_baseline(self):
        assert median_length(1.0, 1.0, 0.0) == pytest.approx(1.0)

    def test_invalid_triangle_raises(self):
        with pytest.raises(ValueError):
            median_length(0.01, 0.01, 1.0)

    def test_matches_head_center_distance_in_3d(self):
        g = HeadGeometry()
        speaker = np.array([0.3, 0.1, -0.2])
        pose = HeadPose(np.array([0.1, -1.1, 0.3]), yaw=25.0, pitch=-15.0)
        d = mic_distances(g, pose, speaker)
        truth = np.linalg.norm(pose.position - speaker)
        assert median_length(d[0], d[1], g.d_e) == pytest.approx(truth, abs=1e-9)


class TestYaw:
    def test_zero_at_symmetry(self):
        assert yaw_from_distances(1.0, 1.0, 0.235) == pytest.approx(0.0, abs=1e-9)

    def test_placement_oracle_sign(self):
        # right mic nearer -> negative yaw
        assert yaw_from_distances(1.063629, 0.946735, 0.235) == pytest.approx(-30.0, abs=1e-3)
        assert yaw_from_distances(0.946735, 1.063629, 0.235) == pytest.approx(30.0, abs=1e-3)

    @settings(max_examples=200, deadline=None)
    @given(
        yaw=st.floats(-80.0, 80.0),
        dist=st.floats(0.3, 2.0),
    )
    def test_planar_round_trip(self, yaw, dist):
        g = HeadGeometry()
        pose = HeadPose(np.array([0.0, -dist, 0.0]), yaw=yaw)
        d = mic_distances(g, pose, np.zeros(3))
        assert yaw_from_distances(d[0], d[1], g.d_e) == pytest.approx(yaw, abs=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(
        d_l=st.floats(0.3, 2.0),
        delta=st.floats(-0.2, 0.2),
        k=st.floats(0.1, 10.0),
    )
    def test_mirror_and_scale(self, d_l, delta, k):
        d_r = d_l + delta
        d_e = 0.235
        try:
            a = yaw_from_distances(d_l, d_r, d_e)
        except ValueError:
            return
        assert yaw_from_distances(d_r, d_l, d_e) == pytest.approx(-a, abs=1e-9)
        assert yaw_from_distances(k * d_l, k * d_r, k * d_e) == pytest.approx(a, abs=1e-7)

    def test_argument_clamping_band(self):
        d_e = 0.235
        # right mic exactly on the line to the speaker: argument lands on the
        # boundary; must clamp, not raise
        yaw_from_distances(1.0 + d_e, 1.0, d_e)
        with pytest.raises(ValueError):
            yaw_from_distances(2.0, 0.1, d_e)


class TestPitch:
    def _planar_setup(self, pitch_true, dist=1.5):
        g = HeadGeometry()
        pose = HeadPose(np.array([0.0, -dist, 0.0]), 0.0, pitch_true)
        mics = mic_world_positions(g, pose)
        speaker = np.array([g.d_e / 2.0, 0.0, 0.0])  # in the sagittal plane
        d = np.linalg.norm(mics - speaker, axis=1)
        gy, gp = gaze_angles(pose.position[None, :], np.array([0.0]),
                             np.array([pitch_true]), speaker)
        return g, d, float(gp[0])

    def test_neutral_reads_zero(self):
        g, d, truth = self._planar_setup(0.0)
        assert pitch_from_distances(d[1], d[2], g.d_b, g.theta0) == pytest.approx(truth, abs=0.5)

    @pytest.mark.parametrize("pitch_true", [-20.0, -8.0, 12.0, 20.0])
    def test_planar_sagittal_sweep(self, pitch_true):
        g, d, truth = self._planar_setup(pitch_true)
        est = pitch_from_distances(d[1], d[2], g.d_b, g.theta0)
        assert est == pytest.approx(truth, abs=0.5)

    def test_invalid_triangle(self):
        with pytest.raises(ValueError):
            pitch_from_distances(0.001, 1.0, 0.06, 25.0)


class TestEstimatePose:
    def test_exact_distances_recover_pose(self):
        g = HeadGeometry()
        cal = make_cal(g)
        speaker = np.zeros(3)
        pose = HeadPose(np.array([0.0, -1.0, 0.0]), yaw=20.0, pitch=0.0)
        d = mic_distances(g, pose, speaker)
        est = estimate_pose(make_range(d), cal)
        assert est.valid
        assert est.yaw == pytest.approx(20.0, abs=0.5)
        assert est.d_m == pytest.approx(1.0, abs=1e-6)

    def test_speech_dropped_keeps_yaw(self):
        cal = make_cal()
        est = estimate_pose(make_range([1.0, 1.0, 1.05], dropped=(False, False, True)), cal)
        assert not est.valid
        assert est.yaw == pytest.approx(0.0, abs=1e-9)
        assert math.isfinite(est.pitch)  # computed from the fallback distance

    def test_two_dropped_invalid(self):
        cal = make_cal()
        est = estimate_pose(make_range([1.0, 1.0, 1.05], dropped=(True, True, False)), cal)
        assert not est.valid

    def test_broken_triangle_gives_nan(self):
        cal = make_cal()
        est = estimate_pose(make_range([0.01, 1.5, 1.0]), cal)
        assert not est.valid
        assert math.isnan(est.yaw)

    def test_tracker_holds_last_valid(self):
        cal = make_cal()
        tracker = PoseTracker(cal)
        good = tracker.update(make_range([1.0, 1.0, 1.05], t=1.0))
        assert good.valid
        held = tracker.update(make_range([0.01, 1.5, 1.0], dropped=(True, False, False), t=2.0))
        assert not held.valid
        assert held.yaw == pytest.approx(good.yaw)


class TestFusion:
    def _truth(self, duration=40.0, rate=23.4375, seed=3):
        from echopose import trajectory as traj

        task = traj.random_motion_task(traj.grid_position(0, 1.0), np.zeros(3),
                                       duration=duration, seed=seed,
                                       yaw_range=60, pitch_range=25)
        times = np.arange(0.0, duration, 1.0 / rate)
        p, yaw, pitch = task.sample(times)
        gy, gp = gaze_angles(p, yaw, pitch, np.zeros(3))
        return times, gy, gp

    def _acoustic(self, times, gy, gp, sigma=1.5, seed=7):
        rng = np.random.default_rng(seed)
        return [
            PoseEstimate(t, 1.0, y + rng.normal(0, sigma), p + rng.normal(0, sigma), True)
            for t, y, p in zip(times, gy, gp)
        ]

    def test_perfect_gyro_tracks_exactly(self):
        times, gy, gp = self._truth(duration=20.0)
        perfect = GyroModel(bias_dps=0.0, noise_dps=0.0, scale_error=0.0)
        gyro = simulate_gyro(times, gy, gp, perfect, seed=0)
        acoustic = self._acoustic(times, gy, gp, sigma=0.0)
        fused = fuse_imu(gyro, acoustic, t_cal=5.0)
        errs = [abs(f.yaw - y) for f, y in zip(fused, gy) if np.isfinite(f.yaw)]
        assert np.max(errs) < 1e-9

    def test_open_loop_drifts_without_anchors(self):
        times, gy, gp = self._truth(duration=40.0)
        gyro = simulate_gyro(times, gy, gp, GyroModel(), seed=1)
        acoustic = self._acoustic(times, gy, gp)
        fused = fuse_imu(gyro, acoustic, t_cal=None)
        tail = [abs(f.yaw - y) for f, y in zip(fused, gy)
                if f.t > 30.0 and np.isfinite(f.yaw)]
        head = [abs(f.yaw - y) for f, y in zip(fused, gy)
                if 1.0 < f.t < 10.0 and np.isfinite(f.yaw)]
        assert np.median(tail) > 3.0 * np.median(head)

    def test_anchoring_beats_open_loop(self):
        times, gy, gp = self._truth(duration=40.0)
        gyro = simulate_gyro(times, gy, gp, GyroModel(), seed=2)
        acoustic = self._acoustic(times, gy, gp)
        fused = fuse_imu(gyro, acoustic, t_cal=1.0)
        open_loop = fuse_imu(gyro, acoustic, t_cal=None)
        fe = np.median([abs(f.yaw - y) for f, y in zip(fused, gy) if np.isfinite(f.yaw)])
        oe = np.median([abs(f.yaw - y) for f, y in zip(open_loop, gy) if np.isfinite(f.yaw)])
        assert fe < 0.5 * oe

    def test_invalid_burst_extends_integration(self):
        times, gy, gp = self._truth(duration=10.0)
        gyro = simulate_gyro(times, gy, gp, GyroModel(), seed=3)
        acoustic = self._acoustic(times, gy, gp)
        # second burst entirely invalid
        for a in acoustic:
            if 3.0 <= a.t < 3.5:
                a.valid = False
        fused = fuse_imu(gyro, acoustic, t_cal=3.0)
        degraded = [f for f in fused if 3.5 < f.t < 6.0]
        assert any(f.degraded for f in degraded)

    def test_bad_t_cal(self):
        with pytest.raises(ValueError):
            fuse_imu([], [], t_cal=0.0)

    def test_gyro_rate_limit(self):
        from echopose.pose import ImuSample

        with pytest.raises(ValueError):
            ImuSample(0.0, np.array([3000.0, 0.0, 0.0]))
