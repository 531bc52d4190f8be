import numpy as np
import pytest

from helpers import delayed_stream, run_pipeline_scene, tracking_report

from echopose import sim, trajectory as traj
from echopose.calibration import (
    CalibrationData,
    calibrate_reference,
    coarse_sync,
    drift_correct,
    geometric_standoffs,
)
from echopose.chirp import ChirpSpec, SampleBuffer, synthesize_triangular
from echopose.errors import CalibrationError, ConfigurationError, NoSignalError
from echopose.geometry import HeadGeometry


class TestCoarseSync:
    def test_known_integer_delay(self, spec):
        ref = synthesize_triangular(spec, 4).data[0]
        x = np.zeros(len(ref))
        x[137:] = ref[:-137]
        assert coarse_sync(SampleBuffer(x, spec.sample_rate), spec) == 137

    def test_noisy_delay_monte_carlo(self, spec):
        ref = synthesize_triangular(spec, 4).data[0]
        x = np.zeros(len(ref))
        x[137:] = ref[:-137]
        sigma = spec.amplitude / np.sqrt(2)  # 0 dB SNR
        hits = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            noisy = x + rng.normal(0, sigma, len(x))
            hits.append(coarse_sync(SampleBuffer(noisy, spec.sample_rate), spec))
        assert all(abs(h - 137) <= 1 for h in hits)

    def test_silence_raises(self, spec):
        with pytest.raises(NoSignalError):
            coarse_sync(SampleBuffer(np.zeros(6 * 2048), spec.sample_rate), spec)

    def test_too_short(self, spec):
        with pytest.raises(ConfigurationError):
            coarse_sync(SampleBuffer(np.zeros(1000), spec.sample_rate), spec)


def render_calibration_take(spec, geometry, drift_ppm=0.0, hold=12.0, seed=5,
                            snr=35.0):
    pose = traj.calibration_pose(np.zeros(3), geometry)
    scenario = sim.Scenario(
        trajectory=traj.Trajectory([traj.Hold(pose, hold)]),
        speaker_position=np.zeros(3),
        geometry=geometry,
        noise_snr_db=snr,
        clock=sim.ClockModel(offset=0.137, drift_ppm=drift_ppm),
        seed=seed,
    )
    buf, _ = sim.simulate_scene(scenario, spec)
    return buf


class TestCalibrateReference:
    def test_zero_drift_static(self, spec, geometry):
        buf = render_calibration_take(spec, geometry)
        cal = calibrate_reference(buf, spec, 5.0, geometry=geometry)
        assert np.all(np.abs(cal.slope) < 0.5)
        # reference spacing reflects the earcup geometry exactly
        hz_per_m = spec.hz_per_meter()
        gaps = (cal.f_ref - cal.f_ref[0]) / hz_per_m
        want = geometric_standoffs(geometry) - 0.002
        np.testing.assert_allclose(gaps, want, atol=0.003)

    def test_drift_slope_recovered(self, spec, geometry):
        buf = render_calibration_take(spec, geometry, drift_ppm=20.0)
        cal = calibrate_reference(buf, spec, 10.0, geometry=geometry)
        induced = spec.slope_rate * 20e-6
        np.testing.assert_allclose(cal.slope, induced, rtol=0.05)

    def test_idempotent(self, spec, geometry):
        buf = render_calibration_take(spec, geometry)
        a = calibrate_reference(buf, spec, 6.0, geometry=geometry)
        b = calibrate_reference(buf, spec, 6.0, geometry=geometry)
        np.testing.assert_array_equal(a.f_ref, b.f_ref)
        np.testing.assert_array_equal(a.slope, b.slope)

    def test_motion_during_window_rejected(self, spec, geometry):
        cal_pose = traj.calibration_pose(np.zeros(3), geometry)
        away = traj.HeadPose(cal_pose.position + np.array([0.0, -0.6, 0.0]), 0.0, 0.0)
        moving = traj.Trajectory([
            traj.Hold(cal_pose, 2.0),
            traj.Move(cal_pose, away, 2.0),
            traj.Hold(away, 2.0),
        ])
        scenario = sim.Scenario(
            trajectory=moving, speaker_position=np.zeros(3), geometry=geometry,
            noise_snr_db=35.0, seed=8,
        )
        buf, _ = sim.simulate_scene(scenario, spec)
        with pytest.raises((CalibrationError, NoSignalError)):
            calibrate_reference(buf, spec, 6.0, geometry=geometry)

    def test_window_too_short(self, spec, geometry):
        buf = render_calibration_take(spec, geometry, hold=6.0)
        with pytest.raises(ConfigurationError):
            calibrate_reference(buf, spec, 2.0, geometry=geometry)

    def test_stream_shorter_than_window(self, spec, geometry):
        buf = render_calibration_take(spec, geometry, hold=5.0)
        with pytest.raises(ConfigurationError):
            calibrate_reference(buf, spec, 9.0, geometry=geometry)

    def test_wrong_pose_rejected(self, spec, geometry):
        # holding the head a meter away is not a calibration pose
        task = traj.hold_facing(traj.grid_position(0, 1.0), np.zeros(3), 6.0)
        scenario = sim.Scenario(trajectory=task, speaker_position=np.zeros(3),
                                geometry=geometry, noise_snr_db=30.0, seed=9)
        buf, _ = sim.simulate_scene(scenario, spec)
        with pytest.raises(NoSignalError):
            calibrate_reference(buf, spec, 5.0, geometry=geometry)

    def test_save_load_round_trip(self, spec, geometry, tmp_path):
        buf = render_calibration_take(spec, geometry)
        cal = calibrate_reference(buf, spec, 5.0, geometry=geometry)
        p = tmp_path / "cal.json"
        cal.save(p)
        loaded = CalibrationData.load(p)
        np.testing.assert_allclose(loaded.f_ref, cal.f_ref)
        np.testing.assert_allclose(loaded.slope, cal.slope)
        assert loaded.coarse_offset == cal.coarse_offset
        assert loaded.geometry.d_e == cal.geometry.d_e
        assert loaded.sync_margin == cal.sync_margin


class TestDriftCorrect:
    def test_constant_without_slope(self, spec, geometry):
        cal = CalibrationData(
            f_ref=np.array([100.0, 200.0, 300.0]), slope=np.zeros(3),
            coarse_offset=0, calibrated_at=0.0,
            standoffs=geometric_standoffs(geometry), geometry=geometry)
        assert drift_correct(cal, 1e5, 0) == 100.0

    def test_linear_extrapolation(self, spec, geometry):
        cal = CalibrationData(
            f_ref=np.array([100.0, 200.0, 300.0]), slope=np.full(3, 0.5),
            coarse_offset=0, calibrated_at=10.0,
            standoffs=geometric_standoffs(geometry), geometry=geometry)
        assert drift_correct(cal, 70.0, 2) == pytest.approx(330.0)


class TestWindowLengthEffect:
    def test_4s_vs_10s_medae_within_three_percent(self, spec, geometry):
        # same take calibrated two ways; downstream accuracy barely changes
        task = traj.random_motion_task(traj.grid_position(0, 0.6), np.zeros(3),
                                       duration=10.0, seed=6,
                                       yaw_range=40.0, pitch_range=20.0)
        reports = {}
        for window in (4.0, 10.0):
            _, poses, trace, t0 = run_pipeline_scene(
                task, spec, seed=31, cal_hold=10.0, cal_window=window)
            reports[window] = tracking_report(poses, trace, t0 + 0.3)
        a, b = reports[4.0], reports[10.0]
        assert a.distance_medae_mm == pytest.approx(b.distance_medae_mm, rel=0.03, abs=0.05)
        assert a.yaw_medae_deg == pytest.approx(b.yaw_medae_deg, rel=0.03, abs=0.05)
