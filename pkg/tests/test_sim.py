import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import band_energy_db

from echopose import sim, trajectory as traj
from echopose.chirp import ChirpSpec, synthesize_triangular
from echopose.errors import ConfigurationError, ScenarioError
from echopose.geometry import SPEED_OF_SOUND, HeadGeometry, HeadPose
from echopose.pose import median_length
from echopose.ranging import half_spectrum, mix_and_lowpass, strongest_peak
from echopose.chirp import reference_slopes

SPEAKER = np.zeros(3)


def static_scenario(distance, spec, geometry, noise=None, occlusion=None,
                    duration=2.0, seed=0, yaw_off=0.0, clock=None):
    task = traj.hold_facing(traj.grid_position(0.0, distance), SPEAKER, duration,
                            yaw_off=yaw_off)
    return sim.Scenario(
        trajectory=task, speaker_position=SPEAKER, geometry=geometry,
        noise_snr_db=noise, occlusion=occlusion,
        clock=clock or sim.ClockModel(), duration=duration, seed=seed,
    )


class TestClockModel:
    def test_drift_range(self):
        with pytest.raises(ScenarioError):
            sim.ClockModel(drift_ppm=500.0)


class TestOcclusionGain:
    def test_frontal_pose_unoccluded(self, geometry):
        model = sim.OcclusionModel(onset_deg=60.0, ramp_deg=20.0, shadow_db=-25.0)
        pose = HeadPose(np.array([0.0, -1.0, 0.0]), 0.0, 0.0)
        for mic in (0, 1):
            assert sim.occlusion_gain(pose, SPEAKER, mic, model, geometry) == 0.0

    def test_far_side_mic_fully_shadowed(self, geometry):
        model = sim.OcclusionModel(onset_deg=60.0, ramp_deg=20.0, shadow_db=-25.0)
        pose = HeadPose(np.array([0.0, -1.0, 0.0]), 80.0, 0.0)
        # turning right shadows the right-side mic
        assert sim.occlusion_gain(pose, SPEAKER, 1, model, geometry) == pytest.approx(-25.0)
        assert sim.occlusion_gain(pose, SPEAKER, 0, model, geometry) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(yaw=st.floats(0.0, 88.0))
    def test_monotone_in_angle(self, yaw):
        model = sim.OcclusionModel(onset_deg=40.0, ramp_deg=30.0, shadow_db=-30.0)
        g = HeadGeometry()
        a = sim.occlusion_gain(HeadPose(np.array([0.0, -1.0, 0.0]), yaw, 0.0),
                               SPEAKER, 1, model, g)
        b = sim.occlusion_gain(HeadPose(np.array([0.0, -1.0, 0.0]), min(yaw + 5, 89.0), 0.0),
                               SPEAKER, 1, model, g)
        assert b <= a + 1e-9

    def test_invalid_model(self):
        with pytest.raises(ScenarioError):
            sim.OcclusionModel(ramp_deg=0.0)


class TestRendering:
    def test_static_round_trip_delay(self, spec, geometry):
        scenario = static_scenario(1.0, spec, geometry)
        buf, trace = sim.simulate_scene(scenario, spec)
        ref = synthesize_triangular(spec, 1).data[0]
        for m in range(3):
            corr = np.correlate(buf.data[m, : 6 * 2048], ref, mode="valid")
            lag = int(np.argmax(corr))
            d = trace.distances[0, m]
            expected = d / SPEED_OF_SOUND * spec.sample_rate
            assert abs((lag % 2048) - expected % 2048) <= 0.51 * 2048 / 2048 + 1

    def test_doppler_splits_up_down_beats(self, spec, geometry):
        # 0.5 m/s approach: up and down slope beats split by 2 * f_c v / c
        task = traj.constant_radial_task(SPEAKER, 1.3, 0.5, 1.2)
        scenario = sim.Scenario(trajectory=task, speaker_position=SPEAKER,
                                geometry=geometry, noise_snr_db=None, seed=0)
        buf, _ = sim.simulate_scene(scenario, spec)
        up, down = reference_slopes(spec)
        period = spec.period_samples
        splits = []
        for k in range(5, 20):
            frame = buf.data[0, k * period : (k + 1) * period]
            bu = strongest_peak(half_spectrum(mix_and_lowpass(frame[:1024], up.data[0]), 4))
            bd = strongest_peak(half_spectrum(mix_and_lowpass(frame[1024:], down.data[0]), 4))
            splits.append(bd.freq - bu.freq)
        f_d = spec.center_frequency * 0.5 / SPEED_OF_SOUND
        assert np.median(splits) == pytest.approx(2 * f_d, abs=6.0)

    def test_occlusion_drops_band_energy(self, spec, geometry):
        model = sim.OcclusionModel(onset_deg=40.0, ramp_deg=20.0, shadow_db=-20.0)
        visible = static_scenario(1.0, spec, geometry, occlusion=model, yaw_off=0.0)
        shadowed = static_scenario(1.0, spec, geometry, occlusion=model, yaw_off=-75.0)
        # turning left shadows the left mic (channel 0)
        e_vis, e_shadow = (
            band_energy_db(sim.simulate_scene(s, spec)[0].data[0], spec.sample_rate,
                           spec.f0, spec.f1)
            for s in (visible, shadowed)
        )
        drop = e_vis - e_shadow
        assert drop == pytest.approx(20.0, abs=1.0)

    def test_rms_scales_inverse_distance(self, spec, geometry):
        rms = {}
        for d in (0.5, 1.0, 2.0):
            scenario = static_scenario(d, spec, geometry, noise=None)
            buf, _ = sim.simulate_scene(scenario, spec)
            rms[d] = np.sqrt(np.mean(buf.data[0] ** 2))
        assert rms[0.5] / rms[1.0] == pytest.approx(2.0, rel=0.01)
        assert rms[1.0] / rms[2.0] == pytest.approx(2.0, rel=0.01)

    def test_determinism_bit_identical(self, spec, geometry):
        scenario = static_scenario(1.0, spec, geometry, noise=28.0, seed=42)
        a, ta = sim.simulate_scene(scenario, spec)
        b, tb = sim.simulate_scene(scenario, spec)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(ta.d_m, tb.d_m)

    def test_chunked_render_matches_full(self, spec, geometry):
        scenario = static_scenario(0.8, spec, geometry, noise=30.0, seed=3)
        full, _ = sim.simulate_scene(scenario, spec)
        parts = list(sim.render_chunks(scenario, spec))
        assert np.array_equal(np.concatenate(parts, axis=1), full.data)

    def test_noise_snr_definition(self, spec, geometry):
        # channel noise floor set against the 1 m direct path level
        quiet = static_scenario(1.0, spec, geometry, noise=None, seed=1)
        noisy = static_scenario(1.0, spec, geometry, noise=20.0, seed=1)
        clean, _ = sim.simulate_scene(quiet, spec)
        dirty, _ = sim.simulate_scene(noisy, spec)
        noise = dirty.data[0] - clean.data[0]
        snr = 10 * np.log10(np.mean(clean.data[0] ** 2) / np.mean(noise ** 2))
        assert snr == pytest.approx(20.0, abs=0.5)


class TestGroundTruth:
    def test_frame_rate(self, spec, geometry):
        scenario = static_scenario(1.0, spec, geometry, duration=4.0)
        trace = sim.ground_truth_trace(scenario, spec)
        assert len(trace) == int(4.0 * 23.4375)
        assert np.diff(trace.t)[0] == pytest.approx(1 / 23.4375)

    def test_median_length_consistency(self, spec, geometry):
        # trace distances satisfy the median identity at machine precision
        task = traj.zigzag_task(traj.grid_position(0.3, 0.8, 0.1), SPEAKER)
        scenario = sim.Scenario(trajectory=task, speaker_position=SPEAKER,
                                geometry=geometry, noise_snr_db=None)
        trace = sim.ground_truth_trace(scenario, spec)
        for i in range(0, len(trace), 7):
            m = median_length(trace.distances[i, 0], trace.distances[i, 1], geometry.d_e)
            assert m == pytest.approx(trace.d_m[i], abs=1e-9)

    def test_csv_round_trip(self, spec, geometry, tmp_path):
        scenario = static_scenario(1.0, spec, geometry, duration=2.0)
        trace = sim.ground_truth_trace(scenario, spec)
        p = tmp_path / "truth.csv"
        trace.write_csv(p)
        loaded = sim.GroundTruthTrace.read_csv(p)
        np.testing.assert_allclose(loaded.d_m, trace.d_m, atol=1e-6)
        np.testing.assert_allclose(loaded.yaw, trace.yaw, atol=1e-4)


class TestScenarioConfig:
    def test_bundled_config_loads(self):
        import importlib.resources as res

        path = res.files("echopose") / "configs" / "grid-0-50-static.yaml"
        scenario, spec = sim.load_scenario(str(path))
        assert scenario.name == "grid-0-50-static"
        assert scenario.duration > 10.0
        assert spec.f0 == 17_500

    def test_missing_trajectory_names_field(self):
        with pytest.raises(ConfigurationError, match="trajectory"):
            sim.scenario_from_dict({"seed": 1})

    def test_unknown_task_rejected(self):
        with pytest.raises(ConfigurationError, match="task"):
            sim.scenario_from_dict({"trajectory": {"task": "moonwalk"}})

    def test_write_scene_deterministic(self, spec, geometry, tmp_path):
        scenario = static_scenario(1.0, spec, geometry, noise=30.0, seed=12, duration=1.0)
        digests = []
        for name in ("a", "b"):
            wav = tmp_path / f"{name}.wav"
            csv = tmp_path / f"{name}.csv"
            sim.write_scene(scenario, spec, wav, csv)
            digests.append(hashlib.sha256(wav.read_bytes()).hexdigest()
                           + hashlib.sha256(csv.read_bytes()).hexdigest())
        assert digests[0] == digests[1]


class TestEcho:
    def test_echo_adds_second_beat(self, spec, geometry):
        base = static_scenario(0.8, spec, geometry)
        with_echo = static_scenario(0.8, spec, geometry)
        with_echo.echo = sim.EchoModel(wall_x=1.2, attenuation_db=-6.0)
        buf, trace = sim.simulate_scene(with_echo, spec)
        up, _ = reference_slopes(spec)
        frame = buf.data[0, 10 * 2048 : 11 * 2048]
        s = half_spectrum(mix_and_lowpass(frame[:1024], up.data[0]), 4)
        from echopose.ranging import cfar_detect

        peaks = cfar_detect(s, stride=4)
        assert len(peaks) >= 2
        # echo arrives later: second peak above the direct beat
        gap_m = (peaks[1].freq - peaks[0].freq) / spec.hz_per_meter()
        image = np.array([2 * 1.2, 0.0, 0.0])
        mic = trace.distances[10, 0]
        d_echo = np.linalg.norm(
            traj.grid_position(0.0, 0.8) + np.array([-geometry.d_e / 2, 0, 0]) - image
        )
        assert gap_m == pytest.approx(d_echo - mic, abs=0.08)
