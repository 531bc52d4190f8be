"""Shared scene-running utilities and independent oracles for the tests.

Oracles here deliberately avoid the code paths they check: beat frequencies
come from closed-form arithmetic, delays from direct waveform evaluation,
band levels from plain FFT energy sums.
"""

from __future__ import annotations

import numpy as np

from echopose import sim, trajectory as traj
from echopose.calibration import CalibrationData, calibrate_reference
from echopose.chirp import ChirpSpec, SampleBuffer, waveform_at
from echopose.geometry import SPEED_OF_SOUND, HeadGeometry
from echopose.metrics import evaluate_tracking
from echopose.pose import PoseTracker
from echopose.ranging import PipelineConfig, RangingSession

SPEAKER = np.zeros(3)


def analytic_beat_for_delay(spec: ChirpSpec, delay_s: float) -> float:
    """Beat frequency of a reference mixed with a copy delayed by delay_s."""
    return spec.slope_rate * delay_s


def doppler_shift(spec: ChirpSpec, radial_speed: float) -> float:
    """First-order beat shift magnitude for a given closing speed."""
    return spec.center_frequency * radial_speed / SPEED_OF_SOUND


def delayed_stream(spec: ChirpSpec, delays_s, n_samples: int, amplitude=0.3) -> np.ndarray:
    """Three channels of the transmit waveform with per-channel delays.

    ``delays_s`` may be scalars or callables mapping sample-time arrays to
    delay arrays (for moving targets).
    """
    t = np.arange(n_samples) / spec.sample_rate
    out = np.empty((3, n_samples))
    for m in range(3):
        d = delays_s[m] if isinstance(delays_s, (list, tuple)) else delays_s
        tau = d(t) if callable(d) else np.full(n_samples, float(d))
        out[m] = amplitude * waveform_at(spec, t - tau) / spec.amplitude
    return out


def synthetic_calibration(spec: ChirpSpec, config: PipelineConfig | None = None,
                          geometry: HeadGeometry | None = None) -> CalibrationData:
    """Real calibration run on a noise-free synthetic stream at the
    calibration-pose delays; gives sessions an exact reference."""
    config = config or PipelineConfig()
    geometry = geometry or HeadGeometry()
    from echopose.calibration import geometric_standoffs

    standoffs = geometric_standoffs(geometry)
    delays = [d / SPEED_OF_SOUND for d in standoffs]
    n = int(5.0 * spec.sample_rate)
    stream = SampleBuffer(delayed_stream(spec, delays, n), spec.sample_rate)
    return calibrate_reference(stream, spec, 4.5, config, geometry)


def band_energy_db(x: np.ndarray, fs: int, f_lo: float, f_hi: float) -> float:
    """Plain FFT band-energy meter in dB (oracle for level checks)."""
    spectrum = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(len(x), 1.0 / fs)
    sel = (freqs >= f_lo) & (freqs <= f_hi)
    return 10.0 * np.log10(np.sum(spectrum[sel]) + 1e-300)


def run_pipeline_scene(
    task,
    spec: ChirpSpec,
    seed: int = 0,
    geometry: HeadGeometry | None = None,
    noise_snr_db: float = 30.0,
    occlusion=None,
    echo=None,
    clock=None,
    config: PipelineConfig | None = None,
    cal_hold: float = 4.0,
    transition: float = 2.0,
    cal_window: float | None = None,
):
    """Calibration-prefixed scene through the whole pipeline.

    Returns (range estimates, pose estimates, truth trace, task start time).
    """
    geometry = geometry or HeadGeometry()
    full = traj.with_calibration_prefix(task, SPEAKER, geometry,
                                        hold_s=cal_hold, transition_s=transition)
    scenario = sim.Scenario(
        trajectory=full, speaker_position=SPEAKER, geometry=geometry,
        noise_snr_db=noise_snr_db, occlusion=occlusion, echo=echo,
        clock=clock or sim.ClockModel(offset=0.137), seed=seed,
    )
    buffer, trace = sim.simulate_scene(scenario, spec)
    cal = calibrate_reference(buffer, spec, cal_window or cal_hold,
                              config, geometry)
    session = RangingSession(spec, cal, config or PipelineConfig())
    tracker = PoseTracker(cal)
    estimates = session.run([buffer.data])
    poses = [tracker.update(e) for e in estimates]
    return estimates, poses, trace, cal_hold + transition


def tracking_report(poses, trace, t_start):
    t = np.array([p.t for p in poses])
    return evaluate_tracking(
        t, [p.d_m for p in poses], [p.yaw for p in poses], [p.pitch for p in poses],
        trace.t, trace.d_m, trace.yaw, trace.pitch, t_start=t_start,
    )


def per_mic_errors(estimates, trace, t_start):
    """Per-mic signed distance errors over the evaluation window."""
    t = np.array([e.t for e in estimates])
    d = np.array([e.distances for e in estimates])
    sel = t >= t_start
    errs = []
    for m in range(3):
        truth = np.interp(t[sel], trace.t, trace.distances[:, m])
        errs.append(d[sel, m] - truth)
    return errs
