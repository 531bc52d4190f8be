"""Deterministic acoustic scene simulator.

Renders what the three earphone microphones record while a head moves in
front of a speaker playing the triangular chirp: per-sample fractional
propagation delay (the transmit waveform is known analytically, so delays
are evaluated exactly rather than interpolated), 1/distance spreading, an
angular head-shadow model, an optional single wall echo, white noise, and a
receiver clock with start offset and linear rate error.  Doppler falls out
of the time-varying delay.  Ground truth is reported on the ranging frame
grid and replaces a motion-capture rig as the evaluation reference.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import trajectory as traj
from .chirp import ChirpSpec, SampleBuffer, instantaneous_phase
from .errors import ConfigurationError, ScenarioError
from .geometry import (
    SPEED_OF_SOUND,
    DeviceRectangle,
    HeadGeometry,
    HeadPose,
    gaze_angles,
    head_axes,
    mic_world_positions_batch,
)

# Received direct-path amplitude is tx_amplitude * AMP_REF_DIST / distance,
# saturating inside NEAR_FIELD_DIST so the calibration pose cannot clip.
AMP_REF_DIST = 0.2
NEAR_FIELD_DIST = 0.11
# Noise level is defined against the direct path at this distance.
SNR_REF_DIST = 1.0

RENDER_CHUNK = 1 << 16


@dataclass(frozen=True)
class ClockModel:
    """Receiver clock: capture starts ``offset`` s into the transmit timeline
    and runs at (1 + drift_ppm * 1e-6) times the nominal rate."""

    offset: float = 0.0
    drift_ppm: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.drift_ppm) > 200.0:
            raise ScenarioError("drift_ppm outside the commodity crystal range (+/-200)")


@dataclass(frozen=True)
class OcclusionModel:
    """Angular head-shadow: full level until ``onset_deg`` past grazing, then a
    cosine ramp down to ``shadow_db`` over ``ramp_deg``."""

    onset_deg: float = 50.0
    ramp_deg: float = 20.0
    shadow_db: float = -25.0

    def __post_init__(self) -> None:
        if self.ramp_deg <= 0 or self.shadow_db > 0:
            raise ScenarioError("occlusion needs ramp_deg > 0 and shadow_db <= 0")


@dataclass(frozen=True)
class EchoModel:
    """Single specular wall reflection via an image source across x = wall_x."""

    wall_x: float = 1.4
    attenuation_db: float = -10.0


@dataclass
class Scenario:
    trajectory: traj.Trajectory
    speaker_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    geometry: HeadGeometry = field(default_factory=HeadGeometry)
    noise_snr_db: float | None = 30.0
    occlusion: OcclusionModel | None = None
    echo: EchoModel | None = None
    clock: ClockModel = field(default_factory=ClockModel)
    duration: float | None = None
    seed: int = 0
    name: str = "scenario"
    device: DeviceRectangle | None = None

    def __post_init__(self) -> None:
        self.speaker_position = np.asarray(self.speaker_position, dtype=np.float64).reshape(3)
        if self.duration is None:
            self.duration = self.trajectory.duration
        if self.duration <= 0:
            raise ScenarioError("scenario duration must be positive")
        self.trajectory.validate()


def occlusion_gain(
    pose: HeadPose, speaker, mic_index: int, model: OcclusionModel,
    geometry: HeadGeometry | None = None,
) -> float:
    """Head-shadow gain in dB (<= 0) for one mic at one pose."""
    geometry = geometry or HeadGeometry()
    ear, _, _ = head_axes(np.array([pose.yaw]), np.array([pose.pitch]))
    mics, _, _ = mic_world_positions_batch(
        geometry, pose.position[None, :], np.array([pose.yaw]), np.array([pose.pitch])
    )
    to_speaker = np.asarray(speaker, dtype=np.float64) - mics[0, mic_index]
    to_speaker = to_speaker / np.linalg.norm(to_speaker)
    normal = -ear[0] if mic_index == 0 else ear[0]
    excess = np.degrees(np.arccos(np.clip(np.dot(normal, to_speaker), -1.0, 1.0))) - 90.0
    return float(_shadow_db(np.array([excess]), model)[0])


def _shadow_db(excess_deg: np.ndarray, model: OcclusionModel) -> np.ndarray:
    """Gain in dB as a function of degrees past grazing; monotone non-increasing."""
    w = np.clip((excess_deg - model.onset_deg) / model.ramp_deg, 0.0, 1.0)
    return model.shadow_db * 0.5 * (1.0 - np.cos(np.pi * w))


def _channel_gains_db(scenario: Scenario, ear, to_speaker_unit) -> np.ndarray:
    """Occlusion gain per (sample, mic) in dB; zeros when disabled."""
    n = to_speaker_unit.shape[0]
    if scenario.occlusion is None:
        return np.zeros((n, 3))
    gains = np.empty((n, 3))
    for m in range(3):
        normal = -ear if m == 0 else ear
        cosang = np.einsum("ij,ij->i", normal, to_speaker_unit[:, m, :])
        excess = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))) - 90.0
        gains[:, m] = _shadow_db(excess, scenario.occlusion)
    return gains


@dataclass
class GroundTruthTrace:
    """Per-frame truth: timestamps are receiver capture time at frame centers."""

    t: np.ndarray
    distances: np.ndarray  # (n, 3) true speaker-to-mic distances
    yaw: np.ndarray  # deg, relative to the speaker direction
    pitch: np.ndarray  # deg
    d_m: np.ndarray  # head center to speaker

    COLUMNS = ("t", "d_l", "d_r", "d_s", "yaw", "pitch", "d_m")

    def __len__(self) -> int:
        return len(self.t)

    def write_csv(self, path) -> None:
        from .audio_io import atomic_write_text

        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(self.COLUMNS)
        for i in range(len(self.t)):
            w.writerow(
                [
                    f"{self.t[i]:.6f}",
                    f"{self.distances[i, 0]:.6f}",
                    f"{self.distances[i, 1]:.6f}",
                    f"{self.distances[i, 2]:.6f}",
                    f"{self.yaw[i]:.4f}",
                    f"{self.pitch[i]:.4f}",
                    f"{self.d_m[i]:.6f}",
                ]
            )
        atomic_write_text(path, buf.getvalue())

    @classmethod
    def read_csv(cls, path) -> "GroundTruthTrace":
        rows = np.genfromtxt(path, delimiter=",", names=True)
        rows = np.atleast_1d(rows)
        d = np.stack([rows["d_l"], rows["d_r"], rows["d_s"]], axis=1)
        return cls(rows["t"], d, rows["yaw"], rows["pitch"], rows["d_m"])


def _pose_arrays(scenario: Scenario, traj_times: np.ndarray):
    pos, yaw, pitch = scenario.trajectory.sample(traj_times)
    mics, face, up = mic_world_positions_batch(scenario.geometry, pos, yaw, pitch)
    return pos, yaw, pitch, mics


def ground_truth_trace(scenario: Scenario, spec: ChirpSpec) -> GroundTruthTrace:
    rate = spec.frame_rate
    n_frames = int(np.floor(scenario.duration * rate))
    t_session = (np.arange(n_frames) + 0.5) / rate
    # The pose that was truly in effect when those receiver samples were taken.
    scale = 1.0 / (1.0 + scenario.clock.drift_ppm * 1e-6)
    pos, yaw, pitch, mics = _pose_arrays(scenario, t_session * scale)
    dists = np.linalg.norm(mics - scenario.speaker_position[None, None, :], axis=2)
    gaze_yaw, gaze_pitch = gaze_angles(pos, yaw, pitch, scenario.speaker_position)
    d_m = np.linalg.norm(scenario.speaker_position[None, :] - pos, axis=1)
    return GroundTruthTrace(t_session, dists, gaze_yaw, gaze_pitch, d_m)


def render_chunks(scenario: Scenario, spec: ChirpSpec) -> Iterator[np.ndarray]:
    """Yield the 3-channel mic recording in fixed-size blocks.

    The chunk size is fixed so the noise stream (and therefore the output)
    is bit-identical no matter how the caller consumes it.
    """
    fs = spec.sample_rate
    n_total = int(round(scenario.duration * fs))
    delta = scenario.clock.drift_ppm * 1e-6
    rng = np.random.default_rng(scenario.seed)
    noise_rngs = rng.spawn(3)
    c = SPEED_OF_SOUND

    if scenario.noise_snr_db is not None:
        ref_amp = spec.amplitude * AMP_REF_DIST / SNR_REF_DIST
        sigma = (ref_amp / np.sqrt(2.0)) / (10.0 ** (scenario.noise_snr_db / 20.0))
    else:
        sigma = 0.0

    image = None
    if scenario.echo is not None:
        image = scenario.speaker_position.copy()
        image[0] = 2.0 * scenario.echo.wall_x - image[0]
        echo_lin = 10.0 ** (scenario.echo.attenuation_db / 20.0)

    start = 0
    while start < n_total:
        n = min(RENDER_CHUNK, n_total - start)
        idx = np.arange(start, start + n, dtype=np.float64)
        t_world = scenario.clock.offset + idx / (fs * (1.0 + delta))
        traj_time = idx / (fs * (1.0 + delta))
        pos, yaw, pitch = scenario.trajectory.sample(traj_time)
        mics, _, _ = mic_world_positions_batch(scenario.geometry, pos, yaw, pitch)
        to_speaker = scenario.speaker_position[None, None, :] - mics
        dists = np.linalg.norm(to_speaker, axis=2)
        ear, _, _ = head_axes(yaw, pitch)
        gains_db = _channel_gains_db(scenario, ear, to_speaker / dists[..., None])

        block = np.empty((3, n))
        for m in range(3):
            d = dists[:, m]
            amp = spec.amplitude * AMP_REF_DIST / np.maximum(d, NEAR_FIELD_DIST)
            amp = amp * 10.0 ** (gains_db[:, m] / 20.0)
            signal = amp * np.cos(instantaneous_phase(spec, t_world - d / c))
            if image is not None:
                de = np.linalg.norm(mics[:, m, :] - image[None, :], axis=1)
                eamp = spec.amplitude * AMP_REF_DIST / np.maximum(de, NEAR_FIELD_DIST)
                signal = signal + echo_lin * eamp * np.cos(
                    instantaneous_phase(spec, t_world - de / c)
                )
            if sigma > 0:
                signal = signal + noise_rngs[m].normal(0.0, sigma, n)
            block[m] = signal
        yield block
        start += n


def simulate_scene(scenario: Scenario, spec: ChirpSpec) -> tuple[SampleBuffer, GroundTruthTrace]:
    """Render the whole scene into memory plus its ground-truth trace."""
    blocks = list(render_chunks(scenario, spec))
    data = np.concatenate(blocks, axis=1) if blocks else np.zeros((3, 0))
    return SampleBuffer(data, spec.sample_rate), ground_truth_trace(scenario, spec)


def write_scene(scenario: Scenario, spec: ChirpSpec, wav_path, trace_path) -> int:
    """Stream the scene to a 3-channel WAV and trace CSV; returns sample count."""
    from . import audio_io

    n = audio_io.write_wav_chunks(wav_path, render_chunks(scenario, spec), spec.sample_rate)
    ground_truth_trace(scenario, spec).write_csv(trace_path)
    return n


# ---------------------------------------------------------------------------
# Scenario configuration files

_TASK_BUILDERS = {
    "static": lambda pos, spk, p: traj.hold_facing(
        pos, spk, p.get("duration", 6.0),
        yaw_off=p.get("yaw_off", 0.0), pitch_off=p.get("pitch_off", 0.0)),
    "neutral": lambda pos, spk, p: traj.neutral_task(pos, spk, p.get("duration", 5.0)),
    "forward_back": lambda pos, spk, p: traj.forward_back_task(
        pos, spk, p.get("amplitude", 0.18), p.get("cycles", 3), p.get("period", 2.4)),
    "yaw_sweep": lambda pos, spk, p: traj.yaw_sweep_task(
        pos, spk, p.get("max_angle", 60.0), p.get("cycles", 3), p.get("period", 4.0)),
    "pitch_sweep": lambda pos, spk, p: traj.pitch_sweep_task(
        pos, spk, p.get("max_angle", 35.0), p.get("cycles", 3), p.get("period", 4.0)),
    "zigzag": lambda pos, spk, p: traj.zigzag_task(
        pos, spk, p.get("width", 40.0), p.get("height", 28.0), p.get("stroke", 0.9)),
    "random": lambda pos, spk, p: traj.random_motion_task(
        pos, spk, p.get("duration", 3.0), p.get("seed", 0),
        p.get("yaw_range", 60.0), p.get("pitch_range", 30.0), p.get("pos_jitter", 0.04)),
    "constant_radial": lambda pos, spk, p: traj.constant_radial_task(
        spk, p.get("start_distance", 1.3), p.get("speed", 0.5), p.get("duration", 1.6)),
}


def scenario_from_dict(cfg: dict) -> tuple[Scenario, ChirpSpec]:
    """Build a scenario (and the chirp spec) from a parsed config mapping.

    Raises ConfigurationError naming the first missing/invalid field.
    """
    if not isinstance(cfg, dict):
        raise ConfigurationError("scenario config must be a mapping")

    spec_cfg = cfg.get("chirp", {})
    spec = ChirpSpec(
        f0=spec_cfg.get("f0", 17_500.0),
        f1=spec_cfg.get("f1", 23_500.0),
        slope_len=spec_cfg.get("slope_len", 1024),
        sample_rate=spec_cfg.get("sample_rate", 48_000),
        amplitude=spec_cfg.get("amplitude", 0.5),
    )

    geom_cfg = cfg.get("geometry", {})
    geometry = HeadGeometry(
        d_e=geom_cfg.get("d_e", 0.235),
        d_b=geom_cfg.get("d_b", 0.06),
        theta0=geom_cfg.get("theta0", 25.0),
    )
    speaker = np.asarray(cfg.get("speaker_position", [0.0, 0.0, 0.0]), dtype=np.float64)

    tr_cfg = cfg.get("trajectory")
    if tr_cfg is None:
        raise ConfigurationError("missing required field 'trajectory'")
    task = tr_cfg.get("task")
    if task is None:
        raise ConfigurationError("missing required field 'trajectory.task'")
    if task not in _TASK_BUILDERS:
        raise ConfigurationError(
            f"unknown trajectory.task {task!r}; expected one of {sorted(_TASK_BUILDERS)}"
        )
    grid = tr_cfg.get("grid", [0.0, 0.5])
    position = traj.grid_position(*grid)
    built = _TASK_BUILDERS[task](position, speaker, tr_cfg)

    cal_cfg = tr_cfg.get("calibration_prefix")
    if cal_cfg is not None:
        built = traj.with_calibration_prefix(
            built, speaker, geometry,
            hold_s=cal_cfg.get("hold_s", 10.0),
            transition_s=cal_cfg.get("transition_s", 2.0),
        )

    occ = None
    if cfg.get("occlusion") is not None:
        o = cfg["occlusion"]
        occ = OcclusionModel(
            onset_deg=o.get("onset_deg", 50.0),
            ramp_deg=o.get("ramp_deg", 20.0),
            shadow_db=o.get("shadow_db", -25.0),
        )
    echo = None
    if cfg.get("echo") is not None:
        e = cfg["echo"]
        echo = EchoModel(wall_x=e.get("wall_x", 1.4), attenuation_db=e.get("attenuation_db", -10.0))

    clk = cfg.get("clock", {})
    clock = ClockModel(offset=clk.get("offset", 0.0), drift_ppm=clk.get("drift_ppm", 0.0))

    scenario = Scenario(
        trajectory=built,
        speaker_position=speaker,
        geometry=geometry,
        noise_snr_db=cfg.get("noise_snr_db", 30.0),
        occlusion=occ,
        echo=echo,
        clock=clock,
        duration=cfg.get("duration"),
        seed=cfg.get("seed", 0),
        name=cfg.get("name", "scenario"),
    )
    return scenario, spec


def load_scenario(path) -> tuple[Scenario, ChirpSpec]:
    import yaml

    with open(path) as f:
        cfg = yaml.safe_load(f)
    return scenario_from_dict(cfg)
