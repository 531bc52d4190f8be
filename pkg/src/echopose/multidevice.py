"""Time-multiplexing several transmitter devices over one acoustic channel.

Devices take turns emitting the chirp in fixed round-robin slots (default
0.5 s); the first seconds of a session are skipped while speakers settle.
Attention scores are computed only from frames that fall entirely inside a
device's own slot, and a small hysteresis keeps the arbitration from
flapping between devices.  Coordination is in-process: the scheduler plays
the role of the shared proxy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sim
from .attention import extract_attention_features, predict_attention
from .chirp import ChirpSpec, SampleBuffer
from .errors import ConfigurationError
from .geometry import HeadGeometry
from .ranging import PipelineConfig
from .trajectory import Trajectory

WARMING_UP = None


@dataclass(frozen=True)
class SlotSchedule:
    device_ids: tuple
    slot_s: float = 0.5
    skip_s: float = 2.0
    start: float = 0.0

    def __post_init__(self) -> None:
        if not self.device_ids:
            raise ConfigurationError("schedule needs at least one device")
        if self.slot_s <= 0 or self.skip_s < 0:
            raise ConfigurationError("slot_s must be positive, skip_s non-negative")

    @property
    def n_devices(self) -> int:
        return len(self.device_ids)

    @property
    def round_s(self) -> float:
        return self.n_devices * self.slot_s


def active_device(schedule: SlotSchedule, t: float):
    """Device id emitting at time t, or None while warming up."""
    if t < schedule.start:
        raise ConfigurationError("t precedes the schedule epoch")
    rel = t - schedule.start - schedule.skip_s
    if rel < 0:
        return WARMING_UP
    idx = int(math.floor(rel / schedule.slot_s)) % schedule.n_devices
    return schedule.device_ids[idx]


def emitting_device_index(schedule: SlotSchedule, t: np.ndarray) -> np.ndarray:
    """Round-robin emission index for (arrays of) times; emission follows the
    same cycle through the warmup so the skip is purely a scoring matter."""
    rel = np.asarray(t, dtype=np.float64) - schedule.start - schedule.skip_s
    return np.floor(rel / schedule.slot_s).astype(np.int64) % schedule.n_devices


def arbitrate_attention(scores: dict, schedule: SlotSchedule, t: float):
    """Freshest-positive-score arbitration without hysteresis.

    ``scores`` maps device id to (score_time, smoothed_score).  Devices whose
    last score is older than one full round are excluded; returns the device
    with the highest positive score, or None.
    """
    best = None
    best_score = 0.0
    for dev, (ts, score) in scores.items():
        if t - ts > schedule.round_s + 1e-9:
            continue
        if score > 0 and (best is None or score > best_score):
            best, best_score = dev, score
    return best


class Arbiter:
    """Slot-by-slot attention arbitration with switch hysteresis.

    A challenger replaces the incumbent only after beating it by ``margin``
    for ``persistence`` consecutive slots.
    """

    def __init__(self, schedule: SlotSchedule, margin: float = 0.2,
                 persistence: int = 2, ema: float = 0.5):
        self.schedule = schedule
        self.margin = margin
        self.persistence = persistence
        self.ema = ema
        self.scores: dict = {}
        self.incumbent = None
        self._challenger = None
        self._streak = 0

    def update_slot(self, device, t: float, slot_score: float) -> None:
        if device in self.scores:
            _, prev = self.scores[device]
            slot_score = self.ema * slot_score + (1.0 - self.ema) * prev
        self.scores[device] = (t, slot_score)

    def arbitrate(self, t: float):
        if t - self.schedule.start < self.schedule.skip_s:
            return WARMING_UP
        fresh = {
            d: (ts, s) for d, (ts, s) in self.scores.items()
            if t - ts <= self.schedule.round_s + 1e-9
        }
        if self.incumbent is not None:
            inc = fresh.get(self.incumbent)
            if inc is None or inc[1] <= 0:
                self.incumbent = None
                self._streak = 0
        if self.incumbent is None:
            self.incumbent = arbitrate_attention(fresh, self.schedule, t)
            self._streak = 0
            return self.incumbent
        inc_score = fresh[self.incumbent][1]
        challenger = None
        challenger_score = -np.inf
        for d, (_, s) in fresh.items():
            if d != self.incumbent and s > challenger_score:
                challenger, challenger_score = d, s
        if challenger is not None and challenger_score > inc_score + self.margin:
            if challenger == self._challenger:
                self._streak += 1
            else:
                self._challenger = challenger
                self._streak = 1
            if self._streak >= self.persistence:
                self.incumbent = challenger
                self._challenger = None
                self._streak = 0
        else:
            self._challenger = None
            self._streak = 0
        return self.incumbent


# ---------------------------------------------------------------------------
# Two-transmitter simulation


@dataclass
class MultiDeviceScene:
    devices: list  # [(device_id, position)]
    trajectory: Trajectory
    gaze_plan: list  # [(t0, t1, device_id looked at)]
    schedule: SlotSchedule
    geometry: HeadGeometry = field(default_factory=HeadGeometry)
    noise_snr_db: float = 30.0
    occlusion: sim.OcclusionModel | None = field(default_factory=sim.OcclusionModel)
    duration: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration is None:
            self.duration = self.trajectory.duration

    def gaze_target(self, t: float):
        for t0, t1, dev in self.gaze_plan:
            if t0 <= t < t1:
                return dev
        return None


def _slot_gate(schedule: SlotSchedule, device_index: int, t: np.ndarray,
               ramp_s: float = 0.01) -> np.ndarray:
    """Unit gate over the device's own slots; cosine edges inside the slot so
    at most one device is ever audible."""
    rel = np.asarray(t, dtype=np.float64) - schedule.start - schedule.skip_s
    slot_idx = np.floor(rel / schedule.slot_s)
    own = (slot_idx.astype(np.int64) % schedule.n_devices) == device_index
    phase = rel - slot_idx * schedule.slot_s
    rise = np.clip(phase / ramp_s, 0.0, 1.0)
    fall = np.clip((schedule.slot_s - phase) / ramp_s, 0.0, 1.0)
    smooth = (0.5 - 0.5 * np.cos(np.pi * rise)) * (0.5 - 0.5 * np.cos(np.pi * fall))
    return np.where(own, smooth, 0.0)


def render_multidevice(scene: MultiDeviceScene, spec: ChirpSpec) -> SampleBuffer:
    """Three-channel recording with the transmitters gated by their slots."""
    parts = []
    for i, (dev_id, position) in enumerate(scene.devices):
        scenario = sim.Scenario(
            trajectory=scene.trajectory,
            speaker_position=np.asarray(position, dtype=np.float64),
            geometry=scene.geometry,
            noise_snr_db=None,
            occlusion=scene.occlusion,
            duration=scene.duration,
            seed=scene.seed,
            name=f"device-{dev_id}",
        )
        clean, _ = sim.simulate_scene(scenario, spec)
        t = np.arange(clean.n_samples) / spec.sample_rate
        gate = _slot_gate(scene.schedule, i, t)
        parts.append(clean.data * gate[None, :])
    total = np.sum(parts, axis=0)
    if scene.noise_snr_db is not None:
        ref_amp = spec.amplitude * sim.AMP_REF_DIST / sim.SNR_REF_DIST
        sigma = (ref_amp / np.sqrt(2.0)) / (10.0 ** (scene.noise_snr_db / 20.0))
        rng = np.random.default_rng(scene.seed)
        total = total + rng.normal(0.0, sigma, total.shape)
    return SampleBuffer(total, spec.sample_rate)


@dataclass
class SlotRecord:
    t: float            # slot start
    emitting: str       # device transmitting in this slot
    chosen: object      # arbitration output at slot end (device id or None)
    truth: object       # scripted gaze target at slot center


def run_arbitration(
    scene: MultiDeviceScene, spec: ChirpSpec, model,
    config: PipelineConfig | None = None,
) -> list[SlotRecord]:
    """End-to-end multi-device pass: render, score own-slot frames, arbitrate.

    Frames straddling a slot boundary are discarded.  One record per slot
    from the epoch (records inside the skip window carry chosen=None).
    """
    from .calibration import coarse_sync

    config = config or PipelineConfig()
    sched = scene.schedule
    buffer = render_multidevice(scene, spec)
    period = spec.period_samples
    fs = spec.sample_rate

    # Sync against a stretch where some device is audible (past skip start).
    sync_from = int((sched.skip_s + 0.05) * fs)
    n0 = coarse_sync(
        SampleBuffer(buffer.data[:, sync_from : sync_from + 4 * period], fs), spec
    )
    base = (sync_from + n0 - config.sync_margin) % period

    arbiter = Arbiter(sched)
    records: list[SlotRecord] = []
    slot_frames: dict = {}

    n_frames = (buffer.n_samples - base) // period
    frame_slot = lambda t: int(math.floor((t - sched.start - sched.skip_s) / sched.slot_s))
    for k in range(n_frames):
        start = base + k * period
        t0 = start / fs
        t1 = (start + period) / fs
        if frame_slot(t0) != frame_slot(t1) or t0 < sched.start + sched.skip_s:
            continue
        dev_idx = int(frame_slot(t0)) % sched.n_devices
        feats = extract_attention_features(
            buffer.data[:, start : start + period], spec, config=config
        )
        _, score = predict_attention(model, feats)
        slot_frames.setdefault(frame_slot(t0), []).append((dev_idx, score))

    n_slots = int((scene.duration - sched.skip_s) / sched.slot_s)
    for s in range(-int(sched.skip_s / sched.slot_s), n_slots):
        t_start = sched.start + sched.skip_s + s * sched.slot_s
        t_end = t_start + sched.slot_s
        dev_idx = s % sched.n_devices
        emitting = sched.device_ids[dev_idx]
        if s in slot_frames:
            scores = [sc for d, sc in slot_frames[s] if d == dev_idx]
            if scores:
                arbiter.update_slot(emitting, t_end, float(np.mean(scores)))
        chosen = arbiter.arbitrate(t_end)
        records.append(
            SlotRecord(t_start, emitting, chosen, scene.gaze_target(t_start + sched.slot_s / 2))
        )
    return records


def two_device_scene(
    fixations_s: float = 19.0,
    n_alternations: int = 1,
    distance: float = 1.0,
    separation: float = 1.0,
    seed: int = 1,
    noise_snr_db: float = 30.0,
) -> MultiDeviceScene:
    """User between two laptops, switching gaze every ``fixations_s``."""
    from .trajectory import aim_at, gaze_script

    pos_a = np.array([-separation / 2.0, 0.0, 0.0])
    pos_b = np.array([separation / 2.0, 0.0, 0.0])
    head = np.array([0.0, -distance, 0.0])
    devices = [("A", pos_a), ("B", pos_b)]

    fixes = []
    plan = []
    t = 0.0
    for i in range(n_alternations + 1):
        target = "A" if i % 2 == 0 else "B"
        pos = pos_a if target == "A" else pos_b
        yaw, pitch = aim_at(head, pos)
        fixes.append((yaw, pitch, fixations_s))
        t_end = t + fixations_s + (0.4 if i < n_alternations else 0.0)
        plan.append((t, t_end, target))
        t = t_end
    trajectory = gaze_script(head, fixes, transition_s=0.4, jitter_deg=1.5, seed=seed)
    schedule = SlotSchedule(("A", "B"))
    return MultiDeviceScene(
        devices=devices,
        trajectory=trajectory,
        gaze_plan=plan,
        schedule=schedule,
        noise_snr_db=noise_snr_db,
        seed=seed,
    )
