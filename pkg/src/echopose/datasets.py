"""Synthetic dataset builders for the attention and activity classifiers.

Look/not-look labels come from the same oracle the evaluation uses: the ray
along the face direction either does or does not intersect the device
rectangle.  Activity examples are one segmented exercise repetition each,
with segment boundaries taken from the motion builder (segmentation itself
is out of scope).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim, trajectory as traj
from .attention import extract_attention_features, extract_activity_features
from .calibration import calibrate_reference, coarse_sync
from .chirp import ChirpSpec, SampleBuffer
from .geometry import DeviceRectangle, HeadGeometry
from .ranging import PipelineConfig, RangingSession


@dataclass
class AttentionDataset:
    features: np.ndarray  # (n, 63)
    labels: np.ndarray    # bool
    trajectory_ids: np.ndarray

    def fold(self, held_out: int):
        train = self.trajectory_ids != held_out
        return (
            self.features[train], self.labels[train],
            self.features[~train], self.labels[~train],
        )


def _attention_fixations(rng, look_spread=6.0):
    """Mix of on-device and clearly-off fixations, both sides, both axes."""
    fixations = []
    for _ in range(8):
        if rng.random() < 0.5:
            dy = rng.uniform(-look_spread, look_spread)
            dp = rng.uniform(-look_spread / 2, look_spread / 2)
        else:
            dy = rng.choice([-1.0, 1.0]) * rng.uniform(28.0, 62.0)
            dp = rng.uniform(-25.0, 25.0)
        fixations.append((dy, dp, rng.uniform(1.4, 2.2)))
    return fixations


def build_attention_dataset(
    spec: ChirpSpec,
    n_trajectories: int = 8,
    seed: int = 100,
    noise_snr_db: float = 30.0,
    frame_step: int = 2,
    config: PipelineConfig | None = None,
) -> AttentionDataset:
    """Render gaze scripts at several positions and label every frame."""
    config = config or PipelineConfig()
    speaker = np.zeros(3)
    rect = DeviceRectangle(center=speaker)
    geometry = HeadGeometry()
    occlusion = sim.OcclusionModel(onset_deg=35.0, ramp_deg=25.0, shadow_db=-22.0)

    feats, labels, ids = [], [], []
    positions = [
        traj.grid_position(0.0, 0.7), traj.grid_position(0.0, 1.2),
        traj.grid_position(-0.4, 0.9), traj.grid_position(0.4, 0.9),
        traj.grid_position(0.0, 1.0, 0.2), traj.grid_position(0.0, 0.8, -0.2),
        traj.grid_position(-0.3, 1.3), traj.grid_position(0.3, 0.6),
    ]
    for tid in range(n_trajectories):
        rng = np.random.default_rng(seed + tid)
        position = positions[tid % len(positions)]
        base_yaw, base_pitch = traj.aim_at(position, speaker)
        fixations = [
            (base_yaw + dy, base_pitch + dp, dur)
            for dy, dp, dur in _attention_fixations(rng)
        ]
        trajectory = traj.gaze_script(position, fixations, seed=seed + tid)
        scenario = sim.Scenario(
            trajectory=trajectory,
            speaker_position=speaker,
            geometry=geometry,
            noise_snr_db=noise_snr_db,
            occlusion=occlusion,
            seed=seed + tid,
            name=f"gaze-{tid}",
        )
        buffer, _ = sim.simulate_scene(scenario, spec)
        n0 = coarse_sync(buffer, spec)
        period = spec.period_samples
        n_frames = (buffer.n_samples - n0) // period
        for k in range(0, n_frames, frame_step):
            start = n0 + k * period
            frame = buffer.data[:, start : start + period]
            t_c = (start + period / 2) / spec.sample_rate
            pos, yaw, pitch = trajectory.sample(np.array([t_c]))
            feats.append(extract_attention_features(frame, spec, config=config))
            labels.append(bool(rect.gaze_hits(pos, yaw, pitch)[0]))
            ids.append(tid)
    return AttentionDataset(
        np.array(feats), np.array(labels, dtype=bool), np.array(ids)
    )


@dataclass
class ActivityDataset:
    blocks: list          # (160, 7) arrays
    labels: list[str]
    seeds: np.ndarray

    def fold(self, held_out_seed: int):
        tr = [i for i, s in enumerate(self.seeds) if s != held_out_seed]
        te = [i for i, s in enumerate(self.seeds) if s == held_out_seed]
        return (
            [self.blocks[i] for i in tr], [self.labels[i] for i in tr],
            [self.blocks[i] for i in te], [self.labels[i] for i in te],
        )


def build_activity_dataset(
    spec: ChirpSpec,
    seeds=range(5),
    reps: int = 4,
    noise_snr_db: float = 30.0,
    config: PipelineConfig | None = None,
) -> ActivityDataset:
    """Render the four exercises and cut one feature block per repetition."""
    config = config or PipelineConfig()
    speaker = np.zeros(3)
    geometry = HeadGeometry()
    cal_hold, transition = 4.0, 2.0
    blocks, labels, seed_ids = [], [], []
    for seed in seeds:
        for label in traj.ACTIVITY_LABELS:
            task = traj.activity_task(label, speaker, seed=seed, reps=reps)
            rep_period = task.duration / reps
            full = traj.with_calibration_prefix(
                task, speaker, geometry, hold_s=cal_hold, transition_s=transition
            )
            scenario = sim.Scenario(
                trajectory=full,
                speaker_position=speaker,
                geometry=geometry,
                noise_snr_db=noise_snr_db,
                seed=1000 * seed + hash(label) % 997,
                name=f"{label}-{seed}",
            )
            buffer, _ = sim.simulate_scene(scenario, spec)
            cal = calibrate_reference(buffer, spec, cal_hold, config, geometry)
            session = RangingSession(spec, cal, config)
            estimates = session.run([buffer.data])
            t_task = cal_hold + transition
            for r in range(reps):
                lo = t_task + r * rep_period
                hi = lo + rep_period
                window = [e for e in estimates if lo <= e.t < hi]
                if len(window) < 2:
                    continue
                blocks.append(extract_activity_features(window))
                labels.append(label)
                seed_ids.append(seed)
    return ActivityDataset(blocks, labels, np.array(seed_ids))
