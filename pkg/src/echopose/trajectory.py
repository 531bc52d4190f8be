"""Time-parameterized head trajectories.

A trajectory is a list of segments, each mapping local time to head position
(m) and yaw/pitch (deg).  Sampling is vectorized because the simulator
evaluates poses at audio rate.  Builders cover the motion content of the
tracking study (neutral hold, forward/back, yaw sweeps, pitch sweeps, zigzag,
random motion) plus calibration prefixes, gaze scripts and exercise motions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ScenarioError
from .geometry import HeadPose

MAX_ANGULAR_SPEED = 260.0  # deg/s, scenario validity limit


def aim_at(position, target) -> tuple[float, float]:
    """Yaw/pitch (deg) that point the face from ``position`` at ``target``."""
    v = np.asarray(target, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    yaw = np.degrees(np.arctan2(v[0], v[1]))
    pitch = np.degrees(np.arctan2(v[2], np.hypot(v[0], v[1])))
    return float(yaw), float(pitch)


def facing_pose(position, target) -> HeadPose:
    yaw, pitch = aim_at(position, target)
    return HeadPose(np.asarray(position, dtype=np.float64), yaw, pitch)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    return x * x * (3.0 - 2.0 * x)


class Segment:
    duration: float

    def sample(self, t: np.ndarray):
        raise NotImplementedError


@dataclass
class Hold(Segment):
    pose: HeadPose
    duration: float

    def sample(self, t):
        n = len(t)
        pos = np.broadcast_to(self.pose.position, (n, 3)).copy()
        return pos, np.full(n, self.pose.yaw), np.full(n, self.pose.pitch)


@dataclass
class Move(Segment):
    """Eased interpolation between two poses (zero velocity at both ends)."""

    start: HeadPose
    end: HeadPose
    duration: float

    def sample(self, t):
        w = _smoothstep(np.clip(t / self.duration, 0.0, 1.0))
        pos = self.start.position[None, :] + w[:, None] * (
            self.end.position - self.start.position
        )
        yaw = self.start.yaw + w * (self.end.yaw - self.start.yaw)
        pitch = self.start.pitch + w * (self.end.pitch - self.start.pitch)
        return pos, yaw, pitch


@dataclass
class Oscillate(Segment):
    """Sinusoidal offsets around a base pose."""

    base: HeadPose
    duration: float
    period: float
    yaw_amp: float = 0.0
    pitch_amp: float = 0.0
    pos_amp: np.ndarray | None = None  # (3,) meters
    phase: float = 0.0

    def sample(self, t):
        s = np.sin(2.0 * np.pi * t / self.period + self.phase) - np.sin(self.phase)
        pos = np.broadcast_to(self.base.position, (len(t), 3)).copy()
        if self.pos_amp is not None:
            pos = pos + s[:, None] * np.asarray(self.pos_amp, dtype=np.float64)
        yaw = self.base.yaw + self.yaw_amp * s
        pitch = self.base.pitch + self.pitch_amp * s
        return pos, yaw, pitch


@dataclass
class Keyframes(Segment):
    """Cosine-eased interpolation through a pose sequence (used for wander)."""

    times: np.ndarray  # increasing, times[0] == 0
    positions: np.ndarray  # (k, 3)
    yaws: np.ndarray
    pitches: np.ndarray

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def sample(self, t):
        t = np.clip(t, 0.0, self.times[-1])
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0 = self.times[idx]
        t1 = self.times[idx + 1]
        w = _smoothstep((t - t0) / (t1 - t0))
        pos = self.positions[idx] + w[:, None] * (self.positions[idx + 1] - self.positions[idx])
        yaw = self.yaws[idx] + w * (self.yaws[idx + 1] - self.yaws[idx])
        pitch = self.pitches[idx] + w * (self.pitches[idx + 1] - self.pitches[idx])
        return pos, yaw, pitch


@dataclass
class Trajectory:
    segments: list

    def __post_init__(self) -> None:
        if not self.segments:
            raise ScenarioError("trajectory needs at least one segment")
        self._starts = np.concatenate(
            [[0.0], np.cumsum([s.duration for s in self.segments])]
        )

    @property
    def duration(self) -> float:
        return float(self._starts[-1])

    def sample(self, t):
        """Poses at absolute times; clamps outside [0, duration]."""
        t = np.asarray(t, dtype=np.float64)
        t = np.clip(t, 0.0, self.duration)
        seg_idx = np.clip(
            np.searchsorted(self._starts, t, side="right") - 1, 0, len(self.segments) - 1
        )
        pos = np.empty((len(t), 3))
        yaw = np.empty(len(t))
        pitch = np.empty(len(t))
        for i, seg in enumerate(self.segments):
            mask = seg_idx == i
            if not np.any(mask):
                continue
            p, y, q = seg.sample(t[mask] - self._starts[i])
            pos[mask] = p
            yaw[mask] = y
            pitch[mask] = q
        return pos, yaw, pitch

    def pose_at(self, t: float) -> HeadPose:
        pos, yaw, pitch = self.sample(np.array([t]))
        return HeadPose(pos[0], float(yaw[0]), float(pitch[0]))

    def extended(self, other: "Trajectory") -> "Trajectory":
        return Trajectory(self.segments + other.segments)

    def validate(self, check_rate: float = 200.0) -> None:
        """Reject poses outside the valid ranges or implausibly fast rotation."""
        t = np.arange(0.0, self.duration + 1.0 / check_rate, 1.0 / check_rate)
        _, yaw, pitch = self.sample(t)
        if np.any(np.abs(yaw) > 90.0 + 1e-9) or np.any(np.abs(pitch) > 90.0 + 1e-9):
            raise ScenarioError("trajectory leaves the +/-90 degree yaw/pitch range")
        dt = 1.0 / check_rate
        rate = np.hypot(np.diff(yaw), np.diff(pitch)) / dt
        if rate.size and np.max(rate) > MAX_ANGULAR_SPEED:
            raise ScenarioError(
                f"angular speed {np.max(rate):.1f} deg/s exceeds {MAX_ANGULAR_SPEED}"
            )


# ---------------------------------------------------------------------------
# Builders


def grid_position(x: float, y: float, z: float = 0.0) -> np.ndarray:
    """Head position for a test grid cell: x lateral, y distance in front."""
    return np.array([x, -y, z], dtype=np.float64)


def hold_facing(position, speaker, duration, yaw_off=0.0, pitch_off=0.0) -> Trajectory:
    base = facing_pose(position, speaker)
    pose = HeadPose(base.position, base.yaw + yaw_off, base.pitch + pitch_off)
    return Trajectory([Hold(pose, duration)])


def neutral_task(position, speaker, duration=5.0) -> Trajectory:
    return hold_facing(position, speaker, duration)


def forward_back_task(position, speaker, amplitude=0.18, cycles=3, period=2.4) -> Trajectory:
    base = facing_pose(position, speaker)
    los = np.asarray(speaker, dtype=np.float64) - base.position
    los = los / np.linalg.norm(los)
    seg = Oscillate(base, cycles * period, period, pos_amp=amplitude * los)
    return Trajectory([seg])


def yaw_sweep_task(position, speaker, max_angle=60.0, cycles=3, period=4.0) -> Trajectory:
    base = facing_pose(position, speaker)
    return Trajectory([Oscillate(base, cycles * period, period, yaw_amp=max_angle)])


def pitch_sweep_task(position, speaker, max_angle=35.0, cycles=3, period=4.0) -> Trajectory:
    base = facing_pose(position, speaker)
    return Trajectory([Oscillate(base, cycles * period, period, pitch_amp=max_angle)])


def zigzag_task(position, speaker, width=40.0, height=28.0, stroke=0.9) -> Trajectory:
    """Trace a Z with two folds across the yaw/pitch range."""
    base = facing_pose(position, speaker)
    corners = [
        (-width, height), (width, height),
        (-width, 0.0), (width, 0.0),
        (-width, -height), (width, -height),
    ]
    poses = [
        HeadPose(base.position, base.yaw + dy, base.pitch + dp) for dy, dp in corners
    ]
    segs: list[Segment] = [Move(base, poses[0], stroke)]
    for a, b in zip(poses[:-1], poses[1:]):
        segs.append(Move(a, b, stroke))
    segs.append(Move(poses[-1], base, stroke))
    return Trajectory(segs)


def random_motion_task(
    position,
    speaker,
    duration=3.0,
    seed=0,
    yaw_range=60.0,
    pitch_range=30.0,
    pos_jitter=0.04,
    keyframe_rate=1.6,
) -> Trajectory:
    """Smooth random head wandering (seeded, reproducible).

    Keyframe steps are capped so the eased interpolation stays under the
    angular-speed validity limit with margin.
    """
    rng = np.random.default_rng(seed)
    base = facing_pose(position, speaker)
    n_keys = max(3, int(np.ceil(duration * keyframe_rate)) + 1)
    times = np.linspace(0.0, duration, n_keys)
    interval = times[1] - times[0]
    # Eased interpolation peaks at 1.5x the mean rate; keep 25% headroom.
    max_step = 0.75 * MAX_ANGULAR_SPEED * interval / (1.5 * np.sqrt(2.0))
    yaws = np.empty(n_keys)
    pitches = np.empty(n_keys)
    yaws[0], pitches[0] = base.yaw, base.pitch
    for i in range(1, n_keys):
        step = min(max_step, yaw_range)
        lo = max(base.yaw - yaw_range, yaws[i - 1] - step)
        hi = min(base.yaw + yaw_range, yaws[i - 1] + step)
        yaws[i] = rng.uniform(lo, hi)
        step = min(max_step, pitch_range)
        lo = max(base.pitch - pitch_range, pitches[i - 1] - step)
        hi = min(base.pitch + pitch_range, pitches[i - 1] + step)
        pitches[i] = rng.uniform(lo, hi)
    positions = base.position[None, :] + rng.uniform(-pos_jitter, pos_jitter, (n_keys, 3))
    positions[0] = base.position
    return Trajectory([Keyframes(times, positions, yaws, pitches)])


def constant_radial_task(
    speaker, start_distance, speed, duration, direction=(0.0, -1.0, 0.0)
) -> Trajectory:
    """Move straight along the line of sight at constant speed (Doppler tests).

    ``speed`` > 0 approaches the speaker.
    """
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    p0 = np.asarray(speaker, dtype=np.float64) + start_distance * d
    p1 = p0 - speed * duration * d
    a = facing_pose(p0, speaker)
    b = HeadPose(p1, *aim_at(p1, speaker))

    @dataclass
    class Linear(Segment):
        start: HeadPose
        end: HeadPose
        duration: float

        def sample(self, t):
            w = np.clip(t / self.duration, 0.0, 1.0)
            pos = self.start.position[None, :] + w[:, None] * (
                self.end.position - self.start.position
            )
            yaw = self.start.yaw + w * (self.end.yaw - self.start.yaw)
            pitch = self.start.pitch + w * (self.end.pitch - self.start.pitch)
            return pos, yaw, pitch

    return Trajectory([Linear(a, b, duration)])


def calibration_pose(speaker, geometry, standoff=0.002) -> HeadPose:
    """Head pose that presents the left earcup to the speaker.

    The speaker ends up ``standoff`` meters outside the left ANC mic along
    the ear axis, which fixes every mic's distance by rigid geometry.
    """
    position = np.asarray(speaker, dtype=np.float64) + np.array(
        [geometry.d_e / 2.0 + standoff, 0.0, 0.0]
    )
    return HeadPose(position, 0.0, 0.0)


def with_calibration_prefix(
    task: Trajectory, speaker, geometry, hold_s=10.0, transition_s=2.0, standoff=0.002
) -> Trajectory:
    cal = calibration_pose(speaker, geometry, standoff)
    first = task.pose_at(0.0)
    prefix = Trajectory([Hold(cal, hold_s), Move(cal, first, transition_s)])
    return prefix.extended(task)


def gaze_script(
    position,
    fixations,
    transition_s=0.4,
    jitter_deg=2.0,
    jitter_rate=0.5,
    seed=0,
) -> Trajectory:
    """Sequence of (yaw, pitch, duration) fixations with eased transitions.

    Fixation angles are absolute head yaw/pitch in degrees.  A small seeded
    wander is superimposed so consecutive frames are not identical.
    """
    rng = np.random.default_rng(seed)
    position = np.asarray(position, dtype=np.float64)
    segs: list[Segment] = []
    prev: HeadPose | None = None
    for yaw, pitch, dur in fixations:
        pose = HeadPose(position, yaw, pitch)
        if prev is not None:
            swing = np.hypot(pose.yaw - prev.yaw, pose.pitch - prev.pitch)
            # Eased moves peak at 1.5x the mean rate; cap well under the limit.
            needed = 1.5 * swing / (0.75 * MAX_ANGULAR_SPEED)
            segs.append(Move(prev, pose, max(transition_s, needed)))
        if jitter_deg > 0:
            n_keys = max(3, int(np.ceil(dur * jitter_rate)) + 1)
            times = np.linspace(0.0, dur, n_keys)
            yaws = yaw + rng.uniform(-jitter_deg, jitter_deg, n_keys)
            pitches = pitch + rng.uniform(-jitter_deg, jitter_deg, n_keys)
            yaws[0], pitches[0] = yaw, pitch  # continuous with the move in
            positions = np.broadcast_to(position, (n_keys, 3)).copy()
            segs.append(Keyframes(times, positions, yaws, pitches))
            prev = HeadPose(position, yaws[-1], pitches[-1])
        else:
            segs.append(Hold(pose, dur))
            prev = pose
    return Trajectory(segs)


ACTIVITY_LABELS = ("push-up", "body twist", "arm", "bird dog")


def activity_task(label: str, speaker, seed=0, reps=4, distance=0.8) -> Trajectory:
    """Head motion signature of one exercise, with per-seed variation."""
    rng = np.random.default_rng(seed)
    scale = rng.uniform(0.85, 1.15)
    position = grid_position(0.0, distance, rng.uniform(-0.05, 0.05))
    base = facing_pose(position, speaker)
    los = np.asarray(speaker, dtype=np.float64) - base.position
    los = los / np.linalg.norm(los)
    lateral = np.cross(los, np.array([0.0, 0.0, 1.0]))
    if label == "push-up":
        period = 1.8 * scale
        seg = Oscillate(base, reps * period, period, pos_amp=0.24 * scale * los,
                        pitch_amp=4.0)
    elif label == "body twist":
        period = 2.6 * scale
        seg = Oscillate(base, reps * period, period, yaw_amp=50.0 * scale,
                        pos_amp=0.03 * lateral)
    elif label == "arm":
        period = 1.5 * scale
        seg = Oscillate(base, reps * period, period, yaw_amp=12.0 * scale,
                        pos_amp=0.09 * scale * lateral)
    elif label == "bird dog":
        period = 3.6 * scale
        seg = Oscillate(base, reps * period, period, pitch_amp=20.0 * scale,
                        pos_amp=0.10 * scale * los)
    else:
        raise ScenarioError(f"unknown activity {label!r}")
    return Trajectory([seg])
