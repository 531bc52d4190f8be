"""Head pose from per-microphone distances, plus gyro fusion.

The three speaker-to-mic distances form two triangles: left/right ANC mics
give yaw, right ANC/speech mics give pitch.  In each triangle the median
from the speaker to the baseline midpoint measures distance, and the angle
between median and baseline measures the orientation component in that
plane.  Sign convention matches the geometry module: yaw < 0 when the right
ANC mic is nearer the speaker, pitch > 0 when the face points above the
speaker direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationData
from .ranging import RangeEstimate

ARG_CLAMP_EPS = 1e-6


def median_length(d_l: float, d_r: float, d_e: float) -> float:
    """Distance from the speaker to the midpoint of the two ANC mics.

    Exact in 3D (Apollonius); raises ValueError when the radicand is
    negative, i.e. the three lengths cannot form a triangle.
    """
    radicand = 2.0 * d_l * d_l + 2.0 * d_r * d_r - d_e * d_e
    if radicand < 0:
        raise ValueError("invalid triangle: 2*d_l^2 + 2*d_r^2 < d_e^2")
    return math.sqrt(radicand) / 2.0


def _median_angle(d_m: float, base: float, far_side: float) -> float:
    """Angle (deg) at the baseline midpoint between the +baseline direction
    and the median to the speaker; clamps acos arguments within eps."""
    if d_m <= 0 or base <= 0:
        raise ValueError("degenerate triangle")
    arg = (d_m * d_m + (base / 2.0) ** 2 - far_side * far_side) / (d_m * base)
    if abs(arg) > 1.0 + ARG_CLAMP_EPS:
        raise ValueError(f"triangle angle argument {arg:.6f} out of range")
    return math.degrees(math.acos(min(1.0, max(-1.0, arg))))


def yaw_from_distances(d_l: float, d_r: float, d_e: float) -> float:
    """Yaw (deg) from the transverse triangle; negative when d_r < d_l."""
    d_m = median_length(d_l, d_r, d_e)
    return _median_angle(d_m, d_e, d_r) - 90.0


def pitch_from_distances(d_r: float, d_s: float, d_b: float, theta0: float) -> float:
    """Pitch (deg) from the sagittal triangle, corrected by the fixed
    speech-mic skew angle theta0.

    The triangle's baseline midpoint hangs (d_b/2)*cos(theta0+pitch) below
    the ANC-mic plane, so the raw angle is measured from a slightly low
    vantage point; the second term moves the reading back to the head
    center, which is what the distance and yaw outputs refer to.
    """
    d_m = median_length(d_r, d_s, d_b)
    raw = 90.0 - _median_angle(d_m, d_b, d_s) - theta0
    drop = (d_b / 2.0) * math.cos(math.radians(theta0 + raw))
    vantage = math.degrees(math.asin(min(1.0, max(-1.0, drop / d_m))))
    return raw + vantage


@dataclass
class PoseEstimate:
    t: float
    d_m: float
    yaw: float
    pitch: float
    valid: bool
    source: str = "acoustic"
    degraded: bool = False


def estimate_pose(rng: RangeEstimate, cal: CalibrationData) -> PoseEstimate:
    """Distances to head-center range, yaw and pitch for one frame.

    Angles that cannot be formed (triangle violations) come out as NaN; the
    estimate is valid only when no channel was dropped and both triangles
    closed.
    """
    g = cal.geometry
    d_l, d_r, d_s = (float(x) for x in rng.distances)
    d_m = float("nan")
    yaw = float("nan")
    pitch = float("nan")
    try:
        d_m = median_length(d_l, d_r, g.d_e)
        yaw = yaw_from_distances(d_l, d_r, g.d_e)
    except ValueError:
        pass
    try:
        pitch = pitch_from_distances(d_r, d_s, g.d_b, g.theta0)
    except ValueError:
        pass
    n_dropped = int(np.sum(rng.dropped))
    valid = n_dropped == 0 and math.isfinite(yaw) and math.isfinite(pitch)
    if n_dropped >= 2:
        valid = False
    return PoseEstimate(rng.t, d_m, yaw, pitch, valid)


class PoseTracker:
    """Stream wrapper: holds the last valid pose through invalid frames."""

    def __init__(self, cal: CalibrationData):
        self.cal = cal
        self._last: PoseEstimate | None = None

    def update(self, rng: RangeEstimate) -> PoseEstimate:
        est = estimate_pose(rng, self.cal)
        if not est.valid and self._last is not None:
            held = PoseEstimate(
                est.t,
                est.d_m if math.isfinite(est.d_m) else self._last.d_m,
                est.yaw if math.isfinite(est.yaw) else self._last.yaw,
                est.pitch if math.isfinite(est.pitch) else self._last.pitch,
                False,
            )
            return held
        if est.valid:
            self._last = est
        return est


# ---------------------------------------------------------------------------
# IMU simulation and fusion


@dataclass
class ImuSample:
    """One gyro reading: angular rates about the head's yaw/pitch axes."""

    t: float
    rates: np.ndarray  # deg/s, (yaw_rate, pitch_rate, roll_rate)

    def __post_init__(self) -> None:
        self.rates = np.asarray(self.rates, dtype=np.float64).reshape(3)
        if np.max(np.abs(self.rates)) > 2000.0:
            raise ValueError("gyro rate beyond sensor range")


@dataclass(frozen=True)
class GyroModel:
    """Error model for the simulated gyro.

    Bias dominates by design: integrated heading error then grows with time
    since the last absolute fix, which is the effect the duty-cycled
    re-anchoring exists to bound."""

    bias_dps: float = 1.5
    noise_dps: float = 1.0
    scale_error: float = 0.01
    rate_hz: float = 23.4375


def simulate_gyro(
    times: np.ndarray, yaw_deg: np.ndarray, pitch_deg: np.ndarray,
    model: GyroModel, seed: int = 0,
) -> list[ImuSample]:
    """Gyro readings consistent with an angle trace, with bias/scale/noise.

    Each sample reports the average rate over the preceding interval (what
    an integrating gyro approximates), so a noise-free stream reconstructs
    the trace exactly under rectangle integration.
    """
    rng = np.random.default_rng(seed)
    n = len(times)
    dt = np.diff(times)
    yaw_rate = np.concatenate([[0.0], np.diff(yaw_deg) / dt])
    pitch_rate = np.concatenate([[0.0], np.diff(pitch_deg) / dt])
    k = 1.0 + model.scale_error
    meas_yaw = k * yaw_rate + model.bias_dps + rng.normal(0, model.noise_dps, n)
    meas_pitch = k * pitch_rate + model.bias_dps + rng.normal(0, model.noise_dps, n)
    return [
        ImuSample(float(times[i]), np.array([meas_yaw[i], meas_pitch[i], 0.0]))
        for i in range(n)
    ]


@dataclass
class FusionConfig:
    burst_s: float = 0.5
    pitch_policy: str = "imu_primary"  # pitch re-anchors only once


def fuse_imu(
    imu: list[ImuSample],
    acoustic: list[PoseEstimate],
    t_cal: float | None,
    config: FusionConfig | None = None,
) -> list[PoseEstimate]:
    """Dead-reckon gyro angles between periodic short acoustic fixes.

    Every ``t_cal`` seconds the ranging pipeline runs for ``burst_s`` and the
    absolute yaw/pitch/distance re-anchor the integration.  ``t_cal=None``
    anchors once at the start (pure inertial afterwards).  Output is one
    estimate per gyro sample.
    """
    if t_cal is not None and t_cal <= 0:
        raise ValueError("t_cal must be positive")
    config = config or FusionConfig()
    if not imu:
        return []

    t_end = imu[-1].t
    anchor_starts = [0.0]
    if t_cal is not None:
        k = 1
        while k * t_cal <= t_end:
            anchor_starts.append(k * t_cal)
            k += 1

    valid_acoustic = [a for a in acoustic if a.valid]
    events = []  # (time, yaw, pitch, d_m)
    for ta in anchor_starts:
        window = [a for a in valid_acoustic if ta <= a.t < ta + config.burst_s]
        if window:
            # Anchor on the freshest fix: the head may sweep tens of degrees
            # within the burst, so a window median would lag badly.
            last = window[-1]
            d_m = float(np.median([a.d_m for a in window]))
            events.append((last.t, last.yaw, last.pitch, d_m))

    out: list[PoseEstimate] = []
    ev = 0
    yaw = pitch = d_m = None
    pitch_anchored = False
    last_anchor_t = None
    prev_t = imu[0].t
    for s in imu:
        dt = s.t - prev_t
        prev_t = s.t
        if yaw is not None and dt > 0:
            yaw += s.rates[0] * dt
            pitch += s.rates[1] * dt
        while ev < len(events) and events[ev][0] <= s.t:
            anchor_t, ay, ap, ad = events[ev]
            yaw = ay
            if not pitch_anchored or config.pitch_policy != "imu_primary":
                pitch = ap
                pitch_anchored = True
            d_m = ad
            last_anchor_t = anchor_t
            ev += 1
        if yaw is None:
            # Before the first successful burst there is nothing to anchor to.
            out.append(PoseEstimate(s.t, float("nan"), float("nan"), float("nan"),
                                    False, "fused", True))
            continue
        # Coasting past a whole scheduled burst means a re-anchor was missed.
        degraded = (
            t_cal is not None
            and s.t - last_anchor_t > t_cal + config.burst_s
        )
        out.append(PoseEstimate(s.t, d_m, yaw, pitch, True, "fused", degraded))
    return out
