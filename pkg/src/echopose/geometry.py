"""Head/earphone geometry and the angle conventions used everywhere else.

World frame: z is up.  A head with yaw = pitch = 0 faces +y and its ear axis
lies along x.  Positive yaw turns the face toward the head's own right
(clockwise seen from above); positive pitch tilts the face up.  Pitch rotates
about the ear axis, so the ear axis itself only depends on yaw.

Gaze angles relative to a speaker follow the same sign convention: yaw > 0
means the head has turned right of the speaker direction (so the right-ear
microphone is farther from the speaker than the left one).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

SPEED_OF_SOUND = 343.0

LEFT, RIGHT, SPEECH = 0, 1, 2
MIC_NAMES = ("left", "right", "speech")


@dataclass(frozen=True)
class HeadGeometry:
    """Rigid microphone layout of the earphone.

    d_e: distance between the left and right ANC microphones (m).
    d_b: distance from the right ANC microphone to the speech microphone (m).
    theta0: angle of the speech-mic offset, measured in the sagittal plane
        from straight below the right ANC mic toward the face direction (deg).
    """

    d_e: float = 0.235
    d_b: float = 0.06
    theta0: float = 25.0

    def __post_init__(self) -> None:
        if self.d_e <= 0 or self.d_b <= 0:
            raise ConfigurationError("d_e and d_b must be positive")


@dataclass
class HeadPose:
    position: np.ndarray  # (3,) meters, head center
    yaw: float = 0.0  # degrees
    pitch: float = 0.0  # degrees

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)


def head_axes(yaw_deg, pitch_deg):
    """Ear-axis, face and up unit vectors for (arrays of) yaw/pitch in degrees.

    Returns three arrays shaped (..., 3).
    """
    yaw = np.deg2rad(np.asarray(yaw_deg, dtype=np.float64))
    pitch = np.deg2rad(np.asarray(pitch_deg, dtype=np.float64))
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    # Positive yaw is clockwise from above: face (0,1,0) -> (sin, cos, 0).
    ear = np.stack([cy, -sy, np.zeros_like(cy)], axis=-1)
    face = np.stack([sy * cp, cy * cp, sp], axis=-1)
    up = np.stack([-sy * sp, -cy * sp, cp], axis=-1)
    return ear, face, up


def mic_offsets_head_frame(geometry: HeadGeometry) -> np.ndarray:
    """Mic positions relative to the head center in (ear, face, up) coordinates."""
    half = geometry.d_e / 2.0
    th = np.deg2rad(geometry.theta0)
    return np.array(
        [
            [-half, 0.0, 0.0],
            [half, 0.0, 0.0],
            [half, geometry.d_b * np.sin(th), -geometry.d_b * np.cos(th)],
        ]
    )


def mic_world_positions(geometry: HeadGeometry, pose: HeadPose) -> np.ndarray:
    """World positions of (left ANC, right ANC, speech) mics, shape (3, 3)."""
    pos, _, _ = mic_world_positions_batch(
        geometry, pose.position[None, :], np.array([pose.yaw]), np.array([pose.pitch])
    )
    return pos[0]


def mic_world_positions_batch(geometry, positions, yaw_deg, pitch_deg):
    """Vectorized mic placement for N poses.

    Returns (mics, face, up) where mics has shape (N, 3 mics, 3 xyz).
    """
    positions = np.asarray(positions, dtype=np.float64)
    ear, face, up = head_axes(yaw_deg, pitch_deg)
    offs = mic_offsets_head_frame(geometry)  # (3 mics, 3 axes)
    mics = (
        positions[:, None, :]
        + offs[None, :, 0, None] * ear[:, None, :]
        + offs[None, :, 1, None] * face[:, None, :]
        + offs[None, :, 2, None] * up[:, None, :]
    )
    return mics, face, up


def mic_distances(geometry: HeadGeometry, pose: HeadPose, speaker: np.ndarray) -> np.ndarray:
    """True speaker-to-mic distances (d_l, d_r, d_s) for one pose."""
    mics = mic_world_positions(geometry, pose)
    return np.linalg.norm(mics - np.asarray(speaker, dtype=np.float64), axis=1)


def gaze_angles(positions, yaw_deg, pitch_deg, speaker) -> tuple[np.ndarray, np.ndarray]:
    """Yaw/pitch of the head relative to the speaker direction, in degrees.

    This is the quantity the ranging geometry estimates: the angle between
    the face vector and the head-to-speaker vector, projected onto the
    head's transverse plane (yaw) and sagittal plane (pitch).
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    ear, face, up = head_axes(yaw_deg, pitch_deg)
    ear = np.atleast_2d(ear)
    face = np.atleast_2d(face)
    up = np.atleast_2d(up)
    v = np.asarray(speaker, dtype=np.float64) - positions
    x_h = np.einsum("ij,ij->i", v, ear)
    y_h = np.einsum("ij,ij->i", v, face)
    z_h = np.einsum("ij,ij->i", v, up)
    yaw = np.degrees(np.arctan2(-x_h, y_h))
    pitch = np.degrees(np.arctan2(-z_h, y_h))
    return yaw, pitch


@dataclass(frozen=True)
class DeviceRectangle:
    """Planar target used to label whether the head is oriented at the device."""

    center: np.ndarray
    width: float = 0.45
    height: float = 0.30
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, -1.0, 0.0]))

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "center", np.asarray(self.center, dtype=np.float64).reshape(3)
        )
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))

    def gaze_hits(self, positions, yaw_deg, pitch_deg) -> np.ndarray:
        """True where the face-direction ray from the head intersects the rectangle."""
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        _, face, _ = head_axes(yaw_deg, pitch_deg)
        face = np.atleast_2d(face)
        denom = face @ self.normal
        t = np.where(
            np.abs(denom) > 1e-9,
            ((self.center - positions) @ self.normal) / np.where(denom == 0, 1, denom),
            -1.0,
        )
        hit_point = positions + t[:, None] * face
        # In-plane axes of the rectangle.
        ref = np.array([0.0, 0.0, 1.0])
        u = np.cross(ref, self.normal)
        if np.linalg.norm(u) < 1e-9:
            u = np.cross(np.array([1.0, 0.0, 0.0]), self.normal)
        u = u / np.linalg.norm(u)
        w = np.cross(self.normal, u)
        rel = hit_point - self.center
        in_u = np.abs(rel @ u) <= self.width / 2
        in_w = np.abs(rel @ w) <= self.height / 2
        return (t > 0) & in_u & in_w
