"""Tracking-error metrics: median absolute error, interquartile range of the
absolute error, and the dropped-frame rate against a fixed distance
threshold."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError

# A frame whose head-center distance error exceeds this is counted dropped
# (2.0 x the reference interquartile range).
DROPPED_FRAME_THRESHOLD_M = 0.0376


def medae(errors: np.ndarray) -> float:
    return float(np.median(np.abs(errors)))


def iqr(errors: np.ndarray) -> float:
    a = np.abs(errors)
    return float(np.percentile(a, 75) - np.percentile(a, 25))


@dataclass
class MetricsReport:
    distance_medae_mm: float
    distance_iqr_mm: float
    yaw_medae_deg: float
    yaw_iqr_deg: float
    pitch_medae_deg: float
    pitch_iqr_deg: float
    dropped_rate_pct: float
    n_frames: int
    grid: str | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "distance_medae_mm": self.distance_medae_mm,
            "distance_iqr_mm": self.distance_iqr_mm,
            "yaw_medae_deg": self.yaw_medae_deg,
            "yaw_iqr_deg": self.yaw_iqr_deg,
            "pitch_medae_deg": self.pitch_medae_deg,
            "pitch_iqr_deg": self.pitch_iqr_deg,
            "dropped_rate_pct": self.dropped_rate_pct,
            "n_frames": self.n_frames,
        }
        if self.grid is not None:
            d["grid"] = self.grid
        d.update(self.extras)
        return d

    def __str__(self) -> str:
        return (
            f"distance {self.distance_medae_mm:.1f} mm (IQR {self.distance_iqr_mm:.1f}), "
            f"yaw {self.yaw_medae_deg:.2f} deg (IQR {self.yaw_iqr_deg:.2f}), "
            f"pitch {self.pitch_medae_deg:.2f} deg (IQR {self.pitch_iqr_deg:.2f}), "
            f"dropped {self.dropped_rate_pct:.1f}% over {self.n_frames} frames"
        )


def join_nearest(t_pred: np.ndarray, t_truth: np.ndarray, max_gap: float):
    """Indices pairing each prediction with its nearest truth row.

    Pairs farther apart than ``max_gap`` are discarded; empty overlap raises.
    """
    if len(t_pred) == 0 or len(t_truth) == 0:
        raise AlignmentError("empty prediction or truth series")
    idx = np.searchsorted(t_truth, t_pred)
    idx = np.clip(idx, 1, len(t_truth) - 1)
    left = t_truth[idx - 1]
    right = t_truth[idx]
    nearest = np.where(np.abs(t_pred - left) <= np.abs(right - t_pred), idx - 1, idx)
    gap = np.abs(t_truth[nearest] - t_pred)
    keep = gap <= max_gap
    if not np.any(keep):
        raise AlignmentError("prediction and truth timestamps never overlap")
    return np.flatnonzero(keep), nearest[keep]


def evaluate_tracking(
    t_pred, d_pred, yaw_pred, pitch_pred,
    t_truth, d_truth, yaw_truth, pitch_truth,
    max_gap: float | None = None,
    frame_period: float = 2048 / 48000,
    t_start: float | None = None,
    t_end: float | None = None,
    grid: str | None = None,
) -> MetricsReport:
    """Compare tracking output against a ground-truth trace.

    Rows are paired by nearest timestamp (within half a frame period unless
    overridden); the dropped-frame rate uses the fixed distance threshold.
    """
    if max_gap is None:
        max_gap = frame_period / 2.0
    t_pred = np.asarray(t_pred, dtype=np.float64)
    sel = np.ones(len(t_pred), dtype=bool)
    if t_start is not None:
        sel &= t_pred >= t_start
    if t_end is not None:
        sel &= t_pred <= t_end
    pi_all = np.flatnonzero(sel)
    if len(pi_all) == 0:
        raise AlignmentError("no prediction rows inside the evaluation window")
    kept, ti = join_nearest(t_pred[pi_all], np.asarray(t_truth, dtype=np.float64), max_gap)
    pi = pi_all[kept]

    d_err = np.asarray(d_pred)[pi] - np.asarray(d_truth)[ti]
    yaw_err = np.asarray(yaw_pred)[pi] - np.asarray(yaw_truth)[ti]
    pitch_err = np.asarray(pitch_pred)[pi] - np.asarray(pitch_truth)[ti]
    finite_d = np.isfinite(d_err)
    dropped = np.abs(np.where(finite_d, d_err, np.inf)) > DROPPED_FRAME_THRESHOLD_M

    def _clean(x):
        f = np.isfinite(x)
        return x[f] if np.any(f) else np.array([np.inf])

    return MetricsReport(
        distance_medae_mm=medae(_clean(d_err)) * 1000.0,
        distance_iqr_mm=iqr(_clean(d_err)) * 1000.0,
        yaw_medae_deg=medae(_clean(yaw_err)),
        yaw_iqr_deg=iqr(_clean(yaw_err)),
        pitch_medae_deg=medae(_clean(pitch_err)),
        pitch_iqr_deg=iqr(_clean(pitch_err)),
        dropped_rate_pct=100.0 * float(np.mean(dropped)),
        n_frames=int(len(pi)),
        grid=grid,
    )
