"""Ultrasonic FMCW head distance and orientation tracking.

A speaker plays a triangular chirp; the three microphones of an ANC earphone
receive it.  Per-mic beat frequencies give absolute distances, distances
give head yaw/pitch and range, and per-band level differences feed a
calibration-free attention classifier.  A deterministic scene simulator
provides ground truth for evaluation.
"""

from .calibration import CalibrationData, calibrate_reference, coarse_sync, drift_correct
from .chirp import ChirpSpec, SampleBuffer, reference_slopes, synthesize_triangular
from .geometry import HeadGeometry, HeadPose, mic_world_positions
from .metrics import MetricsReport, evaluate_tracking
from .pose import PoseEstimate, estimate_pose, fuse_imu, median_length, pitch_from_distances, yaw_from_distances
from .ranging import PipelineConfig, RangeEstimate, RangingSession
from .sim import ClockModel, EchoModel, GroundTruthTrace, OcclusionModel, Scenario, occlusion_gain, simulate_scene

__version__ = "0.1.0"

__all__ = [
    "CalibrationData", "calibrate_reference", "coarse_sync", "drift_correct",
    "ChirpSpec", "SampleBuffer", "reference_slopes", "synthesize_triangular",
    "HeadGeometry", "HeadPose", "mic_world_positions",
    "MetricsReport", "evaluate_tracking",
    "PoseEstimate", "estimate_pose", "fuse_imu", "median_length",
    "pitch_from_distances", "yaw_from_distances",
    "PipelineConfig", "RangeEstimate", "RangingSession",
    "ClockModel", "EchoModel", "GroundTruthTrace", "OcclusionModel",
    "Scenario", "occlusion_gain", "simulate_scene",
]
