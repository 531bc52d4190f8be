"""Reference-beat calibration for the unsynchronized transmitter/receiver pair.

The user holds the left earcup against the speaker (about a 2 mm gap) for a
few seconds.  From that window we get, per microphone: a coarse frame
alignment by correlating against one reference period, the reference beat
frequency, and the slope of a straight-line fit that models the continuous
clock drift between the two devices.  Because the speaker sits on the ear
axis in that pose, every mic's true distance is fixed by rigid geometry, so
the reference lines yield absolute distances for all three channels.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .chirp import ChirpSpec, SampleBuffer, synthesize_triangular
from .errors import CalibrationError, ConfigurationError, NoSignalError
from .geometry import HeadGeometry

MIN_WINDOW_S = 4.0
DEFAULT_STANDOFF = 0.002
# Relative slope disagreement allowed across mics (same receiver clock).
SLOPE_AGREE_FRACTION = 0.10
# Below this absolute slope (Hz/s; ~2 ppm of clock drift) the fit noise of a
# short window dominates and the cross-mic check is meaningless.
SLOPE_CHECK_FLOOR = 0.5


@dataclass
class CalibrationData:
    """Session reference: per-mic beat line, frame alignment and geometry."""

    f_ref: np.ndarray          # per-mic reference beat at calibrated_at, Hz
    slope: np.ndarray          # per-mic drift, Hz/s
    coarse_offset: int         # correlation alignment, samples mod period
    calibrated_at: float       # receiver time the intercepts refer to, s
    standoffs: np.ndarray      # per-mic true distance at the calibration pose, m
    geometry: HeadGeometry = field(default_factory=HeadGeometry)
    standoff: float = DEFAULT_STANDOFF
    sync_margin: int = 64

    def __post_init__(self) -> None:
        self.f_ref = np.asarray(self.f_ref, dtype=np.float64).reshape(3)
        self.slope = np.asarray(self.slope, dtype=np.float64).reshape(3)
        self.standoffs = np.asarray(self.standoffs, dtype=np.float64).reshape(3)

    def save(self, path) -> None:
        doc = {
            "f_ref": self.f_ref.tolist(),
            "slope": self.slope.tolist(),
            "coarse_offset": int(self.coarse_offset),
            "calibrated_at": self.calibrated_at,
            "standoffs": self.standoffs.tolist(),
            "geometry": {
                "d_e": self.geometry.d_e,
                "d_b": self.geometry.d_b,
                "theta0": self.geometry.theta0,
            },
            "standoff": self.standoff,
            "sync_margin": self.sync_margin,
        }
        path = os.fspath(path)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
        try:
            with os.fdopen(fd, "w") as f:
                json.dump(doc, f, indent=2)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "CalibrationData":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            f_ref=np.array(doc["f_ref"]),
            slope=np.array(doc["slope"]),
            coarse_offset=doc["coarse_offset"],
            calibrated_at=doc["calibrated_at"],
            standoffs=np.array(doc["standoffs"]),
            geometry=HeadGeometry(**doc["geometry"]),
            standoff=doc.get("standoff", DEFAULT_STANDOFF),
            sync_margin=doc.get("sync_margin", 64),
        )


def drift_correct(cal: CalibrationData, t: float, mic_index: int) -> float:
    """Reference beat frequency for one mic at time t."""
    return float(cal.f_ref[mic_index] + cal.slope[mic_index] * (t - cal.calibrated_at))


def geometric_standoffs(geometry: HeadGeometry, standoff: float = DEFAULT_STANDOFF) -> np.ndarray:
    """True mic distances at the calibration pose (speaker on the ear axis,
    ``standoff`` outside the left ANC mic)."""
    d_l = standoff
    d_r = standoff + geometry.d_e
    d_s = float(np.hypot(standoff + geometry.d_e, geometry.d_b))
    return np.array([d_l, d_r, d_s])


def coarse_sync(received: SampleBuffer, spec: ChirpSpec, channel: int = 0) -> int:
    """Frame alignment from cross-correlation with one synthesized period.

    Returns the offset (samples, modulo the period) that maximizes the
    correlation; raises when no chirp energy is present.
    """
    period = spec.period_samples
    x = received.data[channel]
    if len(x) < 2 * period:
        raise ConfigurationError("coarse sync needs at least two periods of signal")
    ref = synthesize_triangular(spec, 1).data[0]
    n_span = min(len(x) - period, 3 * period)
    segment = x[: n_span + period]
    # Valid-mode correlation of the reference against a few periods.
    corr = np.correlate(segment, ref, mode="valid")
    peak = int(np.argmax(corr))
    ref_energy = float(np.sqrt(np.sum(ref**2)))
    seg = segment[peak : peak + period]
    local = float(np.sqrt(np.sum(seg**2)))
    if local == 0 or corr[peak] / (ref_energy * local) < 0.1:
        raise NoSignalError("no chirp found in the stream")
    return peak % period


def _window_beats(stream: SampleBuffer, spec: ChirpSpec, n0: int, window: float,
                  config, standoffs: np.ndarray):
    """Per-frame averaged up/down beat peaks for each mic over the window.

    The calibration pose fixes every mic's distance, so each beat is searched
    only near its geometrically expected position.  That keeps reflections
    from capturing the reference when the far-side mics sit in the head
    shadow (exactly the situation the calibration pose creates).
    """
    from . import ranging  # deferred: ranging imports CalibrationData from here

    up_buf, down_buf = ranging.reference_slopes(spec)
    refs = (up_buf.data[0], down_buf.data[0])
    period = spec.period_samples
    fs = spec.sample_rate
    base = (n0 - config.sync_margin) % period
    n_frames = int((window * fs - base) // period)
    if n_frames < 4:
        raise CalibrationError("calibration window holds too few frames")

    margin_hz = spec.slope_rate * config.sync_margin / fs
    hz_per_m = spec.hz_per_meter()
    expected = margin_hz + (standoffs - standoffs[0]) * hz_per_m
    gate_hz = config.gate_bins * fs / spec.slope_len

    times = np.empty(n_frames)
    beats = np.empty((n_frames, 3))
    for k in range(n_frames):
        start = base + k * period
        frame = stream.data[:, start : start + period]
        times[k] = (start + spec.slope_len) / fs
        for m in range(3):
            vals = []
            for h, ref in enumerate(refs):
                chunk = frame[m, : spec.slope_len] if h == 0 else frame[m, spec.slope_len :]
                bb = ranging.mix_and_lowpass(chunk, ref, fs, config.lowpass_hz,
                                             config.lowpass_order)
                spectrum = ranging.half_spectrum(bb, config.zero_pad_factor)
                cands = ranging.cfar_detect(spectrum, config.cfar_train,
                                            config.cfar_guard, config.cfar_pfa,
                                            config.zero_pad_factor)
                gated = [c for c in cands if abs(c.freq - expected[m]) <= gate_hz]
                if not gated:
                    raise NoSignalError(
                        f"mic {m}: no beat near the calibration-pose position "
                        f"({expected[m]:.0f} Hz); is the earcup against the speaker?"
                    )
                vals.append(max(gated, key=lambda c: c.mag).freq)
            beats[k, m] = 0.5 * (vals[0] + vals[1])
    return times, beats


def calibrate_reference(
    stream: SampleBuffer,
    spec: ChirpSpec,
    window: float,
    config=None,
    geometry: HeadGeometry | None = None,
    standoff: float = DEFAULT_STANDOFF,
) -> CalibrationData:
    """Fit the per-mic reference beat lines from a held-still prefix.

    ``window`` seconds of audio must show the calibration pose; the beat
    trace of each mic is fit with a straight line (intercept = reference,
    slope = clock drift).  Residuals above one raw spectral bin indicate
    motion during calibration and abort.
    """
    from . import ranging

    if window < MIN_WINDOW_S:
        raise ConfigurationError(f"calibration window must be >= {MIN_WINDOW_S} s")
    if stream.duration < window:
        raise ConfigurationError("stream shorter than the calibration window")
    config = config or ranging.PipelineConfig()
    geometry = geometry or HeadGeometry()

    n0 = coarse_sync(stream, spec)
    standoffs = geometric_standoffs(geometry, standoff)
    times, beats = _window_beats(stream, spec, n0, window, config, standoffs)

    raw_bin = spec.sample_rate / spec.slope_len
    f_ref = np.empty(3)
    slopes = np.empty(3)
    t_anchor = times[-1]
    for m in range(3):
        slope, intercept = np.polyfit(times, beats[:, m], 1)
        resid = beats[:, m] - (slope * times + intercept)
        if float(np.std(resid)) > raw_bin:
            raise CalibrationError(
                f"mic {m}: beat wanders {np.std(resid):.1f} Hz over the window; "
                "hold still during calibration"
            )
        slopes[m] = slope
        f_ref[m] = slope * t_anchor + intercept

    big = np.abs(slopes) > SLOPE_CHECK_FLOOR
    if np.any(big):
        ref_slope = np.mean(slopes[big])
        if np.any(np.abs(slopes - ref_slope) > SLOPE_AGREE_FRACTION * abs(ref_slope) + 1e-9):
            raise CalibrationError(
                f"per-mic drift slopes disagree: {slopes.tolist()} Hz/s"
            )

    return CalibrationData(
        f_ref=f_ref,
        slope=slopes,
        coarse_offset=n0,
        calibrated_at=t_anchor,
        standoffs=standoffs,
        geometry=geometry,
        standoff=standoff,
        sync_margin=config.sync_margin,
    )
