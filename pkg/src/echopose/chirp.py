"""Triangular FMCW chirp synthesis.

The transmit waveform is an up-chirp from ``f0`` to ``f1`` over ``slope_len``
samples followed by a mirrored down-chirp, repeated back to back.  Phase is
obtained by integrating the instantaneous frequency, so the waveform is
phase-continuous at the slope turning points and across period boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

DEFAULT_SAMPLE_RATE = 48_000


@dataclass(frozen=True)
class ChirpSpec:
    """Parameters of the transmitted triangular chirp.

    f0/f1 are the sweep endpoints in Hz, ``slope_len`` the single-slope
    length in samples (one triangular period is ``2 * slope_len`` samples).
    ``amplitude`` is a linear full-scale fraction.
    """

    f0: float = 17_500.0
    f1: float = 23_500.0
    slope_len: int = 1024
    sample_rate: int = DEFAULT_SAMPLE_RATE
    amplitude: float = 0.5

    def __post_init__(self) -> None:
        if not (0 < self.f0 < self.f1 < self.sample_rate / 2):
            raise ConfigurationError(
                f"need 0 < f0 < f1 < Nyquist, got f0={self.f0}, f1={self.f1}, "
                f"fs={self.sample_rate}"
            )
        if self.slope_len <= 0:
            raise ConfigurationError("slope_len must be positive")
        if not (0 < self.amplitude <= 1.0):
            raise ConfigurationError("amplitude must be in (0, 1]")

    @property
    def period_samples(self) -> int:
        return 2 * self.slope_len

    @property
    def period_seconds(self) -> float:
        return self.period_samples / self.sample_rate

    @property
    def sweep_time(self) -> float:
        """Duration of one slope in seconds (T in the beat equations)."""
        return self.slope_len / self.sample_rate

    @property
    def bandwidth(self) -> float:
        return self.f1 - self.f0

    @property
    def slope_rate(self) -> float:
        """Frequency sweep rate B/T in Hz per second."""
        return self.bandwidth / self.sweep_time

    @property
    def center_frequency(self) -> float:
        return 0.5 * (self.f0 + self.f1)

    @property
    def frame_rate(self) -> float:
        """Ranging frames per second (one frame per triangular period)."""
        return self.sample_rate / self.period_samples

    def hz_per_meter(self, c: float = 343.0) -> float:
        """Beat-frequency change per meter of one-way path length."""
        return self.slope_rate / c


@dataclass
class SampleBuffer:
    """Multichannel real-valued audio, amplitudes nominally in [-1, 1]."""

    data: np.ndarray  # shape (channels, n) or (n,)
    sample_rate: int

    def __post_init__(self) -> None:
        self.data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        if not np.all(np.isfinite(self.data)):
            raise ConfigurationError("sample buffer contains non-finite values")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, i: int) -> np.ndarray:
        return self.data[i]


def instantaneous_phase(spec: ChirpSpec, t: np.ndarray) -> np.ndarray:
    """Phase of the continuous triangular chirp at arbitrary times.

    Valid for any real ``t`` (the transmitter is modeled as playing forever).
    The whole-period phase advance is reduced modulo 2*pi before the local
    quadratic term is added, which keeps the argument small enough for
    full float64 accuracy even hours into a session.
    """
    t = np.asarray(t, dtype=np.float64)
    period = spec.period_seconds
    k = np.floor(t / period)
    tau = t - k * period

    # Phase advance per full period is 2*pi*(f0+f1)*T; only its fractional
    # number of turns matters.
    turns_per_period = math.fmod((spec.f0 + spec.f1) * spec.sweep_time, 1.0)
    base = 2.0 * np.pi * np.mod(k * turns_per_period, 1.0)

    T = spec.sweep_time
    rate = spec.slope_rate
    up = tau < T
    phase = np.empty_like(tau)
    tu = tau[up]
    phase[up] = 2.0 * np.pi * (spec.f0 * tu + 0.5 * rate * tu * tu)
    td = tau[~up] - T
    up_end = 2.0 * np.pi * (spec.f0 * T + 0.5 * rate * T * T)
    phase[~up] = up_end + 2.0 * np.pi * (spec.f1 * td - 0.5 * rate * td * td)
    return base + phase


def waveform_at(spec: ChirpSpec, t: np.ndarray) -> np.ndarray:
    """Evaluate the transmit waveform at arbitrary (possibly fractional) times."""
    return spec.amplitude * np.cos(instantaneous_phase(spec, t))


def synthesize_triangular(spec: ChirpSpec, periods: int = 1) -> SampleBuffer:
    """Render ``periods`` whole triangular periods on the nominal sample grid."""
    if periods < 1:
        raise ConfigurationError("periods must be >= 1")
    n = periods * spec.period_samples
    t = np.arange(n, dtype=np.float64) / spec.sample_rate
    return SampleBuffer(waveform_at(spec, t), spec.sample_rate)


def reference_slopes(spec: ChirpSpec) -> tuple[SampleBuffer, SampleBuffer]:
    """Up and down reference half-periods used by the mixer.

    Concatenating the two buffers reproduces exactly one synthesized period.
    """
    period = synthesize_triangular(spec, 1)
    up = SampleBuffer(period.data[0, : spec.slope_len].copy(), spec.sample_rate)
    down = SampleBuffer(period.data[0, spec.slope_len :].copy(), spec.sample_rate)
    return up, down


def write_transmit_wav(spec: ChirpSpec, duration_s: float, path) -> int:
    """Write the mono 16-bit transmit file; returns the sample count written.

    Long durations are rendered period-by-period in chunks so an hour-long
    file never has to sit in memory.
    """
    from . import audio_io

    if duration_s <= 0:
        raise ConfigurationError("duration must be positive")
    n_periods = math.ceil(duration_s * spec.sample_rate / spec.period_samples)
    period = synthesize_triangular(spec, 1).data

    def chunks():
        left = n_periods
        batch = max(1, 65536 // spec.period_samples)
        while left > 0:
            take = min(batch, left)
            yield np.tile(period, (1, take))
            left -= take

    return audio_io.write_wav_chunks(path, chunks(), spec.sample_rate)
