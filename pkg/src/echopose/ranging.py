"""Per-frame FMCW ranging: mixing, beat spectra, CFAR detection, direct-path
tracking with fallback, Doppler averaging and absolute distance.

One ranging frame is a whole triangular period (up slope + down slope).  Each
half is mixed with its reference slope, low-pass filtered, windowed and
transformed; the beat peak frequency maps linearly to one-way path length.
The tracker keeps recent accepted peaks per microphone so occluded or
distorted frames can be bridged by extrapolation, and averages the up/down
beats so first-order Doppler cancels.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sps

from .calibration import CalibrationData, drift_correct
from .chirp import ChirpSpec, SampleBuffer, reference_slopes
from .errors import FramingError, StateError
from .geometry import SPEED_OF_SOUND

UP, DOWN = 0, 1


@dataclass(frozen=True)
class PipelineConfig:
    """Tunables for the ranging chain.

    The four ``use_*`` switches correspond to the robustness optimizations;
    turning them all off leaves the plain one-slope strongest-peak ranger
    used as the comparison baseline.
    """

    zero_pad_factor: int = 4
    lowpass_hz: float = 3000.0
    lowpass_order: int = 4
    cfar_train: int = 8          # training cells per side, in raw-bin strides
    cfar_guard: int = 2          # guard cells per side, in raw-bin strides
    cfar_pfa: float = 1e-3
    gate_bins: float = 4.0       # selection gate around the previous peak, raw bins
    rho: float = 0.5             # early-peak magnitude fraction
    cross_jump_bins: float = 2.0
    cross_stable_bins: float = 1.0
    history_len: int = 5
    max_fallbacks: int = 10
    sync_margin: int = 64        # samples of deliberate reference lead
    slip_compensation: bool = True
    doppler_mode: str = "frequency"  # or "distance"
    negative_distance_tol: float = 0.05
    conf_floor_ratio: float = 12.0
    use_cfar: bool = True
    use_integration: bool = True
    use_fallback: bool = True
    use_doppler_avg: bool = True

    @staticmethod
    def baseline() -> "PipelineConfig":
        return PipelineConfig(
            use_cfar=False, use_integration=False, use_fallback=False,
            use_doppler_avg=False,
        )


@dataclass
class Spectrum:
    """One-sided magnitude spectrum on a uniform bin grid."""

    freqs: np.ndarray
    mags: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.freqs[1] - self.freqs[0])


@dataclass
class Peak:
    """CFAR candidate: spectral bin, refined frequency and magnitude."""

    bin: int
    freq: float
    mag: float
    floor: float  # median spectrum magnitude, for confidence scoring


_FILTER_CACHE: dict[tuple, tuple] = {}


def _lowpass_filter(fs: int, cutoff: float, order: int) -> tuple:
    key = (fs, cutoff, order)
    if key not in _FILTER_CACHE:
        sos = sps.butter(order, cutoff, fs=fs, output="sos")
        zi = sps.sosfilt_zi(sos)
        padlen = 3 * (2 * sos.shape[0] + 1)
        _FILTER_CACHE[key] = (sos, zi, padlen)
    return _FILTER_CACHE[key]


def _zero_phase(x: np.ndarray, sos: np.ndarray, zi: np.ndarray, padlen: int) -> np.ndarray:
    """Forward-backward filtering with odd-reflection padding.

    Same scheme as scipy's filtfilt default, but with the filter state
    template precomputed and batched over leading axes (the session filters
    all six mic/half products of a frame in one call)."""
    x = np.atleast_2d(x)
    head = 2 * x[:, :1] - x[:, padlen:0:-1]
    tail = 2 * x[:, -1:] - x[:, -2 : -padlen - 2 : -1]
    ext = np.concatenate([head, x, tail], axis=1)
    zi_b = zi[:, None, :] * ext[:, 0][None, :, None]
    y, _ = sps.sosfilt(sos, ext, axis=1, zi=zi_b)
    y = y[:, ::-1]
    zi_b = zi[:, None, :] * y[:, 0][None, :, None]
    y, _ = sps.sosfilt(sos, y, axis=1, zi=zi_b)
    return y[:, ::-1][:, padlen:-padlen]


def _as_array(buf) -> np.ndarray:
    if isinstance(buf, SampleBuffer):
        return buf.data[0]
    return np.asarray(buf, dtype=np.float64)


def mix_and_lowpass(
    frame_half, reference_half, sample_rate: int = 48_000,
    cutoff_hz: float = 3000.0, order: int = 4,
) -> SampleBuffer:
    """Multiply a received half-frame by its reference slope and low-pass.

    Zero-phase filtering keeps the beat tone's frequency unbiased.
    """
    x = _as_array(frame_half)
    r = _as_array(reference_half)
    if isinstance(frame_half, SampleBuffer):
        sample_rate = frame_half.sample_rate
    if x.shape != r.shape:
        raise FramingError(f"half lengths differ: {x.shape} vs {r.shape}")
    mixed = x * r
    sos, zi, padlen = _lowpass_filter(sample_rate, cutoff_hz, order)
    return SampleBuffer(_zero_phase(mixed[None, :], sos, zi, padlen)[0], sample_rate)


_WINDOW_CACHE: dict[int, np.ndarray] = {}
_FREQ_CACHE: dict[tuple, np.ndarray] = {}


def _hann(n: int) -> np.ndarray:
    if n not in _WINDOW_CACHE:
        _WINDOW_CACHE[n] = np.hanning(n)
    return _WINDOW_CACHE[n]


def _rfft_freqs(n: int, fs: int) -> np.ndarray:
    key = (n, fs)
    if key not in _FREQ_CACHE:
        _FREQ_CACHE[key] = np.fft.rfftfreq(n, 1.0 / fs)
    return _FREQ_CACHE[key]


def half_spectrum(baseband, zero_pad_factor: int = 4, sample_rate: int = 48_000) -> Spectrum:
    """Hann-windowed, zero-padded magnitude spectrum of the positive bins."""
    x = _as_array(baseband)
    if isinstance(baseband, SampleBuffer):
        sample_rate = baseband.sample_rate
    if zero_pad_factor < 1:
        raise FramingError("zero_pad_factor must be >= 1")
    n = len(x)
    mags = np.abs(np.fft.rfft(x * _hann(n), n * zero_pad_factor))
    freqs = _rfft_freqs(n * zero_pad_factor, sample_rate)
    return Spectrum(freqs, mags)


def noncoherent_integrate(current: Spectrum, previous: Spectrum | None) -> Spectrum:
    """Average magnitudes with the previous frame's spectrum (window of 2)."""
    if previous is None:
        return Spectrum(current.freqs, current.mags.copy())
    if previous.mags.shape != current.mags.shape or previous.freqs[0] != current.freqs[0]:
        raise FramingError("spectra do not share a bin grid")
    return Spectrum(current.freqs, 0.5 * (current.mags + previous.mags))


_CFAR_KERNELS: dict[tuple, np.ndarray] = {}
_CFAR_SCALE_CACHE: dict[tuple, tuple] = {}


def _cfar_kernel(train: int, guard: int, stride: int) -> np.ndarray:
    key = (train, guard, stride)
    if key not in _CFAR_KERNELS:
        half = (train + guard) * stride
        kernel = np.zeros(2 * half + 1)
        offsets = (guard + 1 + np.arange(train)) * stride
        kernel[half + offsets] = 1.0
        kernel[half - offsets] = 1.0
        _CFAR_KERNELS[key] = kernel
    return _CFAR_KERNELS[key]


def cfar_mask(
    spectrum: Spectrum, train: int = 8, guard: int = 2,
    pfa: float = 1e-3, stride: int = 1,
) -> np.ndarray:
    """Cell-averaging CFAR detection mask.

    Noise power is estimated from ``train`` cells per side spaced ``stride``
    bins apart (so zero-padded grids still sample independent cells), with
    ``guard`` cells skipped around the cell under test.  The scale factor is
    the exact one for exponentially distributed cell powers; cells past the
    spectrum edge simply do not contribute.
    """
    power = spectrum.mags ** 2
    n = len(power)
    if n <= (train + guard) * stride:
        raise FramingError("spectrum shorter than the CFAR training window")
    if not np.any(power > 0):
        return np.zeros(n, dtype=bool)

    kernel = _cfar_kernel(train, guard, stride)
    key = (n, train, guard, stride, pfa)
    if key not in _CFAR_SCALE_CACHE:
        count = np.maximum(np.convolve(np.ones(n), kernel, mode="same"), 1)
        _CFAR_SCALE_CACHE[key] = (count, count * (pfa ** (-1.0 / count) - 1.0))
    count, scale = _CFAR_SCALE_CACHE[key]
    noise = np.convolve(power, kernel, mode="same")
    return power * count > scale * noise


def quadratic_refine(mags: np.ndarray, k: int) -> float:
    """Sub-bin peak offset from a log-magnitude parabola through bin k."""
    if k <= 0 or k >= len(mags) - 1:
        return 0.0
    eps = 1e-300
    a = np.log(mags[k - 1] + eps)
    b = np.log(mags[k] + eps)
    g = np.log(mags[k + 1] + eps)
    denom = a - 2 * b + g
    if denom >= 0:
        return 0.0
    return float(0.5 * (a - g) / denom)


def _peak_from_bin(spectrum: Spectrum, k: int, floor: float) -> Peak:
    off = quadratic_refine(spectrum.mags, k)
    freq = (k + off) * spectrum.bin_width
    return Peak(k, freq, float(spectrum.mags[k]), floor)


def cfar_detect(
    spectrum: Spectrum, train: int = 8, guard: int = 2,
    pfa: float = 1e-3, stride: int = 1,
) -> list[Peak]:
    """Candidate peaks: local maxima among CFAR detections, ascending frequency."""
    mask = cfar_mask(spectrum, train, guard, pfa, stride)
    if not np.any(mask):
        return []
    m = spectrum.mags
    left = np.empty_like(m)
    right = np.empty_like(m)
    left[0], left[1:] = -1.0, m[:-1]
    right[-1], right[:-1] = -1.0, m[1:]
    is_max = mask & (m >= left) & (m > right)
    floor = float(np.median(m))
    return [_peak_from_bin(spectrum, int(k), floor) for k in np.flatnonzero(is_max)]


def strongest_peak(spectrum: Spectrum) -> Peak | None:
    """Plain argmax candidate (baseline path, no adaptive thresholding)."""
    if not np.any(spectrum.mags > 0):
        return None
    k = int(np.argmax(spectrum.mags))
    return _peak_from_bin(spectrum, k, float(np.median(spectrum.mags)))


def doppler_average(f_up: float, f_down: float) -> float:
    """Mean of the two slope beats; the +/- Doppler shift cancels."""
    return 0.5 * (f_up + f_down)


def beat_to_distance(
    f_beat: float, reference: float, spec: ChirpSpec,
    standoff: float = 0.0, c: float = SPEED_OF_SOUND,
) -> float:
    """Absolute one-way distance from a drift-corrected beat frequency."""
    return c * (f_beat - reference) * spec.sweep_time / spec.bandwidth + standoff


@dataclass
class TrackerState:
    """Per-microphone tracking memory across frames."""

    history: list = field(default_factory=list)       # deque[(t, freq)] per mic
    prev_spectra: list = field(default_factory=list)  # [mic][half] raw Spectrum
    fallback_count: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=int))

    def __post_init__(self) -> None:
        if not self.history:
            self.history = [deque(maxlen=5) for _ in range(3)]
        if not self.prev_spectra:
            self.prev_spectra = [[None, None] for _ in range(3)]

    def seed(self, t: float, freqs: np.ndarray) -> None:
        for m in range(3):
            self.history[m].clear()
            self.history[m].append((t, float(freqs[m])))

    def last_freq(self, mic: int) -> float | None:
        return self.history[mic][-1][1] if self.history[mic] else None

    def push(self, mic: int, t: float, freq: float) -> None:
        self.history[mic].append((t, freq))

    def predict(self, mic: int, t: float) -> float | None:
        """Least-squares linear extrapolation of the recent accepted peaks."""
        h = self.history[mic]
        if not h:
            return None
        if len(h) == 1:
            return h[0][1]
        ts = np.array([p[0] for p in h])
        fs = np.array([p[1] for p in h])
        slope, intercept = np.polyfit(ts, fs, 1)
        return float(slope * t + intercept)


@dataclass
class SelectResult:
    freq: float | None
    confidence: float
    dropped: bool


def select_direct_path(
    candidates: list[Peak], state: TrackerState, mic_index: int,
    t: float, config: PipelineConfig, raw_bin_hz: float,
    reacquire_gate_hz: float | None = None,
) -> SelectResult:
    """Pick the direct-path peak: earliest sufficiently strong candidate
    gated around the previous accepted peak; otherwise fall back to the
    history extrapolation and flag the frame dropped.

    A channel lost for too many frames re-acquires, but only among
    candidates consistent with the healthy channels (the mics sit on one
    rigid head, so their path lengths can only differ so much); that keeps
    re-acquisition from locking onto a reflection.
    """
    prev = state.last_freq(mic_index)
    if prev is None:
        raise StateError("tracker not initialized by calibration")
    gate_hz = config.gate_bins * raw_bin_hz
    gated = [c for c in candidates if abs(c.freq - prev) <= gate_hz]
    lost = config.use_fallback and state.fallback_count[mic_index] >= config.max_fallbacks
    if lost and candidates and not gated:
        healthy = [
            state.last_freq(j)
            for j in range(3)
            if j != mic_index and state.fallback_count[j] == 0
        ]
        healthy = [f for f in healthy if f is not None]
        if healthy and reacquire_gate_hz is not None:
            gated = [
                c for c in candidates
                if any(abs(c.freq - f) <= reacquire_gate_hz for f in healthy)
            ]
        if not gated:
            gated = candidates
    if gated:
        strongest = max(c.mag for c in gated)
        pick = next(c for c in gated if c.mag >= config.rho * strongest)
        conf = min(1.0, pick.mag / (pick.floor * config.conf_floor_ratio + 1e-300))
        return SelectResult(pick.freq, conf, False)
    fb = state.predict(mic_index, t) if config.use_fallback else prev
    return SelectResult(fb, 0.0, True)


@dataclass
class RangeEstimate:
    """Per-frame ranging output for the three microphones."""

    t: float
    distances: np.ndarray          # meters; fallback prediction when dropped
    dropped: np.ndarray            # bool per mic
    freqs: np.ndarray              # virtual beat Hz per mic
    confidence: np.ndarray         # [0, 1] per mic
    ld_lr: float = 0.0             # broadband left/right level difference, dB


class RangingSession:
    """Stateful sequential consumer of ranging frames for one receiver.

    Frames must arrive in order; distinct sessions are independent.  The
    session is created from a calibration snapshot which fixes the frame
    grid (coarse sync plus a deliberate margin), the per-mic beat reference
    lines, and the geometric standoffs.
    """

    def __init__(self, spec: ChirpSpec, calibration: CalibrationData,
                 config: PipelineConfig | None = None):
        if calibration is None:
            raise StateError("session requires calibration data")
        self.spec = spec
        self.cal = calibration
        self.config = config or PipelineConfig()
        up, down = reference_slopes(spec)
        self._refs = (up.data[0], down.data[0])
        self._raw_bin = spec.sample_rate / spec.slope_len
        self._hz_per_sample = spec.slope_rate / spec.sample_rate
        self.state = TrackerState()
        self.state.history = [deque(maxlen=self.config.history_len) for _ in range(3)]
        self.state.seed(calibration.calibrated_at, calibration.f_ref)
        self._mean_slope = float(np.mean(calibration.slope))
        # Mic-to-mic path lengths can differ by at most the earcup span.
        span = calibration.geometry.d_e + calibration.geometry.d_b + 0.1
        self._reacquire_gate_hz = span * spec.hz_per_meter()

    # -- framing ----------------------------------------------------------

    def frame_plan(self, k: int) -> tuple[int, float, int]:
        """(start sample, center time, slip samples) for frame k.

        The slip shifts long-session frame boundaries to chase clock drift;
        the identical value is later added back to the measured beats so the
        drift-corrected reference stays exact.
        """
        period = self.spec.period_samples
        # The margin recorded at calibration fixes the frame grid; a session
        # must frame identically or the reference lines stop matching.
        base = (self.cal.coarse_offset - self.cal.sync_margin) % period
        t_nominal = (base + k * period + self.spec.slope_len) / self.spec.sample_rate
        slip = self._slip_samples(t_nominal)
        start = base + k * period + slip
        return start, (start + self.spec.slope_len) / self.spec.sample_rate, slip

    def _slip_samples(self, t: float) -> int:
        if not self.config.slip_compensation:
            return 0
        drift_hz = self._mean_slope * (t - self.cal.calibrated_at)
        return int(np.round(drift_hz / self._hz_per_sample))

    # -- per-frame chain ---------------------------------------------------

    def _beat_spectra(self, frame: np.ndarray, halves) -> list[list[Spectrum]]:
        """Mix, low-pass and transform every needed (mic, half) product in
        batched array operations; returns spectra indexed [mic][half]."""
        cfg = self.config
        k = self.spec.slope_len
        prods = []
        for h in halves:
            chunk = frame[:, :k] if h == UP else frame[:, k:]
            prods.append(chunk * self._refs[h][None, :])
        stacked = np.concatenate(prods, axis=0)  # (3 * n_halves, k)
        sos, zi, padlen = _lowpass_filter(self.spec.sample_rate, cfg.lowpass_hz,
                                          cfg.lowpass_order)
        baseband = _zero_phase(stacked, sos, zi, padlen)
        mags = np.abs(np.fft.rfft(baseband * _hann(k)[None, :], k * cfg.zero_pad_factor,
                                  axis=1))
        freqs = _rfft_freqs(k * cfg.zero_pad_factor, self.spec.sample_rate)
        out: list[list[Spectrum]] = [[] for _ in range(3)]
        for hi, h in enumerate(halves):
            for m in range(3):
                out[m].append(Spectrum(freqs, mags[hi * 3 + m]))
        return out

    def _half_candidates(self, mic: int, half_index: int, spec_now: Spectrum) -> list[Peak]:
        cfg = self.config
        if cfg.use_integration:
            integrated = noncoherent_integrate(spec_now, self.state.prev_spectra[mic][half_index])
            self.state.prev_spectra[mic][half_index] = spec_now
        else:
            integrated = spec_now
        if cfg.use_cfar:
            return cfar_detect(integrated, cfg.cfar_train, cfg.cfar_guard,
                               cfg.cfar_pfa, cfg.zero_pad_factor)
        peak = strongest_peak(integrated)
        return [peak] if peak is not None else []

    def process_frame(self, frame: np.ndarray, t: float,
                      slip_samples: int | None = None) -> RangeEstimate:
        """Run the full three-mic chain on one triangular period of audio.

        ``slip_samples`` is how far this frame's boundary was shifted from
        the nominal grid; stream driving passes the exact value it used.
        """
        frame = np.atleast_2d(np.asarray(frame, dtype=np.float64))
        if frame.shape != (3, self.spec.period_samples):
            raise FramingError(
                f"frame must be (3, {self.spec.period_samples}), got {frame.shape}"
            )
        cfg = self.config
        if slip_samples is None:
            slip_samples = self._slip_samples(t)
        slip_hz = slip_samples * self._hz_per_sample
        halves = (UP, DOWN) if cfg.use_doppler_avg else (UP,)

        spectra = self._beat_spectra(frame, halves)
        sels: list[list[SelectResult]] = []
        for m in range(3):
            per_half = []
            for hi in range(len(halves)):
                cands = self._half_candidates(m, hi, spectra[m][hi])
                for c in cands:
                    c.freq += slip_hz
                if cfg.use_cfar:
                    per_half.append(
                        select_direct_path(cands, self.state, m, t, cfg, self._raw_bin,
                                           self._reacquire_gate_hz)
                    )
                elif cands:
                    per_half.append(SelectResult(cands[0].freq, 1.0, False))
                else:
                    per_half.append(SelectResult(self.state.last_freq(m), 0.0, True))
            sels.append(per_half)

        freqs = np.empty(3)
        conf = np.empty(3)
        dropped = np.zeros(3, dtype=bool)
        for m in range(3):
            good = [s for s in sels[m] if not s.dropped]
            if len(good) == len(halves) and len(halves) == 2:
                # doppler_mode "distance" gives the same value: the beat-to-
                # distance map is affine, so averaging commutes with it.
                freqs[m] = doppler_average(good[0].freq, good[1].freq)
                conf[m] = min(g.confidence for g in good)
            elif good:
                freqs[m] = good[0].freq
                conf[m] = good[0].confidence * (0.5 if len(halves) == 2 else 1.0)
            else:
                freqs[m] = sels[m][0].freq if sels[m][0].freq is not None else np.nan
                conf[m] = 0.0
                dropped[m] = True

        self._cross_channel_check(freqs, dropped, t)

        distances = np.empty(3)
        for m in range(3):
            ref = drift_correct(self.cal, t, m)
            if dropped[m] and cfg.use_fallback:
                pred = self.state.predict(m, t)
                if pred is not None:
                    freqs[m] = pred
            d = beat_to_distance(freqs[m], ref, self.spec, self.cal.standoffs[m])
            if not dropped[m] and d < -cfg.negative_distance_tol:
                dropped[m] = True
                conf[m] = 0.0
                pred = self.state.predict(m, t)
                if cfg.use_fallback and pred is not None:
                    freqs[m] = pred
                    d = beat_to_distance(pred, ref, self.spec, self.cal.standoffs[m])
            distances[m] = d

        for m in range(3):
            if dropped[m]:
                if cfg.use_fallback:
                    self.state.fallback_count[m] += 1
                    penalty = min(1.0, self.state.fallback_count[m] / cfg.max_fallbacks)
                    conf[m] = max(0.0, 0.3 * (1.0 - penalty))
            else:
                self.state.fallback_count[m] = 0
                self.state.push(m, t, float(freqs[m]))

        e_l = float(np.sum(frame[0] ** 2))
        e_r = float(np.sum(frame[1] ** 2))
        ld = 10.0 * np.log10((e_l + 1e-300) / (e_r + 1e-300))
        return RangeEstimate(t, distances, dropped, freqs.copy(), conf, ld)

    def _cross_channel_check(self, freqs: np.ndarray, dropped: np.ndarray, t: float) -> None:
        """Drop a channel whose peak jumps while the other two stay put."""
        if not self.config.use_cfar:
            return
        jumps = np.full(3, np.nan)
        for m in range(3):
            prev = self.state.last_freq(m)
            if prev is not None and not dropped[m]:
                jumps[m] = abs(freqs[m] - prev) / self._raw_bin
        if np.any(np.isnan(jumps)):
            return
        big = jumps > self.config.cross_jump_bins
        small = jumps < self.config.cross_stable_bins
        if np.sum(big) == 1 and np.sum(small) == 2:
            dropped[np.argmax(big)] = True

    # -- stream driving ----------------------------------------------------

    def run(self, blocks) -> "list[RangeEstimate]":
        """Consume an iterable of (3, n) sample blocks; returns all estimates."""
        return list(self.iter_stream(blocks))

    def iter_stream(self, blocks):
        buf = _StreamBuffer()
        k = 0
        period = self.spec.period_samples
        for block in blocks:
            buf.append(np.atleast_2d(np.asarray(block, dtype=np.float64)))
            while True:
                start, t, slip = self.frame_plan(k)
                frame = buf.extract(start, period)
                if frame is None:
                    break
                yield self.process_frame(frame, t, slip_samples=slip)
                k += 1
                buf.drop_before(self.frame_plan(k)[0] - period)


class _StreamBuffer:
    """Grow-and-trim staging buffer addressed by absolute sample index.

    Trimming is deferred until the dead prefix is large, so feeding one huge
    block stays O(n) instead of copying the remainder every frame.
    """

    TRIM_THRESHOLD = 1 << 18

    def __init__(self):
        self._data = None
        self._offset = 0
        self._dead = 0

    def append(self, block: np.ndarray) -> None:
        if self._data is None:
            self._data = block.copy()
        else:
            self._data = np.concatenate([self._data, block], axis=1)

    def extract(self, start: int, length: int) -> np.ndarray | None:
        if self._data is None or start < self._offset:
            return None
        a = start - self._offset
        if a + length > self._data.shape[1]:
            return None
        return self._data[:, a : a + length]

    def drop_before(self, start: int) -> None:
        self._dead = max(self._dead, start - self._offset)
        if self._dead >= self.TRIM_THRESHOLD and self._data is not None:
            self._data = self._data[:, self._dead :].copy()
            self._offset += self._dead
            self._dead = 0
