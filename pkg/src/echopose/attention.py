"""Calibration-free attention detection and activity recognition.

Whether the user faces the device is decided by a binary kernel classifier
over 63 acoustic features per frame: 60 per-band level differences between
microphone pairs (20 bands spanning the chirp sweep) and 3 pairwise beat-peak
frequency gaps.  Level differences are ratios and peak gaps are differences,
so neither needs the ranging calibration.  The classifier is a soft-margin
SVM with an RBF kernel trained by sequential minimal optimization.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .chirp import ChirpSpec
from .errors import ConfigurationError, FramingError
from .ranging import PipelineConfig, RangeEstimate, half_spectrum, mix_and_lowpass, strongest_peak
from .chirp import reference_slopes

N_BANDS = 20
N_FEATURES = 63
LD_CLAMP_DB = 60.0
MIC_PAIRS = ((0, 1), (0, 2), (1, 2))


def band_energies(frame: np.ndarray, spec: ChirpSpec) -> np.ndarray:
    """Energy of each channel in 20 equal bands across [f0, f1]; (3, 20)."""
    n = frame.shape[1]
    mags2 = np.abs(np.fft.rfft(frame, axis=1)) ** 2
    freqs = np.fft.rfftfreq(n, 1.0 / spec.sample_rate)
    edges = np.linspace(spec.f0, spec.f1, N_BANDS + 1)
    out = np.empty((frame.shape[0], N_BANDS))
    for b in range(N_BANDS):
        sel = (freqs >= edges[b]) & (freqs < edges[b + 1])
        out[:, b] = np.sum(mags2[:, sel], axis=1)
    return out


def extract_attention_features(
    frame: np.ndarray, spec: ChirpSpec, spectra=None, config: PipelineConfig | None = None,
) -> np.ndarray:
    """63-vector of level differences and beat-peak gaps for one frame.

    ``spectra`` may supply precomputed per-channel up-slope beat spectra;
    otherwise they are computed here.  No calibration is required: the
    strongest beat peak per channel stands in for the direct path.
    """
    frame = np.atleast_2d(np.asarray(frame, dtype=np.float64))
    if frame.shape[0] != 3:
        raise FramingError("attention features need all three channels")
    config = config or PipelineConfig()

    energies = band_energies(frame, spec)
    lds = []
    for i, j in MIC_PAIRS:
        ratio = 10.0 * np.log10(
            (energies[i] + 1e-300) / (energies[j] + 1e-300)
        )
        lds.append(np.clip(ratio, -LD_CLAMP_DB, LD_CLAMP_DB))
    ld = np.concatenate(lds)

    if spectra is None:
        up, _ = reference_slopes(spec)
        ref = up.data[0]
        spectra = []
        for m in range(3):
            bb = mix_and_lowpass(frame[m, : spec.slope_len], ref, spec.sample_rate,
                                 config.lowpass_hz, config.lowpass_order)
            spectra.append(half_spectrum(bb, config.zero_pad_factor))
    peaks = np.zeros(3)
    for m in range(3):
        p = strongest_peak(spectra[m])
        peaks[m] = p.freq if p is not None else 0.0
    gaps = np.array([peaks[i] - peaks[j] for i, j in MIC_PAIRS])

    return np.concatenate([ld, gaps])


# ---------------------------------------------------------------------------
# Kernel classifier (SMO)


@dataclass
class ClassifierModel:
    """Trained soft-margin kernel classifier with standardization built in."""

    support_vectors: np.ndarray  # standardized
    dual_coef: np.ndarray        # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    mean: np.ndarray
    scale: np.ndarray
    classes: tuple = (-1, 1)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.mean.shape[0]:
            raise ConfigurationError(
                f"feature dimension {x.shape[1]} != model dimension {self.mean.shape[0]}"
            )
        z = (x - self.mean) / self.scale
        d2 = (
            np.sum(z**2, axis=1)[:, None]
            + np.sum(self.support_vectors**2, axis=1)[None, :]
            - 2.0 * z @ self.support_vectors.T
        )
        k = np.exp(-self.gamma * np.maximum(d2, 0.0))
        return k @ self.dual_coef + self.bias

    def save(self, path) -> None:
        doc = {
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "C": self.C,
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
        }
        path = os.fspath(path)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
        try:
            with os.fdopen(fd, "w") as f:
                json.dump(doc, f)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        with open(path) as f:
            doc = json.load(f)
        return cls(
            support_vectors=np.array(doc["support_vectors"]),
            dual_coef=np.array(doc["dual_coef"]),
            bias=doc["bias"],
            gamma=doc["gamma"],
            C=doc["C"],
            mean=np.array(doc["mean"]),
            scale=np.array(doc["scale"]),
        )


class _Smo:
    """Platt-style sequential minimal optimization with an error cache.

    Deterministic: working-set choices break ties by index, no randomness.
    """

    def __init__(self, K: np.ndarray, y: np.ndarray, C: float, tol: float, max_passes: int):
        self.K = K
        self.y = y.astype(np.float64)
        self.C = C
        self.tol = tol
        self.max_passes = max_passes
        n = len(y)
        self.alpha = np.zeros(n)
        self.b = 0.0
        self.f = np.zeros(n)  # decision values minus bias contributions: K @ (alpha*y)

    def _error(self, i: int) -> float:
        return self.f[i] + self.b - self.y[i]

    def _take_step(self, i: int, j: int) -> bool:
        if i == j:
            return False
        ai, aj = self.alpha[i], self.alpha[j]
        yi, yj = self.y[i], self.y[j]
        ei = self._error(i)
        ej = self._error(j)
        s = yi * yj
        if s > 0:
            lo, hi = max(0.0, ai + aj - self.C), min(self.C, ai + aj)
        else:
            lo, hi = max(0.0, aj - ai), min(self.C, self.C + aj - ai)
        if hi - lo < 1e-12:
            return False
        eta = self.K[i, i] + self.K[j, j] - 2.0 * self.K[i, j]
        if eta <= 1e-12:
            return False
        aj_new = aj + yj * (ei - ej) / eta
        aj_new = min(hi, max(lo, aj_new))
        if abs(aj_new - aj) < 1e-10 * (aj_new + aj + 1e-10):
            return False
        ai_new = ai + s * (aj - aj_new)

        b1 = self.b - ei - yi * (ai_new - ai) * self.K[i, i] - yj * (aj_new - aj) * self.K[i, j]
        b2 = self.b - ej - yi * (ai_new - ai) * self.K[i, j] - yj * (aj_new - aj) * self.K[j, j]
        if 0 < ai_new < self.C:
            self.b = b1
        elif 0 < aj_new < self.C:
            self.b = b2
        else:
            self.b = 0.5 * (b1 + b2)

        self.f += yi * (ai_new - ai) * self.K[i] + yj * (aj_new - aj) * self.K[j]
        self.alpha[i] = ai_new
        self.alpha[j] = aj_new
        return True

    def _examine(self, j: int) -> bool:
        yj = self.y[j]
        aj = self.alpha[j]
        ej = self._error(j)
        r = ej * yj
        if (r < -self.tol and aj < self.C) or (r > self.tol and aj > 0):
            nonbound = np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))
            if len(nonbound) > 1:
                errs = self.f + self.b - self.y
                i = int(nonbound[np.argmax(np.abs(errs[nonbound] - ej))])
                if self._take_step(i, j):
                    return True
            for i in nonbound:
                if self._take_step(int(i), j):
                    return True
            for i in range(len(self.y)):
                if self._take_step(i, j):
                    return True
        return False

    def solve(self):
        n = len(self.y)
        examine_all = True
        changed = 0
        passes = 0
        while (changed > 0 or examine_all) and passes < self.max_passes:
            changed = 0
            if examine_all:
                for j in range(n):
                    changed += self._examine(j)
            else:
                for j in np.flatnonzero((self.alpha > 0) & (self.alpha < self.C)):
                    changed += self._examine(int(j))
            if examine_all:
                examine_all = False
            elif changed == 0:
                examine_all = True
            passes += 1
        return self.alpha, self.b


def train_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    C: float = 1.0,
    gamma: float | None = None,
    tol: float = 1e-3,
    max_passes: int = 200,
) -> ClassifierModel:
    """Train the binary max-margin classifier (labels in {-1, +1} or {0, 1}).

    Deterministic given the data order.  gamma defaults to
    1 / (n_features * var) computed on the standardized data.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    y = np.where(y > 0, 1.0, -1.0)
    if len(np.unique(y)) < 2:
        raise ConfigurationError("training needs both classes present")
    if len(y) != X.shape[0]:
        raise ConfigurationError("features and labels disagree in length")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - mean) / scale
    if gamma is None:
        var = float(Z.var())
        gamma = 1.0 / (Z.shape[1] * var) if var > 0 else 1.0 / Z.shape[1]

    d2 = (
        np.sum(Z**2, axis=1)[:, None]
        + np.sum(Z**2, axis=1)[None, :]
        - 2.0 * Z @ Z.T
    )
    K = np.exp(-gamma * np.maximum(d2, 0.0))
    alpha, b = _Smo(K, y, C, tol, max_passes).solve()

    sv = alpha > 1e-8
    return ClassifierModel(
        support_vectors=Z[sv],
        dual_coef=(alpha * y)[sv],
        bias=float(b),
        gamma=float(gamma),
        C=C,
        mean=mean,
        scale=scale,
    )


def predict_attention(model: ClassifierModel, features: np.ndarray):
    """(oriented, margin) for one 63-feature frame, or arrays for a batch."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    scores = model.decision_function(np.atleast_2d(x))
    oriented = scores > 0
    if single:
        return bool(oriented[0]), float(scores[0])
    return oriented, scores


# ---------------------------------------------------------------------------
# Activity recognition (7 features per frame, resampled to 160)

ACTIVITY_RESAMPLE_LEN = 160
N_ACTIVITY_FEATURES = 7


def extract_activity_features(window: list[RangeEstimate]) -> np.ndarray:
    """(160, 7) feature block for one segmented exercise repetition.

    Per frame: left/right distances to the device, their first derivatives,
    the broadband level difference, and the two loss-of-track flags; then
    linear resampling to a fixed length.
    """
    if len(window) < 2:
        raise FramingError("activity window needs at least two frames")
    t = np.array([r.t for r in window])
    d_l = np.array([r.distances[0] for r in window])
    d_r = np.array([r.distances[1] for r in window])
    ld = np.array([r.ld_lr for r in window])
    lost_l = np.array([float(r.dropped[0]) for r in window])
    lost_r = np.array([float(r.dropped[1]) for r in window])
    v_l = np.gradient(d_l, t)
    v_r = np.gradient(d_r, t)

    src = np.stack([d_l, d_r, v_l, v_r, ld, lost_l, lost_r], axis=1)
    x_old = np.linspace(0.0, 1.0, len(window))
    x_new = np.linspace(0.0, 1.0, ACTIVITY_RESAMPLE_LEN)
    out = np.empty((ACTIVITY_RESAMPLE_LEN, N_ACTIVITY_FEATURES))
    for c in range(N_ACTIVITY_FEATURES):
        out[:, c] = np.interp(x_new, x_old, src[:, c])
    return out


@dataclass
class ActivityModel:
    """One-vs-rest stack of binary kernel classifiers."""

    labels: list[str]
    models: list[ClassifierModel] = field(default_factory=list)

    def save(self, path) -> None:
        docs = []
        for m in self.models:
            docs.append({
                "support_vectors": m.support_vectors.tolist(),
                "dual_coef": m.dual_coef.tolist(),
                "bias": m.bias, "gamma": m.gamma, "C": m.C,
                "mean": m.mean.tolist(), "scale": m.scale.tolist(),
            })
        path = os.fspath(path)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
        try:
            with os.fdopen(fd, "w") as f:
                json.dump({"labels": self.labels, "models": docs}, f)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "ActivityModel":
        with open(path) as f:
            doc = json.load(f)
        models = [
            ClassifierModel(
                support_vectors=np.array(d["support_vectors"]),
                dual_coef=np.array(d["dual_coef"]),
                bias=d["bias"], gamma=d["gamma"], C=d["C"],
                mean=np.array(d["mean"]), scale=np.array(d["scale"]),
            )
            for d in doc["models"]
        ]
        return cls(labels=doc["labels"], models=models)


def train_activity_classifier(
    feature_blocks: list[np.ndarray], labels: list[str], C: float = 1.0,
) -> ActivityModel:
    """One-vs-rest training on flattened (160, 7) blocks."""
    X = np.stack([np.asarray(b).ravel() for b in feature_blocks])
    label_set = sorted(set(labels))
    if len(label_set) < 2:
        raise ConfigurationError("need at least two activity classes")
    model = ActivityModel(labels=label_set)
    for lab in label_set:
        y = np.array([1.0 if l == lab else -1.0 for l in labels])
        model.models.append(train_classifier(X, y, C=C))
    return model


def classify_activity(model: ActivityModel, features: np.ndarray) -> str:
    """Label of one (160, 7) feature block."""
    if not model.models:
        raise ConfigurationError("activity model is untrained")
    x = np.asarray(features).ravel()[None, :]
    scores = [m.decision_function(x)[0] for m in model.models]
    return model.labels[int(np.argmax(scores))]
