"""Streaming 16-bit PCM WAV input/output plus atomic text-file helpers."""

from __future__ import annotations

import os
import tempfile
import wave
from collections.abc import Iterable, Iterator

import numpy as np

from .errors import FormatError

PCM_FULL_SCALE = 32767.0


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class AtomicTextWriter:
    """Incrementally written text file that only appears on successful close."""

    def __init__(self, path):
        self._path = os.fspath(path)
        fd, self._tmp = tempfile.mkstemp(
            dir=os.path.dirname(os.path.abspath(self._path)) or "."
        )
        self._f = os.fdopen(fd, "w")

    def write(self, text: str) -> None:
        self._f.write(text)

    def close(self, commit: bool = True) -> None:
        self._f.close()
        if commit:
            os.replace(self._tmp, self._path)
        elif os.path.exists(self._tmp):
            os.unlink(self._tmp)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *exc):
        self.close(commit=exc_type is None)


def _to_int16(block: np.ndarray) -> bytes:
    clipped = np.clip(block, -1.0, 1.0)
    pcm = np.round(clipped * PCM_FULL_SCALE).astype("<i2")
    # wave expects interleaved frames: (n, channels)
    return pcm.T.tobytes()


def write_wav_chunks(path, chunks: Iterable[np.ndarray], sample_rate: int) -> int:
    """Write (channels, n) float chunks as one PCM WAV file, atomically."""
    path = os.fspath(path)
    total = 0
    tmp_fd, tmp_path = tempfile.mkstemp(
        dir=os.path.dirname(os.path.abspath(path)) or ".", suffix=".wav.tmp"
    )
    os.close(tmp_fd)
    try:
        wav = None
        try:
            for chunk in chunks:
                chunk = np.atleast_2d(np.asarray(chunk, dtype=np.float64))
                if wav is None:
                    wav = wave.open(tmp_path, "wb")
                    wav.setnchannels(chunk.shape[0])
                    wav.setsampwidth(2)
                    wav.setframerate(sample_rate)
                wav.writeframes(_to_int16(chunk))
                total += chunk.shape[1]
            if wav is None:
                raise FormatError("no audio chunks to write")
        finally:
            if wav is not None:
                wav.close()
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return total


def write_wav(path, data: np.ndarray, sample_rate: int) -> int:
    return write_wav_chunks(path, [data], sample_rate)


class WavReader:
    """Block reader for 16-bit PCM WAV files of any channel count."""

    def __init__(self, path):
        self._wav = wave.open(os.fspath(path), "rb")
        if self._wav.getsampwidth() != 2:
            self._wav.close()
            raise FormatError("only 16-bit PCM WAV input is supported")
        self.channels = self._wav.getnchannels()
        self.sample_rate = self._wav.getframerate()
        self.n_samples = self._wav.getnframes()

    def read(self, n: int) -> np.ndarray:
        """Next block as (channels, m) float64 in [-1, 1]; m may be < n at EOF."""
        raw = self._wav.readframes(n)
        pcm = np.frombuffer(raw, dtype="<i2")
        block = pcm.astype(np.float64) / PCM_FULL_SCALE
        return block.reshape(-1, self.channels).T

    def blocks(self, block_size: int = 1 << 16) -> Iterator[np.ndarray]:
        while True:
            block = self.read(block_size)
            if block.shape[1] == 0:
                return
            yield block

    def close(self) -> None:
        self._wav.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_wav(path) -> tuple[np.ndarray, int]:
    """Whole file as (channels, n) float64 plus sample rate."""
    with WavReader(path) as reader:
        parts = list(reader.blocks())
        rate = reader.sample_rate
        channels = reader.channels
    if not parts:
        return np.zeros((channels, 0)), rate
    return np.concatenate(parts, axis=1), rate
