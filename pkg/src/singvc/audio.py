"""Waveform I/O, the 8-bit mu-law codec, resampling and spectral helpers.

Everything in the pipeline moves through two currencies: `AudioClip`
(real-valued mono audio in [-1, 1]) and `MuLawClip` (8-bit companded
indices, the decoder's alphabet).  All functions here are pure or touch
only their own file handle.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MU = 255
QUANT_LEVELS = 256
DEFAULT_SAMPLE_RATE = 16000

_LOG_Q = np.log(256.0)


class AudioError(Exception):
    """Base class for audio I/O and codec failures."""


class MalformedWavError(AudioError):
    """File exists but is not a well-formed RIFF/WAVE container."""


class UnsupportedWavError(AudioError):
    """Well-formed WAV whose encoding we do not read (not 16-bit PCM)."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform: float samples at a known rate.

    Samples are held as float64.  Amplitude bounds are enforced at the
    points that require them (codec, file output), not at construction,
    so intermediate signal math stays unconstrained.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"AudioClip requires a 1-D sample array, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("AudioClip requires at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class MuLawClip:
    """8-bit mu-law index sequence in [0, 255]."""

    indices: np.ndarray
    sample_rate: int

    def __post_init__(self):
        indices = np.asarray(self.indices)
        if indices.ndim != 1 or indices.size < 1:
            raise ValueError(f"MuLawClip requires a non-empty 1-D index array, got shape {indices.shape}")
        if not np.issubdtype(indices.dtype, np.integer):
            raise ValueError(f"MuLawClip indices must be integers, got dtype {indices.dtype}")
        indices = indices.astype(np.int64)
        if indices.min() < 0 or indices.max() > 255:
            raise ValueError("MuLawClip indices must lie in [0, 255]")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.indices.size)


def _check_amplitude_range(x: np.ndarray, what: str) -> None:
    bad = np.flatnonzero((x < -1.0) | (x > 1.0) | ~np.isfinite(x))
    if bad.size:
        pos = int(bad[0])
        raise ValueError(f"{what}: sample at position {pos} is {x[pos]!r}, outside [-1, 1]")


def compand(x: np.ndarray) -> np.ndarray:
    """Mu-law compression of amplitudes in [-1, 1] to the companded domain [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(MU * np.abs(x)) / _LOG_Q


def expand(y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`compand`."""
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * (np.power(256.0, np.abs(y)) - 1.0) / MU


def encode_indices(x: np.ndarray) -> np.ndarray:
    """Quantize amplitudes in [-1, 1] to mu-law bin indices in [0, 255]."""
    x = np.asarray(x, dtype=np.float64)
    _check_amplitude_range(x, "mu_law_encode")
    y = compand(x)
    idx = np.floor((y + 1.0) / 2.0 * QUANT_LEVELS)
    return np.minimum(QUANT_LEVELS - 1, idx).astype(np.int64)


def decode_samples(indices: np.ndarray) -> np.ndarray:
    """Map mu-law bin indices to their bin-center amplitudes in (-1, 1)."""
    indices = np.asarray(indices, dtype=np.int64)
    y = (2.0 * indices + 1.0) / QUANT_LEVELS - 1.0
    return expand(y)


def quantized(x: np.ndarray) -> np.ndarray:
    """Amplitudes after a mu-law encode/decode round trip (8-bit resolution)."""
    return decode_samples(encode_indices(x))


def mu_law_encode(clip: AudioClip) -> MuLawClip:
    """8-bit mu-law encoding of a clip: y = sign(x) ln(1+255|x|)/ln 256, binned to 256 levels."""
    return MuLawClip(encode_indices(clip.samples), clip.sample_rate)


def mu_law_decode(mlc: MuLawClip) -> AudioClip:
    """Decode mu-law indices to bin-center amplitudes."""
    return AudioClip(decode_samples(mlc.indices), mlc.sample_rate)


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM RIFF/WAVE file; multichannel input is averaged to mono."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        wf = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise MalformedWavError(f"{path}: {exc}") from exc
    with wf:
        if wf.getcomptype() != "NONE":
            raise UnsupportedWavError(f"{path}: compressed WAV ({wf.getcomptype()}) not supported")
        width = wf.getsampwidth()
        if width != 2:
            raise UnsupportedWavError(f"{path}: only 16-bit PCM supported, got {8 * width}-bit")
        channels = wf.getnchannels()
        rate = wf.getframerate()
        frames = wf.getnframes()
        raw = wf.readframes(frames)
    if len(raw) < frames * 2 * channels:
        raise MalformedWavError(f"{path}: truncated sample data")
    if frames == 0:
        raise MalformedWavError(f"{path}: file contains no samples")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    return AudioClip(data / 32768.0, rate)


def write_wav(clip: AudioClip, path) -> None:
    """Write a clip as mono 16-bit PCM; round trip is exact to 1/32768 per sample."""
    _check_amplitude_range(clip.samples, "write_wav")
    ints = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(ints.tobytes())


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampling to `target_rate`.

    Output length is round(len * target/source) with endpoints preserved.
    Same-rate input is returned unchanged.  Desk-scale fidelity only; this
    is not a band-limited resampler.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    n_in = len(clip)
    n_out = max(1, int(np.floor(n_in * target_rate / clip.sample_rate + 0.5)))
    if n_out == 1 or n_in == 1:
        out = np.full(n_out, clip.samples[0])
    else:
        src = np.arange(n_out, dtype=np.float64) * (n_in - 1) / (n_out - 1)
        out = np.interp(src, np.arange(n_in, dtype=np.float64), clip.samples)
    return AudioClip(out, target_rate)


def power_spectrum(clip: AudioClip) -> np.ndarray:
    """Squared magnitudes of the full-length DFT of the sample sequence."""
    return np.abs(np.fft.fft(clip.samples)) ** 2
