"""Automatic singer identification: features, the classifier CNN, top-1
accuracy, and a closed-form centroid oracle for synthetic singers.

The default feature extractor is a log mel filter bank over short-time
power spectra; it sits behind a pluggable interface so a different
front end can be swapped in without touching the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn as tnn

from . import audio
from .audio import AudioClip
from .dataset import AudioCache, DatasetManifest, SingerRegistry

LOG_FLOOR = 1e-6


@dataclass(frozen=True)
class FeatureSpec:
    bands: int = 40
    window: int = 400
    hop: int = 160


def mel_filterbank(bands: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel-spaced filters mapping |FFT|^2 bins to band energies."""

    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)

    n_bins = n_fft // 2 + 1
    freqs = np.arange(n_bins) * sample_rate / n_fft
    points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), bands + 2))
    bank = np.zeros((bands, n_bins))
    for b in range(bands):
        lo, mid, hi = points[b], points[b + 1], points[b + 2]
        rising = (freqs - lo) / max(mid - lo, 1e-12)
        falling = (hi - freqs) / max(hi - mid, 1e-12)
        bank[b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def extract_features(clip: AudioClip, spec: FeatureSpec = FeatureSpec()) -> np.ndarray:
    """Log mel energies, bands x frames; frames = (T - window)//hop + 1."""
    T = len(clip)
    if T < spec.window:
        raise ValueError(f"clip of {T} samples is shorter than one window ({spec.window})")
    n_frames = (T - spec.window) // spec.hop + 1
    window_fn = np.hanning(spec.window)
    starts = np.arange(n_frames) * spec.hop
    frames = np.stack([clip.samples[s : s + spec.window] for s in starts])
    spectra = np.abs(np.fft.rfft(frames * window_fn, axis=1)) ** 2
    bank = mel_filterbank(spec.bands, spec.window, clip.sample_rate)
    return np.log(spectra @ bank.T + LOG_FLOOR).T


@dataclass(frozen=True)
class IdModelSpec:
    conv_layers: int = 5
    channels: int = 32
    kernel: int = 3
    hidden: int = 64


class IdNetwork(tnn.Module):
    """The identification CNN: stacked 3x3 conv blocks with batch norm, ReLU
    and 2x2 max pooling, average pooling over time, then two FC layers."""

    def __init__(self, spec: IdModelSpec, bands: int, k: int):
        super().__init__()
        self.spec = spec
        self.bands = bands
        self.k = k
        blocks = []
        in_ch = 1
        for _ in range(spec.conv_layers):
            blocks += [
                tnn.Conv2d(in_ch, spec.channels, spec.kernel, padding=spec.kernel // 2),
                tnn.BatchNorm2d(spec.channels),
                tnn.ReLU(),
                tnn.MaxPool2d(2),
            ]
            in_ch = spec.channels
        self.conv = tnn.Sequential(*blocks)
        freq = bands
        for _ in range(spec.conv_layers):
            freq //= 2
        if freq < 1:
            raise ValueError(f"{bands} bands collapse to zero after {spec.conv_layers} poolings")
        self.fc1 = tnn.Linear(spec.channels * freq, spec.hidden)
        self.fc2 = tnn.Linear(spec.hidden, k)

    def min_frames(self) -> int:
        return 2**self.spec.conv_layers

    def forward(self, features):
        # features: (B, bands, frames) with frames >= 2**conv_layers
        h = self.conv(features.unsqueeze(1))
        h = h.mean(dim=-1)  # average over time
        h = h.flatten(1)
        return self.fc2(torch.relu(self.fc1(h)))

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        """Softmax singer probabilities for one bands x frames feature image."""
        self.eval()
        with torch.no_grad():
            x = torch.from_numpy(_standardize(features)).to(torch.float32).unsqueeze(0)
            return F.softmax(self.forward(x), dim=1).squeeze(0).numpy()


def _standardize(feat: np.ndarray) -> np.ndarray:
    mean = feat.mean()
    std = feat.std()
    return (feat - mean) / (std + 1e-6)


@dataclass
class IdTrainConfig:
    steps: int = 400
    batch_size: int = 16
    crop_frames: int = 64
    learning_rate: float = 1e-3
    rng_seed: int = 0
    splits: tuple[str, ...] = ("train",)


def train_identifier(
    manifest: DatasetManifest,
    registry: SingerRegistry,
    spec: IdModelSpec = IdModelSpec(),
    config: IdTrainConfig = IdTrainConfig(),
    feature_spec: FeatureSpec = FeatureSpec(),
    sample_rate: int | None = None,
    cache: AudioCache | None = None,
) -> IdNetwork:
    """Supervised training of the identification CNN on ground-truth labels.

    Feature images are computed once per file; batches are random fixed-size
    frame crops.  Deterministic for a given seed.
    """
    if registry.k < 2:
        raise ValueError(f"identification needs k >= 2 singers, got {registry.k}")
    if cache is None:
        cache = AudioCache(sample_rate=sample_rate)

    features = []
    labels = []
    for s_idx, singer in enumerate(manifest.singers):
        for f in singer.files:
            if f.split not in config.splits:
                continue
            feat = extract_features(cache.get(f.path), feature_spec)
            if feat.shape[1] >= config.crop_frames:
                features.append(_standardize(feat))
                labels.append(s_idx)
    if not features:
        raise ValueError("no usable training files (too short for one feature crop?)")

    rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    with torch.random.fork_rng():
        torch.manual_seed(int(rng.integers(2**62)))
        net = IdNetwork(spec, feature_spec.bands, registry.k)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)

    net.train()
    for _ in range(config.steps):
        picks = rng.integers(len(features), size=config.batch_size)
        batch = []
        targets = []
        for p in picks:
            feat = features[p]
            start = int(rng.integers(feat.shape[1] - config.crop_frames + 1))
            batch.append(feat[:, start : start + config.crop_frames])
            targets.append(labels[p])
        x = torch.from_numpy(np.stack(batch)).to(torch.float32)
        y = torch.tensor(targets, dtype=torch.long)
        loss = F.cross_entropy(net(x), y)
        opt.zero_grad()
        loss.backward()
        opt.step()
    net.eval()
    return net


def predict_singer(net: IdNetwork, clip: AudioClip, feature_spec: FeatureSpec = FeatureSpec()) -> int:
    """Whole-clip prediction: one forward pass over the full feature image."""
    feat = extract_features(clip, feature_spec)
    if feat.shape[1] < net.min_frames():
        raise ValueError(
            f"clip yields {feat.shape[1]} feature frames, classifier needs {net.min_frames()}"
        )
    return int(np.argmax(net.probabilities(feat)))


def top1_accuracy(net: IdNetwork, clips, feature_spec: FeatureSpec = FeatureSpec()) -> float:
    """Fraction of (clip, true_singer_index) pairs predicted correctly."""
    clips = list(clips)
    if not clips:
        raise ValueError("top1_accuracy requires a nonempty clip list")
    hits = sum(int(predict_singer(net, clip, feature_spec) == true) for clip, true in clips)
    return hits / len(clips)


def spectral_centroid_hz(clip: AudioClip) -> float:
    """Power-weighted mean frequency of the clip's spectrum."""
    power = np.abs(np.fft.rfft(clip.samples)) ** 2
    freqs = np.fft.rfftfreq(len(clip), d=1.0 / clip.sample_rate)
    total = power.sum()
    if total == 0:
        return 0.0
    return float((freqs * power).sum() / total)


def centroid_oracle(clip: AudioClip, profiles) -> int:
    """Nearest-expected-centroid singer index; ground-truth-free synthetic check."""
    centroid = spectral_centroid_hz(clip)
    expected = [p.expected_centroid_hz() for p in profiles]
    return int(np.argmin([abs(centroid - e) for e in expected]))


def _segments(clip: AudioClip, segment_seconds: float):
    if segment_seconds <= 0:
        yield None, clip
        return
    seg_len = int(round(segment_seconds * clip.sample_rate))
    for i in range(len(clip) // seg_len):
        yield i, AudioClip(clip.samples[i * seg_len : (i + 1) * seg_len], clip.sample_rate)


def evaluate_model(
    manifest: DatasetManifest,
    registry: SingerRegistry,
    model,
    mode: str,
    id_net: IdNetwork,
    cache: AudioCache | None = None,
    profiles=None,
    segment_seconds: float = 0.0,
    temperature: float = 1.0,
    rng_seed: int = 0,
    feature_spec: FeatureSpec = FeatureSpec(),
):
    """Convert (or reconstruct) every validation clip and score identification.

    Reconstruction converts each clip with its own singer's embedding;
    conversion targets every other singer.  Returns (rows, summary): one
    row (path, true id, predicted id, correct flag, oracle prediction) per
    converted clip, and accuracy statistics.  The true singer is the
    intended target identity.
    """
    from . import inference

    if mode not in ("reconstruction", "conversion"):
        raise ValueError(f"mode must be 'reconstruction' or 'conversion', got {mode!r}")
    if cache is None:
        cache = AudioCache(sample_rate=model.sample_rate)

    rows = []
    hits = 0
    oracle_hits = 0
    n = 0
    for s_idx, singer in enumerate(manifest.singers):
        for file_no, f in enumerate(singer.validation_files()):
            clip = cache.get(f.path)
            try:
                rel = f.path.relative_to(manifest.root.resolve())
            except ValueError:
                rel = f.path
            targets = [s_idx] if mode == "reconstruction" else [t for t in range(registry.k) if t != s_idx]
            for seg_no, segment in _segments(clip, segment_seconds):
                label = str(rel) if seg_no is None else f"{rel}#seg{seg_no}"
                for t_idx in targets:
                    seed_seq = np.random.SeedSequence(
                        entropy=rng_seed, spawn_key=(s_idx, file_no, seg_no or 0, t_idx)
                    )
                    converted = inference.convert(
                        segment,
                        registry.id_of(t_idx),
                        model,
                        temperature=temperature,
                        rng_seed=int(seed_seq.generate_state(1)[0]),
                    )
                    pred = predict_singer(id_net, converted, feature_spec)
                    correct = int(pred == t_idx)
                    hits += correct
                    n += 1
                    oracle_name = ""
                    if profiles is not None:
                        oracle_pred = centroid_oracle(converted, profiles)
                        oracle_hits += int(oracle_pred == t_idx)
                        oracle_name = registry.id_of(oracle_pred)
                    rows.append((label, registry.id_of(t_idx), registry.id_of(pred), correct, oracle_name))

    summary = {"n": n, "accuracy": hits / n if n else float("nan")}
    if profiles is not None:
        summary["oracle_accuracy"] = oracle_hits / n if n else float("nan")
    return rows, summary
