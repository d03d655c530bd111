"""Manifest ingestion, the singer registry, and random-crop batch sampling.

A dataset is described by a JSON manifest: a top-level ``singers`` array
whose entries are ``{"id": str, "files": [{"path": str, "split":
"train"|"validation"}]}``.  Paths are relative to the manifest's directory.
Validation files are used for reporting only and never enter a training
batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio
from .audio import AudioClip, MuLawClip
from .augment import VARIANT_TAGS, apply_variant

SPLITS = ("train", "validation")


class ManifestError(Exception):
    """Manifest file missing, malformed, or violating dataset invariants."""


@dataclass(frozen=True)
class ManifestFile:
    path: Path
    split: str


@dataclass(frozen=True)
class ManifestSinger:
    singer_id: str
    files: tuple[ManifestFile, ...]

    def train_files(self) -> tuple[ManifestFile, ...]:
        return tuple(f for f in self.files if f.split == "train")

    def validation_files(self) -> tuple[ManifestFile, ...]:
        return tuple(f for f in self.files if f.split == "validation")


@dataclass(frozen=True)
class DatasetManifest:
    singers: tuple[ManifestSinger, ...]
    root: Path

    def total_train_files(self) -> int:
        return sum(len(s.train_files()) for s in self.singers)


class SingerRegistry:
    """Bijection between singer ids and dense indices in [0, k)."""

    def __init__(self, singer_ids):
        self.ids = tuple(singer_ids)
        if len(set(self.ids)) != len(self.ids):
            raise ManifestError("singer ids must be unique")
        self._index = {sid: i for i, sid in enumerate(self.ids)}

    @property
    def k(self) -> int:
        return len(self.ids)

    def index_of(self, singer_id: str) -> int:
        try:
            return self._index[singer_id]
        except KeyError:
            raise KeyError(f"unknown singer id {singer_id!r}; known ids: {', '.join(self.ids)}") from None

    def id_of(self, index: int) -> str:
        return self.ids[index]


def load_manifest(path) -> tuple[DatasetManifest, SingerRegistry]:
    """Parse and validate a manifest; the registry follows manifest order."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict) or not isinstance(payload.get("singers"), list):
        raise ManifestError(f"{path}: expected a top-level 'singers' array")

    root = path.parent
    singers = []
    seen_ids = set()
    seen_paths = set()
    for entry in payload["singers"]:
        sid = entry.get("id")
        if not isinstance(sid, str) or not sid:
            raise ManifestError(f"{path}: singer entry without a valid 'id': {entry!r}")
        if sid in seen_ids:
            raise ManifestError(f"{path}: duplicate singer id {sid!r}")
        seen_ids.add(sid)
        files = []
        for rec in entry.get("files", []):
            rel = rec.get("path")
            split = rec.get("split")
            if not isinstance(rel, str) or not rel:
                raise ManifestError(f"{path}: singer {sid!r} has a file entry without a path")
            if split not in SPLITS:
                raise ManifestError(f"{path}: singer {sid!r} file {rel!r} has split {split!r}, expected one of {SPLITS}")
            if rel in seen_paths:
                raise ManifestError(f"{path}: file path {rel!r} appears more than once")
            seen_paths.add(rel)
            full = (root / rel).resolve()
            if not full.exists():
                raise ManifestError(f"{path}: singer {sid!r} references missing file {rel!r}")
            files.append(ManifestFile(path=full, split=split))
        if not any(f.split == "train" for f in files):
            raise ManifestError(f"{path}: singer {sid!r} has no train files")
        singers.append(ManifestSinger(singer_id=sid, files=tuple(files)))
    if not singers:
        raise ManifestError(f"{path}: manifest lists no singers")

    manifest = DatasetManifest(singers=tuple(singers), root=root)
    registry = SingerRegistry(s.singer_id for s in manifest.singers)
    return manifest, registry


@dataclass(frozen=True, eq=False)
class TrainingItem:
    """One training crop: mu-law targets plus the quantized real signal fed to the encoder.

    `companded` is the crop after a mu-law encode/decode round trip, so
    `mu_law_encode(companded)` reproduces `mulaw` exactly.
    """

    mulaw: MuLawClip
    companded: np.ndarray
    singer_index: int


class AudioCache:
    """Loads each manifest file once, optionally resampled to a working rate."""

    def __init__(self, sample_rate: int | None = None):
        self.sample_rate = sample_rate
        self._clips: dict[Path, AudioClip] = {}

    def get(self, path: Path) -> AudioClip:
        clip = self._clips.get(path)
        if clip is None:
            clip = audio.read_wav(path)
            if self.sample_rate is not None and clip.sample_rate != self.sample_rate:
                clip = audio.resample(clip, self.sample_rate)
            self._clips[path] = clip
        return clip


def sample_batch(
    manifest: DatasetManifest,
    registry: SingerRegistry,
    crop_len: int,
    batch_size: int,
    rng_seed: int,
    cache: AudioCache | None = None,
    grid: int = 800,
) -> list[TrainingItem]:
    """Draw a deterministic batch of random training crops.

    Per item: uniform singer, uniform train file of that singer, uniform
    crop start, then one of the four augmentation variants uniformly.
    `crop_len` must be a multiple of `grid` (the encoder's pooling period).
    """
    if crop_len <= 0 or crop_len % grid != 0:
        raise ValueError(f"crop_len must be a positive multiple of {grid}, got {crop_len}")
    if cache is None:
        cache = AudioCache()
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    items = []
    for _ in range(batch_size):
        s_idx = int(rng.integers(registry.k))
        singer = manifest.singers[s_idx]
        train_files = singer.train_files()
        f = train_files[int(rng.integers(len(train_files)))]
        clip = cache.get(f.path)
        if len(clip) < crop_len:
            raise ValueError(f"file {f.path} has {len(clip)} samples, shorter than crop_len {crop_len}")
        start = int(rng.integers(len(clip) - crop_len + 1))
        variant = VARIANT_TAGS[int(rng.integers(4))]
        crop = AudioClip(clip.samples[start : start + crop_len], clip.sample_rate)
        crop = apply_variant(crop, variant)
        indices = audio.encode_indices(crop.samples)
        items.append(
            TrainingItem(
                mulaw=MuLawClip(indices, crop.sample_rate),
                companded=audio.decode_samples(indices),
                singer_index=s_idx,
            )
        )
    return items
