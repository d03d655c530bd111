"""Deterministic synthetic singers for desk-scale training and checking.

A singer is a harmonic profile: how energy is spread over the first ten
harmonics, plus vibrato and an f0 range.  Songs are random pentatonic
melodies rendered by additive synthesis.  Profiles differ in spectral
envelope (timbre) rather than pitch range, so conversion between them has
to change timbre while keeping the melody.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio

N_HARMONICS = 10
NOTES_PER_SECOND = 8
RAMP_SECONDS = 0.010
PEAK = 0.9

# minor-pentatonic-ish step pattern, in semitones within an octave
PENTATONIC_STEPS = (0, 2, 4, 7, 9)


class ProfileError(Exception):
    """Invalid singer-profile description."""


@dataclass(frozen=True)
class SingerProfile:
    name: str
    harmonics: tuple[float, ...]
    vibrato_rate_hz: float
    vibrato_depth_cents: float
    f0_min_hz: float
    f0_max_hz: float

    def __post_init__(self):
        h = np.asarray(self.harmonics, dtype=np.float64)
        if h.shape != (N_HARMONICS,):
            raise ProfileError(f"profile {self.name!r}: expected {N_HARMONICS} harmonic weights, got {h.shape}")
        if np.any(h < 0) or h.sum() <= 0:
            raise ProfileError(f"profile {self.name!r}: harmonic weights must be nonnegative and not all zero")
        if abs(h.sum() - 1.0) > 1e-9:
            raise ProfileError(f"profile {self.name!r}: harmonic weights must sum to 1 (got {h.sum():.6f})")
        if not (50.0 < self.f0_min_hz < self.f0_max_hz < 1000.0):
            raise ProfileError(
                f"profile {self.name!r}: f0 range ({self.f0_min_hz}, {self.f0_max_hz}) must lie inside (50, 1000) Hz"
            )
        object.__setattr__(self, "harmonics", tuple(float(x) for x in h))

    def pitch_grid(self) -> np.ndarray:
        """Pentatonic note frequencies inside [f0_min, f0_max]."""
        freqs = []
        octave = 0
        while True:
            base = self.f0_min_hz * 2.0**octave
            if base > self.f0_max_hz:
                break
            for step in PENTATONIC_STEPS:
                f = base * 2.0 ** (step / 12.0)
                if f <= self.f0_max_hz:
                    freqs.append(f)
            octave += 1
        return np.asarray(freqs)

    def expected_centroid_hz(self) -> float:
        """Power-weighted mean frequency of the profile at its center pitch."""
        h = np.asarray(self.harmonics)
        power = h**2
        f0 = (self.f0_min_hz + self.f0_max_hz) / 2.0
        orders = np.arange(1, N_HARMONICS + 1)
        return float(f0 * (orders * power).sum() / power.sum())


def default_profiles() -> list[SingerProfile]:
    """A dark singer (energy in harmonics 1-3) and a bright one (6-10)."""
    return [
        SingerProfile(
            name="dark",
            harmonics=(0.5, 0.3, 0.2, 0, 0, 0, 0, 0, 0, 0),
            vibrato_rate_hz=5.0,
            vibrato_depth_cents=25.0,
            f0_min_hz=200.0,
            f0_max_hz=330.0,
        ),
        SingerProfile(
            name="bright",
            harmonics=(0, 0, 0, 0, 0, 0.1, 0.2, 0.3, 0.25, 0.15),
            vibrato_rate_hz=6.5,
            vibrato_depth_cents=35.0,
            f0_min_hz=200.0,
            f0_max_hz=330.0,
        ),
    ]


def load_profiles(path) -> list[SingerProfile]:
    """Read a JSON array of profile records; at least two are required."""
    path = Path(path)
    if not path.exists():
        raise ProfileError(f"profile spec not found: {path}")
    try:
        records = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise ProfileError(f"{path}: expected a JSON array of profiles")
    profiles = []
    for rec in records:
        try:
            profiles.append(
                SingerProfile(
                    name=rec["name"],
                    harmonics=tuple(rec["harmonics"]),
                    vibrato_rate_hz=float(rec.get("vibrato_rate_hz", 5.0)),
                    vibrato_depth_cents=float(rec.get("vibrato_depth_cents", 25.0)),
                    f0_min_hz=float(rec["f0_min_hz"]),
                    f0_max_hz=float(rec["f0_max_hz"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise ProfileError(f"{path}: malformed profile record {rec!r} ({exc})") from exc
    if len(profiles) < 2:
        raise ProfileError(f"{path}: need at least 2 profiles, got {len(profiles)}")
    if len({p.name for p in profiles}) != len(profiles):
        raise ProfileError(f"{path}: profile names must be unique")
    return profiles


def save_profiles(profiles, path) -> None:
    records = [
        {
            "name": p.name,
            "harmonics": list(p.harmonics),
            "vibrato_rate_hz": p.vibrato_rate_hz,
            "vibrato_depth_cents": p.vibrato_depth_cents,
            "f0_min_hz": p.f0_min_hz,
            "f0_max_hz": p.f0_max_hz,
        }
        for p in profiles
    ]
    Path(path).write_text(json.dumps(records, indent=2) + "\n")


def generate_song(
    profile: SingerProfile, duration_s: float, melody_seed: int, sample_rate: int = audio.DEFAULT_SAMPLE_RATE
) -> audio.AudioClip:
    """Render a random pentatonic melody with the profile's timbre.

    Notes arrive at a fixed rate with short attack/release ramps; each note
    restarts phase at zero.  Harmonics that would cross Nyquist are dropped.
    Bitwise deterministic for a given seed.
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    rng = np.random.Generator(np.random.PCG64(melody_seed))
    total = int(round(duration_s * sample_rate))
    note_len = max(1, int(round(sample_rate / NOTES_PER_SECOND)))
    n_notes = -(-total // note_len)
    grid = profile.pitch_grid()
    ramp = max(1, int(round(RAMP_SECONDS * sample_rate)))

    out = np.zeros(n_notes * note_len)
    t_note = np.arange(note_len) / sample_rate
    envelope = np.ones(note_len)
    envelope[:ramp] = np.linspace(0.0, 1.0, ramp, endpoint=False)
    envelope[-ramp:] = np.linspace(1.0, 0.0, ramp)

    weights = np.asarray(profile.harmonics)
    nyquist = sample_rate / 2.0
    for n in range(n_notes):
        f0 = float(rng.choice(grid))
        t_global = (n * note_len) / sample_rate + t_note
        vibrato = 2.0 ** (
            profile.vibrato_depth_cents / 1200.0 * np.sin(2 * np.pi * profile.vibrato_rate_hz * t_global)
        )
        inst_freq = f0 * vibrato
        phase = 2 * np.pi * np.cumsum(inst_freq) / sample_rate
        note = np.zeros(note_len)
        for h, w in enumerate(weights, start=1):
            if w == 0 or h * f0 >= 0.95 * nyquist:
                continue
            note += w * np.sin(h * phase)
        out[n * note_len : (n + 1) * note_len] = note * envelope

    out = out[:total]
    peak = np.abs(out).max()
    if peak > 0:
        out = out * (PEAK / peak)
    return audio.AudioClip(out, sample_rate)


def make_synthetic_manifest(
    profiles: list[SingerProfile],
    songs_per_singer: int,
    out_dir,
    duration_s: float = 30.0,
    sample_rate: int = audio.DEFAULT_SAMPLE_RATE,
    base_seed: int = 0,
) -> Path:
    """Write WAVs plus a manifest; the last song of each singer is the validation split.

    A `profiles.json` is written next to the manifest so evaluation can run
    the centroid oracle on this corpus.
    """
    if len(profiles) < 2:
        raise ProfileError(f"need at least 2 profiles, got {len(profiles)}")
    if songs_per_singer < 2:
        raise ProfileError("need at least 2 songs per singer (1 train + 1 validation)")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    singers = []
    for s_idx, profile in enumerate(profiles):
        (out_dir / profile.name).mkdir(exist_ok=True)
        files = []
        for song in range(songs_per_singer):
            seed = np.random.SeedSequence(entropy=base_seed, spawn_key=(s_idx, song))
            clip = generate_song(profile, duration_s, int(seed.generate_state(1)[0]), sample_rate)
            rel = f"{profile.name}/song{song:02d}.wav"
            audio.write_wav(clip, out_dir / rel)
            split = "validation" if song == songs_per_singer - 1 else "train"
            files.append({"path": rel, "split": split})
        singers.append({"id": profile.name, "files": files})

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps({"singers": singers}, indent=2) + "\n")
    save_profiles(profiles, out_dir / "profiles.json")
    return manifest_path
