"""Four-fold training-data augmentation: time reversal and polarity inversion.

Reversal keeps the energy spectrum of a real signal unchanged; inversion is
a 180-degree phase shift that the ear cannot detect in mono.  Both are
label-preserving, so each clip yields four training variants.  Pitch-shift
style augmentation is deliberately absent.
"""

from __future__ import annotations

from dataclasses import dataclass

from .audio import AudioClip

VARIANT_TAGS = ("identity", "reversed", "negated", "reversed_negated")


def reverse(clip: AudioClip) -> AudioClip:
    """Play the clip backward; length, rate and energy spectrum are preserved."""
    return AudioClip(clip.samples[::-1].copy(), clip.sample_rate)


def negate(clip: AudioClip) -> AudioClip:
    """Invert polarity (multiply every sample by -1)."""
    return AudioClip(-clip.samples, clip.sample_rate)


def apply_variant(clip: AudioClip, tag: str) -> AudioClip:
    """Apply one of the four augmentation variants by tag."""
    if tag == "identity":
        return clip
    if tag == "reversed":
        return reverse(clip)
    if tag == "negated":
        return negate(clip)
    if tag == "reversed_negated":
        return negate(reverse(clip))
    raise ValueError(f"unknown augmentation variant {tag!r}, expected one of {VARIANT_TAGS}")


@dataclass(frozen=True, eq=False)
class AugmentedSet:
    """The orbit of a clip under {reverse, negate}, all carrying one singer id."""

    identity: AudioClip
    reversed: AudioClip
    negated: AudioClip
    reversed_negated: AudioClip
    singer_id: str

    def variants(self) -> dict[str, AudioClip]:
        return {tag: getattr(self, tag) for tag in VARIANT_TAGS}


def augment(clip: AudioClip, singer_id: str) -> AugmentedSet:
    """Produce the four variants {c, reverse(c), negate(c), negate(reverse(c))}."""
    return AugmentedSet(
        identity=clip,
        reversed=reverse(clip),
        negated=negate(clip),
        reversed_negated=negate(reverse(clip)),
        singer_id=singer_id,
    )
