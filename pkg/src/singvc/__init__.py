"""Unsupervised singing voice conversion.

A singer-conditioned WaveNet-style autoencoder trained in two phases
(reconstruction with domain confusion, then backtranslation through mixup
identities), together with the data pipeline, autoregressive conversion
inference and an automatic singer-identification evaluation.
"""

__version__ = "0.1.0"

from .audio import AudioClip, MuLawClip, mu_law_decode, mu_law_encode, read_wav, write_wav

__all__ = [
    "AudioClip",
    "MuLawClip",
    "mu_law_encode",
    "mu_law_decode",
    "read_wav",
    "write_wav",
    "__version__",
]
