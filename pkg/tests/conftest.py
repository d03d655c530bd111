import json

import numpy as np
import pytest

from singvc import audio
from singvc.audio import AudioClip


def write_tone(path, n, rate=8000, freq=220.0, amp=0.5, phase=0.0):
    t = np.arange(n) / rate
    audio.write_wav(AudioClip(amp * np.sin(2 * np.pi * freq * t + phase), rate), path)


@pytest.fixture
def tiny_manifest(tmp_path):
    """Two singers, two train files and one validation file each, 8 kHz tones."""
    root = tmp_path / "corpus"
    root.mkdir()
    singers = []
    for s, freq in (("alpha", 220.0), ("beta", 440.0)):
        files = []
        for i in range(3):
            rel = f"{s}_{i}.wav"
            write_tone(root / rel, n=6000, freq=freq + 7 * i, phase=0.1 * i)
            files.append({"path": rel, "split": "validation" if i == 2 else "train"})
        singers.append({"id": s, "files": files})
    path = root / "manifest.json"
    path.write_text(json.dumps({"singers": singers}))
    return path
