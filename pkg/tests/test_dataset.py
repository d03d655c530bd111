import json

import numpy as np
import pytest

from singvc import audio, dataset
from singvc.dataset import AudioCache, ManifestError, SingerRegistry, load_manifest, sample_batch


class TestLoadManifest:
    def test_counts_nine_one_split(self, tmp_path):
        from tests.conftest import write_tone

        root = tmp_path / "d"
        root.mkdir()
        singers = []
        for s in range(5):
            files = []
            for i in range(10):
                rel = f"s{s}_{i}.wav"
                write_tone(root / rel, 900)
                files.append({"path": rel, "split": "train" if i < 9 else "validation"})
            singers.append({"id": f"s{s}", "files": files})
        path = root / "m.json"
        path.write_text(json.dumps({"singers": singers}))
        manifest, registry = load_manifest(path)
        assert registry.k == 5
        assert manifest.total_train_files() == 45

    def test_all_train_allowed(self, tmp_path):
        from tests.conftest import write_tone

        root = tmp_path / "d"
        root.mkdir()
        singers = []
        for s in range(12):
            files = []
            for i in range(4):
                rel = f"s{s}_{i}.wav"
                write_tone(root / rel, 500)
                files.append({"path": rel, "split": "train"})
            singers.append({"id": f"s{s}", "files": files})
        path = root / "m.json"
        path.write_text(json.dumps({"singers": singers}))
        _, registry = load_manifest(path)
        assert registry.k == 12

    def test_duplicate_singer_id_named(self, tmp_path):
        from tests.conftest import write_tone

        root = tmp_path / "d"
        root.mkdir()
        write_tone(root / "a.wav", 500)
        write_tone(root / "b.wav", 500)
        payload = {
            "singers": [
                {"id": "dup", "files": [{"path": "a.wav", "split": "train"}]},
                {"id": "dup", "files": [{"path": "b.wav", "split": "train"}]},
            ]
        }
        path = root / "m.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ManifestError, match="dup"):
            load_manifest(path)

    def test_missing_file_named(self, tmp_path):
        payload = {"singers": [{"id": "a", "files": [{"path": "ghost.wav", "split": "train"}]}]}
        path = tmp_path / "m.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ManifestError, match="ghost.wav"):
            load_manifest(path)

    def test_singer_without_train_files(self, tmp_path):
        from tests.conftest import write_tone

        root = tmp_path / "d"
        root.mkdir()
        write_tone(root / "a.wav", 500)
        payload = {"singers": [{"id": "a", "files": [{"path": "a.wav", "split": "validation"}]}]}
        path = root / "m.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ManifestError, match="no train files"):
            load_manifest(path)

    def test_duplicate_path_rejected(self, tmp_path):
        from tests.conftest import write_tone

        root = tmp_path / "d"
        root.mkdir()
        write_tone(root / "a.wav", 500)
        payload = {
            "singers": [
                {
                    "id": "a",
                    "files": [
                        {"path": "a.wav", "split": "train"},
                        {"path": "a.wav", "split": "validation"},
                    ],
                }
            ]
        }
        path = root / "m.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ManifestError, match="more than once"):
            load_manifest(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(tmp_path / "none.json")


class TestRegistry:
    def test_bijection(self):
        reg = SingerRegistry(["x", "y", "z"])
        assert reg.k == 3
        for i, sid in enumerate(["x", "y", "z"]):
            assert reg.index_of(sid) == i
            assert reg.id_of(i) == sid

    def test_unknown_id_lists_known(self):
        reg = SingerRegistry(["x", "y"])
        with pytest.raises(KeyError, match="x, y"):
            reg.index_of("nobody")


class TestSampleBatch:
    def test_determinism(self, tiny_manifest):
        manifest, registry = load_manifest(tiny_manifest)
        cache = AudioCache()
        a = sample_batch(manifest, registry, 1600, 6, rng_seed=42, cache=cache, grid=400)
        b = sample_batch(manifest, registry, 1600, 6, rng_seed=42, cache=cache, grid=400)
        for x, y in zip(a, b):
            assert np.array_equal(x.mulaw.indices, y.mulaw.indices)
            assert np.array_equal(x.companded, y.companded)
            assert x.singer_index == y.singer_index

    def test_crop_grid_enforced(self, tiny_manifest):
        manifest, registry = load_manifest(tiny_manifest)
        with pytest.raises(ValueError, match="multiple of 400"):
            sample_batch(manifest, registry, 1601, 2, rng_seed=0, grid=400)

    def test_short_file_named(self, tiny_manifest):
        manifest, registry = load_manifest(tiny_manifest)
        with pytest.raises(ValueError, match=r"(alpha|beta)_\d\.wav.*shorter than crop_len"):
            sample_batch(manifest, registry, 8000, 32, rng_seed=0, grid=400)

    def test_mulaw_matches_encoded_companded(self, tiny_manifest):
        manifest, registry = load_manifest(tiny_manifest)
        batch = sample_batch(manifest, registry, 1600, 8, rng_seed=3, grid=400)
        for item in batch:
            assert np.array_equal(audio.encode_indices(item.companded), item.mulaw.indices)
            assert len(item.companded) == 1600

    def test_singer_frequency_within_five_sigma(self, tiny_manifest):
        manifest, registry = load_manifest(tiny_manifest)
        cache = AudioCache()
        n = 10_000
        counts = np.zeros(registry.k, dtype=int)
        for seed in range(n // 50):
            batch = sample_batch(manifest, registry, 400, 50, rng_seed=seed, cache=cache, grid=400)
            for item in batch:
                counts[item.singer_index] += 1
        p = 1 / registry.k
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(counts[0] - n * p) <= 5 * sigma

    def test_validation_files_never_sampled(self, tmp_path):
        # train audio stays under 0.4 amplitude, validation sits at 0.9;
        # any crop louder than the train ceiling would expose a split leak
        from tests.conftest import write_tone

        root = tmp_path / "leak"
        root.mkdir()
        singers = []
        for s in ("a", "b"):
            files = []
            for i in range(3):
                rel = f"{s}{i}.wav"
                amp = 0.9 if i == 2 else 0.35
                write_tone(root / rel, 4000, amp=amp)
                files.append({"path": rel, "split": "validation" if i == 2 else "train"})
            singers.append({"id": s, "files": files})
        path = root / "m.json"
        path.write_text(json.dumps({"singers": singers}))
        manifest, registry = load_manifest(path)
        cache = AudioCache()
        for seed in range(50):
            for item in sample_batch(manifest, registry, 1200, 8, rng_seed=seed, cache=cache, grid=400):
                assert np.abs(item.companded).max() < 0.5
