import math

import numpy as np
import pytest

from singvc import audio
from singvc.audio import AudioClip, MalformedWavError, MuLawClip, UnsupportedWavError


def encode_oracle(x: float) -> int:
    # direct evaluation of the companding formula and bin rule
    y = math.copysign(math.log1p(255 * abs(x)) / math.log(256), x) if x != 0 else 0.0
    return min(255, math.floor((y + 1) / 2 * 256))


def decode_oracle(i: int) -> float:
    y = (2 * i + 1) / 256 - 1
    return math.copysign((256 ** abs(y) - 1) / 255, y)


class TestMuLawEncode:
    def test_saturation(self):
        clip = AudioClip(np.array([1.0, -1.0]), 16000)
        assert audio.mu_law_encode(clip).indices.tolist() == [255, 0]

    def test_zero_maps_to_first_positive_bin(self):
        assert audio.encode_indices(np.array([0.0]))[0] == 128
        assert encode_oracle(0.0) == 128

    def test_half_amplitude(self):
        # y = ln(128.5)/ln(256) ~ 0.8757 -> floor(240.08)
        assert encode_oracle(0.5) == 240
        assert audio.encode_indices(np.array([0.5]))[0] == 240

    def test_matches_oracle_on_grid(self):
        xs = np.linspace(-1, 1, 1001)
        got = audio.encode_indices(xs)
        want = [encode_oracle(float(x)) for x in xs]
        assert got.tolist() == want

    def test_out_of_range_names_position(self):
        clip = AudioClip(np.array([0.0, 0.5, 1.5]), 16000)
        with pytest.raises(ValueError, match="position 2"):
            audio.mu_law_encode(clip)

    def test_length_preserved(self):
        clip = AudioClip(np.linspace(-1, 1, 777), 8000)
        assert len(audio.mu_law_encode(clip)) == 777


class TestMuLawDecode:
    def test_index_zero(self):
        got = audio.decode_samples(np.array([0]))[0]
        assert got == pytest.approx(decode_oracle(0), abs=1e-12)
        assert got < -0.97

    def test_bin_center_idempotence_exhaustive(self):
        all_indices = np.arange(256)
        decoded = audio.decode_samples(all_indices)
        assert np.array_equal(audio.encode_indices(decoded), all_indices)

    def test_roundtrip_error_bound_on_grid(self):
        # oracle: exhaustive scan; bound from max expansion slope times half bin width
        xs = np.round(np.arange(-1000, 1001) * 1e-3, 3)
        err = np.abs(audio.decode_samples(audio.encode_indices(xs)) - xs)
        assert err.max() <= 0.025

    def test_outputs_strictly_inside_unit_interval(self):
        decoded = audio.decode_samples(np.arange(256))
        assert decoded.min() > -1.0 and decoded.max() < 1.0

    def test_monotonicity(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(-1, 1, 20000)
        b = rng.uniform(-1, 1, 20000)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        assert np.all(audio.encode_indices(lo) <= audio.encode_indices(hi))

    def test_negation_symmetry_off_boundaries(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(-0.999, 0.999, 5000)
        # exclude samples whose companded value sits within float fuzz of a bin edge
        y = audio.compand(x)
        frac = (y + 1) / 2 * 256
        keep = np.abs(frac - np.round(frac)) > 1e-9
        x = x[keep]
        assert np.array_equal(audio.encode_indices(-x), 255 - audio.encode_indices(x))


class TestClips:
    def test_empty_clip_rejected(self):
        with pytest.raises(ValueError):
            AudioClip(np.array([]), 16000)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValueError):
            AudioClip(np.zeros(4), 0)

    def test_mulaw_range_checked(self):
        with pytest.raises(ValueError):
            MuLawClip(np.array([0, 256]), 16000)


class TestWavIO:
    def test_sine_roundtrip(self, tmp_path):
        t = np.arange(16000) / 16000
        clip = AudioClip(0.7 * np.sin(2 * np.pi * 440 * t), 16000)
        path = tmp_path / "sine.wav"
        audio.write_wav(clip, path)
        back = audio.read_wav(path)
        assert back.sample_rate == 16000
        assert len(back) == 16000
        assert np.abs(back.samples - clip.samples).max() <= 1 / 32768
        assert abs(np.abs(back.samples).max() - 0.7) < 1e-3

    def test_header_declares_rate(self, tmp_path):
        clip = AudioClip(np.zeros(100), 22050)
        audio.write_wav(clip, tmp_path / "a.wav")
        assert audio.read_wav(tmp_path / "a.wav").sample_rate == 22050

    def test_stereo_opposite_channels_average_to_zero(self, tmp_path):
        import struct
        import wave

        x = (np.sin(np.arange(200)) * 20000).astype("<i2")
        inter = np.empty(400, dtype="<i2")
        inter[0::2] = x
        inter[1::2] = -x
        with wave.open(str(tmp_path / "st.wav"), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(inter.tobytes())
        clip = audio.read_wav(tmp_path / "st.wav")
        assert len(clip) == 200
        assert np.abs(clip.samples).max() <= 0.5 / 32768

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            audio.read_wav(tmp_path / "nope.wav")

    def test_truncated_header(self, tmp_path):
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"RIFF\x04\x00")
        with pytest.raises(MalformedWavError):
            audio.read_wav(bad)

    def test_unsupported_width(self, tmp_path):
        import wave

        with wave.open(str(tmp_path / "w8.wav"), "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(1)
            wf.setframerate(8000)
            wf.writeframes(bytes(100))
        with pytest.raises(UnsupportedWavError):
            audio.read_wav(tmp_path / "w8.wav")

    def test_out_of_range_write_rejected(self, tmp_path):
        clip = AudioClip(np.array([0.0, 2.0]), 16000)
        with pytest.raises(ValueError, match="position 1"):
            audio.write_wav(clip, tmp_path / "x.wav")


class TestResample:
    def test_same_rate_identity(self):
        clip = AudioClip(np.random.default_rng(0).uniform(-1, 1, 100), 16000)
        out = audio.resample(clip, 16000)
        assert out is clip

    def test_constant_preserved(self):
        clip = AudioClip(np.full(50, 0.3), 8000)
        out = audio.resample(clip, 12345)
        assert np.allclose(out.samples, 0.3)

    def test_ramp_doubling(self):
        n = 200
        ramp = np.linspace(0, 1, n)
        out = audio.resample(AudioClip(ramp, 8000), 16000)
        assert len(out) == 2 * n
        # oracle: endpoint-aligned linear interpolation of a line is the line itself
        expected = np.linspace(0, 1, 2 * n)
        assert np.allclose(out.samples, expected, atol=1e-12)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            audio.resample(AudioClip(np.zeros(4), 8000), 0)


def naive_dft_power(x):
    n = len(x)
    out = np.zeros(n)
    for k in range(n):
        acc = 0j
        for t in range(n):
            acc += x[t] * np.exp(-2j * np.pi * k * t / n)
        out[k] = abs(acc) ** 2
    return out


class TestPowerSpectrum:
    def test_zero_clip(self):
        assert np.all(audio.power_spectrum(AudioClip(np.zeros(64), 8000)) == 0)

    def test_unit_impulse_flat(self):
        x = np.zeros(32)
        x[0] = 1.0
        assert np.allclose(audio.power_spectrum(AudioClip(x, 8000)), 1.0)

    def test_bin_sinusoid_two_lines(self):
        n = 128
        k = 5
        x = np.sin(2 * np.pi * k * np.arange(n) / n)
        spec = audio.power_spectrum(AudioClip(x, 8000))
        top = np.argsort(spec)[-2:]
        assert set(top.tolist()) == {k, n - k}
        assert spec[np.setdiff1d(np.arange(n), top)].max() < 1e-18 * spec.max() + 1e-12

    def test_matches_naive_dft(self):
        rng = np.random.default_rng(3)
        for n in (1, 7, 64, 129):
            x = rng.uniform(-1, 1, n)
            got = audio.power_spectrum(AudioClip(x, 8000))
            want = naive_dft_power(x)
            assert np.allclose(got, want, rtol=1e-6, atol=1e-9)
