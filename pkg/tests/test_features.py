import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (direct_dft_power, enumerate_dense_rows, enumerate_frames,
                     enumerate_patches)
from soundsieve.audio_io import AudioClip
from soundsieve.errors import ClipTooShort, InsufficientData
from soundsieve.features import (FeatureKind, FrameSpec, MelBank, MelSpectrogram,
                                 conv_patches, default_bank, dense_feature_vectors,
                                 fit_normalizer, hz_to_mel, load_feature_cache,
                                 patches_from_spectrogram, save_feature_cache, stft_log_mel)

FLOOR = math.log(1e-10)


def noise_clip(n, seed=0):
    return AudioClip(np.random.default_rng(seed).uniform(-0.5, 0.5, n), 16000)


def sine_clip(freq, n=16000):
    t = np.arange(n) / 16000
    return AudioClip(0.5 * np.sin(2 * np.pi * freq * t), 16000)


class TestMelBank:
    bank = default_bank()

    def test_shape_and_range(self):
        assert self.bank.weights.shape == (128, 513)
        assert np.all(self.bank.weights >= 0)
        assert self.bank.f_min_hz == 0 and self.bank.f_max_hz == 8000

    def test_rows_are_unimodal_with_unit_peak(self):
        for row in self.bank.weights:
            assert row.max() == 1.0
            nz = np.nonzero(row)[0]
            seg = row[nz[0]:nz[-1] + 1]
            peak = int(np.argmax(seg))
            assert np.all(np.diff(seg[:peak + 1]) >= 0)
            assert np.all(np.diff(seg[peak:]) <= 0)
            assert np.all(seg > 0)

    def test_centers_strictly_increasing_on_mel_scale(self):
        assert np.all(np.diff(hz_to_mel(self.bank.centers_hz)) > 0)

    def test_every_bin_between_first_and_last_center_is_covered(self):
        bins = np.arange(513) * 16000 / 1024
        inside = (bins >= self.bank.centers_hz[0]) & (bins <= self.bank.centers_hz[-1])
        assert np.all(self.bank.weights[:, inside].sum(axis=0) > 0)

    def test_htk_formula(self):
        assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2))


class TestFrameSpec:
    def test_defaults(self):
        spec = FrameSpec()
        assert (spec.frame_len, spec.hop, spec.fft_size) == (1024, 512, 1024)
        assert len(spec.window) == 1024

    def test_rejects_non_half_hop(self):
        with pytest.raises(ValueError):
            FrameSpec(frame_len=1024, hop=256)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1024, 200000))
    def test_frame_count_formula_matches_enumeration(self, n):
        assert FrameSpec().n_frames(n) == enumerate_frames(n)


def test_ten_second_clip_has_311_frames():
    mel = stft_log_mel(noise_clip(160000))
    assert mel.values.shape == (311, 128) == (enumerate_frames(160000), 128)
    assert np.all(np.isfinite(mel.values))


def test_silence_hits_the_floor():
    mel = stft_log_mel(AudioClip(np.zeros(8000), 16000))
    assert np.all(mel.values == FLOOR)


def test_stft_matches_direct_dft_for_one_frame():
    clip = noise_clip(4096, seed=3)
    frame = clip.samples[512:1536] * FrameSpec().window
    expected = np.log(np.maximum(direct_dft_power(frame) @ default_bank().weights.T, 1e-10))
    np.testing.assert_allclose(stft_log_mel(clip).values[1], expected, rtol=1e-9, atol=1e-9)


def test_1khz_sine_peaks_in_nearest_band():
    clip = sine_clip(1000.0)
    frame = clip.samples[:1024] * FrameSpec().window
    peak_bin = int(np.argmax(direct_dft_power(frame)))
    peak_hz = peak_bin * 16000 / 1024
    assert peak_hz == 1000.0
    band = int(np.argmin(np.abs(default_bank().centers_hz - peak_hz)))
    mel = stft_log_mel(clip).values
    assert np.all(np.argmax(mel[1:-1], axis=1) == band)


def test_clip_shorter_than_a_frame():
    with pytest.raises(ClipTooShort):
        stft_log_mel(AudioClip(np.zeros(1000), 16000))


class TestDenseVectors:
    def test_ten_seconds(self):
        fs = dense_feature_vectors(noise_clip(160000))
        assert fs.kind is FeatureKind.DENSE
        assert fs.dense.shape == (494, 640) == (enumerate_dense_rows(160000), 640)
        assert fs.patches is None

    def test_exactly_one_second(self):
        fs = dense_feature_vectors(noise_clip(16000))
        assert fs.data.shape == (26, 640) == (enumerate_dense_rows(16000), 640)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(16000, 60000))
    def test_row_count_matches_enumeration(self, n):
        fs = dense_feature_vectors(AudioClip(np.zeros(n), 16000))
        assert fs.data.shape == (enumerate_dense_rows(n), 640)

    def test_silence_gives_constant_rows(self):
        fs = dense_feature_vectors(AudioClip(np.zeros(24000), 16000))
        assert np.all(fs.data == np.float32(FLOOR))

    def test_row_is_five_consecutive_frames(self):
        clip = noise_clip(24000, seed=5)
        fs = dense_feature_vectors(clip)
        buf0 = stft_log_mel(AudioClip(clip.samples[:16000], 16000)).values
        buf1 = stft_log_mel(AudioClip(clip.samples[8000:24000], 16000)).values
        np.testing.assert_array_equal(fs.data[3], buf0[3:8].reshape(-1).astype(np.float32))
        np.testing.assert_array_equal(fs.data[26 + 7], buf1[7:12].reshape(-1).astype(np.float32))

    def test_too_short(self):
        with pytest.raises(ClipTooShort):
            dense_feature_vectors(noise_clip(15999))


class TestConvPatches:
    def test_ten_seconds(self):
        fs = conv_patches(noise_clip(160000))
        assert fs.patches.shape == (94, 1, 128, 32)
        assert len(fs) == enumerate_patches(311)

    def test_exactly_32_frames(self):
        n = 1024 + 31 * 512
        assert FrameSpec().n_frames(n) == 32
        assert conv_patches(noise_clip(n)).data.shape == (1, 1, 128, 32)

    def test_31_frames_is_too_short(self):
        with pytest.raises(ClipTooShort):
            conv_patches(noise_clip(1024 + 30 * 512))

    def test_patch_columns_are_spectrogram_frames(self):
        values = np.random.default_rng(0).normal(size=(80, 128))
        fs = patches_from_spectrogram(values)
        assert len(fs) == enumerate_patches(80)
        for p in range(len(fs)):
            for c in range(32):
                np.testing.assert_array_equal(fs.data[p, 0, :, c], values[3 * p + c].astype(np.float32))

    def test_self_fitted_stats_standardize(self):
        clip = noise_clip(48000, seed=2)
        mel = stft_log_mel(clip)
        stats = fit_normalizer([mel])
        z = stats.apply(mel.values)
        assert np.max(np.abs(z.mean(axis=0))) < 1e-6
        assert np.max(np.abs(z.std(axis=0) - 1)) < 1e-6
        # patches carry the standardized values
        fs = conv_patches(clip, stats)
        np.testing.assert_allclose(fs.data[0, 0], z[:32].T.astype(np.float32))

    def test_normalization_is_invertible(self):
        mel = stft_log_mel(noise_clip(48000, seed=9))
        stats = fit_normalizer([mel])
        assert np.max(np.abs(stats.invert(stats.apply(mel.values)) - mel.values)) < 1e-6


class TestFitNormalizer:
    def test_hand_example(self):
        stats = fit_normalizer([np.array([[0.0] * 128, [2.0] * 128])])
        np.testing.assert_array_equal(stats.mean, np.ones(128))
        np.testing.assert_array_equal(stats.std, np.ones(128))

    def test_constant_input_uses_floor(self):
        stats = fit_normalizer([np.full((10, 128), -3.0)])
        assert np.all(stats.std == 1e-8)
        assert np.all(np.isfinite(stats.apply(np.full((4, 128), -3.0))))

    def test_matches_two_pass_brute_force(self, rng):
        parts = [rng.normal(3.0, 2.0, size=(n, 128)) for n in (100, 400, 500)]
        stats = fit_normalizer(MelSpectrogram(p) for p in parts)
        x = np.concatenate(parts)
        for b in range(128):
            col = [float(v) for v in x[:, b]]
            mean = math.fsum(col) / len(col)
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in col) / len(col))
            assert abs(stats.mean[b] - mean) < 1e-9
            assert abs(stats.std[b] - std) < 1e-9

    def test_order_independent(self, rng):
        parts = [rng.normal(size=(n, 128)) * 1e3 for n in (7, 50, 13, 31)]
        a = fit_normalizer(parts)
        b = fit_normalizer(parts[::-1])
        shuffled = np.concatenate(parts)[rng.permutation(101)]
        c = fit_normalizer([shuffled])
        for other in (b, c):
            assert a.mean.tobytes() == other.mean.tobytes()
            assert a.std.tobytes() == other.std.tobytes()

    def test_needs_two_frames(self):
        with pytest.raises(InsufficientData):
            fit_normalizer([np.zeros((1, 128))])
        with pytest.raises(InsufficientData):
            fit_normalizer([])


def test_feature_cache_round_trip(tmp_path):
    arr = np.random.default_rng(0).normal(size=(3, 1, 128, 32)).astype(np.float32)
    save_feature_cache(tmp_path / "x.ssf", "conv", arr)
    kind, back = load_feature_cache(tmp_path / "x.ssf")
    assert kind == "conv"
    assert back.tobytes() == arr.tobytes()
    raw = (tmp_path / "x.ssf").read_bytes()
    assert raw[:4] == b"SSFC" and len(raw) == 4 + 8 + 16 + arr.nbytes


def test_feature_set_validates_payload():
    with pytest.raises(ValueError):
        from soundsieve.features import FeatureSet
        FeatureSet(FeatureKind.CONV, np.zeros((2, 640)))


def test_mel_bank_build_fails_when_too_fine():
    with pytest.raises(ValueError):
        MelBank.build(n_mels=512, fft_size=256)
