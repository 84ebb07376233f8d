"""Tests for the acoustic frontend."""

from dataclasses import dataclass

import numpy as np
import pytest

from tinyst.audio import (FrontendConfig, SpecAugmentPolicy, cmvn, filter_center_hz,
                          filter_utterances, load_features, logmel, read_wav,
                          save_features, spec_augment, write_wav)
from tinyst.rng import RngStream


@dataclass
class FakeEntry:
    utt_id: str
    n_frames: int


class TestLogmel:
    def test_channel_count_is_80(self):
        cfg = FrontendConfig()
        rng = np.random.default_rng(0)
        feats = logmel(rng.normal(size=8000), cfg)
        assert feats.shape[1] == 80

    def test_frame_count_law_random_lengths(self):
        cfg = FrontendConfig()
        win, shift = cfg.window_samples, cfg.shift_samples
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(win, 16000 * 4))
            feats = logmel(rng.normal(size=n), cfg)
            assert feats.shape == (1 + (n - win) // shift, 80)

    def test_deterministic(self):
        cfg = FrontendConfig()
        wav = np.random.default_rng(2).normal(size=12000)
        np.testing.assert_array_equal(logmel(wav, cfg), logmel(wav, cfg))

    def test_all_zero_waveform_hits_floor(self):
        cfg = FrontendConfig()
        feats = logmel(np.zeros(8000), cfg)
        np.testing.assert_allclose(feats, np.log(cfg.log_floor))

    def test_too_short_waveform_rejected(self):
        cfg = FrontendConfig()
        with pytest.raises(ValueError, match="shorter"):
            logmel(np.zeros(cfg.window_samples - 1), cfg)

    def test_sinusoid_lands_in_its_mel_bin(self):
        cfg = FrontendConfig(fft_size=1024)
        t = np.arange(int(16000 * 0.6)) / 16000.0
        for j in range(80):
            f = filter_center_hz(cfg, j)
            feats = logmel(0.5 * np.sin(2 * np.pi * f * t), cfg)
            interior = feats[2:-2]
            votes = np.bincount(interior.argmax(axis=1), minlength=80)
            assert votes.argmax() == j

    def test_values_never_below_floor(self):
        cfg = FrontendConfig()
        wav = np.random.default_rng(3).normal(size=9000) * 1e-7
        assert logmel(wav, cfg).min() >= np.log(cfg.log_floor) - 1e-12


class TestFrontendConfig:
    def test_rejects_non_power_of_two_fft(self):
        with pytest.raises(ValueError, match="power of two"):
            FrontendConfig(fft_size=500)

    def test_rejects_fft_below_window(self):
        with pytest.raises(ValueError, match="window"):
            FrontendConfig(fft_size=256)

    def test_rejects_band_above_nyquist(self):
        with pytest.raises(ValueError, match="band"):
            FrontendConfig(mel_high=9000.0)


class TestCmvn:
    def test_zero_mean_unit_variance(self):
        feats = np.random.default_rng(4).normal(2.0, 3.0, size=(50, 80))
        out = cmvn(feats)
        np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-9)

    def test_constant_channel_stays_finite(self):
        feats = np.ones((10, 80))
        assert np.all(np.isfinite(cmvn(feats)))


class TestSpecAugment:
    def test_zero_widths_are_identity(self):
        feats = np.random.default_rng(5).normal(size=(40, 80))
        policy = SpecAugmentPolicy(max_freq_width=0, max_time_fraction=0.0)
        out = spec_augment(feats, policy, RngStream(0))
        np.testing.assert_array_equal(out, feats)

    def test_same_seed_same_masks(self):
        feats = np.random.default_rng(6).normal(size=(60, 80))
        policy = SpecAugmentPolicy()
        a = spec_augment(feats, policy, RngStream(9))
        b = spec_augment(feats, policy, RngStream(9))
        np.testing.assert_array_equal(a, b)

    def test_shape_preserved_and_changes_confined_to_masks(self):
        rng = np.random.default_rng(7)
        policy = SpecAugmentPolicy(n_freq_masks=2, max_freq_width=8,
                                   n_time_masks=2, max_time_fraction=0.1)
        for trial in range(50):
            feats = rng.normal(size=(int(rng.integers(20, 120)), 80)) + 5.0
            out, masks = spec_augment(feats, policy, RngStream(trial),
                                      return_masks=True)
            assert out.shape == feats.shape
            inside = np.zeros(feats.shape, dtype=bool)
            for kind, start, width in masks:
                if kind == "freq":
                    inside[:, start:start + width] = True
                else:
                    inside[start:start + width, :] = True
            changed = out != feats
            assert not np.any(changed & ~inside)
            np.testing.assert_array_equal(out[inside],
                                          np.full(int(inside.sum()), policy.mask_value))

    def test_freq_mask_budget(self):
        feats = np.random.default_rng(8).normal(size=(30, 80)) + 10.0
        policy = SpecAugmentPolicy(n_freq_masks=2, max_freq_width=8,
                                   n_time_masks=0)
        for trial in range(100):
            out = spec_augment(feats, policy, RngStream(trial))
            masked_channels = int((out == 0.0).all(axis=0).sum())
            assert masked_channels <= 16

    def test_rejects_invalid_policy(self):
        with pytest.raises(ValueError):
            SpecAugmentPolicy(max_freq_width=81)
        with pytest.raises(ValueError):
            SpecAugmentPolicy(max_time_fraction=1.5)


class TestFilterUtterances:
    def test_boundaries(self):
        entries = [FakeEntry("a", 4), FakeEntry("b", 5), FakeEntry("c", 3000),
                   FakeEntry("d", 3001)]
        kept = filter_utterances(entries)
        assert [e.utt_id for e in kept] == ["b", "c"]

    def test_empty_list(self):
        assert filter_utterances([]) == []

    def test_order_preserving_subsequence(self):
        rng = np.random.default_rng(9)
        entries = [FakeEntry(str(i), int(rng.integers(0, 4000))) for i in range(200)]
        kept = filter_utterances(entries)
        ids = [e.utt_id for e in entries if 5 <= e.n_frames <= 3000]
        assert [e.utt_id for e in kept] == ids

    def test_missing_frame_count_is_an_error(self):
        with pytest.raises(ValueError, match="frame count"):
            filter_utterances([object()])


class TestFeatureCache:
    def test_roundtrip(self, tmp_path):
        feats = np.random.default_rng(10).normal(size=(37, 80))
        p = tmp_path / "utt.feat"
        save_features(p, feats)
        loaded = load_features(p)
        assert loaded.dtype == np.float64
        np.testing.assert_allclose(loaded, feats, atol=1e-6)

    def test_rejects_wrong_magic(self, tmp_path):
        p = tmp_path / "bogus.feat"
        p.write_bytes(b"NOPE" + b"\x00" * 12)
        with pytest.raises(ValueError, match="magic"):
            load_features(p)

    def test_rejects_truncation(self, tmp_path):
        feats = np.zeros((5, 80))
        p = tmp_path / "utt.feat"
        save_features(p, feats)
        p.write_bytes(p.read_bytes()[:-7])
        with pytest.raises(ValueError, match="truncated"):
            load_features(p)


class TestWavIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(11)
        samples = np.clip(rng.normal(scale=0.2, size=4000), -1, 0.99)
        p = tmp_path / "x.wav"
        write_wav(p, samples, 16000)
        loaded, rate = read_wav(p)
        assert rate == 16000
        np.testing.assert_allclose(loaded, samples, atol=1.0 / 32768)

    def test_rejects_stereo(self, tmp_path):
        import wave

        p = tmp_path / "st.wav"
        with wave.open(str(p), "wb") as wf:
            wf.setnchannels(2)
            wf.setsampwidth(2)
            wf.setframerate(16000)
            wf.writeframes(b"\x00" * 64)
        with pytest.raises(ValueError, match="mono"):
            read_wav(p)
