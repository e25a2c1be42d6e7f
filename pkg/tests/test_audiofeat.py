"""Feature pipeline: framing, VAD, MFCC, normalization, length fixing."""

import numpy as np
import pytest

from evonas import audiofeat as af
from evonas.errors import ContractError


def tone(freq, seconds=3.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return af.Waveform(amp * np.sin(2 * np.pi * freq * t), rate)


class TestFraming:
    def test_three_seconds_gives_298_frames(self):
        w = af.Waveform(np.zeros(48000) + 0.01)
        assert af.frame_signal(w).shape == (298, 400)

    def test_exactly_one_frame(self):
        w = af.Waveform(np.ones(400))
        assert af.frame_signal(w).shape == (1, 400)

    def test_too_short_returns_empty(self):
        w = af.Waveform(np.ones(399))
        assert af.frame_signal(w).shape == (0, 400)

    def test_constant_signal_yields_the_window_itself(self):
        w = af.Waveform(np.ones(400))
        frames = af.frame_signal(w)
        np.testing.assert_allclose(frames[0], af.hamming_window(400), atol=1e-15)

    def test_hamming_endpoints(self):
        win = af.hamming_window(400)
        assert abs(win[0] - 0.08) < 1e-12
        assert abs(win.max() - 1.0) < 0.01


class TestVad:
    def test_uniform_energy_keeps_everything(self):
        frames = af.frame_signal(tone(440.0, seconds=1.0))
        mask = af.energy_vad(frames)
        assert mask.all()

    def test_near_silence_mask_is_constant(self):
        rng = np.random.default_rng(0)
        w = af.Waveform(1e-8 * rng.standard_normal(16000))
        mask = af.energy_vad(af.frame_signal(w))
        assert mask.all() or not mask.any()

    def test_burst_in_silence_keeps_only_burst(self):
        rng = np.random.default_rng(1)
        x = 1e-6 * rng.standard_normal(16000)
        x[6000:8000] += 0.5 * np.sin(2 * np.pi * 300 * np.arange(2000) / 16000)
        frames = af.frame_signal(af.Waveform(x))
        mask = af.energy_vad(frames)
        # oracle: recompute the threshold rule directly per frame
        log_e = np.array([np.log(np.sum(f * f) + 1e-10) for f in frames])
        want = log_e > log_e.mean() - 3.0
        np.testing.assert_array_equal(mask, want)
        assert 0 < mask.sum() < mask.size
        starts = np.flatnonzero(mask) * 160
        assert starts.min() >= 6000 - 400 and starts.max() <= 8000


class TestMfcc:
    def test_output_is_40_dimensional(self):
        frames = af.frame_signal(tone(500.0, seconds=0.5))
        assert af.mfcc_from_frames(frames).shape[0] == 40

    def test_pure_tone_peaks_in_the_right_mel_band(self):
        frames = af.frame_signal(tone(1000.0))
        coeffs = af.mfcc_from_frames(frames)
        energies = af.mel_energies_from_mfcc(coeffs).mean(axis=1)
        peak = int(np.argmax(energies))
        edges = af.mel_inverse(np.linspace(af.mel_scale(0.0),
                                           af.mel_scale(8000.0), 42))
        assert edges[peak] <= 1000.0 <= edges[peak + 2]

    def test_identical_frames_give_identical_columns(self):
        frame = np.sin(np.linspace(0, 20, 400))
        coeffs = af.mfcc_from_frames(np.stack([frame, frame]))
        np.testing.assert_array_equal(coeffs[:, 0], coeffs[:, 1])


class TestMeanNormalize:
    def test_constant_matrix_becomes_zero(self):
        out = af.mean_normalize(np.full((40, 200), 3.3))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_short_input_equals_global_subtraction(self):
        rng = np.random.default_rng(2)
        feat = rng.standard_normal((40, 300))
        out = af.mean_normalize(feat)
        np.testing.assert_allclose(out, feat - feat.mean(axis=1, keepdims=True),
                                   atol=1e-12)

    def test_idempotent_when_window_covers_all(self):
        rng = np.random.default_rng(3)
        feat = rng.standard_normal((40, 250))
        once = af.mean_normalize(feat)
        np.testing.assert_allclose(af.mean_normalize(once), once, atol=1e-12)

    def test_long_input_matches_per_column_oracle(self):
        rng = np.random.default_rng(4)
        feat = rng.standard_normal((40, 600))
        out = af.mean_normalize(feat)
        want = np.empty_like(feat)
        for t in range(600):
            start = min(max(t - 150, 0), 600 - 300)
            want[:, t] = feat[:, t] - feat[:, start:start + 300].mean(axis=1)
        assert np.abs(out - want).max() < 1e-12


class TestFixLength:
    def test_exact_length_unchanged(self):
        feat = np.arange(40 * 300, dtype=np.float64).reshape(40, 300)
        assert af.fix_length(feat) is feat

    def test_cyclic_padding_by_index_arithmetic(self):
        rng = np.random.default_rng(5)
        feat = rng.standard_normal((40, 298))
        out = af.fix_length(feat)
        assert out.shape == (40, 300)
        for i in range(300):
            np.testing.assert_array_equal(out[:, i], feat[:, i % 298])

    def test_eval_crop_is_centered(self):
        feat = np.tile(np.arange(600.0), (40, 1))
        out = af.fix_length(feat, mode="eval")
        np.testing.assert_array_equal(out[0], np.arange(150.0, 450.0))

    def test_train_crop_is_seeded_and_from_source_columns(self):
        rng = np.random.default_rng(6)
        feat = np.tile(np.arange(400.0), (40, 1))
        out = af.fix_length(feat, mode="train", rng=np.random.default_rng(9))
        out2 = af.fix_length(feat, mode="train", rng=np.random.default_rng(9))
        np.testing.assert_array_equal(out, out2)
        start = out[0, 0]
        np.testing.assert_array_equal(out[0], np.arange(start, start + 300))

    def test_crop_preserves_column_multiset(self):
        rng = np.random.default_rng(7)
        feat = rng.standard_normal((4, 500))
        out = af.fix_length(feat, mode="train", rng=rng)
        source = {feat[:, i].tobytes() for i in range(500)}
        assert all(out[:, i].tobytes() in source for i in range(300))

    def test_empty_input_rejected(self):
        with pytest.raises(ContractError):
            af.fix_length(np.empty((40, 0)))


class TestFullPipeline:
    def test_tone_yields_finite_40x300(self):
        feat = af.extract_features(tone(700.0))
        assert feat.shape == (40, 300)
        assert np.all(np.isfinite(feat))

    def test_too_short_is_rejected_not_crashed(self):
        assert af.extract_features(af.Waveform(np.ones(100))) is None

    def test_random_waveforms_always_finite(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(400, 64000))
            w = af.Waveform(np.clip(rng.standard_normal(n) * 0.1, -1, 1))
            feat = af.extract_features(w, mode="train", rng=rng)
            assert feat is not None
            assert feat.shape == (40, 300)
            assert np.all(np.isfinite(feat))


class TestWavIo:
    def test_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(9)
        w = af.Waveform(np.clip(0.3 * rng.standard_normal(8000), -1, 1))
        path = tmp_path / "x.wav"
        af.write_wav(path, w)
        back = af.read_wav(path)
        assert back.sample_rate == 16000
        assert np.abs(back.samples - w.samples).max() < 1.0 / 32000
