"""Tests for the auditory-spectrogram front-end."""

import numpy as np
import pytest

from mirrornet import audfront as af


FS = af.FS


def tone(freq, duration=2.0, amp=0.3):
    t = np.arange(int(duration * FS)) / FS
    return amp * np.sin(2 * np.pi * freq * t)


def peak_channel(wav):
    spec = af.auditory_spectrogram(wav, FS)
    return int(np.argmax(spec.values.mean(axis=1)))


def nearest_channel(freq):
    return int(np.argmin(np.abs(af.channel_frequencies() - freq)))


class TestAuditorySpectrogram:
    def test_silence_is_zero(self):
        spec = af.auditory_spectrogram(np.zeros(FS), FS)
        np.testing.assert_array_equal(spec.values, 0.0)

    def test_tone_peaks_at_nearest_channel(self):
        assert peak_channel(tone(1000)) == nearest_channel(1000)

    def test_two_second_input_gives_250_frames(self):
        spec = af.auditory_spectrogram(tone(440, duration=2.0), FS)
        assert spec.values.shape == (128, 250)

    @pytest.mark.parametrize("duration", [0.5, 1.0, 1.7, 3.3, 4.0])
    def test_frame_count_arithmetic(self, duration):
        spec = af.auditory_spectrogram(tone(500, duration=duration), FS)
        assert spec.n_frames == round(duration * 125)

    def test_channel_monotonicity(self):
        freqs = [200, 350, 700, 1500, 3000, 5000, 6800]
        peaks = [peak_channel(tone(f)) for f in freqs]
        assert peaks == sorted(peaks)

    @pytest.mark.parametrize("amp_scale", [0.1, 2.0, 17.0])
    def test_peak_invariant_under_amplitude_scaling(self, amp_scale):
        base = tone(1000)
        assert peak_channel(base) == peak_channel(amp_scale * base)

    def test_unsupported_sample_rate(self):
        with pytest.raises(af.AudioFormatError):
            af.auditory_spectrogram(np.zeros(8000), 8000)

    def test_empty_signal(self):
        with pytest.raises(af.AudioFormatError):
            af.auditory_spectrogram(np.zeros(10), FS)

    def test_channel_freqs_log_spaced(self):
        f = af.channel_frequencies()
        assert len(f) == 128
        assert np.all(np.diff(f) > 0)
        ratios = f[1:] / f[:-1]
        np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)

    def test_csv_round_trip(self, tmp_path):
        spec = af.auditory_spectrogram(tone(800, duration=0.5), FS)
        path = tmp_path / "spec.csv"
        spec.to_csv(path)
        back = af.AuditorySpectrogram.from_csv(path)
        assert back.values.shape == spec.values.shape
        np.testing.assert_allclose(back.values, spec.values, rtol=1e-5, atol=1e-5)


class TestInvertSpectrogram:
    def test_silence_inverts_to_near_silence(self):
        spec = af.auditory_spectrogram(np.zeros(FS), FS)
        wav = af.invert_spectrogram(spec, iters=5, seed=0)
        assert np.sqrt(np.mean(wav**2)) < 1e-4

    def test_tone_error_drops_below_10pct_of_first_iteration(self):
        wav_in = tone(440, duration=1.0) * np.hanning(FS)
        spec = af.auditory_spectrogram(wav_in, FS)
        _, errors = af.invert_spectrogram(spec, iters=100, seed=1, return_errors=True)
        assert errors[-1] < 0.10 * errors[1]

    def test_error_monotone_non_increasing(self):
        spec = af.auditory_spectrogram(tone(300, duration=0.5), FS)
        _, errors = af.invert_spectrogram(spec, iters=40, seed=2, return_errors=True)
        for a, b in zip(errors, errors[1:]):
            assert b <= a + 1e-6

    def test_deterministic_for_seed(self):
        spec = af.auditory_spectrogram(tone(700, duration=0.5), FS)
        w1 = af.invert_spectrogram(spec, iters=8, seed=3)
        w2 = af.invert_spectrogram(spec, iters=8, seed=3)
        np.testing.assert_array_equal(w1, w2)

    def test_rejects_zero_iters(self):
        spec = af.auditory_spectrogram(tone(700, duration=0.5), FS)
        with pytest.raises(ValueError):
            af.invert_spectrogram(spec, iters=0)


class TestSourceFeatures:
    def test_200hz_sine(self):
        sf = af.estimate_source_features(tone(200), FS)
        mid = slice(5, -5)
        assert np.all(np.abs(sf.pitch[mid] - 200) < 5)
        assert np.median(sf.periodicity[mid]) > 0.9
        sf.validate()

    def test_white_noise_mostly_aperiodic(self):
        # Monte-Carlo over seeds
        fracs = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            sf = af.estimate_source_features(0.1 * rng.standard_normal(FS), FS)
            fracs.append(np.mean(sf.periodicity < 0.5))
        assert min(fracs) >= 0.9

    def test_silence_convention(self):
        sf = af.estimate_source_features(np.zeros(FS), FS)
        np.testing.assert_array_equal(sf.pitch, 0.0)
        np.testing.assert_array_equal(sf.periodicity, 0.0)
        sf.validate()

    def test_frame_rate_100hz(self):
        sf = af.estimate_source_features(tone(150, duration=1.5), FS)
        assert len(sf.pitch) == 150

    def test_invariant_pitch_zero_when_unvoiced(self):
        rng = np.random.default_rng(7)
        mixed = np.concatenate([tone(180, 0.5), 0.05 * rng.standard_normal(FS // 2)])
        sf = af.estimate_source_features(mixed, FS)
        sf.validate()
        unvoiced = sf.periodicity < af.VOICING_THRESHOLD
        np.testing.assert_array_equal(sf.pitch[unvoiced], 0.0)


class TestWavIO:
    def test_round_trip(self, tmp_path):
        wav = tone(350, duration=0.25)
        path = tmp_path / "x.wav"
        af.write_wav(path, wav)
        back, fs = af.read_wav(path)
        assert fs == FS
        np.testing.assert_allclose(back, wav, atol=1.0 / 32767)
