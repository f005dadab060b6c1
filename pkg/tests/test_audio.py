import numpy as np
import pytest

from srtlab import audio
from srtlab.audio import (AudioError, CorpusParams, MaskerSpec, SceneLayout,
                          Transcript, Waveform, generate_masker, level_dbspl,
                          mix_at_snr, prepare_mixture, render_sentence,
                          render_token, set_level, spatialize,
                          synthesize_corpus, write_wav)

from conftest import TINY_CORPUS


def sine(freq, fs=16000, dur=1.0, amp=1.0, calibration=100.0):
    t = np.arange(int(fs * dur)) / fs
    return Waveform(amp * np.sin(2 * np.pi * freq * t), fs, calibration)


class TestWaveform:
    def test_rejects_nonfinite(self):
        with pytest.raises(AudioError):
            Waveform(np.array([0.0, np.nan]), 16000)

    def test_rejects_three_channels(self):
        with pytest.raises(AudioError):
            Waveform(np.zeros((10, 3)), 16000)

    def test_channel_split(self):
        w = Waveform(np.stack([np.ones(10), np.zeros(10)], axis=1), 8000)
        assert w.n_channels == 2
        assert np.all(w.channel(0).samples == 1.0)
        assert np.all(w.channel(1).samples == 0.0)


class TestLevel:
    def test_full_scale_sine_reads_calibration(self):
        assert level_dbspl(sine(1000, calibration=100.0)) == pytest.approx(100.0, abs=0.01)

    def test_half_scale_sine(self):
        w = sine(1000, amp=0.5, calibration=100.0)
        assert level_dbspl(w) == pytest.approx(93.98, abs=0.05)

    def test_zeros_give_minus_inf(self):
        assert level_dbspl(Waveform(np.zeros(100), 16000)) == float("-inf")

    def test_set_level_round_trip(self):
        w = set_level(sine(500, amp=0.3), 70.0)
        assert level_dbspl(w) == pytest.approx(70.0, abs=1e-6)


class TestCorpus:
    def test_deterministic(self):
        a = synthesize_corpus(1, TINY_CORPUS)
        b = synthesize_corpus(1, TINY_CORPUS)
        for key in a.tokens:
            np.testing.assert_array_equal(a.tokens[key], b.tokens[key])

    def test_seed_changes_audio_not_structure(self):
        a = synthesize_corpus(1, TINY_CORPUS)
        b = synthesize_corpus(2, TINY_CORPUS)
        assert set(a.tokens) == set(b.tokens)
        assert len(a.tokens) == 50
        assert any(not np.array_equal(a.tokens[k], b.tokens[k]) for k in a.tokens)

    def test_invalid_duration(self):
        with pytest.raises(AudioError):
            synthesize_corpus(1, CorpusParams(token_duration_s=0.0))

    def test_default_sentence_budget(self, rng):
        corpus = synthesize_corpus(1)  # default params
        assert corpus.sentence_seconds == pytest.approx(2.5)
        assert 120 * corpus.sentence_seconds == pytest.approx(300.0)
        assert 120 * corpus.token_seconds == pytest.approx(75.0)
        wave, _ = render_sentence(corpus, [0, 1, 2, 3, 4])
        assert wave.n_samples / wave.sample_rate == pytest.approx(2.5, abs=0.3)


class TestRender:
    def test_sentence_transcript_order(self, tiny_corpus):
        _, tr = render_sentence(tiny_corpus, [0, 0, 0, 0, 0])
        assert tr.words == tuple(Transcript.word_id(c, 0) for c in audio.WORD_CLASSES)

    def test_sentence_index_out_of_range(self, tiny_corpus):
        with pytest.raises(AudioError):
            render_sentence(tiny_corpus, [0, 0, 0, 0, 10])

    def test_sentence_reproducible(self, tiny_corpus):
        w1, _ = render_sentence(tiny_corpus, [3, 1, 4, 1, 5])
        w2, _ = render_sentence(tiny_corpus, [3, 1, 4, 1, 5])
        np.testing.assert_array_equal(w1.samples, w2.samples)

    def test_token_identical_twice(self, tiny_corpus):
        w1, t1 = render_token(tiny_corpus, "name", 3)
        w2, t2 = render_token(tiny_corpus, "name", 3)
        np.testing.assert_array_equal(w1.samples, w2.samples)
        assert t1.words == t2.words == ("name:3",)

    def test_token_invalid_class(self, tiny_corpus):
        with pytest.raises(AudioError):
            render_token(tiny_corpus, "verbs", 0)


class TestMasker:
    def test_silence_is_zero(self):
        w = generate_masker(MaskerSpec(kind="silence"), 1.0, sample_rate=8000)
        assert np.all(w.samples == 0.0)

    def test_stationary_level(self):
        w = generate_masker(MaskerSpec(kind="stationary", level_dbspl=65.0), 5.0,
                            sample_rate=8000)
        assert level_dbspl(w) == pytest.approx(65.0, abs=0.1)

    def test_deterministic_in_spec_and_seed(self):
        spec = MaskerSpec(kind="fluctuating", level_dbspl=60.0, seed=7)
        a = generate_masker(spec, 2.0, sample_rate=8000)
        b = generate_masker(spec, 2.0, sample_rate=8000)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_fluctuating_has_bounded_gaps(self):
        w = generate_masker(MaskerSpec(kind="fluctuating", level_dbspl=65.0),
                            10.0, sample_rate=8000)
        # gaps are gated to a finite depth (default 20 dB), not digital zero
        k = 40
        env = np.sqrt(np.convolve(w.samples ** 2, np.ones(k) / k, mode="valid"))
        quiet = env < 0.3 * np.sqrt(np.mean(w.samples ** 2))
        runs = []
        count = 0
        for q in quiet:
            count = count + 1 if q else 0
            if count:
                runs.append(count)
        gaps = [r for r in set(runs) if r >= 0.02 * 8000]
        assert gaps, "expected at least one envelope gap per 10 s"
        assert max(gaps) <= 0.27 * 8000

    def test_gap_depth_respected(self):
        spec = MaskerSpec(kind="fluctuating", level_dbspl=65.0, gap_depth_db=20.0)
        w = generate_masker(spec, 10.0, sample_rate=8000)
        k = 40
        env = np.sqrt(np.convolve(w.samples ** 2, np.ones(k) / k, mode="valid"))
        on = np.median(env[env > 0.5 * env.max()])
        gap = np.percentile(env, 5.0)  # typical in-gap envelope
        depth = 20.0 * np.log10(on / gap)
        assert 14.0 <= depth <= 26.0  # gate floor near the configured 20 dB

    def test_invalid_gap_depth(self):
        with pytest.raises(AudioError):
            MaskerSpec(kind="fluctuating", gap_depth_db=0.0)

    def test_fluctuating_envelope_variance_exceeds_stationary(self):
        def env_var(kind, seed):
            w = generate_masker(MaskerSpec(kind=kind, level_dbspl=65.0, seed=seed),
                                4.0, sample_rate=8000)
            k = 80
            env = np.convolve(w.samples ** 2, np.ones(k) / k, mode="valid")
            return np.var(np.sqrt(env))

        fluct = [env_var("fluctuating", s) for s in range(10)]
        stat = [env_var("stationary", s) for s in range(10)]
        assert min(fluct) > max(stat)

    def test_babble_level_and_texture(self):
        w = generate_masker(MaskerSpec(kind="babble", level_dbspl=65.0), 3.0,
                            sample_rate=8000)
        assert level_dbspl(w) == pytest.approx(65.0, abs=0.1)

    def test_invalid_level_rejected(self):
        with pytest.raises(AudioError):
            MaskerSpec(kind="stationary", level_dbspl=130.0)


class TestMixing:
    def test_snr_level_exact(self, tiny_corpus, rng):
        masker = generate_masker(MaskerSpec(kind="stationary", level_dbspl=65.0),
                                 4.0, sample_rate=8000)
        speech, _ = render_sentence(tiny_corpus, [0, 1, 2, 3, 4])
        for _ in range(200):
            snr = float(rng.uniform(-20, 10))
            sp, ex = prepare_mixture(speech, masker, snr, rng)
            achieved = level_dbspl(sp) - level_dbspl(ex)
            assert achieved == pytest.approx(snr, abs=0.1)

    def test_explicit_example_minus_ten(self, tiny_corpus, rng):
        masker = generate_masker(MaskerSpec(kind="stationary", level_dbspl=65.0),
                                 4.0, sample_rate=8000)
        speech, _ = render_sentence(tiny_corpus, [1, 1, 1, 1, 1])
        sp, _ = prepare_mixture(speech, masker, -10.0, rng)
        assert level_dbspl(sp) == pytest.approx(55.0, abs=0.2)

    def test_silence_uses_absolute_level(self, tiny_corpus, rng):
        masker = generate_masker(MaskerSpec(kind="silence"), 4.0, sample_rate=8000)
        speech, _ = render_sentence(tiny_corpus, [2, 2, 2, 2, 2])
        mixed = mix_at_snr(speech, masker, 40.0, rng)
        assert level_dbspl(mixed) == pytest.approx(40.0, abs=0.1)

    def test_fresh_excerpt_per_mixture(self, tiny_corpus, rng):
        masker = generate_masker(MaskerSpec(kind="stationary", level_dbspl=65.0),
                                 4.0, sample_rate=8000)
        speech, _ = render_sentence(tiny_corpus, [0, 0, 0, 0, 0])
        a = mix_at_snr(speech, masker, 0.0, rng)
        b = mix_at_snr(speech, masker, 0.0, rng)
        assert not np.array_equal(a.samples, b.samples)

    def test_rate_mismatch(self, tiny_corpus, rng):
        masker = generate_masker(MaskerSpec(kind="stationary"), 1.0,
                                 sample_rate=16000)
        speech, _ = render_sentence(tiny_corpus, [0, 0, 0, 0, 0])
        with pytest.raises(AudioError):
            mix_at_snr(speech, masker, 0.0, rng)


class TestSpatialize:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.speech = Waveform(0.1 * rng.standard_normal(8000), 8000)
        self.masker = Waveform(0.1 * rng.standard_normal(8000), 8000)

    def test_s0n0_diotic(self):
        st = spatialize(self.speech, self.masker, SceneLayout(tag="S0N0"))
        np.testing.assert_array_equal(st.samples[:, 0], st.samples[:, 1])

    def test_s0_duplicates_speech(self):
        st = spatialize(self.speech, None, SceneLayout(tag="S0"))
        np.testing.assert_array_equal(st.samples[:, 0], self.speech.samples)
        np.testing.assert_array_equal(st.samples[:, 1], self.speech.samples)

    def test_s0n90_far_channel_attenuation(self):
        layout = SceneLayout(tag="S0N90")
        zero = Waveform(np.zeros(8000), 8000)
        st = spatialize(zero, self.masker, layout)
        left = np.mean(st.samples[:, 0] ** 2)
        right = np.mean(st.samples[:, 1] ** 2)
        assert 10 * np.log10(left / right) == pytest.approx(6.0, abs=0.3)

    def test_rejects_stereo_input(self):
        stereo = Waveform(np.zeros((100, 2)), 8000)
        with pytest.raises(AudioError):
            spatialize(stereo, None, SceneLayout(tag="S0"))


class TestExport:
    def test_wav_and_manifest(self, tiny_corpus, tmp_path):
        manifest_path = audio.export_corpus(tiny_corpus, tmp_path)
        wavs = sorted(p.name for p in tmp_path.glob("*.wav"))
        assert len(wavs) == 50
        manifest = manifest_path.read_text().strip().splitlines()
        assert len(manifest) == 51  # header + 50 tokens

    def test_write_wav_round_trip_level(self, tmp_path):
        w = set_level(sine(440, fs=8000, dur=0.2), 60.0)
        path = tmp_path / "tone.wav"
        write_wav(path, w)
        assert path.stat().st_size > 1000
