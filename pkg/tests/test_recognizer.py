import numpy as np
import pytest

from srtlab.audio import TOKENS_PER_CLASS, WORD_CLASSES, Transcript
from srtlab.recognizer import (Grammar, RecognizerError, Topology, decode,
                               load_model, random_model, save_model, score,
                               train, train_multicondition)

DIM = 8
TOPOLOGY = Topology(n_states=3, sil_states=2, n_mix=2, n_iterations=4,
                    split_iteration=2)


def word_id(class_name, i):
    return Transcript.word_id(class_name, i)


def _word_means(rng):
    return {word_id(c, i): 3.0 * rng.standard_normal(DIM)
            for c in WORD_CLASSES for i in range(TOKENS_PER_CLASS)}


def token_features(rng, means, wid, frames=10, noise=0.3):
    return means[wid][None, :] + noise * rng.standard_normal((frames, DIM))


def single_class_dataset(rng, means, n=40, class_name="name"):
    out = []
    for i in range(n):
        wid = word_id(class_name, i % 10)
        sil = 0.3 * rng.standard_normal((4, DIM))
        x = np.concatenate([sil, token_features(rng, means, wid), sil])
        out.append((x, Transcript((wid,))))
    return out


def sentence_dataset(rng, means, n=30):
    out = []
    for i in range(n):
        slots = [(i + k) % 10 for k in range(5)]
        words = tuple(word_id(c, s) for c, s in zip(WORD_CLASSES, slots))
        parts = [0.3 * rng.standard_normal((4, DIM))]
        parts += [token_features(rng, means, w) for w in words]
        parts.append(0.3 * rng.standard_normal((4, DIM)))
        out.append((np.concatenate(parts), Transcript(words)))
    return out


@pytest.fixture(scope="module")
def means():
    return _word_means(np.random.default_rng(0))


@pytest.fixture(scope="module")
def name_model(means):
    rng = np.random.default_rng(1)
    dataset = single_class_dataset(rng, means)
    return train(dataset, TOPOLOGY, Grammar(mode="single-class").vocabulary())


@pytest.fixture(scope="module")
def sentence_model(means):
    rng = np.random.default_rng(2)
    return train(sentence_dataset(rng, means), TOPOLOGY,
                 Grammar(mode="sentence").vocabulary())


class TestScore:
    def test_full_match(self):
        t = Transcript(tuple(word_id(c, 0) for c in WORD_CLASSES))
        counts = score(t, t)
        assert (counts.words_presented, counts.words_correct) == (5, 5)

    def test_partial_match(self):
        ref = Transcript(tuple(word_id(c, 0) for c in WORD_CLASSES))
        hyp = Transcript(tuple(
            word_id(c, 0 if k < 3 else 1) for k, c in enumerate(WORD_CLASSES)))
        assert score(ref, hyp).rate == pytest.approx(0.6)

    def test_rate_resolution(self):
        # 75 single-word trials with 24 correct
        from srtlab.recognizer import ScoreCounts
        total = ScoreCounts()
        for i in range(75):
            ref = Transcript((word_id("name", 0),))
            hyp = Transcript((word_id("name", 0 if i < 24 else 1),))
            total.add(score(ref, hyp))
        assert total.rate == pytest.approx(0.32)

    def test_slot_mismatch(self):
        with pytest.raises(RecognizerError):
            score(Transcript(("name:0",)), Transcript(("name:0", "verb:0")))


class TestTrain:
    def test_deterministic(self, means):
        vocab = Grammar(mode="single-class").vocabulary()
        d1 = single_class_dataset(np.random.default_rng(5), means)
        d2 = single_class_dataset(np.random.default_rng(5), means)
        m1 = train(d1, TOPOLOGY, vocab)
        m2 = train(d2, TOPOLOGY, vocab)
        np.testing.assert_array_equal(m1.means, m2.means)
        np.testing.assert_array_equal(m1.variances, m2.variances)

    def test_coverage_error(self, means):
        rng = np.random.default_rng(6)
        dataset = [d for d in single_class_dataset(rng, means)
                   if d[1].words[0] != word_id("name", 7)]
        with pytest.raises(RecognizerError, match="coverage"):
            train(dataset, TOPOLOGY, Grammar(mode="single-class").vocabulary())

    def test_loglik_monotone_within_phases(self, name_model):
        ll = name_model.training_loglik
        assert len(ll) == TOPOLOGY.n_iterations
        split = TOPOLOGY.split_iteration
        for seq in (ll[:split], ll[split:]):
            for a, b in zip(seq[:-1], seq[1:]):
                assert b >= a - 1e-6 * abs(a)

    def test_mixture_split_applied(self, name_model):
        assert name_model.log_weights.shape[1] == 2

    def test_degenerate_data_error(self):
        dataset = [(np.zeros((20, DIM)), Transcript((word_id("name", i % 10),)))
                   for i in range(20)]
        with pytest.raises(RecognizerError, match="degenerate"):
            train(dataset, TOPOLOGY, Grammar(mode="single-class").vocabulary())

    def test_variance_floor_respected(self, name_model):
        assert np.all(name_model.variances > 0)


class TestMulticondition:
    def test_same_set_twice_equals_single(self, means):
        rng = np.random.default_rng(7)
        vocab = Grammar(mode="single-class").vocabulary()
        a = single_class_dataset(rng, means)
        doubled = train_multicondition(a, a, TOPOLOGY, vocab,
                                       snr_labels=(0.0, 0.0))
        single = train(a, TOPOLOGY, vocab)
        np.testing.assert_allclose(doubled.means, single.means, atol=1e-9)

    def test_labels(self, means):
        rng = np.random.default_rng(8)
        vocab = Grammar(mode="single-class").vocabulary()
        a = single_class_dataset(rng, means, n=20)
        b = single_class_dataset(rng, means, n=20)
        m = train_multicondition(a, b, TOPOLOGY, vocab, snr_labels=(-6.0, 0.0))
        assert m.train_snrs == (-6.0, 0.0)

    def test_missing_set_error(self, means):
        with pytest.raises(RecognizerError):
            train_multicondition([], [], TOPOLOGY)


class TestDecode:
    def test_matched_tokens_recognized(self, name_model, means):
        rng = np.random.default_rng(9)
        grammar = Grammar(mode="single-class")
        correct = total = 0
        for i in range(50):
            wid = word_id("name", i % 10)
            sil = 0.3 * rng.standard_normal((4, DIM))
            x = np.concatenate([sil, token_features(rng, means, wid), sil])
            hyp = decode(name_model, x, grammar)
            c = score(Transcript((wid,)), hyp)
            correct += c.words_correct
            total += c.words_presented
        assert correct / total >= 0.99

    def test_single_class_grammar_constraint(self, name_model, rng):
        hyp = decode(name_model, rng.standard_normal((30, DIM)),
                     Grammar(mode="single-class"))
        assert len(hyp.words) == 1
        assert hyp.words[0].startswith("name:")

    def test_sentence_grammar_constraint(self, sentence_model, rng):
        hyp = decode(sentence_model, rng.standard_normal((60, DIM)),
                     Grammar(mode="sentence"))
        assert len(hyp.words) == 5
        classes = [w.split(":")[0] for w in hyp.words]
        assert classes == list(WORD_CLASSES)

    def test_sentence_accuracy_high(self, sentence_model, means):
        rng = np.random.default_rng(11)
        grammar = Grammar(mode="sentence")
        correct = total = 0
        for X, ref in sentence_dataset(rng, means, n=20):
            c = score(ref, decode(sentence_model, X, grammar))
            correct += c.words_correct
            total += c.words_presented
        assert correct / total >= 0.99

    def test_dim_mismatch(self, name_model, rng):
        with pytest.raises(RecognizerError, match="dim"):
            decode(name_model, rng.standard_normal((30, DIM + 1)),
                   Grammar(mode="single-class"))

    def test_too_short_utterance(self, sentence_model):
        with pytest.raises(RecognizerError, match="shorter"):
            decode(sentence_model, np.zeros((3, DIM)), Grammar(mode="sentence"))

    def test_grammar_soundness_random_models(self):
        for seed in range(10):
            rng = np.random.default_rng(seed)
            model = random_model(DIM, TOPOLOGY, seed=seed)
            hyp = decode(model, rng.standard_normal((60, DIM)),
                         Grammar(mode="sentence"))
            classes = [w.split(":")[0] for w in hyp.words]
            assert classes == list(WORD_CLASSES)

    def test_chance_floor(self):
        model = random_model(DIM, TOPOLOGY, seed=0)
        grammar = Grammar(mode="sentence")
        rng = np.random.default_rng(13)
        correct = total = 0
        for i in range(150):
            ref = Transcript(tuple(
                word_id(c, int(rng.integers(10))) for c in WORD_CLASSES))
            hyp = decode(model, rng.standard_normal((60, DIM)), grammar)
            c = score(ref, hyp)
            correct += c.words_correct
            total += c.words_presented
        rate = correct / total
        ci = 4 * np.sqrt(0.1 * 0.9 / total)
        assert abs(rate - 0.1) <= ci


class TestSerialization:
    def test_round_trip(self, name_model, means, tmp_path):
        path = tmp_path / "model.npz"
        save_model(path, name_model)
        loaded = load_model(path)
        np.testing.assert_array_equal(loaded.means, name_model.means)
        assert loaded.units == name_model.units
        rng = np.random.default_rng(14)
        x = np.concatenate([0.3 * rng.standard_normal((4, DIM)),
                            token_features(rng, means, word_id("name", 4)),
                            0.3 * rng.standard_normal((4, DIM))])
        g = Grammar(mode="single-class")
        assert decode(loaded, x, g).words == decode(name_model, x, g).words

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, meta=np.frombuffer(b'{"magic": "nope"}', dtype=np.uint8),
                 log_weights=np.zeros((1, 1)), means=np.zeros((1, 1, 2)),
                 variances=np.ones((1, 1, 2)), log_self=np.zeros(1),
                 log_next=np.zeros(1))
        with pytest.raises(RecognizerError, match="not a"):
            load_model(path)
