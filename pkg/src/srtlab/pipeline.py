"""Scenario wiring: corpus + masker + scene + device + impairment + features
+ recognizer, with recording/model caches and the budget ledger.

The pipeline exposes the rate queries both search procedures consume:
matched-SNR single-class rates for the approximation stage, sentence rates
per (training SNR, test SNR) cell, and multicondition rates built from
already-recorded material.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import audio
from .audio import (CorpusParams, MaskerSpec, SceneLayout, Transcript, Waveform)
from .budget import BudgetLedger
from .devices import DeviceDescriptor, build_device
from .frontend import (AudiogramProfile, MelParams, SgbfbParams, FeatureMatrix,
                       apply_absolute_threshold, apply_level_uncertainty,
                       concat_binaural, log_mel_spectrogram, mvn, sgbfb_features)
from .recognizer import (Grammar, RecognizerError, Topology, decode,
                         random_model, score, train)

APPROX_CLASS = "name"

_ROLE_IDS = {"train": 1, "test": 2, "approx_train": 3, "approx_test": 4, "misc": 5}


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class Scenario:
    """Full configuration of one simulated listening condition."""

    masker: MaskerSpec = MaskerSpec(kind="stationary", level_dbspl=65.0)
    layout: SceneLayout = SceneLayout(tag="S0N0")
    profile: AudiogramProfile = field(default_factory=AudiogramProfile.normal)
    device: DeviceDescriptor = DeviceDescriptor(name="identity")
    corpus_seed: int = 1
    corpus: CorpusParams = CorpusParams()
    mel: MelParams = MelParams()
    gabor: SgbfbParams = SgbfbParams()
    topology: Topology = Topology()
    masker_duration_s: float = 20.0
    binaural: bool | None = None     # None: auto (stereo scenes only)
    name: str = "scenario"

    @property
    def in_silence(self) -> bool:
        return self.masker.is_silence

    @property
    def is_binaural(self) -> bool:
        if self.binaural is not None:
            return self.binaural
        return self.layout.tag == "S0N90"

    def scenario_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]


def initial_estimate(profile: AudiogramProfile, masker_level_dbspl: float | None,
                     in_silence: bool,
                     noise_srt_offset_db: float = -8.0,
                     silence_srt_dbspl: float = 15.0) -> float:
    """Rough starting SNR (or SPL in silence) from the low-frequency hearing
    loss and the masker level."""
    freqs = np.asarray(profile.frequencies_hz)
    low = freqs <= 1000.0
    if not np.any(low):
        raise PipelineError("profile has no thresholds at or below 1 kHz")
    hl_spl = float(np.mean(profile.thresholds_dbspl(freqs[low])))
    if in_silence or masker_level_dbspl is None:
        return max(hl_spl, silence_srt_dbspl)
    return max(hl_spl, masker_level_dbspl + noise_srt_offset_db) - masker_level_dbspl


class AcousticPipeline:
    """Stateful, caching pipeline for one scenario and run seed."""

    def __init__(self, scenario: Scenario, seed: int = 1,
                 retain_train_sets: bool = True):
        self.scenario = scenario
        self.seed = int(seed)
        self.retain_train_sets = retain_train_sets
        self.ledger = BudgetLedger()
        self._corpus = None
        self._masker_wave = None
        self._device = build_device(scenario.device)
        self._train_sets: dict[float, list] = {}
        self._test_sets: dict[float, list] = {}
        self._models: dict[tuple, object] = {}
        self._rates: dict[tuple, float] = {}

    # -- lazily built heavy assets ------------------------------------------

    @property
    def corpus(self):
        if self._corpus is None:
            self._corpus = audio.synthesize_corpus(self.scenario.corpus_seed,
                                                   self.scenario.corpus)
        return self._corpus

    @property
    def masker_wave(self) -> Waveform:
        if self._masker_wave is None:
            self._masker_wave = audio.generate_masker(
                self.scenario.masker, self.scenario.masker_duration_s,
                seed=self.scenario.masker.seed,
                sample_rate=self.scenario.corpus.sample_rate,
                calibration=self.scenario.corpus.calibration)
        return self._masker_wave

    def initial_estimate(self) -> float:
        level = None if self.scenario.in_silence else self.scenario.masker.level_dbspl
        return initial_estimate(self.scenario.profile, level,
                                self.scenario.in_silence)

    @property
    def in_silence(self) -> bool:
        return self.scenario.in_silence

    # -- per-utterance processing -------------------------------------------

    def _rng(self, role: str, snr: float):
        key = int(round(snr * 100.0)) + 1_000_000
        return np.random.default_rng([self.seed, _ROLE_IDS[role], key])

    def _process(self, speech: Waveform, snr: float, rng) -> FeatureMatrix:
        sc = self.scenario
        sp, excerpt = audio.prepare_mixture(speech, self.masker_wave, snr, rng)
        stereo_needed = sc.is_binaural or sc.device.kind == "beamformer" \
            or sc.layout.tag == "S0N90"
        ul_seed = int(rng.integers(0, 2 ** 31))
        if not stereo_needed and sc.device.kind == "identity":
            mono = Waveform(sp.samples + excerpt.samples, sp.sample_rate,
                            sp.calibration)
            return self._features_of(mono, ul_seed)
        stereo = audio.spatialize(sp, None if sc.in_silence else excerpt, sc.layout)
        processed = self._device.process(stereo)
        if sc.is_binaural:
            left = self._features_of(processed.channel(0), ul_seed)
            right = self._features_of(processed.channel(1), ul_seed + 1)
            return concat_binaural(left, right)
        return self._features_of(processed.channel(0), ul_seed)

    def _features_of(self, mono: Waveform, ul_seed: int) -> FeatureMatrix:
        sc = self.scenario
        logms = log_mel_spectrogram(mono, sc.mel)
        logms = apply_absolute_threshold(logms, sc.profile)
        if sc.profile.level_uncertainty_db > 0:
            logms = apply_level_uncertainty(logms, sc.profile.level_uncertainty_db,
                                            ul_seed)
        feats = sgbfb_features(logms, sc.gabor)
        feats = mvn(feats)
        return FeatureMatrix(values=feats.values.astype(np.float32),
                             provenance=feats.provenance)

    def _train_or_chance(self, dataset, vocab, grammar, train_snrs):
        """A fully threshold-clamped condition (e.g. soft speech under a severe
        hearing profile) yields identical all-floor frames; no recognizer can
        be estimated there and the listener performs at chance, which a
        random-parameter model reproduces through the ordinary decode path."""
        try:
            return train(dataset, self.scenario.topology, vocab,
                         train_snrs=train_snrs)
        except RecognizerError as exc:
            if "degenerate" not in str(exc):
                raise
            first = dataset[0][0]
            dim = np.asarray(first.values if hasattr(first, "values")
                             else first).shape[1]
            return random_model(dim, self.scenario.topology, seed=self.seed,
                                grammar=grammar)

    # -- sentence material ---------------------------------------------------

    def _sentence_slots(self, role: str, snr: float, index: int) -> list[int]:
        """Balanced slot indices: within each block of ten sentences every
        word of every class appears exactly once."""
        key = int(round(snr * 100.0)) + 1_000_000
        block, pos = divmod(index, 10)
        slots = []
        for class_id in range(len(audio.WORD_CLASSES)):
            rng = np.random.default_rng(
                [self.seed, _ROLE_IDS[role], key, 555, block, class_id])
            slots.append(int(rng.permutation(10)[pos]))
        return slots

    def _sentence_set(self, role: str, snr: float, n: int) -> list:
        """Mixtures are keyed by sentence index, so extending a cached set
        records only the additional sentences and never re-records."""
        cache = self._train_sets if role == "train" else self._test_sets
        key = float(snr)
        have = cache.setdefault(key, [])
        if len(have) < n:
            snr_key = int(round(snr * 100.0)) + 1_000_000
            extra = n - len(have)
            for i in range(len(have), n):
                slots = self._sentence_slots(role, snr, i)
                wave, transcript = audio.render_sentence(self.corpus, slots)
                rng = np.random.default_rng(
                    [self.seed, _ROLE_IDS[role], snr_key, i])
                have.append((self._process(wave, snr, rng), transcript))
            seconds = extra * self.corpus.sentence_seconds
            if len(have) == extra:
                self.ledger.record(role, key, seconds)
            else:
                self.ledger.record_extension(role, key, seconds)
        return have[:n]

    # -- approximation stage (single word class, matched SNR) ----------------

    def approx_rate(self, snr: float, n_train_tokens: int = 120,
                    n_test_tokens: int = 25, presentations: int = 3
                    ) -> tuple[float, int]:
        """Matched-SNR single-class recognition rate at one SNR."""
        key = ("approx", float(snr), n_train_tokens, n_test_tokens, presentations)
        if key in self._rates:
            n = n_test_tokens * presentations
            return self._rates[key], n
        rng = self._rng("approx_train", snr)
        grammar = Grammar(mode="single-class", class_name=APPROX_CLASS,
                          use_silence=self.scenario.topology.use_silence)
        vocab = grammar.vocabulary()
        dataset = []
        for i in range(n_train_tokens):
            word_idx = i % 10
            wave, tr = audio.render_token(self.corpus, APPROX_CLASS, word_idx)
            dataset.append((self._process(wave, snr, rng), tr))
        self.ledger.record("approx_train", float(snr),
                           n_train_tokens * self.corpus.token_seconds)
        # signals reused three times for robust mixture estimates
        model = self._train_or_chance(dataset * presentations, vocab, grammar,
                                      train_snrs=(float(snr),))
        rng_t = self._rng("approx_test", snr)
        presented = correct = 0
        for i in range(n_test_tokens):
            word_idx = i % 10
            wave, ref = audio.render_token(self.corpus, APPROX_CLASS, word_idx)
            for _ in range(presentations):
                feats = self._process(wave, snr, rng_t)
                hyp = decode(model, feats, grammar)
                counts = score(ref, hyp)
                presented += counts.words_presented
                correct += counts.words_correct
        self.ledger.record("approx_test", float(snr),
                           n_test_tokens * presentations * self.corpus.token_seconds)
        rate = correct / presented
        self._rates[key] = rate
        return rate, presented

    # -- sentence-level cells ------------------------------------------------

    def model(self, train_snr: float, n_train: int):
        key = ((float(train_snr),), n_train)
        if key not in self._models:
            dataset = self._sentence_set("train", train_snr, n_train)
            grammar = Grammar(mode="sentence",
                              use_silence=self.scenario.topology.use_silence)
            self._models[key] = self._train_or_chance(
                dataset, grammar.vocabulary(), grammar,
                train_snrs=(float(train_snr),))
            if not self.retain_train_sets:
                self._train_sets.pop(float(train_snr), None)
        return self._models[key]

    def multicondition_model(self, snr_a: float, snr_b: float, n_train: int):
        """Combined recognizer over two cached training SNRs; adds no new
        recorded material."""
        key = (tuple(sorted((float(snr_a), float(snr_b)))), n_train)
        if key not in self._models:
            a = self._train_sets.get(float(snr_a))
            b = self._train_sets.get(float(snr_b))
            if not a or not b:
                raise PipelineError(
                    "multicondition training needs both SNRs already recorded")
            grammar = Grammar(mode="sentence",
                              use_silence=self.scenario.topology.use_silence)
            self._models[key] = self._train_or_chance(
                list(a[:n_train]) + list(b[:n_train]), grammar.vocabulary(),
                grammar, train_snrs=key[0])
        return self._models[key]

    def _rate_for(self, model, model_key, test_snr: float, n_test: int) -> float:
        key = (model_key, float(test_snr), n_test)
        if key in self._rates:
            return self._rates[key]
        grammar = Grammar(mode="sentence",
                          use_silence=self.scenario.topology.use_silence)
        testset = self._sentence_set("test", test_snr, n_test)
        total = 0
        good = 0
        for feats, ref in testset:
            hyp = decode(model, feats, grammar)
            counts = score(ref, hyp)
            total += counts.words_presented
            good += counts.words_correct
        rate = good / total
        self._rates[key] = rate
        return rate

    def cell_rate(self, train_snr: float, test_snr: float,
                  n_train: int | None = None, n_test: int | None = None) -> float:
        n_train = n_train or 120
        n_test = n_test or 20
        model = self.model(train_snr, n_train)
        return self._rate_for(model, ((float(train_snr),), n_train),
                              test_snr, n_test)

    def multi_rate(self, snr_pair: tuple[float, float], test_snr: float,
                   n_train: int | None = None, n_test: int | None = None) -> float:
        n_train = n_train or 120
        n_test = n_test or 20
        model = self.multicondition_model(*snr_pair, n_train)
        key = (tuple(sorted(float(s) for s in snr_pair)), n_train)
        return self._rate_for(model, key, test_snr, n_test)

    @property
    def recorded_train_snrs(self) -> list[float]:
        return sorted(self._train_sets)
