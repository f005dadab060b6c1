"""Shared fixtures: a reduced-scale scenario family that keeps the full
pipeline (corpus, masker, scene, device, impairment, features, recognizer)
intact while fitting single-core CPU budgets."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from srtlab import (AcousticPipeline, AudiogramProfile, CorpusParams,
                    DarfConfig, DeviceDescriptor, GridConfig, MaskerSpec,
                    MelParams, Scenario, SceneLayout, SgbfbParams, Topology)

TINY_CORPUS = CorpusParams(sample_rate=8000, token_duration_s=0.2,
                           token_pad_s=0.05, word_gap_s=0.02,
                           sentence_gap_s=0.1)
TINY_MEL = MelParams(n_bands=20, f_max=4000.0)
TINY_GABOR = SgbfbParams(spectral_mod_freqs=(0.0, 0.12, 0.25),
                         temporal_mod_freqs=(0.0, 0.12, 0.25),
                         band_step=4, max_extent=15)
TINY_TOPOLOGY = Topology(n_states=4, sil_states=2, n_mix=1, n_iterations=3,
                         split_iteration=99)
TINY_DARF = DarfConfig(n_train_sentences=20, n_test_sentences=5,
                       approx_train_tokens=30, approx_test_tokens=10,
                       approx_presentations=2)
TINY_GRID = GridConfig(n_train_sentences=20, n_test_sentences=5,
                       n_train_snrs=3)


def tiny_scenario(masker="stationary", layout="S0N0", profile=None,
                  device="identity", **overrides) -> Scenario:
    masker_spec = (masker if isinstance(masker, MaskerSpec)
                   else MaskerSpec(kind=masker, level_dbspl=65.0))
    kwargs = dict(
        masker=masker_spec,
        layout=SceneLayout(tag=layout),
        profile=profile or AudiogramProfile.normal(),
        device=DeviceDescriptor.parse(device),
        corpus=TINY_CORPUS, mel=TINY_MEL, gabor=TINY_GABOR,
        topology=TINY_TOPOLOGY, masker_duration_s=8.0,
        name=f"tiny-{getattr(masker_spec, 'kind', masker)}-{layout}")
    kwargs.update(overrides)
    return Scenario(**kwargs)


def tiny_pipeline(seed=1, retain_train_sets=True, **scenario_kwargs) -> AcousticPipeline:
    return AcousticPipeline(tiny_scenario(**scenario_kwargs), seed=seed,
                            retain_train_sets=retain_train_sets)


@pytest.fixture(scope="session")
def stationary_pipeline():
    return tiny_pipeline(seed=1)


@pytest.fixture(scope="session")
def tiny_corpus():
    from srtlab import synthesize_corpus
    return synthesize_corpus(1, TINY_CORPUS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def darf_config(**overrides) -> DarfConfig:
    return dataclasses.replace(TINY_DARF, **overrides)
