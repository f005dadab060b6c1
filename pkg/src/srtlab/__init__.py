"""srtlab: a simulation laboratory for speech recognition thresholds.

Small GMM-HMM recognizers are trained and tested at selected SNRs to
predict the SRT of a simulated listener, either on an exhaustive
(training SNR x test SNR) grid or with a data-reduced adaptive search,
plus a benchmark harness for the accuracy/speed tradeoff between the two.
"""

from .audio import (CorpusParams, MaskerSpec, SceneLayout, Transcript,
                    Waveform, generate_masker, mix_at_snr, synthesize_corpus)
from .bench import (AstRecord, ScenarioConfig, StatsSummary, ast, benefit,
                    compare, propagate_sd, sweep_counts)
from .budget import BudgetLedger, budget_total
from .darf import (DarfConfig, OraclePipeline, OracleSurface, SrtResult,
                   adapt_region, initial_region, oracle_rate, run_darf)
from .devices import DeviceDescriptor, build_device
from .fade import (GridConfig, RecognitionMap, SrtEstimate, SrtNotFound,
                   row_crossing, run_grid, srt_from_map)
from .frontend import (AudiogramProfile, FeatureMatrix, LogMS, MelParams,
                       SgbfbParams, apply_absolute_threshold,
                       apply_level_uncertainty, concat_binaural,
                       log_mel_spectrogram, mvn, sgbfb_features)
from .pipeline import AcousticPipeline, Scenario, initial_estimate
from .recognizer import (AcousticModel, Grammar, Topology, decode, load_model,
                         save_model, score, train, train_multicondition)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
