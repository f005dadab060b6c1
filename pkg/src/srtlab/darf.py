"""Data-reduced adaptive SRT search: initialization, matched-SNR
approximation, adaptive region search, multicondition evaluation, and
budget accounting; plus a parametric oracle mode for controller checks."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .budget import BudgetLedger, budget_total  # noqa: F401 (re-exported)
from .fade import RecognitionMap, SrtNotFound, row_crossing, srt_from_map


class DarfError(RuntimeError):
    pass


@dataclass(frozen=True)
class DarfConfig:
    n_train_sentences: int = 120
    n_test_sentences: int = 20
    approx_train_tokens: int = 120
    approx_test_tokens: int = 25
    approx_presentations: int = 3
    approx_step_db: float = 5.0
    train_step_db: float = 6.0
    test_step_db: float = 3.0
    train_offsets: tuple[float, float] = (3.0, 9.0)
    test_offsets: tuple[float, ...] = (0.0, -3.0, -6.0, -9.0)
    target_rate: float = 0.5
    approx_window: float = 0.15        # stop when |rate - target| <= window
    approx_interp_band: tuple[float, float] = (0.25, 0.75)
    max_approx_iterations: int = 8
    max_region_updates: int = 12

    def __post_init__(self):
        if min(self.n_train_sentences, self.n_test_sentences,
               self.approx_train_tokens, self.approx_test_tokens) <= 0:
            raise DarfError("counts must be positive")
        if min(self.approx_step_db, self.train_step_db, self.test_step_db) <= 0:
            raise DarfError("steps must be positive")


@dataclass
class PhaseLog:
    entries: list = field(default_factory=list)

    def add(self, kind: str, *payload) -> None:
        self.entries.append((time.time(), kind, *payload))

    def trace(self) -> list[tuple]:
        """Entries without timestamps, for golden state-machine comparison."""
        return [e[1:] for e in self.entries]


@dataclass
class DarfState:
    train_snrs: list[float]
    test_snrs: list[float]
    rec_map: RecognitionMap
    phase: str = "init"
    region_updates: int = 0


@dataclass
class SrtResult:
    srt: float
    srt_pre_multicondition: float
    rec_map: RecognitionMap
    multi_map: RecognitionMap
    ledger: BudgetLedger
    log: PhaseLog
    approx_iterations: int
    region_updates: int
    approx_estimate: float
    wall_s: float = 0.0
    multicondition_fallback: bool = False


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def snap_down(value: float, step: float) -> float:
    """Snap to the next-lower multiple of step (keeps the search on the
    test-SNR grid and biases toward the lowest threshold)."""
    return float(np.floor(round(value / step, 9)) * step)


def approximate_srt(pipeline, config: DarfConfig, log: PhaseLog,
                    ledger: BudgetLedger) -> float:
    """Matched-SNR pre-simulation on a single word class, starting from the
    pipeline's rough initial estimate."""
    snr = pipeline.initial_estimate()
    probes: dict[float, float] = {}
    lo, hi = config.approx_interp_band
    for _ in range(config.max_approx_iterations):
        rate, _n = pipeline.approx_rate(
            snr, config.approx_train_tokens, config.approx_test_tokens,
            config.approx_presentations)
        probes[snr] = rate
        ledger.bump("approx_iterations")
        log.add("approx-probe", round(snr, 6), round(rate, 6))
        interp = _interpolate_probes(probes, config.target_rate, lo, hi)
        if interp is not None:
            return interp
        if abs(rate - config.target_rate) <= config.approx_window:
            return float(snr)
        snr = snr + config.approx_step_db if rate < config.target_rate \
            else snr - config.approx_step_db
        if snr in probes:
            # the fixed step oscillates across a steep function; fall back
            # to interpolating the bracketing pair
            return _bracket_interpolate(probes, config.target_rate)
    raise DarfError("approximation stage did not converge within the cap")


def _bracket_interpolate(probes: dict[float, float], target: float) -> float:
    items = sorted(probes.items())
    for (s0, r0), (s1, r1) in zip(items[:-1], items[1:]):
        if (r0 - target) * (r1 - target) <= 0 and r0 != r1:
            return float(s0 + (target - r0) / (r1 - r0) * (s1 - s0))
    return float(min(probes, key=lambda s: abs(probes[s] - target)))


def _interpolate_probes(probes: dict[float, float], target: float,
                        lo: float, hi: float) -> float | None:
    inside = sorted((s, r) for s, r in probes.items() if lo < r < hi)
    if len(inside) < 2:
        return None
    for (s0, r0), (s1, r1) in zip(inside[:-1], inside[1:]):
        if (r0 - target) * (r1 - target) <= 0 and r0 != r1:
            return float(s0 + (target - r0) / (r1 - r0) * (s1 - s0))
    return None


def initial_region(estimate: float, config: DarfConfig
                   ) -> tuple[list[float], list[float]]:
    """Two training SNRs above and four test SNRs at/below the estimate."""
    train = sorted(estimate + o for o in config.train_offsets)
    test = sorted(estimate + o for o in config.test_offsets)
    return train, test


def _row_crossings(rec_map: RecognitionMap, train_snrs, test_snrs,
                   target: float) -> dict[float, float]:
    """Per-row target crossings; a row sitting entirely above the target is
    mapped to -inf (its crossing lies below the examined range)."""
    out = {}
    for tr in train_snrs:
        rates = [rec_map.rate(tr, te) for te in test_snrs]
        c = row_crossing(test_snrs, rates, target)
        if c is not None:
            out[tr] = c
        elif all(r > target for r in rates):
            out[tr] = float("-inf")
    return out


def adapt_region(rec_map: RecognitionMap, train_snrs, test_snrs,
                 config: DarfConfig) -> tuple[str, ...]:
    """Region-update rules evaluated on the current map view.

    Test-set rules come first, train-set rules may combine with them; the
    procedure stops only when no rule fires.
    """
    target = config.target_rate
    train_snrs = sorted(train_snrs)
    test_snrs = sorted(test_snrs)
    all_rates = [rec_map.rate(tr, te) for tr in train_snrs for te in test_snrs]
    if all(r < target for r in all_rates):
        return ("extend-test-up",)
    if all(r > target for r in all_rates):
        return ("extend-test-down",)

    crossings = _row_crossings(rec_map, train_snrs, test_snrs, target)
    if not crossings:
        # rates straddle the target but no single row crosses it
        return ("extend-test-up",)
    best = min(crossings.values())
    best_rows = [tr for tr, c in crossings.items() if c == best]

    actions: list[str] = []
    n_below = sum(1 for te in test_snrs if te < best)
    if n_below < 2:
        actions.append("extend-test-down")
    if any(tr == train_snrs[-1] for tr in best_rows):
        actions.append("extend-train-up")
    if any(tr == train_snrs[0] for tr in best_rows):
        actions.append("extend-train-down")
    if not actions:
        return ("stop",)
    return tuple(actions)


def _evaluate_region(pipeline, rec_map: RecognitionMap, train_snrs, test_snrs,
                     config: DarfConfig) -> None:
    for tr in train_snrs:
        for te in test_snrs:
            if not rec_map.evaluated(tr, te):
                rec_map.set_rate(tr, te, pipeline.cell_rate(
                    tr, te, n_train=config.n_train_sentences,
                    n_test=config.n_test_sentences))


def multicondition_eval(pipeline, train_snrs, test_snrs,
                        config: DarfConfig) -> RecognitionMap:
    """Combined recognizers over each adjacent pair of recorded training
    SNRs, evaluated against every recorded test SNR; no new recordings."""
    train_snrs = sorted(train_snrs)
    if len(train_snrs) < 2:
        raise DarfError("multicondition evaluation needs at least two "
                        "recorded training SNRs")
    multi = RecognitionMap()
    for a, b in zip(train_snrs[:-1], train_snrs[1:]):
        row_key = (a + b) / 2.0
        for te in sorted(test_snrs):
            rate = pipeline.multi_rate((a, b), te,
                                       n_train=config.n_train_sentences,
                                       n_test=config.n_test_sentences)
            multi.set_rate(row_key, te, rate)
    return multi


def run_darf(pipeline, config: DarfConfig | None = None) -> SrtResult:
    """Full adaptive run: init, approximation, region search, multicondition."""
    config = config or DarfConfig()
    log = PhaseLog()
    ledger = pipeline.ledger
    t0 = time.monotonic()

    estimate0 = pipeline.initial_estimate()
    log.add("init", round(estimate0, 6))

    approx = approximate_srt(pipeline, config, log, ledger)
    approx = snap_down(approx, config.test_step_db)
    log.add("approx-estimate", round(approx, 6))

    train_snrs, test_snrs = initial_region(approx, config)
    log.add("region", tuple(train_snrs), tuple(test_snrs))
    rec_map = RecognitionMap()
    state = DarfState(train_snrs=train_snrs, test_snrs=test_snrs,
                      rec_map=rec_map, phase="search")
    _evaluate_region(pipeline, rec_map, train_snrs, test_snrs, config)

    while True:
        actions = adapt_region(rec_map, state.train_snrs, state.test_snrs, config)
        log.add("adapt", actions)
        if actions == ("stop",):
            break
        state.region_updates += 1
        ledger.bump("region_updates")
        if state.region_updates > config.max_region_updates:
            raise DarfError("region search exceeded the safety cap")
        if "extend-test-up" in actions:
            state.test_snrs.append(max(state.test_snrs) + config.test_step_db)
        if "extend-test-down" in actions:
            state.test_snrs.append(min(state.test_snrs) - config.test_step_db)
        if "extend-train-up" in actions:
            state.train_snrs.append(max(state.train_snrs) + config.train_step_db)
        if "extend-train-down" in actions:
            state.train_snrs.append(min(state.train_snrs) - config.train_step_db)
        state.train_snrs.sort()
        state.test_snrs.sort()
        _evaluate_region(pipeline, rec_map, state.train_snrs, state.test_snrs,
                         config)

    search = srt_from_map(rec_map, config.target_rate)
    log.add("search-srt", round(search.srt, 6))

    state.phase = "multicondition"
    seconds_before = ledger.total_seconds()
    fallback = False
    multi = multicondition_eval(pipeline, state.train_snrs, state.test_snrs, config)
    if ledger.total_seconds() != seconds_before:
        raise DarfError("multicondition stage recorded new material")
    try:
        final = srt_from_map(multi, config.target_rate).srt
    except SrtNotFound:
        final = search.srt
        fallback = True
    log.add("multicondition",
            tuple((a + b) / 2.0 for a, b in
                  zip(sorted(state.train_snrs)[:-1], sorted(state.train_snrs)[1:])))
    log.add("final-srt", round(final, 6))
    state.phase = "done"

    wall = time.monotonic() - t0
    ledger.wall_s += wall
    return SrtResult(
        srt=float(final),
        srt_pre_multicondition=float(search.srt),
        rec_map=rec_map, multi_map=multi, ledger=ledger, log=log,
        approx_iterations=ledger.iterations.get("approx_iterations", 0),
        region_updates=state.region_updates,
        approx_estimate=approx, wall_s=wall,
        multicondition_fallback=fallback,
    )


# ---------------------------------------------------------------------------
# oracle mode
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleSurface:
    """Parametric recognition-rate surface: logistic in test SNR with a
    midpoint penalty growing with training-SNR mismatch."""

    midpoint_db: float = -9.0       # best-achievable 50 % point
    slope_db: float = 2.0           # logistic scale
    optimal_train_db: float = 0.0
    mismatch_per_db: float = 0.3    # midpoint shift per dB of train mismatch
    chance: float = 0.1
    sample_n: int | None = None     # binomial sampling when set
    seed: int = 0
    rate_overrides: tuple[tuple[tuple[float, float], float], ...] = ()

    def midpoint(self, train_snr: float) -> float:
        return self.midpoint_db + self.mismatch_per_db * abs(
            train_snr - self.optimal_train_db)

    def rate(self, train_snr: float, test_snr: float) -> float:
        for (tr, te), r in self.rate_overrides:
            if abs(tr - train_snr) < 1e-9 and abs(te - test_snr) < 1e-9:
                return r
        m = self.midpoint(train_snr)
        p = self.chance + (1.0 - self.chance) * float(
            expit((test_snr - m) / self.slope_db))
        if self.sample_n:
            rng = np.random.default_rng(
                [self.seed, int(round(train_snr * 100)) + 10 ** 6,
                 int(round(test_snr * 100)) + 10 ** 6])
            return rng.binomial(self.sample_n, p) / self.sample_n
        return float(p)


def oracle_rate(surface: OracleSurface, train_snr: float, test_snr: float) -> float:
    return surface.rate(train_snr, test_snr)


class OraclePipeline:
    """Drop-in pipeline backed by an OracleSurface; used to verify the
    controller against brute-force grid search."""

    SENTENCE_SECONDS = 2.5
    TOKEN_SECONDS = 0.625

    def __init__(self, surface: OracleSurface, initial_estimate_db: float = -8.0,
                 in_silence: bool = False):
        self.surface = surface
        self._initial = initial_estimate_db
        self.in_silence = in_silence
        self.ledger = BudgetLedger()
        self._recorded_train: set[float] = set()

    def initial_estimate(self) -> float:
        return self._initial

    def approx_rate(self, snr: float, n_train_tokens: int = 120,
                    n_test_tokens: int = 25, presentations: int = 3
                    ) -> tuple[float, int]:
        if ("approx_train", float(snr)) not in self.ledger.recorded_sets:
            self.ledger.record("approx_train", float(snr),
                               n_train_tokens * self.TOKEN_SECONDS)
            self.ledger.record("approx_test", float(snr),
                               n_test_tokens * presentations * self.TOKEN_SECONDS)
        return self.surface.rate(snr, snr), n_test_tokens * presentations

    def cell_rate(self, train_snr: float, test_snr: float,
                  n_train: int | None = None, n_test: int | None = None) -> float:
        n_train = n_train or 120
        n_test = n_test or 20
        if ("train", float(train_snr)) not in self.ledger.recorded_sets:
            self.ledger.record("train", float(train_snr),
                               n_train * self.SENTENCE_SECONDS)
            self._recorded_train.add(float(train_snr))
        if ("test", float(test_snr)) not in self.ledger.recorded_sets:
            self.ledger.record("test", float(test_snr),
                               n_test * self.SENTENCE_SECONDS)
        return self.surface.rate(train_snr, test_snr)

    def multi_rate(self, snr_pair, test_snr: float,
                   n_train: int | None = None, n_test: int | None = None) -> float:
        a, b = snr_pair
        missing = {float(a), float(b)} - self._recorded_train
        if missing:
            raise DarfError(f"multicondition needs recorded SNRs, missing {missing}")
        # pooled training is at least as good as the better of the two rows
        return max(self.surface.rate(a, test_snr), self.surface.rate(b, test_snr))

    @property
    def recorded_train_snrs(self) -> list[float]:
        return sorted(self._recorded_train)
