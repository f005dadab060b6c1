"""Benchmark harness: sentence-count sweeps against an exhaustive-grid
reference, summary statistics, and the accuracy/speed tradeoff (AST)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .audio import MaskerSpec, SceneLayout
from .darf import DarfConfig, run_darf
from .devices import DeviceDescriptor
from .frontend import AudiogramProfile
from .pipeline import Scenario


class BenchError(ValueError):
    pass


def ast(s: float, b: float, t: float) -> float:
    """Accuracy/speed tradeoff: max(1, s) * max(1, |b|) * t, with s and the
    bias magnitude clamped below at 1 dB."""
    if t < 0:
        raise BenchError("negative simulation time")
    if s < 0:
        raise BenchError("negative standard deviation")
    return max(1.0, float(s)) * max(1.0, abs(float(b))) * float(t)


@dataclass(frozen=True)
class AstRecord:
    s: float        # SD of simulated SRTs, dB
    b: float        # bias to reference, dB
    t: float        # simulation time, s
    ast: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "ast", ast(self.s, self.b, self.t))


@dataclass(frozen=True)
class StatsSummary:
    rmse: float
    bias: float
    r2: float | None
    n: int


def compare(pred, ref) -> StatsSummary:
    """RMSE, bias (pred minus ref), and squared Pearson correlation."""
    pred = np.asarray(pred, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if pred.shape != ref.shape or pred.ndim != 1:
        raise BenchError("compare() needs two equal-length vectors")
    if pred.size < 2:
        raise BenchError("compare() needs at least two pairs")
    diff = pred - ref
    rmse = float(np.sqrt(np.mean(diff ** 2)))
    bias = float(np.mean(diff))
    if np.ptp(ref) == 0 or np.ptp(pred) == 0:
        r2 = None
    else:
        r2 = float(np.corrcoef(pred, ref)[0, 1] ** 2)
    return StatsSummary(rmse=rmse, bias=bias, r2=r2, n=int(pred.size))


def propagate_sd(s_aided: float, s_unaided: float) -> float:
    """Gaussian error propagation for a difference of two estimates."""
    if s_aided < 0 or s_unaided < 0:
        raise BenchError("standard deviations must be non-negative")
    return float(np.hypot(s_aided, s_unaided))


def benefit(srt_unaided: float, srt_aided: float,
            scenario_unaided: Scenario | None = None,
            scenario_aided: Scenario | None = None) -> float:
    """Device benefit in dB (positive = improvement); when the scenarios are
    given they must agree in everything but the device."""
    if scenario_unaided is not None and scenario_aided is not None:
        a = dataclasses.replace(scenario_unaided,
                                device=DeviceDescriptor(name="identity"),
                                name="")
        b = dataclasses.replace(scenario_aided,
                                device=DeviceDescriptor(name="identity"),
                                name="")
        if a != b:
            raise BenchError("benefit() scenarios differ beyond the device")
    return float(srt_unaided) - float(srt_aided)


# ---------------------------------------------------------------------------
# scenario table rows and sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    """One row of the benchmark condition table."""

    masker_kind: str = "stationary"
    masker_level_dbspl: float = 65.0
    layout: str = "S0N0"
    profile: str = "normal"         # normal | n3 | path to an audiogram file
    device: str = "identity"
    fitting: str = "none"
    reps: int = 8

    def __post_init__(self):
        if self.reps < 1:
            raise BenchError("repetition count must be positive")

    def to_scenario(self, **overrides) -> Scenario:
        if self.profile == "normal":
            profile = AudiogramProfile.normal()
        elif self.profile == "n3":
            profile = AudiogramProfile.n3()
        else:
            from .frontend import load_audiogram
            profile = load_audiogram(self.profile)
        return Scenario(
            masker=MaskerSpec(kind=self.masker_kind,
                              level_dbspl=self.masker_level_dbspl),
            layout=SceneLayout(tag=self.layout),
            profile=profile,
            device=DeviceDescriptor.parse(self.device),
            name=f"{self.masker_kind}-{self.layout}-{self.profile}-{self.device}",
            **overrides)


@dataclass(frozen=True)
class SweepCell:
    n_train: int
    n_test: int
    srt_mean: float
    srt_sd: float
    bias: float
    mean_duration_s: float
    ast: float
    reps: int
    low_confidence: bool


def sweep_counts(make_pipeline, reference_srt: float, train_counts, test_counts,
                 reps: int = 8, base_seed: int = 1,
                 darf_config: DarfConfig | None = None) -> list[SweepCell]:
    """Run the adaptive procedure at every (train, test) sentence-count pair
    and summarize accuracy and cost against the exhaustive-grid reference.

    ``make_pipeline(seed)`` must return a fresh pipeline; the reported
    duration is the total recorded audio (approximation stage included).
    """
    if reps < 2:
        raise BenchError("sweep needs at least two repetitions per cell")
    if reference_srt is None or not np.isfinite(reference_srt):
        raise BenchError("sweep needs a finite reference SRT")
    base = darf_config or DarfConfig()
    cells = []
    for n_train in train_counts:
        for n_test in test_counts:
            cfg = dataclasses.replace(base, n_train_sentences=int(n_train),
                                      n_test_sentences=int(n_test))
            srts = []
            durations = []
            for rep in range(reps):
                pipeline = make_pipeline(base_seed + rep)
                result = run_darf(pipeline, cfg)
                srts.append(result.srt)
                durations.append(result.ledger.total_seconds())
            srts = np.asarray(srts)
            sd = float(np.std(srts, ddof=1))
            bias = float(np.mean(srts) - reference_srt)
            dur = float(np.mean(durations))
            cells.append(SweepCell(
                n_train=int(n_train), n_test=int(n_test),
                srt_mean=float(np.mean(srts)), srt_sd=sd, bias=bias,
                mean_duration_s=dur, ast=ast(sd, bias, dur),
                reps=reps, low_confidence=reps < 3))
    return cells


SWEEP_HEADER = ("n_train,n_test,srt_mean_db,srt_sd_db,bias_db,"
                "mean_duration_s,ast,reps,low_confidence")


def sweep_to_csv(cells: list[SweepCell], path) -> None:
    lines = [SWEEP_HEADER]
    for c in cells:
        lines.append(f"{c.n_train},{c.n_test},{c.srt_mean:.6f},{c.srt_sd:.6f},"
                     f"{c.bias:.6f},{c.mean_duration_s:.3f},{c.ast:.6f},"
                     f"{c.reps},{int(c.low_confidence)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def sweep_from_csv(path) -> list[SweepCell]:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != SWEEP_HEADER:
        raise BenchError(f"{path} is not a sweep table")
    cells = []
    for ln in lines[1:]:
        p = ln.split(",")
        cells.append(SweepCell(
            n_train=int(p[0]), n_test=int(p[1]), srt_mean=float(p[2]),
            srt_sd=float(p[3]), bias=float(p[4]), mean_duration_s=float(p[5]),
            ast=float(p[6]), reps=int(p[7]), low_confidence=bool(int(p[8]))))
    return cells


def sweep_to_figure(cells: list[SweepCell], path) -> None:
    """AST heatmap over the sentence-count grid (SVG)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    trains = sorted({c.n_train for c in cells})
    tests = sorted({c.n_test for c in cells})
    img = np.full((len(trains), len(tests)), np.nan)
    for c in cells:
        img[trains.index(c.n_train), tests.index(c.n_test)] = c.ast
    fig, ax = plt.subplots(figsize=(6, 4))
    im = ax.imshow(np.log10(img), cmap="viridis", origin="lower", aspect="auto")
    ax.set_xticks(range(len(tests)), [str(t) for t in tests])
    ax.set_yticks(range(len(trains)), [str(t) for t in trains])
    ax.set_xlabel("test sentences")
    ax.set_ylabel("training sentences")
    fig.colorbar(im, ax=ax, label="log10 AST")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def best_cell(cells: list[SweepCell]) -> SweepCell:
    """The minimum-AST configuration of a finished sweep."""
    if not cells:
        raise BenchError("empty sweep table")
    return min(cells, key=lambda c: c.ast)
