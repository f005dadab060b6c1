"""Exhaustive-grid simulation: recognition map construction and SRT
extraction as the lowest interpolated test SNR reaching the target rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FadeError(ValueError):
    pass


class SrtNotFound(FadeError):
    pass


@dataclass
class RecognitionMap:
    """Sparse word-correct rates over (training SNR x test SNR)."""

    rates: dict[tuple[float, float], float] = field(default_factory=dict)

    def set_rate(self, train_snr: float, test_snr: float, rate: float) -> None:
        if not 0.0 <= rate <= 1.0:
            raise FadeError(f"rate {rate} outside [0, 1]")
        self.rates[(float(train_snr), float(test_snr))] = float(rate)

    def rate(self, train_snr: float, test_snr: float) -> float:
        return self.rates[(float(train_snr), float(test_snr))]

    def evaluated(self, train_snr: float, test_snr: float) -> bool:
        return (float(train_snr), float(test_snr)) in self.rates

    @property
    def train_snrs(self) -> list[float]:
        return sorted({k[0] for k in self.rates})

    @property
    def test_snrs(self) -> list[float]:
        return sorted({k[1] for k in self.rates})

    def row(self, train_snr: float) -> tuple[list[float], list[float]]:
        """Ascending (test_snrs, rates) of one training row."""
        pairs = sorted((te, r) for (tr, te), r in self.rates.items()
                       if tr == float(train_snr))
        if not pairs:
            return [], []
        tests, rates = zip(*pairs)
        return list(tests), list(rates)

    def to_csv(self, path) -> None:
        """Header row of test SNRs, one row per training SNR, NaN where the
        cell was never evaluated."""
        tests = self.test_snrs
        lines = ["train_snr," + ",".join(f"{t:g}" for t in tests)]
        for tr in self.train_snrs:
            cells = [f"{self.rates[(tr, te)]:.6f}" if (tr, te) in self.rates
                     else "nan" for te in tests]
            lines.append(f"{tr:g}," + ",".join(cells))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "RecognitionMap":
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        tests = [float(x) for x in lines[0].split(",")[1:]]
        out = cls()
        for ln in lines[1:]:
            parts = ln.split(",")
            tr = float(parts[0])
            for te, cell in zip(tests, parts[1:]):
                if cell != "nan":
                    out.set_rate(tr, te, float(cell))
        return out

    def to_figure(self, path, target: float = 0.5) -> None:
        """Grayscale rate map mirroring the recognition-map plots; a
        checkerboard marks unevaluated cells."""
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        tests = self.test_snrs
        trains = self.train_snrs
        img = np.full((len(trains), len(tests)), np.nan)
        for i, tr in enumerate(trains):
            for j, te in enumerate(tests):
                if (tr, te) in self.rates:
                    img[i, j] = self.rates[(tr, te)]
        fig, ax = plt.subplots(figsize=(6, 4))
        checker = np.indices(img.shape).sum(axis=0) % 2
        ax.imshow(checker, cmap="gray", vmin=-1.0, vmax=2.0, origin="lower",
                  aspect="auto")
        masked = np.ma.masked_invalid(img)
        im = ax.imshow(masked, cmap="gray", vmin=0.0, vmax=1.0, origin="lower",
                       aspect="auto")
        ax.set_xticks(range(len(tests)), [f"{t:g}" for t in tests])
        ax.set_yticks(range(len(trains)), [f"{t:g}" for t in trains])
        ax.set_xlabel("test SNR (dB)")
        ax.set_ylabel("training SNR (dB)")
        fig.colorbar(im, ax=ax, label="word-correct rate")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


@dataclass(frozen=True)
class SrtEstimate:
    srt: float
    source_rows: tuple[float, ...]
    interpolated: bool
    target: float = 0.5


def row_crossing(test_snrs, rates, target: float = 0.5) -> float | None:
    """Lowest test SNR where the linearly interpolated rate reaches target.

    Exact cell hits win over interpolation; None when every rate sits on one
    side of the target.
    """
    test_snrs = list(test_snrs)
    rates = list(rates)
    if not rates:
        raise FadeError("row_crossing needs at least one rate")
    order = np.argsort(test_snrs)
    te = np.asarray(test_snrs, dtype=float)[order]
    ra = np.asarray(rates, dtype=float)[order]
    for x, r in zip(te, ra):
        if r == target:
            return float(x)
    for i in range(te.size - 1):
        lo, hi = ra[i], ra[i + 1]
        if (lo - target) * (hi - target) < 0:
            frac = (target - lo) / (hi - lo)
            return float(te[i] + frac * (te[i + 1] - te[i]))
    return None


def srt_from_map(rec_map: RecognitionMap, target: float = 0.5) -> SrtEstimate:
    """Minimum per-row target crossing over all evaluated training rows."""
    if not rec_map.rates:
        raise FadeError("empty recognition map")
    crossings = {}
    for tr in rec_map.train_snrs:
        tests, rates = rec_map.row(tr)
        c = row_crossing(tests, rates, target)
        if c is not None:
            crossings[tr] = c
    if not crossings:
        raise SrtNotFound(f"no training row crosses the {target:.0%} target")
    srt = min(crossings.values())
    rows = tuple(sorted(tr for tr, c in crossings.items() if c == srt))
    exact = any(rec_map.evaluated(r, srt) for r in rows)
    return SrtEstimate(srt=srt, source_rows=rows, interpolated=not exact,
                       target=target)


# ---------------------------------------------------------------------------
# grid runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridConfig:
    n_train_sentences: int = 960
    n_test_sentences: int = 120
    train_step_db: float = 3.0
    n_train_snrs: int = 11
    extension_floor_rate: float = 0.25
    target_rate: float = 0.5
    max_extensions: int = 6


def evaluate_cell(pipeline, train_snr: float, test_snr: float,
                  n_train: int | None = None, n_test: int | None = None) -> float:
    """Train (or fetch) the model at train_snr and decode mixtures at
    test_snr; returns the word-correct rate."""
    return pipeline.cell_rate(train_snr, test_snr, n_train=n_train, n_test=n_test)


def run_grid(pipeline, center_snr: float | None = None,
             config: GridConfig | None = None,
             train_snrs=None) -> RecognitionMap:
    """Full train x test map around a center SNR (default: the pipeline's
    initial SRT estimate), extending test SNRs downward until rates fall
    below the extension floor."""
    config = config or GridConfig()
    if train_snrs is None:
        if center_snr is None:
            center_snr = pipeline.initial_estimate()
        # one row below the center and the rest above: recognizers trained
        # somewhat above the threshold carry the lowest crossings
        offs = np.arange(config.n_train_snrs) - 1
        train_snrs = [float(center_snr + config.train_step_db * o) for o in offs]
    train_snrs = sorted(float(s) for s in train_snrs)
    if not train_snrs:
        raise FadeError("empty SNR grid")

    rec_map = RecognitionMap()
    test_snrs = list(train_snrs)
    for tr in train_snrs:
        for te in test_snrs:
            rec_map.set_rate(tr, te, pipeline.cell_rate(
                tr, te, n_train=config.n_train_sentences,
                n_test=config.n_test_sentences))
    # extend the test range downward until every row is below the floor,
    # and upward until some row reaches the target at its highest test SNR
    step = config.train_step_db

    def add_column(te):
        test_snrs.append(te)
        for tr in train_snrs:
            rec_map.set_rate(tr, te, pipeline.cell_rate(
                tr, te, n_train=config.n_train_sentences,
                n_test=config.n_test_sentences))

    for _ in range(config.max_extensions):
        floor_rates = [rec_map.rate(tr, min(test_snrs)) for tr in train_snrs]
        if all(r < config.extension_floor_rate for r in floor_rates):
            break
        add_column(min(test_snrs) - step)
    for _ in range(config.max_extensions):
        top_rates = [rec_map.rate(tr, max(test_snrs)) for tr in train_snrs]
        if any(r >= config.target_rate for r in top_rates):
            break
        add_column(max(test_snrs) + step)
    return rec_map
