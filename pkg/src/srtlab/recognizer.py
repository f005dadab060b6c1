"""Whole-word GMM-HMM training (segmental Viterbi) and grammar-constrained
Viterbi decoding for the matrix sentence task."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio import TOKENS_PER_CLASS, WORD_CLASSES, Transcript

SILENCE = "<sil>"

MODEL_MAGIC = "SRTLAB-AM"
MODEL_VERSION = 1

LOG_ZERO = -1e30


class RecognizerError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    n_states: int = 6
    sil_states: int = 3
    n_mix: int = 2
    n_iterations: int = 6
    split_iteration: int = 3      # iteration after which single Gaussians split
    var_floor_frac: float = 1e-3
    self_loop_init: float = 0.6
    use_silence: bool = True


@dataclass(frozen=True)
class Grammar:
    mode: str = "sentence"          # sentence | single-class
    class_name: str = "name"
    use_silence: bool = True

    def __post_init__(self):
        if self.mode not in ("sentence", "single-class"):
            raise RecognizerError(f"unknown grammar mode {self.mode!r}")
        if self.class_name not in WORD_CLASSES:
            raise RecognizerError(f"unknown word class {self.class_name!r}")

    def groups(self) -> list[list[str]]:
        """Lattice groups in temporal order; each group is a word alternative list."""
        if self.mode == "sentence":
            core = [[Transcript.word_id(c, i) for i in range(TOKENS_PER_CLASS)]
                    for c in WORD_CLASSES]
        else:
            core = [[Transcript.word_id(self.class_name, i)
                     for i in range(TOKENS_PER_CLASS)]]
        if self.use_silence:
            return [[SILENCE]] + core + [[SILENCE]]
        return core

    def vocabulary(self) -> list[str]:
        if self.mode == "sentence":
            return [Transcript.word_id(c, i)
                    for c in WORD_CLASSES for i in range(TOKENS_PER_CLASS)]
        return [Transcript.word_id(self.class_name, i) for i in range(TOKENS_PER_CLASS)]

    def scored_slots(self) -> int:
        return 5 if self.mode == "sentence" else 1


@dataclass
class ScoreCounts:
    words_presented: int = 0
    words_correct: int = 0

    @property
    def rate(self) -> float:
        if self.words_presented == 0:
            return float("nan")
        return self.words_correct / self.words_presented

    def add(self, other: "ScoreCounts") -> None:
        self.words_presented += other.words_presented
        self.words_correct += other.words_correct


def score(reference: Transcript, hypothesis: Transcript) -> ScoreCounts:
    """Positional word-identity comparison."""
    if len(reference.words) != len(hypothesis.words):
        raise RecognizerError("slot-count mismatch between reference and hypothesis")
    correct = sum(1 for r, h in zip(reference.words, hypothesis.words) if r == h)
    return ScoreCounts(words_presented=len(reference.words), words_correct=correct)


# ---------------------------------------------------------------------------
# acoustic model
# ---------------------------------------------------------------------------

@dataclass
class AcousticModel:
    """Left-to-right whole-word HMMs with diagonal-covariance GMM states.

    All unit states are concatenated; ``unit_slices`` maps a unit name to its
    (start, n_states) block in the flat state arrays.
    """

    units: tuple[str, ...]
    unit_slices: dict[str, tuple[int, int]]
    log_weights: np.ndarray       # (S, M)
    means: np.ndarray             # (S, M, D)
    variances: np.ndarray         # (S, M, D)
    log_self: np.ndarray          # (S,)
    log_next: np.ndarray          # (S,)
    train_snrs: tuple[float, ...] = ()
    training_loglik: tuple[float, ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.means.shape[2]

    @property
    def n_states(self) -> int:
        return self.means.shape[0]

    def unit_states(self, unit: str) -> np.ndarray:
        start, n = self.unit_slices[unit]
        return np.arange(start, start + n)

    def state_logliks(self, X: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Emission log-likelihoods (frames x selected states)."""
        if X.shape[1] != self.dim:
            raise RecognizerError(
                f"feature dim {X.shape[1]} does not match model dim {self.dim}")
        mu = self.means[states]          # (K, M, D)
        var = self.variances[states]
        logw = self.log_weights[states]  # (K, M)
        K, M, D = mu.shape
        A = (-0.5 / var).reshape(K * M, D)
        B = (mu / var).reshape(K * M, D)
        c = -0.5 * (D * np.log(2.0 * np.pi)
                    + np.sum(np.log(var), axis=2)
                    + np.sum(mu * mu / var, axis=2))      # (K, M)
        comp = X ** 2 @ A.T + X @ B.T                     # (T, K*M)
        comp = comp.reshape(X.shape[0], K, M) + c[None] + logw[None]
        if M == 1:
            return comp[:, :, 0]
        out = comp[:, :, 0]
        for m in range(1, M):
            out = np.logaddexp(out, comp[:, :, m])
        return out

    def component_logliks(self, X: np.ndarray, state: int) -> np.ndarray:
        """Per-component log-likelihoods for one state (frames x M)."""
        mu = self.means[state]
        var = self.variances[state]
        diff = X[:, None, :] - mu[None]
        ll = -0.5 * (self.dim * np.log(2.0 * np.pi)
                     + np.sum(np.log(var), axis=1)[None]
                     + np.sum(diff * diff / var[None], axis=2))
        return ll + self.log_weights[state][None]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _chain_units(words: list[str], topology: Topology) -> list[str]:
    if topology.use_silence:
        return [SILENCE] + list(words) + [SILENCE]
    return list(words)


def _viterbi_linear(em: np.ndarray, log_self: np.ndarray, log_next: np.ndarray
                    ) -> tuple[np.ndarray, float]:
    """Forced alignment: start in state 0, end in state L-1, no skips."""
    T, L = em.shape
    if T < L:
        raise RecognizerError("utterance shorter than its state chain")
    delta = np.full(L, LOG_ZERO)
    delta[0] = em[0, 0]
    bp = np.zeros((T, L), dtype=np.int32)
    for t in range(1, T):
        stay = delta + log_self
        adv = np.full(L, LOG_ZERO)
        adv[1:] = delta[:-1] + log_next[:-1]
        take_adv = adv > stay
        bp[t] = np.where(take_adv, np.arange(L) - 1, np.arange(L))
        delta = em[t] + np.where(take_adv, adv, stay)
    path = np.empty(T, dtype=np.int32)
    path[-1] = L - 1
    for t in range(T - 1, 0, -1):
        path[t - 1] = bp[t, path[t]]
    return path, float(delta[L - 1])


class _Accumulator:
    def __init__(self, n_states: int, n_mix: int, dim: int):
        self.occ = np.zeros((n_states, n_mix))
        self.sum = np.zeros((n_states, n_mix, dim))
        self.sumsq = np.zeros((n_states, n_mix, dim))
        self.stay = np.zeros(n_states)
        self.advance = np.zeros(n_states)


def _check_coverage(dataset, vocab) -> None:
    counts = {w: 0 for w in vocab}
    for _, transcript in dataset:
        for w in transcript.words:
            if w in counts:
                counts[w] += 1
    missing = [w for w, c in counts.items() if c < 2]
    if missing:
        raise RecognizerError(
            "insufficient training coverage for: " + ", ".join(sorted(missing)))


def _flat_start(dataset, vocab, topology: Topology) -> AcousticModel:
    units = tuple(vocab) + ((SILENCE,) if topology.use_silence else ())
    unit_slices = {}
    start = 0
    for u in units:
        n = topology.sil_states if u == SILENCE else topology.n_states
        unit_slices[u] = (start, n)
        start += n
    S = start
    D = dataset[0][0].shape[1]
    acc_sum = np.zeros((S, D))
    acc_sq = np.zeros((S, D))
    acc_n = np.zeros(S)
    g_sum = np.zeros(D)
    g_sq = np.zeros(D)
    g_n = 0
    for X, transcript in dataset:
        chain = _chain_units(list(transcript.words), topology)
        state_ids = np.concatenate([
            np.arange(unit_slices[u][0], unit_slices[u][0] + unit_slices[u][1])
            for u in chain])
        T = X.shape[0]
        bounds = np.linspace(0, T, state_ids.size + 1).astype(int)
        for k, s in enumerate(state_ids):
            seg = X[bounds[k]:bounds[k + 1]]
            if seg.shape[0] == 0:
                continue
            acc_sum[s] += seg.sum(axis=0)
            acc_sq[s] += (seg ** 2).sum(axis=0)
            acc_n[s] += seg.shape[0]
        g_sum += X.sum(axis=0)
        g_sq += (X ** 2).sum(axis=0)
        g_n += T
    g_mean = g_sum / g_n
    g_var = g_sq / g_n - g_mean ** 2
    if np.all(g_var <= 0):
        raise RecognizerError("degenerate training data: all frames identical")
    floor = np.maximum(topology.var_floor_frac * g_var, 1e-8)
    means = np.where(acc_n[:, None] > 0, acc_sum / np.maximum(acc_n, 1)[:, None],
                     g_mean[None])
    var = np.where(acc_n[:, None] > 0,
                   acc_sq / np.maximum(acc_n, 1)[:, None] - means ** 2,
                   g_var[None])
    var = np.maximum(var, floor[None])
    p_self = topology.self_loop_init
    model = AcousticModel(
        units=units,
        unit_slices=unit_slices,
        log_weights=np.zeros((S, 1)),
        means=means[:, None, :],
        variances=var[:, None, :],
        log_self=np.full(S, np.log(p_self)),
        log_next=np.full(S, np.log(1.0 - p_self)),
    )
    model._var_floor = floor  # type: ignore[attr-defined]
    return model


def _split_mixtures(model: AcousticModel) -> AcousticModel:
    sd = np.sqrt(model.variances)
    means = np.concatenate([model.means - 0.2 * sd, model.means + 0.2 * sd], axis=1)
    variances = np.concatenate([model.variances, model.variances], axis=1)
    M = model.log_weights.shape[1]
    logw = np.concatenate([model.log_weights, model.log_weights], axis=1) - np.log(2.0)
    out = AcousticModel(
        units=model.units, unit_slices=model.unit_slices,
        log_weights=logw, means=means, variances=variances,
        log_self=model.log_self.copy(), log_next=model.log_next.copy(),
        train_snrs=model.train_snrs,
    )
    out._var_floor = model._var_floor  # type: ignore[attr-defined]
    return out


def train(dataset, topology: Topology | None = None, vocab=None,
          train_snrs: tuple[float, ...] = ()) -> AcousticModel:
    """Flat start plus segmental Viterbi training.

    ``dataset`` is a sequence of (feature array (T, D), Transcript) pairs.
    Every vocabulary word must occur at least twice.
    """
    topology = topology or Topology()
    dataset = [(np.asarray(X.values if hasattr(X, "values") else X), tr)
               for X, tr in dataset]
    if vocab is None:
        vocab = sorted({w for _, tr in dataset for w in tr.words})
    _check_coverage(dataset, vocab)
    model = _flat_start(dataset, vocab, topology)
    floor = model._var_floor  # type: ignore[attr-defined]

    logliks = []
    for it in range(topology.n_iterations):
        acc = _Accumulator(model.n_states, model.log_weights.shape[1], model.dim)
        total = 0.0
        for X, transcript in dataset:
            chain = _chain_units(list(transcript.words), topology)
            states = np.concatenate([model.unit_states(u) for u in chain])
            em = model.state_logliks(X, states)
            path, ll = _viterbi_linear(em, model.log_self[states],
                                       model.log_next[states])
            total += ll
            gstates = states[path]
            # hard component assignment per frame
            for s in np.unique(gstates):
                frames = X[gstates == s]
                comp_ll = model.component_logliks(frames, s)
                comp = np.argmax(comp_ll, axis=1)
                for m in np.unique(comp):
                    seg = frames[comp == m]
                    acc.occ[s, m] += seg.shape[0]
                    acc.sum[s, m] += seg.sum(axis=0)
                    acc.sumsq[s, m] += (seg ** 2).sum(axis=0)
            stays = gstates[1:] == gstates[:-1]
            np.add.at(acc.stay, gstates[:-1][stays], 1)
            np.add.at(acc.advance, gstates[:-1][~stays], 1)
        logliks.append(total)
        model = _update(model, acc, floor)
        if it + 1 == topology.split_iteration and topology.n_mix > 1 \
                and model.log_weights.shape[1] == 1:
            model = _split_mixtures(model)
    out = AcousticModel(
        units=model.units, unit_slices=model.unit_slices,
        log_weights=model.log_weights, means=model.means,
        variances=model.variances, log_self=model.log_self,
        log_next=model.log_next, train_snrs=tuple(train_snrs),
        training_loglik=tuple(logliks),
    )
    return out


def _update(model: AcousticModel, acc: _Accumulator, floor: np.ndarray) -> AcousticModel:
    S, M = acc.occ.shape
    occ = acc.occ
    state_occ = occ.sum(axis=1)
    means = model.means.copy()
    var = model.variances.copy()
    logw = model.log_weights.copy()
    nz = occ > 0
    means[nz] = acc.sum[nz] / occ[nz][:, None]
    var[nz] = acc.sumsq[nz] / occ[nz][:, None] - means[nz] ** 2
    var = np.maximum(var, floor[None, None, :])
    with np.errstate(divide="ignore"):
        w = np.where(state_occ[:, None] > 0, occ / np.maximum(state_occ, 1)[:, None],
                     np.exp(model.log_weights))
        w = np.maximum(w, 1e-4)
        w = w / w.sum(axis=1, keepdims=True)
        logw = np.log(w)
    trans_n = acc.stay + acc.advance
    p_self = np.where(trans_n > 0, acc.stay / np.maximum(trans_n, 1),
                      np.exp(model.log_self))
    p_self = np.clip(p_self, 0.05, 0.95)
    out = AcousticModel(
        units=model.units, unit_slices=model.unit_slices,
        log_weights=logw, means=means, variances=var,
        log_self=np.log(p_self), log_next=np.log1p(-p_self),
        train_snrs=model.train_snrs,
    )
    out._var_floor = floor  # type: ignore[attr-defined]
    return out


def train_multicondition(dataset_a, dataset_b, topology: Topology | None = None,
                         vocab=None, snr_labels: tuple[float, float] = (0.0, 0.0)
                         ) -> AcousticModel:
    """One combined recognizer trained on the union of two cached sets."""
    if not dataset_a or not dataset_b:
        raise RecognizerError("multicondition training needs both cached sets")
    return train(list(dataset_a) + list(dataset_b), topology, vocab,
                 train_snrs=tuple(snr_labels))


def random_model(dim: int, topology: Topology | None = None, seed: int = 0,
                 grammar: Grammar | None = None) -> AcousticModel:
    """Untrained model with random parameters (chance-floor reference)."""
    topology = topology or Topology()
    grammar = grammar or Grammar()
    rng = np.random.default_rng(seed)
    units = tuple(grammar.vocabulary()) + ((SILENCE,) if topology.use_silence else ())
    unit_slices = {}
    start = 0
    for u in units:
        n = topology.sil_states if u == SILENCE else topology.n_states
        unit_slices[u] = (start, n)
        start += n
    S = start
    return AcousticModel(
        units=units, unit_slices=unit_slices,
        log_weights=np.zeros((S, 1)),
        means=rng.standard_normal((S, 1, dim)),
        variances=np.ones((S, 1, dim)),
        log_self=np.full(S, np.log(0.6)),
        log_next=np.full(S, np.log(0.4)),
    )


# ---------------------------------------------------------------------------
# decoding
# ---------------------------------------------------------------------------

def decode(model: AcousticModel, features, grammar: Grammar) -> Transcript:
    """Viterbi-best word sequence permitted by the grammar lattice."""
    X = np.asarray(features.values if hasattr(features, "values") else features)
    groups = grammar.groups()
    # lattice layout
    state_ids = []        # model state index per lattice position
    word_of = []          # (group idx, word) per lattice position
    initials = []         # lattice positions that start a word, per group
    finals = []           # lattice positions that end a word, per group
    for gi, words in enumerate(groups):
        g_init, g_final = [], []
        for w in words:
            st = model.unit_states(w)
            g_init.append(len(state_ids))
            state_ids.extend(st.tolist())
            g_final.append(len(state_ids) - 1)
            word_of.extend([(gi, w)] * st.size)
        initials.append(np.array(g_init))
        finals.append(np.array(g_final))
    state_ids = np.array(state_ids)
    L = state_ids.size
    T = X.shape[0]
    min_len = sum(min(model.unit_slices[w][1] for w in words) for words in groups)
    if T < min_len:
        raise RecognizerError("utterance shorter than the grammar's minimum path")

    em = model.state_logliks(X, state_ids)
    log_self = model.log_self[state_ids]
    log_next = model.log_next[state_ids]
    is_initial = np.zeros(L, dtype=bool)
    for g in initials:
        is_initial[g] = True

    delta = np.full(L, LOG_ZERO)
    delta[initials[0]] = em[0, initials[0]]
    bp = np.zeros((T, L), dtype=np.int32)
    bp[0] = np.arange(L)
    arange = np.arange(L)
    for t in range(1, T):
        stay = delta + log_self
        adv = np.full(L, LOG_ZERO)
        adv[1:] = delta[:-1] + log_next[:-1]
        adv[is_initial] = LOG_ZERO
        best = np.where(adv > stay, adv, stay)
        pred = np.where(adv > stay, arange - 1, arange)
        for gi in range(1, len(groups)):
            f = finals[gi - 1]
            scores = delta[f] + log_next[f]
            j = int(np.argmax(scores))
            entry = scores[j]
            ini = initials[gi]
            better = entry > best[ini]
            best[ini] = np.where(better, entry, best[ini])
            pred[ini] = np.where(better, f[j], pred[ini])
        delta = em[t] + best
        bp[t] = pred

    f_last = finals[-1]
    end = int(f_last[np.argmax(delta[f_last])])
    path = np.empty(T, dtype=np.int32)
    path[-1] = end
    for t in range(T - 1, 0, -1):
        path[t - 1] = bp[t, path[t]]
    words_out = []
    for gi in range(len(groups)):
        seen = next(word_of[p][1] for p in path if word_of[p][0] == gi)
        words_out.append(seen)
    hyp = [w for w in words_out if w != SILENCE]
    return Transcript(tuple(hyp))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(path, model: AcousticModel) -> None:
    meta = {
        "magic": MODEL_MAGIC,
        "version": MODEL_VERSION,
        "units": list(model.units),
        "unit_slices": {u: list(s) for u, s in model.unit_slices.items()},
        "train_snrs": list(model.train_snrs),
        "training_loglik": list(model.training_loglik),
        "dim": model.dim,
    }
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
             log_weights=model.log_weights, means=model.means,
             variances=model.variances, log_self=model.log_self,
             log_next=model.log_next)


def load_model(path) -> AcousticModel:
    data = np.load(path, allow_pickle=False)
    meta = json.loads(bytes(data["meta"]).decode())
    if meta.get("magic") != MODEL_MAGIC:
        raise RecognizerError("not a srtlab acoustic model file")
    if meta.get("version") != MODEL_VERSION:
        raise RecognizerError(f"unsupported model version {meta.get('version')}")
    return AcousticModel(
        units=tuple(meta["units"]),
        unit_slices={u: tuple(s) for u, s in meta["unit_slices"].items()},
        log_weights=data["log_weights"], means=data["means"],
        variances=data["variances"], log_self=data["log_self"],
        log_next=data["log_next"],
        train_snrs=tuple(meta["train_snrs"]),
        training_loglik=tuple(meta["training_loglik"]),
    )
