"""Procedural matrix-sentence corpus, masker synthesis, and calibrated SNR mixing.

All levels are in dB SPL referred to a calibration convention: a full-scale
1 kHz sine corresponds to ``calibration`` dB SPL.  Every generator is a pure
function of its spec and seed, so identical inputs yield bit-identical audio.
"""

from __future__ import annotations

import wave as _wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16000
DEFAULT_CALIBRATION_DBSPL = 130.0

#: slot order of the matrix sentence
WORD_CLASSES = ("name", "verb", "number", "adjective", "object")
TOKENS_PER_CLASS = 10

SILENCE_LEVEL = float("-inf")


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    """Calibrated sampled audio; mono shape (n,), stereo shape (n, 2)."""

    samples: np.ndarray
    sample_rate: int
    calibration: float = DEFAULT_CALIBRATION_DBSPL

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim not in (1, 2) or (s.ndim == 2 and s.shape[1] not in (1, 2)):
            raise AudioError("waveform must be mono (n,) or stereo (n, 2)")
        if not np.all(np.isfinite(s)):
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        object.__setattr__(self, "samples", s)

    @property
    def n_channels(self) -> int:
        return 1 if self.samples.ndim == 1 else self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def channel(self, i: int) -> "Waveform":
        if self.samples.ndim == 1:
            if i != 0:
                raise AudioError("mono waveform has a single channel")
            return self
        return Waveform(self.samples[:, i], self.sample_rate, self.calibration)

    def scaled(self, factor: float) -> "Waveform":
        return Waveform(self.samples * factor, self.sample_rate, self.calibration)


def level_dbspl(waveform: Waveform) -> float:
    """RMS level in dB SPL; all-zero input returns -inf."""
    s = waveform.samples
    if s.size == 0:
        raise AudioError("empty waveform")
    rms = float(np.sqrt(np.mean(np.square(s))))
    if rms <= 0.0:
        return SILENCE_LEVEL
    # full-scale sine (rms 1/sqrt(2)) sits at the calibration level
    return waveform.calibration + 20.0 * np.log10(rms * np.sqrt(2.0))


def set_level(waveform: Waveform, target_dbspl: float) -> Waveform:
    current = level_dbspl(waveform)
    if not np.isfinite(current):
        raise AudioError("cannot set the level of silence")
    return waveform.scaled(10.0 ** ((target_dbspl - current) / 20.0))


@dataclass(frozen=True)
class Transcript:
    """Word ids in syntax order; a word id is '<class>:<index>'."""

    words: tuple[str, ...]

    @staticmethod
    def word_id(class_name: str, index: int) -> str:
        return f"{class_name}:{index}"


@dataclass(frozen=True)
class CorpusParams:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    token_duration_s: float = 0.4
    word_gap_s: float = 0.025
    sentence_gap_s: float = 0.4
    token_pad_s: float = 0.1125  # leading/trailing pad of an isolated token
    calibration: float = DEFAULT_CALIBRATION_DBSPL
    token_level_dbspl: float = 65.0


@dataclass(frozen=True)
class MatrixCorpus:
    """Five word classes x ten synthetic tokens, all sharing one sample rate."""

    params: CorpusParams
    seed: int
    tokens: dict[str, np.ndarray] = field(repr=False)

    @property
    def sample_rate(self) -> int:
        return self.params.sample_rate

    def token_samples(self, class_name: str, index: int) -> np.ndarray:
        if class_name not in WORD_CLASSES:
            raise AudioError(f"unknown word class {class_name!r}")
        if not 0 <= index < TOKENS_PER_CLASS:
            raise AudioError(f"token index {index} out of range")
        return self.tokens[Transcript.word_id(class_name, index)]

    @property
    def sentence_seconds(self) -> float:
        """Audio budget of one rendered sentence including its gap share."""
        p = self.params
        return 5 * p.token_duration_s + 4 * p.word_gap_s + p.sentence_gap_s

    @property
    def token_seconds(self) -> float:
        """Audio budget of one isolated token including padding."""
        p = self.params
        return p.token_duration_s + 2 * p.token_pad_s


def _formant_weights(freqs: np.ndarray, centers, widths, gains) -> np.ndarray:
    w = np.zeros_like(freqs)
    for c, bw, g in zip(centers, widths, gains):
        w += g * np.exp(-0.5 * ((freqs - c) / bw) ** 2)
    return w + 0.02


def _synthesize_token(params: CorpusParams, seed: int, class_id: int, index: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 7919, class_id, index])
    fs = params.sample_rate
    n = int(round(params.token_duration_s * fs))
    t = np.arange(n) / fs

    # systematically spread f0 and formants so the 10 tokens of a class stay
    # distinguishable; seeded jitter decorrelates different corpus seeds
    f0 = 105.0 + 14.0 * index + rng.uniform(-3.0, 3.0)
    f0_slope = -0.15 + 0.06 * class_id + rng.uniform(-0.03, 0.03)  # octaves/s
    f1 = 320.0 + 55.0 * ((3 * index + class_id) % 10) + rng.uniform(-15.0, 15.0)
    f2 = 1000.0 + 140.0 * ((7 * index + 3 * class_id) % 10) + rng.uniform(-40.0, 40.0)
    f3 = 2400.0 + 90.0 * ((index + 4 * class_id) % 7) + rng.uniform(-50.0, 50.0)
    am_rate = 2.5 + 0.7 * class_id + 0.25 * index

    inst_f0 = f0 * 2.0 ** (f0_slope * t)
    phase = 2.0 * np.pi * np.cumsum(inst_f0) / fs

    nyq = 0.45 * fs
    n_harm = max(3, int(nyq / np.max(inst_f0)))
    sig = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * f0
        if fk >= nyq:
            break
        w = _formant_weights(np.array([fk]), (f1, f2, f3),
                             (110.0, 160.0, 240.0), (1.0, 0.7, 0.35))[0]
        sig += (w / k ** 0.3) * np.sin(k * phase)

    # syllable-like amplitude modulation plus attack/decay envelope
    env = 1.0 + 0.35 * np.sin(2.0 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    attack = int(0.03 * fs)
    decay = int(0.05 * fs)
    ramp = np.ones(n)
    ramp[:attack] = np.sin(0.5 * np.pi * np.arange(attack) / attack) ** 2
    ramp[n - decay:] = np.cos(0.5 * np.pi * np.arange(decay) / decay) ** 2
    sig *= env * ramp

    rms = np.sqrt(np.mean(sig ** 2))
    sig *= 0.05 / max(rms, 1e-12)
    return sig


def synthesize_corpus(seed: int = 1, params: CorpusParams | None = None) -> MatrixCorpus:
    """Build the 50-token closed-vocabulary corpus; deterministic per seed."""
    params = params or CorpusParams()
    if params.token_duration_s <= 0:
        raise AudioError("token duration must be positive")
    tokens = {}
    # target RMS so that every token sits at token_level_dbspl
    rms_target = 10.0 ** ((params.token_level_dbspl - params.calibration) / 20.0) / np.sqrt(2.0)
    for class_id, class_name in enumerate(WORD_CLASSES):
        for index in range(TOKENS_PER_CLASS):
            sig = _synthesize_token(params, seed, class_id, index)
            sig = sig / np.sqrt(np.mean(sig ** 2)) * rms_target
            tokens[Transcript.word_id(class_name, index)] = sig
    return MatrixCorpus(params=params, seed=seed, tokens=tokens)


def render_sentence(corpus: MatrixCorpus, slot_indices) -> tuple[Waveform, Transcript]:
    """Concatenate one token per class in syntax order, with word gaps and a
    trailing sentence gap."""
    if len(slot_indices) != len(WORD_CLASSES):
        raise AudioError("a sentence needs exactly five slot indices")
    p = corpus.params
    fs = p.sample_rate
    gap = np.zeros(int(round(p.word_gap_s * fs)))
    tail = np.zeros(int(round(p.sentence_gap_s * fs)))
    pieces = []
    words = []
    for class_name, idx in zip(WORD_CLASSES, slot_indices):
        idx = int(idx)
        pieces.append(corpus.token_samples(class_name, idx))
        pieces.append(gap)
        words.append(Transcript.word_id(class_name, idx))
    pieces[-1] = tail  # replace last word gap by the sentence gap
    samples = np.concatenate(pieces)
    return Waveform(samples, fs, p.calibration), Transcript(tuple(words))


def render_token(corpus: MatrixCorpus, class_name: str, index: int) -> tuple[Waveform, Transcript]:
    """Isolated word token with leading/trailing padding."""
    p = corpus.params
    fs = p.sample_rate
    pad = np.zeros(int(round(p.token_pad_s * fs)))
    samples = np.concatenate([pad, corpus.token_samples(class_name, index), pad])
    return Waveform(samples, fs, p.calibration), Transcript((Transcript.word_id(class_name, index),))


# ---------------------------------------------------------------------------
# maskers
# ---------------------------------------------------------------------------

MASKER_KINDS = ("silence", "stationary", "fluctuating", "babble")


@dataclass(frozen=True)
class MaskerSpec:
    kind: str
    level_dbspl: float = 65.0
    gap_max_s: float = 0.25
    gap_depth_db: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MASKER_KINDS:
            raise AudioError(f"unknown masker kind {self.kind!r}")
        if not 0.0 <= self.level_dbspl <= 120.0:
            raise AudioError("masker level outside [0, 120] dB SPL")
        if self.gap_depth_db <= 0:
            raise AudioError("gap depth must be positive")

    @property
    def is_silence(self) -> bool:
        return self.kind == "silence"


def _speech_shaped_noise(rng, n: int, fs: int) -> np.ndarray:
    """White noise spectrally shaped to a speech-like long-term spectrum."""
    x = rng.standard_normal(n)
    spec = np.fft.rfft(x)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    shape = np.sqrt(f ** 2 / (f ** 2 + 120.0 ** 2))  # highpass rumble cut
    shape *= (1.0 + (f / 500.0) ** 2) ** -0.7        # LTASS-like tilt
    y = np.fft.irfft(spec * shape, n)
    return y / max(np.sqrt(np.mean(y ** 2)), 1e-12)


def _gap_gate(rng, n: int, fs: int, gap_max_s: float,
              gap_depth_db: float) -> np.ndarray:
    """On/off gate with speech-pause-like gaps of up to gap_max_s seconds,
    gated down by gap_depth_db (finite depth bounds the listening-in-the-gaps
    advantage)."""
    gate = np.ones(n)
    ramp_n = max(1, int(0.005 * fs))
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_n) / ramp_n)
    pos = int(rng.uniform(0, 0.3) * fs)
    floor = 10.0 ** (-gap_depth_db / 20.0)
    while pos < n:
        on = int(rng.uniform(0.15, 0.6) * fs)
        off = int(rng.uniform(0.04, gap_max_s) * fs)
        a = min(pos + on, n)
        b = min(a + off, n)
        gate[a:b] = floor
        if a < n:
            m = min(ramp_n, n - a)
            gate[a:a + m] = np.maximum(floor, 1.0 - ramp[:m] * (1.0 - floor))
        if b < n:
            m = min(ramp_n, n - b)
            gate[b:b + m] = np.minimum(1.0, floor + ramp[:m] * (1.0 - floor))
        pos = b
    return gate


def generate_masker(spec: MaskerSpec, duration_s: float, seed: int | None = None,
                    sample_rate: int = DEFAULT_SAMPLE_RATE,
                    calibration: float = DEFAULT_CALIBRATION_DBSPL) -> Waveform:
    """Render a masker at spec.level_dbspl RMS; pure in (spec, seed)."""
    if duration_s <= 0:
        raise AudioError("masker duration must be positive")
    seed = spec.seed if seed is None else seed
    fs = sample_rate
    n = int(round(duration_s * fs))
    rng = np.random.default_rng([seed, 104729, MASKER_KINDS.index(spec.kind)])

    if spec.kind == "silence":
        return Waveform(np.zeros(n), fs, calibration)
    if spec.kind == "stationary":
        sig = _speech_shaped_noise(rng, n, fs)
    elif spec.kind == "fluctuating":
        sig = _speech_shaped_noise(rng, n, fs) * _gap_gate(
            rng, n, fs, spec.gap_max_s, spec.gap_depth_db)
    else:  # babble
        sig = np.zeros(n)
        for _ in range(8):
            stream = _speech_shaped_noise(rng, n, fs)
            env_src = rng.standard_normal(n)
            k = max(3, int(fs / 4))
            env = np.convolve(np.abs(env_src), np.ones(k) / k, mode="same")
            env = 0.4 + 0.6 * env / max(env.max(), 1e-12)
            sig += stream * env
    w = Waveform(sig, fs, calibration)
    return set_level(w, spec.level_dbspl)


# ---------------------------------------------------------------------------
# mixing and the two-source spatial layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SceneLayout:
    tag: str = "S0N0"  # S0 | S0N0 | S0N90
    itd_s: float = 0.00065
    ild_db: float = 6.0

    def __post_init__(self):
        if self.tag not in ("S0", "S0N0", "S0N90"):
            raise AudioError(f"unknown layout {self.tag!r}")
        if self.itd_s < 0 or self.ild_db < 0:
            raise AudioError("itd and ild must be non-negative")


def masker_excerpt(masker: Waveform, n_samples: int, rng) -> Waveform:
    """Fresh random excerpt (with wraparound) of a longer masker recording."""
    m = masker.samples
    if m.ndim != 1:
        raise AudioError("masker must be mono")
    start = int(rng.integers(0, max(1, m.shape[0])))
    idx = (start + np.arange(n_samples)) % m.shape[0]
    return Waveform(m[idx], masker.sample_rate, masker.calibration)


def prepare_mixture(speech: Waveform, masker: Waveform, snr_db: float, rng
                    ) -> tuple[Waveform, Waveform]:
    """Scale speech against the fixed-level masker and draw a fresh excerpt.

    Returns the scaled speech and the matching masker excerpt, unsummed, so
    spatialization and test-mode SNR bookkeeping can keep the components
    apart.  In silence snr_db is the absolute speech level in dB SPL.
    """
    if speech.sample_rate != masker.sample_rate:
        raise AudioError("sample-rate mismatch between speech and masker")
    excerpt = masker_excerpt(masker, speech.n_samples, rng)
    mlevel = level_dbspl(excerpt) if excerpt.n_samples else SILENCE_LEVEL
    if not np.isfinite(mlevel):
        return set_level(speech, snr_db), excerpt
    return set_level(speech, mlevel + snr_db), excerpt


def mix_at_snr(speech: Waveform, masker: Waveform, snr_db: float, rng) -> Waveform:
    sp, ex = prepare_mixture(speech, masker, snr_db, rng)
    return Waveform(sp.samples + ex.samples, sp.sample_rate, sp.calibration)


def _delay(samples: np.ndarray, n: int) -> np.ndarray:
    if n <= 0:
        return samples
    out = np.zeros_like(samples)
    out[n:] = samples[:-n]
    return out


def spatialize(speech: Waveform, masker: Waveform | None, layout: SceneLayout) -> Waveform:
    """Build the stereo scene from mono speech and masker components.

    S0N0 is diotic; S0N90 lateralizes the masker to the left, so the right
    (far) channel receives it delayed by the itd and attenuated by the ild.
    """
    if speech.n_channels != 1 or (masker is not None and masker.n_channels != 1):
        raise AudioError("spatialize expects mono components")
    fs = speech.sample_rate
    s = speech.samples
    if layout.tag == "S0" or masker is None:
        stereo = np.stack([s, s], axis=1)
        return Waveform(stereo, fs, speech.calibration)
    m = masker.samples
    if m.shape[0] != s.shape[0]:
        raise AudioError("speech and masker length mismatch")
    if layout.tag == "S0N0":
        mono = s + m
        stereo = np.stack([mono, mono], axis=1)
    else:  # S0N90, masker from the left
        delay_n = int(round(layout.itd_s * fs))
        att = 10.0 ** (-layout.ild_db / 20.0)
        left = s + m
        right = s + att * _delay(m, delay_n)
        stereo = np.stack([left, right], axis=1)
    return Waveform(stereo, fs, speech.calibration)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def write_wav(path, waveform: Waveform) -> None:
    """16-bit PCM WAV export."""
    s = np.atleast_2d(waveform.samples.T).T  # (n, ch)
    data = np.clip(s, -1.0, 1.0)
    pcm = (data * 32767.0).astype("<i2")
    with _wave.open(str(path), "wb") as f:
        f.setnchannels(pcm.shape[1])
        f.setsampwidth(2)
        f.setframerate(waveform.sample_rate)
        f.writeframes(pcm.tobytes())


def export_corpus(corpus: MatrixCorpus, out_dir) -> Path:
    """Write all tokens as WAV files plus a plain-text manifest table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["token_id\tclass\tfile\tduration_s"]
    for class_name in WORD_CLASSES:
        for index in range(TOKENS_PER_CLASS):
            wid = Transcript.word_id(class_name, index)
            fname = f"{class_name}_{index}.wav"
            w = Waveform(corpus.token_samples(class_name, index),
                         corpus.sample_rate, corpus.params.calibration)
            write_wav(out / fname, w)
            lines.append(f"{wid}\t{class_name}\t{fname}\t{w.duration:.4f}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
