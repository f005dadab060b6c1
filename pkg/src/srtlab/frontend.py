"""Spectro-temporal front end: log-Mel spectrogram, impairment transform,
separable Gabor filterbank features, normalization, binaural concatenation."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .audio import Waveform


class FrontendError(ValueError):
    pass


# ---------------------------------------------------------------------------
# log-Mel spectrogram
# ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelParams:
    frame_s: float = 0.025
    hop_s: float = 0.010
    n_bands: int = 31
    f_min: float = 64.0
    f_max: float = 8000.0
    floor_db: float = -20.0


@dataclass(frozen=True)
class LogMS:
    values: np.ndarray  # (frames, bands), dB SPL scale
    frame_rate: float
    band_centers: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FrontendError("LogMS values must be finite")
        if np.any(np.diff(self.band_centers) <= 0):
            raise FrontendError("band centers must be strictly increasing")
        if self.frame_rate <= 0:
            raise FrontendError("frame rate must be positive")


@functools.lru_cache(maxsize=32)
def _mel_filterbank(fs: int, n_fft: int, params: MelParams):
    f_max = min(params.f_max, 0.499 * fs)
    edges = mel_to_hz(np.linspace(hz_to_mel(params.f_min), hz_to_mel(f_max),
                                  params.n_bands + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    fb = np.zeros((params.n_bands, freqs.size))
    for b in range(params.n_bands):
        lo, mid, hi = edges[b], edges[b + 1], edges[b + 2]
        up = (freqs - lo) / max(mid - lo, 1e-9)
        down = (hi - freqs) / max(hi - mid, 1e-9)
        fb[b] = np.clip(np.minimum(up, down), 0.0, None)
    centers = edges[1:-1]
    return fb, centers


def _raw_logms(samples: np.ndarray, fs: int, params: MelParams) -> np.ndarray:
    frame_n = int(round(params.frame_s * fs))
    hop_n = int(round(params.hop_s * fs))
    if samples.shape[0] < frame_n:
        raise FrontendError("waveform shorter than one analysis frame")
    n_frames = 1 + (samples.shape[0] - frame_n) // hop_n
    window = np.hanning(frame_n)
    n_fft = int(2 ** np.ceil(np.log2(frame_n)))
    idx = np.arange(frame_n)[None, :] + hop_n * np.arange(n_frames)[:, None]
    frames = samples[idx] * window
    spec = np.abs(np.fft.rfft(frames, n_fft, axis=1)) ** 2
    fb, _ = _mel_filterbank(fs, n_fft, params)
    energy = spec @ fb.T
    return 10.0 * np.log10(energy + 1e-30)


@functools.lru_cache(maxsize=32)
def _calibration_offset(fs: int, params: MelParams) -> float:
    """Offset that maps a full-scale 1 kHz sine to its calibration level."""
    n = int(round(0.5 * fs))
    t = np.arange(n) / fs
    sine = np.sin(2.0 * np.pi * 1000.0 * t)
    raw = _raw_logms(sine, fs, params)
    return -float(np.max(raw))


def log_mel_spectrogram(waveform: Waveform, params: MelParams | None = None) -> LogMS:
    """LogMS of a mono waveform, referenced so a calibration-level sine peaks
    at its dB SPL level."""
    params = params or MelParams()
    if waveform.n_channels != 1:
        raise FrontendError("log_mel_spectrogram expects mono input; split channels first")
    fs = waveform.sample_rate
    raw = _raw_logms(waveform.samples, fs, params)
    values = raw + _calibration_offset(fs, params) + waveform.calibration
    values = np.maximum(values, params.floor_db)
    n_fft = int(2 ** np.ceil(np.log2(int(round(params.frame_s * fs)))))
    _, centers = _mel_filterbank(fs, n_fft, params)
    return LogMS(values=values, frame_rate=1.0 / params.hop_s, band_centers=centers)


# ---------------------------------------------------------------------------
# hearing impairment
# ---------------------------------------------------------------------------

#: default dB HL -> dB SPL free-field offsets (approximate standard values)
DEFAULT_HL_TO_SPL = (
    (125.0, 22.1), (250.0, 11.4), (500.0, 4.4), (1000.0, 2.4),
    (2000.0, -1.3), (3000.0, -5.8), (4000.0, -5.4), (6000.0, 4.3),
    (8000.0, 12.6),
)


@dataclass(frozen=True)
class AudiogramProfile:
    """Absolute thresholds plus the level-uncertainty parameter."""

    frequencies_hz: tuple[float, ...]
    thresholds_dbhl: tuple[float, ...]
    level_uncertainty_db: float = 0.0
    conversion: tuple[tuple[float, float], ...] = DEFAULT_HL_TO_SPL

    def __post_init__(self):
        f = np.asarray(self.frequencies_hz)
        t = np.asarray(self.thresholds_dbhl)
        if f.size == 0 or f.size != t.size:
            raise FrontendError("audiogram needs matching frequency/threshold lists")
        if np.any(np.diff(f) <= 0):
            raise FrontendError("audiogram frequencies must be increasing")
        if np.any(t < -10.0) or np.any(t > 120.0):
            raise FrontendError("thresholds outside [-10, 120] dB HL")
        if not np.isfinite(self.level_uncertainty_db) or self.level_uncertainty_db < 0:
            raise FrontendError("level uncertainty must be finite and >= 0")

    def thresholds_dbspl(self, at_frequencies) -> np.ndarray:
        """Interpolated absolute thresholds in dB SPL at given frequencies."""
        conv_f, conv_o = map(np.asarray, zip(*self.conversion))
        at = np.asarray(at_frequencies, dtype=float)
        thr = np.interp(at, self.frequencies_hz, self.thresholds_dbhl)
        off = np.interp(at, conv_f, conv_o)
        return thr + off

    @classmethod
    def normal(cls, level_uncertainty_db: float = 0.0) -> "AudiogramProfile":
        freqs = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0)
        return cls(freqs, (0.0,) * len(freqs), level_uncertainty_db)

    @classmethod
    def n3(cls, level_uncertainty_db: float = 0.0) -> "AudiogramProfile":
        """Moderate high-frequency loss, sloping from ~35 dB HL at 250 Hz to
        ~70 dB HL at 6 kHz."""
        freqs = (250.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0, 6000.0)
        thr = (35.0, 40.0, 50.0, 60.0, 65.0, 70.0, 70.0)
        return cls(freqs, thr, level_uncertainty_db)


def load_audiogram(path, level_uncertainty_db: float | None = None) -> AudiogramProfile:
    """Plain-text table: 'frequency_hz threshold_dbhl' per line; an optional
    'uL <value>' line sets the level uncertainty."""
    freqs, thrs, ul = [], [], 0.0
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if parts[0].lower() in ("ul", "level_uncertainty"):
            ul = float(parts[1])
            continue
        freqs.append(float(parts[0]))
        thrs.append(float(parts[1]))
    if level_uncertainty_db is not None:
        ul = level_uncertainty_db
    return AudiogramProfile(tuple(freqs), tuple(thrs), ul)


def apply_absolute_threshold(logms: LogMS, profile: AudiogramProfile) -> LogMS:
    """Erase sub-threshold structure by flooring each band at its absolute
    threshold in dB SPL."""
    thr = profile.thresholds_dbspl(logms.band_centers)
    return LogMS(values=np.maximum(logms.values, thr[None, :]),
                 frame_rate=logms.frame_rate, band_centers=logms.band_centers)


def apply_level_uncertainty(logms: LogMS, ul_db: float, seed: int) -> LogMS:
    """Per-bin zero-mean Gaussian level perturbation with SD ul_db."""
    if ul_db < 0:
        raise FrontendError("level uncertainty must be >= 0")
    if ul_db == 0.0:
        return logms
    rng = np.random.default_rng([seed, 15485863])
    noise = rng.standard_normal(logms.values.shape) * ul_db
    return LogMS(values=logms.values + noise,
                 frame_rate=logms.frame_rate, band_centers=logms.band_centers)


# ---------------------------------------------------------------------------
# separable Gabor filterbank features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SgbfbParams:
    spectral_mod_freqs: tuple[float, ...] = (0.0, 0.031, 0.062, 0.125, 0.25)   # cycles/band
    temporal_mod_freqs: tuple[float, ...] = (0.0, 0.031, 0.062, 0.125, 0.25)   # cycles/frame
    band_step: int = 4        # channel subsampling along the band axis
    max_extent: int = 25      # cap on filter length in bins/frames


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # (frames, dim)
    provenance: str = "mono"  # mono | binaural-concatenated

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise FrontendError("feature values must be finite")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@functools.lru_cache(maxsize=128)
def _gabor_kernel(freq: float, max_extent: int) -> np.ndarray:
    """1-D real Gabor kernel: Hann-windowed cosine, zero-mean for freq > 0."""
    if freq == 0.0:
        n = min(max_extent, 9)
        w = np.hanning(n + 2)[1:-1]
        return w / w.sum()
    n = int(round(1.5 / freq))
    n = min(max(n | 1, 3), max_extent | 1)
    w = np.hanning(n + 2)[1:-1]
    k = np.arange(n) - (n - 1) / 2.0
    b = w * np.cos(2.0 * np.pi * freq * k)
    b -= w * (b.sum() / w.sum())  # remove DC leakage
    norm = np.sqrt(np.sum(b ** 2))
    return b / max(norm, 1e-12)


def sgbfb_features(logms: LogMS, params: SgbfbParams | None = None) -> FeatureMatrix:
    """Spectro-temporal modulation features from separable 1-D Gabor filters."""
    params = params or SgbfbParams()
    x = logms.values
    if x.shape[0] < 1:
        raise FrontendError("need at least one frame")
    n_bands = x.shape[1]
    longest = max(len(_gabor_kernel(f, params.max_extent))
                  for f in params.spectral_mod_freqs)
    if n_bands < longest:
        raise FrontendError("too few bands for the spectral filter extents")
    sel = np.arange(0, n_bands, params.band_step)
    outs = []
    for fs_mod in params.spectral_mod_freqs:
        ks = _gabor_kernel(fs_mod, params.max_extent)
        spec_filtered = correlate1d(x, ks, axis=1, mode="reflect")
        for ft_mod in params.temporal_mod_freqs:
            kt = _gabor_kernel(ft_mod, params.max_extent)
            y = correlate1d(spec_filtered, kt, axis=0, mode="reflect")
            outs.append(y[:, sel])
    return FeatureMatrix(values=np.concatenate(outs, axis=1), provenance="mono")


def mvn(features: FeatureMatrix) -> FeatureMatrix:
    """Per-dimension mean/variance normalization over the utterance."""
    v = features.values
    if v.shape[0] < 2:
        raise FrontendError("mvn needs at least two frames")
    mean = v.mean(axis=0)
    sd = v.std(axis=0)
    out = np.where(sd > 1e-12, (v - mean) / np.where(sd > 1e-12, sd, 1.0), 0.0)
    return FeatureMatrix(values=out, provenance=features.provenance)


def concat_binaural(left: FeatureMatrix, right: FeatureMatrix) -> FeatureMatrix:
    if left.n_frames != right.n_frames:
        raise FrontendError("frame-count mismatch between ears")
    return FeatureMatrix(values=np.concatenate([left.values, right.values], axis=1),
                         provenance="binaural-concatenated")


def dump_csv(path, array: np.ndarray) -> None:
    np.savetxt(path, array, delimiter=",", fmt="%.6f")
