"""Device-under-test stage between mixing and feature extraction.

Built-in simulants (identity, gain, multiband compressor, delay-and-sum
beamformer) run as causal block processors so that streaming through an
external exchange and offline processing agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .audio import Waveform

DEFAULT_BLOCK_SIZE = 4096


class DeviceError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceDescriptor:
    name: str
    kind: str = "identity"  # identity | gain | compressor | beamformer | external
    gain_db: float = 0.0
    band_gains_db: tuple[float, ...] | None = None
    ratio: float = 2.0
    knee_dbfs: float = -40.0
    attack_s: float = 0.005
    release_s: float = 0.050
    crossovers_hz: tuple[float, ...] = (500.0, 2000.0)
    endpoint: str | None = None

    def __post_init__(self):
        if self.kind not in ("identity", "gain", "compressor", "beamformer", "external"):
            raise DeviceError(f"unknown device kind {self.kind!r}")
        if self.band_gains_db is not None and not np.all(np.isfinite(self.band_gains_db)):
            raise DeviceError("band gains must be finite")
        if not np.isfinite(self.gain_db):
            raise DeviceError("gain must be finite")
        if self.ratio < 1.0:
            raise DeviceError("compression ratio must be >= 1")
        if self.attack_s <= 0 or self.release_s <= 0:
            raise DeviceError("attack and release must be positive")

    @classmethod
    def parse(cls, text: str) -> "DeviceDescriptor":
        """Parse CLI-style specs: 'identity', 'gain:20', 'compressor:3:-40',
        'beamformer', 'external:tcp:host:port'."""
        parts = text.split(":")
        kind = parts[0]
        if kind == "gain":
            return cls(name=text, kind="gain",
                       gain_db=float(parts[1]) if len(parts) > 1 else 20.0)
        if kind == "compressor":
            ratio = float(parts[1]) if len(parts) > 1 else 2.0
            knee = float(parts[2]) if len(parts) > 2 else -40.0
            return cls(name=text, kind="compressor", ratio=ratio, knee_dbfs=knee)
        if kind == "beamformer":
            return cls(name=text, kind="beamformer")
        if kind == "external":
            return cls(name=text, kind="external", endpoint=":".join(parts[1:]))
        if kind == "identity":
            return cls(name="identity", kind="identity")
        raise DeviceError(f"cannot parse device spec {text!r}")


class Device:
    """Causal block processor over stereo float arrays (n, 2)."""

    descriptor: DeviceDescriptor

    def reset(self, sample_rate: int) -> None:
        raise NotImplementedError

    def process_block(self, block: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def process(self, stereo: Waveform, block_size: int = DEFAULT_BLOCK_SIZE) -> Waveform:
        if stereo.n_channels != 2:
            raise DeviceError("device stage expects stereo input")
        self.reset(stereo.sample_rate)
        x = stereo.samples
        out = np.empty_like(x)
        for start in range(0, x.shape[0], block_size):
            blk = x[start:start + block_size]
            out[start:start + blk.shape[0]] = self.process_block(blk)
        return Waveform(out, stereo.sample_rate, stereo.calibration)


class IdentityDevice(Device):
    def __init__(self, descriptor: DeviceDescriptor | None = None):
        self.descriptor = descriptor or DeviceDescriptor(name="identity")

    def reset(self, sample_rate: int) -> None:
        pass

    def process_block(self, block: np.ndarray) -> np.ndarray:
        return block


class GainDevice(Device):
    """Flat or per-band linear amplification."""

    def __init__(self, descriptor: DeviceDescriptor):
        self.descriptor = descriptor
        self._bands = None

    def reset(self, sample_rate: int) -> None:
        if self.descriptor.band_gains_db is not None:
            self._bands = _BandSplitter(self.descriptor.crossovers_hz, sample_rate,
                                        n_channels=2)
        else:
            self._bands = None

    def process_block(self, block: np.ndarray) -> np.ndarray:
        if self._bands is None:
            return block * 10.0 ** (self.descriptor.gain_db / 20.0)
        bands = self._bands.split(block)
        gains = 10.0 ** (np.asarray(self.descriptor.band_gains_db) / 20.0)
        return np.sum(bands * gains[:, None, None], axis=0)


class _BandSplitter:
    """Butterworth band split with persistent filter state per channel."""

    def __init__(self, crossovers_hz, sample_rate: int, n_channels: int):
        edges = [0.0, *crossovers_hz, sample_rate / 2.0]
        self._sos = []
        self._zi = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            hi = min(hi, 0.499 * sample_rate)
            if lo <= 0:
                sos = sps.butter(2, hi / (sample_rate / 2.0), "low", output="sos")
            elif hi >= 0.499 * sample_rate:
                sos = sps.butter(2, lo / (sample_rate / 2.0), "high", output="sos")
            else:
                sos = sps.butter(2, [lo / (sample_rate / 2.0), hi / (sample_rate / 2.0)],
                                 "band", output="sos")
            self._sos.append(sos)
            self._zi.append([np.zeros((sos.shape[0], 2)) for _ in range(n_channels)])

    @property
    def n_bands(self) -> int:
        return len(self._sos)

    def split(self, block: np.ndarray) -> np.ndarray:
        out = np.empty((self.n_bands, *block.shape))
        for b, sos in enumerate(self._sos):
            for ch in range(block.shape[1]):
                out[b, :, ch], self._zi[b][ch] = sps.sosfilt(
                    sos, block[:, ch], zi=self._zi[b][ch])
        return out


class CompressorDevice(Device):
    """Per-band dynamic range compression: static curve above the knee with
    one-pole attack/release envelope smoothing."""

    def __init__(self, descriptor: DeviceDescriptor):
        self.descriptor = descriptor
        self._bands = None
        self._env = None
        self._coeffs = None

    def reset(self, sample_rate: int) -> None:
        self._bands = _BandSplitter(self.descriptor.crossovers_hz, sample_rate, 2)
        self._env = np.zeros((self._bands.n_bands, 2))
        self._coeffs = (
            float(np.exp(-1.0 / (self.descriptor.attack_s * sample_rate))),
            float(np.exp(-1.0 / (self.descriptor.release_s * sample_rate))),
        )

    def process_block(self, block: np.ndarray) -> np.ndarray:
        bands = self._bands.split(block)
        a_att, a_rel = self._coeffs
        out = np.zeros_like(block)
        knee = 10.0 ** (self.descriptor.knee_dbfs / 20.0)
        inv_ratio = 1.0 / self.descriptor.ratio
        for b in range(bands.shape[0]):
            for ch in range(2):
                x = bands[b, :, ch]
                env = _envelope(np.abs(x), self._env[b, ch], a_att, a_rel)
                self._env[b, ch] = env[-1]
                over = env > knee
                gain = np.ones_like(env)
                gain[over] = (knee * (env[over] / knee) ** inv_ratio) / env[over]
                out[:, ch] += x * gain
        return out


def _envelope(x: np.ndarray, state: float, a_att: float, a_rel: float) -> np.ndarray:
    out = np.empty_like(x)
    e = state
    for i, v in enumerate(x):
        a = a_att if v > e else a_rel
        e = a * e + (1.0 - a) * v
        out[i] = e
    return out


class BeamformerDevice(Device):
    """Front-steered two-channel beamformer with a blocking-branch canceller.

    The sum branch (L+R)/2 keeps coherent frontal speech; the difference
    branch (L-R)/2 is speech-free and carries only the lateralized masker,
    so a short FIR fitted per block subtracts the masker from the sum.
    Frontal-only scenes leave the difference branch empty and the stage
    degenerates to a pass-through.

    Only a fraction of the predicted masker is subtracted: microphone
    mismatch and steering error leave a leakage floor in any wearable
    two-microphone array, capping the achievable cancellation depth at
    roughly 12 dB instead of the numerically perfect least-squares fit.
    """

    N_TAPS = 48
    CANCEL_FRACTION = 0.75

    def __init__(self, descriptor: DeviceDescriptor | None = None):
        self.descriptor = descriptor or DeviceDescriptor(name="beamformer",
                                                         kind="beamformer")

    def reset(self, sample_rate: int) -> None:
        pass

    def process_block(self, block: np.ndarray) -> np.ndarray:
        if block.shape[1] != 2:
            raise DeviceError("beamformer needs two channels")
        b = 0.5 * (block[:, 0] + block[:, 1])
        d = 0.5 * (block[:, 0] - block[:, 1])
        mono = b - self.CANCEL_FRACTION * _block_cancel(b, d, self.N_TAPS)
        return np.stack([mono, mono], axis=1)


def _block_cancel(b: np.ndarray, d: np.ndarray, n_taps: int) -> np.ndarray:
    """Least-squares estimate of the part of b predictable from d."""
    n = b.shape[0]
    taps = min(n_taps, max(1, n // 4))
    p_d = float(np.dot(d, d))
    if p_d < 1e-12 * max(float(np.dot(b, b)), 1e-30) or n <= taps:
        return np.zeros_like(b)
    cols = [np.concatenate([np.zeros(k), d[:n - k]]) for k in range(taps)]
    D = np.stack(cols, axis=1)
    reg = 1e-6 * p_d / n
    h = np.linalg.solve(D.T @ D + reg * np.eye(taps), D.T @ b)
    return D @ h


def build_device(descriptor: DeviceDescriptor | str) -> Device:
    if isinstance(descriptor, str):
        descriptor = DeviceDescriptor.parse(descriptor)
    if descriptor.kind == "identity":
        return IdentityDevice(descriptor)
    if descriptor.kind == "gain":
        return GainDevice(descriptor)
    if descriptor.kind == "compressor":
        return CompressorDevice(descriptor)
    if descriptor.kind == "beamformer":
        return BeamformerDevice(descriptor)
    if descriptor.kind == "external":
        from .external import ExternalDevice
        return ExternalDevice(descriptor)
    raise DeviceError(f"unknown device kind {descriptor.kind!r}")
