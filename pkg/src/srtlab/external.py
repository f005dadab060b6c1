"""Black-box exchange with external real-time devices.

Wire format: after a fixed handshake, audio travels as block-framed
interleaved little-endian float32 PCM.  Every block carries an 8-byte
little-endian byte-length prefix; a zero-length block ends the stream.
The handshake is ``SRTLABX1`` + uint32 sample rate + uint32 channel count.
"""

from __future__ import annotations

import socket
import struct
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .devices import DEFAULT_BLOCK_SIZE, Device, DeviceDescriptor, DeviceError

HANDSHAKE_MAGIC = b"SRTLABX1"
LENGTH_PREFIX = struct.Struct("<Q")


class ExternalError(DeviceError):
    pass


@dataclass(frozen=True)
class LatencyCalibration:
    delay_samples: int
    skew_samples: int = 0

    def __post_init__(self):
        if self.delay_samples < 0:
            raise ExternalError("delay must be non-negative")


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------

class _Transport:
    """Byte stream with read/write; TCP socket or subprocess pipes."""

    def __init__(self, reader, writer, closer):
        self._reader = reader
        self._writer = writer
        self._closer = closer

    def write(self, data: bytes) -> None:
        self._writer(data)

    def read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self._reader(n - len(buf))
            if not chunk:
                raise ExternalError("endpoint closed the stream unexpectedly")
            buf += chunk
        return buf

    def close(self) -> None:
        self._closer()


def open_endpoint(spec: str, sample_rate: int, n_channels: int = 2,
                  timeout_s: float = 10.0) -> "_Session":
    """Connect per endpoint spec: 'tcp:HOST:PORT' or 'cmd:SHELL COMMAND'."""
    if spec.startswith("tcp:"):
        _, host, port = spec.split(":", 2)
        sock = socket.create_connection((host, int(port)), timeout=timeout_s)
        sock.settimeout(timeout_s)
        transport = _Transport(sock.recv, sock.sendall, sock.close)
    elif spec.startswith("cmd:"):
        proc = subprocess.Popen(spec[4:], shell=True, stdin=subprocess.PIPE,
                                stdout=subprocess.PIPE)

        def _close():
            proc.stdin.close()
            proc.wait(timeout=timeout_s)

        transport = _Transport(proc.stdout.read, _write_all(proc.stdin), _close)
    else:
        raise ExternalError(f"unknown endpoint spec {spec!r}")
    session = _Session(transport, sample_rate, n_channels)
    session.handshake()
    return session


def _write_all(stream):
    def w(data):
        stream.write(data)
        stream.flush()
    return w


class _Session:
    def __init__(self, transport: _Transport, sample_rate: int, n_channels: int):
        self.transport = transport
        self.sample_rate = sample_rate
        self.n_channels = n_channels

    def handshake(self) -> None:
        msg = HANDSHAKE_MAGIC + struct.pack("<II", self.sample_rate, self.n_channels)
        self.transport.write(msg)
        reply = self.transport.read_exact(len(msg))
        if reply[:8] != HANDSHAKE_MAGIC:
            raise ExternalError("bad handshake from endpoint")

    def send_block(self, block: np.ndarray) -> None:
        payload = np.ascontiguousarray(block, dtype="<f4").tobytes()
        self.transport.write(LENGTH_PREFIX.pack(len(payload)) + payload)

    def recv_block(self) -> np.ndarray | None:
        (nbytes,) = LENGTH_PREFIX.unpack(self.transport.read_exact(8))
        if nbytes == 0:
            return None
        data = self.transport.read_exact(nbytes)
        flat = np.frombuffer(data, dtype="<f4").astype(np.float64)
        return flat.reshape(-1, self.n_channels)

    def close(self) -> None:
        self.transport.close()

    def exchange(self, samples: np.ndarray, block_size: int = DEFAULT_BLOCK_SIZE
                 ) -> np.ndarray:
        """Block-sequential round trip of an (n, ch) array, same length out."""
        outs = []
        for start in range(0, samples.shape[0], block_size):
            blk = samples[start:start + block_size]
            self.send_block(blk)
            out = self.recv_block()
            if out is None:
                raise ExternalError("endpoint ended the stream early")
            if out.shape[0] != blk.shape[0]:
                raise ExternalError(
                    f"block length mismatch: sent {blk.shape[0]}, got {out.shape[0]}")
            outs.append(out)
        return np.concatenate(outs) if outs else samples[:0]


# ---------------------------------------------------------------------------
# calibration and aligned exchange
# ---------------------------------------------------------------------------

def calibrate_latency(session: _Session, probe_s: float = 0.5,
                      block_size: int = DEFAULT_BLOCK_SIZE) -> LatencyCalibration:
    """Round-trip delay via the cross-correlation peak of a returned impulse."""
    n = int(probe_s * session.sample_rate)
    n = max(n, 4 * block_size)
    probe = np.zeros((n, session.n_channels))
    probe[0, :] = 1.0
    returned = session.exchange(probe, block_size)
    delays = []
    for ch in range(session.n_channels):
        y = returned[:, ch]
        peak = float(np.max(np.abs(y)))
        if peak < 1e-6:
            raise ExternalError("no impulse detected above the noise floor")
        delays.append(int(np.argmax(np.abs(y))))
    delay = min(delays)
    skew = delays[0] - delays[-1]
    return LatencyCalibration(delay_samples=delay, skew_samples=skew)


def external_exchange(session: _Session, samples: np.ndarray,
                      calibration: LatencyCalibration,
                      block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Stream samples through the endpoint and realign by the calibrated
    delay; trailing silence covers the device latency."""
    n = samples.shape[0]
    d = calibration.delay_samples
    pad_blocks = int(np.ceil(d / block_size)) if d else 0
    padded = np.concatenate(
        [samples, np.zeros((pad_blocks * block_size, samples.shape[1]))])
    out = session.exchange(padded, block_size)
    aligned = out[d:d + n]
    if aligned.shape[0] != n:
        raise ExternalError("length mismatch after delay compensation")
    return aligned


class ExternalDevice(Device):
    """Device backed by an external endpoint; latency-calibrated on first use.

    Real exchange time is wall-clock; the owning pipeline accounts the audio
    duration in its budget ledger.
    """

    def __init__(self, descriptor: DeviceDescriptor):
        if not descriptor.endpoint:
            raise ExternalError("external device needs an endpoint spec")
        self.descriptor = descriptor
        self._session = None
        self._calibration = None
        self._sample_rate = None

    def reset(self, sample_rate: int) -> None:
        if self._session is None or self._sample_rate != sample_rate:
            if self._session is not None:
                self._session.close()
            self._session = open_endpoint(self.descriptor.endpoint, sample_rate)
            self._calibration = calibrate_latency(self._session)
            self._sample_rate = sample_rate

    def process_block(self, block: np.ndarray) -> np.ndarray:
        raise ExternalError("external devices process whole signals")

    def process(self, stereo: Waveform, block_size: int = DEFAULT_BLOCK_SIZE) -> Waveform:
        if stereo.n_channels != 2:
            raise ExternalError("external exchange expects stereo input")
        self.reset(stereo.sample_rate)
        out = external_exchange(self._session, stereo.samples,
                                self._calibration, block_size)
        return Waveform(out, stereo.sample_rate, stereo.calibration)

    def close(self) -> None:
        if self._session is not None:
            self._session.close()
            self._session = None


# ---------------------------------------------------------------------------
# reference endpoint server (loopback with optional delay/gain)
# ---------------------------------------------------------------------------

def serve_loopback(host: str = "127.0.0.1", port: int = 0, delay_samples: int = 0,
                   gain: float = 1.0, drop_block: int = -1,
                   silent: bool = False, ready=None, once: bool = True) -> int:
    """Minimal endpoint implementation used for tests and protocol checks.

    Echoes each block after an optional sample delay and gain; ``drop_block``
    swallows the n-th block to exercise error paths; ``silent`` returns zeros.
    Returns the bound port (and signals ``ready`` once listening).
    """
    srv = socket.create_server((host, port))
    bound_port = srv.getsockname()[1]
    if ready is not None:
        ready(bound_port)

    def handle(conn):
        with conn:
            hs = _recv_exact(conn, 16)
            if hs[:8] != HANDSHAKE_MAGIC:
                return
            conn.sendall(hs)
            _, channels = struct.unpack("<II", hs[8:])
            buf = np.zeros((delay_samples, channels))
            count = 0
            while True:
                header = _recv_exact(conn, 8, eof_ok=True)
                if header is None:
                    return
                (nbytes,) = LENGTH_PREFIX.unpack(header)
                if nbytes == 0:
                    conn.sendall(LENGTH_PREFIX.pack(0))
                    return
                blk = np.frombuffer(_recv_exact(conn, nbytes), dtype="<f4")
                blk = blk.reshape(-1, channels).astype(np.float64)
                pipelined = np.concatenate([buf, blk * gain])
                out, buf = pipelined[:blk.shape[0]], pipelined[blk.shape[0]:]
                if silent:
                    out = np.zeros_like(out)
                if count == drop_block:
                    out = out[: out.shape[0] // 2]  # truncated reply
                count += 1
                payload = out.astype("<f4").tobytes()
                conn.sendall(LENGTH_PREFIX.pack(len(payload)) + payload)

    try:
        while True:
            conn, _ = srv.accept()
            handle(conn)
            if once:
                break
    finally:
        srv.close()
    return bound_port


def start_loopback_thread(**kwargs) -> tuple[threading.Thread, int]:
    """Run serve_loopback in a daemon thread; returns (thread, port)."""
    port_box = {}
    event = threading.Event()

    def ready(p):
        port_box["port"] = p
        event.set()

    t = threading.Thread(target=serve_loopback, kwargs={**kwargs, "ready": ready},
                         daemon=True)
    t.start()
    if not event.wait(timeout=5.0):
        raise ExternalError("loopback server failed to start")
    return t, port_box["port"]


def _recv_exact(conn, n, eof_ok: bool = False):
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            if eof_ok and not buf:
                return None
            raise ExternalError("connection closed mid-message")
        buf += chunk
    return buf
