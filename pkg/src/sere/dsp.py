"""WAV decoding, framing and the four per-frame static acoustic features.

Every extractor works on a single 1-D frame and is a pure function, so the
same code serves the per-frame pipeline in :func:`extract_static` and the
unit tests that probe one frame at a time.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

from .errors import FormatError, PreconditionError, UnsupportedFormatError

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

VOICING_THRESHOLD = 0.5
YIN_DIP_THRESHOLD = 0.1
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise PreconditionError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameGrid:
    frame_length: int
    hop_length: int
    num_frames: int

    @classmethod
    def for_length(cls, n_samples, frame_length, hop_length):
        if not frame_length >= hop_length >= 1:
            raise PreconditionError(
                f"need frame_length >= hop_length >= 1, got {frame_length}, {hop_length}")
        return cls(frame_length, hop_length, num_frames(n_samples, frame_length, hop_length))


@dataclass(frozen=True)
class FeatureConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    fmin: float = 80.0
    fmax: float = 1000.0
    n_mels: int = 40
    n_fft: int = 512

    def grid_for(self, audio: AudioBuffer) -> FrameGrid:
        frame = int(round(audio.sample_rate * self.frame_ms / 1000.0))
        hop = int(round(audio.sample_rate * self.hop_ms / 1000.0))
        return FrameGrid.for_length(len(audio.samples), frame, hop)


# --------------------------------------------------------------------------
# WAV container
# --------------------------------------------------------------------------

def _chunks(data):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size and cid != b"data":
            raise FormatError(f"chunk {cid!r} truncated")
        yield cid, body
        pos += 8 + size + (size & 1)


def decode_wav(data: bytes) -> AudioBuffer:
    """Decode a RIFF/WAVE byte string to a mono float buffer in [-1, 1].

    Supports 16-bit integer PCM and 32-bit IEEE float, including the
    WAVE_FORMAT_EXTENSIBLE wrapper. Channels are averaged.
    """
    data = bytes(data)
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE container")

    fmt = None
    payload = None
    for cid, body in _chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError("fmt chunk shorter than 16 bytes")
            fmt = body
        elif cid == b"data":
            payload = body
    if fmt is None:
        raise FormatError("missing fmt chunk")
    if payload is None:
        raise FormatError("missing data chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise FormatError("extensible fmt chunk too short")
        tag = struct.unpack_from("<H", fmt, 24)[0]
    if channels < 1 or rate < 1:
        raise FormatError(f"invalid channel count {channels} or rate {rate}")

    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormatError(f"unsupported codec: format tag {tag:#06x}, {bits} bits")

    frame_bytes = dtype.itemsize * channels
    usable = len(payload) - len(payload) % frame_bytes
    raw = np.frombuffer(payload[:usable], dtype=dtype).astype(np.float64) / scale
    samples = raw.reshape(-1, channels).mean(axis=1)
    if not np.all(np.isfinite(samples)):
        raise FormatError("non-finite sample values")
    return AudioBuffer(np.clip(samples, -1.0, 1.0), int(rate))


def encode_wav(samples, sample_rate, fmt="pcm16", channels=1) -> bytes:
    """Inverse of :func:`decode_wav` for fixtures and demos.

    ``samples`` is (n,) or (n, channels); ``fmt`` is ``"pcm16"`` or
    ``"float32"``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = np.repeat(x[:, None], channels, axis=1)
    channels = x.shape[1]
    if fmt == "pcm16":
        body = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif fmt == "float32":
        body = x.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown fmt {fmt!r}")
    block = channels * bits // 8
    fmt_chunk = struct.pack("<HHIIHH", tag, channels, sample_rate, sample_rate * block, block, bits)
    chunks = b"fmt " + struct.pack("<I", 16) + fmt_chunk
    chunks += b"data" + struct.pack("<I", len(body)) + body + (b"\0" if len(body) & 1 else b"")
    return b"RIFF" + struct.pack("<I", 4 + len(chunks)) + b"WAVE" + chunks


# --------------------------------------------------------------------------
# Framing
# --------------------------------------------------------------------------

def num_frames(n_samples, frame_length, hop_length):
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // hop_length + 1


def frame_signal(x, frame_length, hop_length):
    """Return a (T, frame_length) read-only view of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    T = num_frames(len(x), frame_length, hop_length)
    if T == 0:
        return np.empty((0, frame_length))
    return np.lib.stride_tricks.sliding_window_view(x, frame_length)[::hop_length][:T]


# --------------------------------------------------------------------------
# Per-frame extractors
# --------------------------------------------------------------------------

def _cmnd(frame, max_lag):
    """YIN cumulative-mean-normalised difference for lags 0..max_lag."""
    w = len(frame) - max_lag
    x = frame
    energy = np.concatenate(([0.0], np.cumsum(x * x)))
    # d(tau) = sum (x_j - x_{j+tau})^2 over j < w, expanded via correlation
    head = energy[w] - energy[0]
    lagged = energy[np.arange(max_lag + 1) + w] - energy[np.arange(max_lag + 1)]
    cross = np.array([np.dot(x[:w], x[tau:tau + w]) for tau in range(max_lag + 1)])
    d = np.maximum(head + lagged - 2.0 * cross, 0.0)
    out = np.ones_like(d)
    csum = np.cumsum(d[1:])
    taus = np.arange(1, max_lag + 1)
    nz = csum > 0
    out[1:][nz] = d[1:][nz] * taus[nz] / csum[nz]
    return out


def estimate_f0(frame, sample_rate, fmin=80.0, fmax=1000.0, threshold=VOICING_THRESHOLD):
    """Fundamental frequency of one frame in Hz, 0.0 when unvoiced.

    YIN-style: the first lag in [sr/fmax, sr/fmin] whose normalised
    difference dips below 0.1 (else the global minimum), refined by a
    parabola. Voicing confidence is ``1 - cmnd(lag)``.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if not 0 < fmin < fmax < sample_rate / 2:
        raise PreconditionError(f"need 0 < fmin < fmax < sr/2, got {fmin}, {fmax}, sr={sample_rate}")
    need = int(np.ceil(2.0 * sample_rate / fmin))
    if len(frame) < need:
        raise PreconditionError(f"frame of {len(frame)} samples shorter than required {need}")

    lo = max(int(np.floor(sample_rate / fmax)), 2)
    hi = int(np.ceil(sample_rate / fmin))
    cmnd = _cmnd(frame - frame.mean(), hi + 1)
    band = cmnd[lo:hi + 1]
    below = np.flatnonzero(band < YIN_DIP_THRESHOLD)
    if below.size:
        k = below[0]
        while k + 1 < band.size and band[k + 1] < band[k]:
            k += 1
    else:
        k = int(np.argmin(band))
    tau = lo + k
    if 1.0 - cmnd[tau] < threshold:
        return 0.0

    a, b, c = cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]
    denom = a - 2.0 * b + c
    shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
    f0 = sample_rate / (tau + np.clip(shift, -1.0, 1.0))
    return float(f0) if fmin <= f0 <= fmax else 0.0


def rms_energy(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise PreconditionError("rms_energy of an empty frame")
    return float(np.sqrt(np.mean(frame * frame)))


def spectral_centroid(frame, sample_rate, window=True):
    """Magnitude-weighted mean frequency of the (Hann-windowed) frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise PreconditionError("spectral_centroid of an empty frame")
    if window:
        frame = frame * np.hanning(frame.size)
    mag = np.abs(np.fft.rfft(frame))
    total = mag.sum()
    if total <= 0.0:
        return 0.0
    freqs = np.fft.rfftfreq(frame.size, 1.0 / sample_rate)
    return float(np.dot(freqs, mag) / total)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate, n_fft, n_mels, fmin=0.0, fmax=None):
    """(n_mels, n_fft//2 + 1) triangular HTK-mel filters, peak height 1."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_to_coeff(log_mel, index=2):
    """Orthonormal DCT-II of a log-mel vector, returning one coefficient."""
    return float(dct(np.asarray(log_mel, dtype=np.float64), type=2, norm="ortho")[index])


def log_mel_spectrum(frame, sample_rate, n_mels=40, n_fft=512, window=True):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.size == 0:
        raise PreconditionError("log_mel_spectrum of an empty frame")
    if n_mels < 4:
        raise PreconditionError(f"n_mels must be >= 4, got {n_mels}")
    if window:
        frame = frame * np.hanning(frame.size)
    power = np.abs(np.fft.rfft(frame, n=n_fft)) ** 2
    energies = mel_filterbank(sample_rate, n_fft, n_mels) @ power
    return np.log(np.maximum(energies, LOG_FLOOR))


def mfcc_coeff2(frame, sample_rate, n_mels=40, n_fft=512):
    """MFCC coefficient c2 (0-based, c0 counted) of a single frame."""
    return log_mel_to_coeff(log_mel_spectrum(frame, sample_rate, n_mels, n_fft), 2)


# --------------------------------------------------------------------------
# Whole-utterance extraction
# --------------------------------------------------------------------------

def extract_static(audio: AudioBuffer, grid: FrameGrid | None = None,
                   cfg: FeatureConfig | None = None) -> np.ndarray:
    """Per-frame static features, shape (T, 4): [F0, RMS, MFCC c2, centroid]."""
    cfg = cfg or FeatureConfig()
    grid = grid or cfg.grid_for(audio)
    frames = frame_signal(audio.samples, grid.frame_length, grid.hop_length)
    if frames.shape[0] == 0:
        raise PreconditionError(
            f"audio of {len(audio.samples)} samples is shorter than one "
            f"{grid.frame_length}-sample frame; no features")

    out = np.empty((frames.shape[0], 4))
    sr = audio.sample_rate
    for t, frame in enumerate(frames):
        out[t, 0] = estimate_f0(frame, sr, cfg.fmin, cfg.fmax)
        out[t, 1] = rms_energy(frame)
        out[t, 2] = mfcc_coeff2(frame, sr, cfg.n_mels, cfg.n_fft)
        out[t, 3] = spectral_centroid(frame, sr)
    return out
