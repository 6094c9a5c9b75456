"""Instantaneous dynamic features: frame deltas, normalisation, semantic gate, fusion."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import PreconditionError, ShapeError

EPSILON = 1e-3


@dataclass
class EmbeddingSequence:
    H: np.ndarray
    utterance_id: str = ""
    language: str = ""
    encoder: str = ""

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        if self.H.ndim != 2:
            raise ShapeError(f"H must be T x d, got shape {self.H.shape}")
        if not np.all(np.isfinite(self.H)):
            raise PreconditionError(f"embedding {self.utterance_id!r} has non-finite entries")

    @property
    def T(self):
        return self.H.shape[0]

    @property
    def d(self):
        return self.H.shape[1]


@dataclass
class IdfeParams:
    w: np.ndarray
    b: float = 0.0

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros(d), 0.0)


@dataclass
class DynamicFeatures:
    deltas: np.ndarray
    normalized: np.ndarray
    gate: np.ndarray
    r: np.ndarray


@dataclass
class EnhancedRepresentation:
    U: np.ndarray
    B: np.ndarray | None = field(default=None)

    @property
    def T(self):
        return self.U.shape[0]

    @property
    def r(self):
        return self.U[:, -4:]


def frame_deltas(features):
    """First differences along time; the first row is zero."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1:
        raise PreconditionError(f"need at least one frame, got shape {f.shape}")
    out = np.zeros_like(f)
    out[1:] = f[1:] - f[:-1]
    return out


def normalize_deltas(deltas, epsilon=EPSILON):
    """Divide each column by its mean absolute value plus ``epsilon``."""
    if epsilon <= 0:
        raise PreconditionError(f"epsilon must be positive, got {epsilon}")
    d = np.asarray(deltas, dtype=np.float64)
    var = np.mean(np.abs(d), axis=0)
    return d / (var + epsilon)


def context_gate(H, params: IdfeParams):
    H = np.asarray(H, dtype=np.float64)
    w = np.asarray(params.w, dtype=np.float64)
    if w.shape != (H.shape[1],):
        raise ShapeError(f"gate weights of shape {w.shape} do not match d={H.shape[1]}")
    return expit(H @ w + params.b)


def fuse(H, r) -> EnhancedRepresentation:
    H = np.asarray(H, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if H.shape[0] != r.shape[0]:
        raise ShapeError(f"frame counts differ: H has {H.shape[0]}, r has {r.shape[0]}")
    if r.shape[1] != 4:
        raise ShapeError(f"r must have 4 columns, got {r.shape[1]}")
    return EnhancedRepresentation(np.concatenate([H, r], axis=1))


def resample_frames(features, n_frames):
    """Linearly interpolate a (T_f, k) track onto ``n_frames`` evenly spaced frames."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[0] == n_frames:
        return f.copy()
    if f.shape[0] == 0:
        raise PreconditionError("cannot resample an empty feature track")
    if f.shape[0] == 1:
        return np.repeat(f, n_frames, axis=0)
    src = np.linspace(0.0, 1.0, f.shape[0])
    dst = np.linspace(0.0, 1.0, n_frames)
    return np.stack([np.interp(dst, src, f[:, k]) for k in range(f.shape[1])], axis=1)


def dynamic_inputs(features, n_frames, epsilon=EPSILON):
    """Parameter-free part of the pipeline: resample, difference, normalise."""
    deltas = frame_deltas(resample_frames(features, n_frames))
    return deltas, normalize_deltas(deltas, epsilon)


def run_idfe(features, seq: EmbeddingSequence, params: IdfeParams, epsilon=EPSILON):
    deltas, norm = dynamic_inputs(features, seq.T, epsilon)
    gate = context_gate(seq.H, params)
    r = gate[:, None] * norm
    return DynamicFeatures(deltas, norm, gate, r), fuse(seq.H, r)
