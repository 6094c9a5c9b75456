"""Burst intensity, resonance matrix, row-argmax alignment and the IRF score."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ShapeError
from .idfe import EnhancedRepresentation


@dataclass
class IrfParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise PreconditionError(f"delta must be positive, got {self.delta}")
        if not all(np.isfinite([self.alpha, self.beta, self.gamma, self.delta])):
            raise PreconditionError("intensity parameters must be finite")

    def weights(self):
        return np.array([self.alpha, self.beta, self.gamma, self.gamma])


@dataclass
class ResonanceResult:
    R: np.ndarray
    j_star: np.ndarray
    v: np.ndarray
    irf: float


def burst_intensity(r, params: IrfParams):
    r = np.asarray(r, dtype=np.float64)
    return np.abs(r) @ params.weights()


def unit_rows(U):
    U = np.asarray(U, dtype=np.float64)
    # rescale by the largest entry first so tiny or huge rows do not under/overflow
    peak = np.max(np.abs(U), axis=1, keepdims=True) if U.shape[1] else np.zeros((len(U), 1))
    scaled = np.divide(U, peak, out=np.zeros_like(U), where=peak > 0)
    norms = np.linalg.norm(scaled, axis=1, keepdims=True)
    return np.divide(scaled, norms, out=np.zeros_like(U), where=norms > 0)


def cosine_matrix(Ua, Ub):
    """Row-wise cosine similarities; rows with zero norm give 0."""
    return unit_rows(Ua) @ unit_rows(Ub).T


def resonance_matrix(Us, Bs, Ut, Bt, params: IrfParams):
    Us = np.asarray(Us, dtype=np.float64)
    Ut = np.asarray(Ut, dtype=np.float64)
    if Us.ndim != 2 or Ut.ndim != 2 or Us.shape[1] != Ut.shape[1]:
        raise ShapeError(f"feature dimensions differ: {Us.shape} vs {Ut.shape}")
    if len(Bs) != Us.shape[0] or len(Bt) != Ut.shape[0]:
        raise ShapeError("burst intensity length does not match frame count")
    if not params.delta > 0:
        raise PreconditionError("delta must be positive")
    gap = np.asarray(Bs, dtype=np.float64)[:, None] - np.asarray(Bt, dtype=np.float64)[None, :]
    return np.exp(-params.delta * gap * gap) * cosine_matrix(Us, Ut)


def align(R):
    """Per-row argmax; ``np.argmax`` returns the lowest index on ties."""
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[1] < 1:
        raise PreconditionError("alignment needs at least one target frame")
    return np.argmax(R, axis=1)


def resonance_pool(Ut, j_star):
    Ut = np.asarray(Ut, dtype=np.float64)
    j_star = np.asarray(j_star)
    if j_star.size and (j_star.min() < 0 or j_star.max() >= Ut.shape[0]):
        raise IndexError(f"alignment index out of range for {Ut.shape[0]} target frames")
    return Ut[j_star].mean(axis=0)


def irf_score(R, j_star):
    R = np.asarray(R)
    j_star = np.asarray(j_star)
    if j_star.shape != (R.shape[0],):
        raise ShapeError(f"{len(j_star)} alignment indices for {R.shape[0]} rows")
    return float(R[np.arange(R.shape[0]), j_star].mean())


def _bursts(rep: EnhancedRepresentation, params):
    return rep.B if rep.B is not None else burst_intensity(rep.r, params)


def resonate(a: EnhancedRepresentation, b: EnhancedRepresentation, params: IrfParams) -> ResonanceResult:
    """Resonate ``a`` (rows) against ``b`` (columns)."""
    Ba, Bb = _bursts(a, params), _bursts(b, params)
    R = resonance_matrix(a.U, Ba, b.U, Bb, params)
    j = align(R)
    return ResonanceResult(R, j, resonance_pool(b.U, j), irf_score(R, j))


def irf_table(queries, refs, params: IrfParams):
    """IRF of every query (rows) against every reference, shape (n_q, n_r).

    ``queries`` and ``refs`` are lists of EnhancedRepresentation. Reference
    frames are stacked once so each query costs a single matrix product.
    """
    if not refs:
        raise PreconditionError("empty reference pool")
    lengths = np.array([r.T for r in refs])
    if np.any(lengths < 1):
        raise PreconditionError("reference with no frames")
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    ref_units = unit_rows(np.concatenate([r.U for r in refs]))
    ref_b = np.concatenate([_bursts(r, params) for r in refs])
    out = np.empty((len(queries), len(refs)))
    for q, rep in enumerate(queries):
        if rep.U.shape[1] != ref_units.shape[1]:
            raise ShapeError("feature dimensions differ between query and references")
        gap = _bursts(rep, params)[:, None] - ref_b[None, :]
        R = np.exp(-params.delta * gap * gap) * (unit_rows(rep.U) @ ref_units.T)
        out[q] = np.maximum.reduceat(R, starts, axis=1).mean(axis=0)
    return out
