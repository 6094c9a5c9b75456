"""Prototype anchors, pseudo-anchor selection and the TRIC objective.

The objective is differentiated by hand. Every discrete choice (row-argmax
alignments, pseudo-anchors, dual-loss references) is taken once by
:func:`select_choices` and held fixed while the loss and its gradient are
evaluated, so :func:`objective` is a smooth function of the parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import MissingClassError, PairingError, PreconditionError, ShapeError
from .idfe import EnhancedRepresentation, IdfeParams
from .irf import IrfParams, align, irf_table, resonance_matrix, resonate, unit_rows

SCALARS = ("b", "alpha", "beta", "gamma", "delta")
NONNEGATIVE = ("alpha", "beta", "gamma")
MIN_DELTA = 1e-6


@dataclass
class TricParams:
    lambda1: float = 1.0
    lambda2: float = 1.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise PreconditionError("loss weights must be non-negative")


@dataclass
class Sample:
    """One utterance: embeddings ``H`` (T, d) and normalised deltas ``D`` (T, 4)."""

    id: str
    H: np.ndarray
    D: np.ndarray
    label: int | None = None
    language: str = ""

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.D = np.asarray(self.D, dtype=np.float64)
        if self.H.ndim != 2 or self.D.shape != (self.H.shape[0], 4):
            raise ShapeError(f"sample {self.id!r}: H {self.H.shape} and D {self.D.shape} disagree")
        if self.H.shape[0] < 1:
            raise PreconditionError(f"sample {self.id!r} has no frames")


@dataclass
class Batch:
    labeled: list
    unlabeled_source: list = field(default_factory=list)
    unlabeled_target: list = field(default_factory=list)
    n_classes: int | None = None

    def __post_init__(self):
        if not self.labeled:
            raise PreconditionError("batch has no labeled samples")
        if any(s.label is None for s in self.labeled):
            raise PreconditionError("labeled sample without a label")
        if self.n_classes is None:
            self.n_classes = max(s.label for s in self.labeled) + 1

    @property
    def samples(self):
        return self.labeled + self.unlabeled_source + self.unlabeled_target

    @property
    def lab_idx(self):
        return list(range(len(self.labeled)))

    @property
    def src_idx(self):
        n = len(self.labeled)
        return list(range(n, n + len(self.unlabeled_source)))

    @property
    def tgt_idx(self):
        n = len(self.labeled) + len(self.unlabeled_source)
        return list(range(n, n + len(self.unlabeled_target)))


@dataclass
class PrototypeSet:
    initial: np.ndarray
    enhanced: np.ndarray
    n_labeled: np.ndarray
    n_pseudo: np.ndarray

    @property
    def n_classes(self):
        return self.enhanced.shape[0]


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

def init_params(d, projection_dim=None, rng=None):
    """Learnable parameters as a dict of float arrays (scalars are 0-d).

    Gate starts at w=0, b=0; intensities at 1; temperature at 1. With
    ``projection_dim`` a linear head (d, projection_dim) is added, initialised
    to a truncated identity (plus small noise when ``rng`` is given).
    """
    params = {"b": np.array(0.0), "alpha": np.array(1.0), "beta": np.array(1.0),
              "gamma": np.array(1.0), "delta": np.array(1.0)}
    width = d
    if projection_dim is not None:
        proj = np.eye(d, projection_dim)
        if rng is not None:
            proj = proj + 0.01 * rng.standard_normal(proj.shape)
        params["proj"] = proj
        width = projection_dim
    params["w"] = np.zeros(width)
    return params


def idfe_params(params):
    return IdfeParams(np.asarray(params["w"]), float(params["b"]))


def irf_params(params):
    return IrfParams(float(params["alpha"]), float(params["beta"]),
                     float(params["gamma"]), float(params["delta"]))


def project_params(params):
    """Keep intensities non-negative and the temperature positive (in place)."""
    for k in NONNEGATIVE:
        if params[k] < 0:
            params[k][...] = 0.0
    if params["delta"] < MIN_DELTA:
        params["delta"][...] = MIN_DELTA
    return params


# --------------------------------------------------------------------------
# Per-utterance forward pass
# --------------------------------------------------------------------------

@dataclass
class _Forward:
    Hp: np.ndarray      # (projected) embeddings
    g: np.ndarray       # gate per frame
    s: np.ndarray       # alpha|D1| + beta|D2| + gamma(|D3|+|D4|)
    U: np.ndarray
    B: np.ndarray

    def rep(self):
        return EnhancedRepresentation(self.U, self.B)


def _forward(sample: Sample, params):
    H = sample.H @ params["proj"] if "proj" in params else sample.H
    g = expit(H @ params["w"] + params["b"])
    A = np.abs(sample.D)
    s = float(params["alpha"]) * A[:, 0] + float(params["beta"]) * A[:, 1] \
        + float(params["gamma"]) * (A[:, 2] + A[:, 3])
    U = np.concatenate([H, g[:, None] * sample.D], axis=1)
    return _Forward(H, g, s, U, g * s)


def represent(sample: Sample, params) -> EnhancedRepresentation:
    """Enhanced representation U with burst intensity B under ``params``."""
    return _forward(sample, params).rep()


# --------------------------------------------------------------------------
# Building blocks
# --------------------------------------------------------------------------

def pool_semantic(U):
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2 or U.shape[0] < 1:
        raise PreconditionError("pooling needs at least one frame")
    return U.mean(axis=0)


def initial_prototypes(z, labels, n_classes=None):
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    protos = np.empty((n_classes, z.shape[1]))
    for c in range(n_classes):
        members = labels == c
        if not members.any():
            raise MissingClassError(f"class {c} has no labeled sample")
        protos[c] = z[members].mean(axis=0)
    return protos


def select_pseudo_anchor(x_u: EnhancedRepresentation, labeled, labels, params: IrfParams):
    """(anchor index, pseudo-label, IRF) of the highest-IRF labeled sample."""
    if not labeled:
        raise PreconditionError("no labeled samples to anchor against")
    scores = irf_table([x_u], labeled, params)[0]
    k = int(np.argmax(scores))
    return k, int(labels[k]), float(scores[k])


def enhanced_prototypes(z, labels, anchor_z, pseudo_labels, n_classes=None) -> PrototypeSet:
    """Class means over labeled embeddings plus the pseudo-anchors' embeddings.

    ``anchor_z[j]`` is the embedding of the labeled sample chosen as anchor for
    unlabeled sample j, not that sample's own embedding.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    anchor_z = np.asarray(anchor_z, dtype=np.float64).reshape(-1, z.shape[1])
    pseudo_labels = np.asarray(pseudo_labels, dtype=int).reshape(-1)
    init = initial_prototypes(z, labels, n_classes)
    C = init.shape[0]
    n_lab = np.bincount(labels, minlength=C)
    n_ps = np.bincount(pseudo_labels, minlength=C) if pseudo_labels.size else np.zeros(C, int)
    enhanced = init.copy()
    for c in range(C):
        if n_ps[c]:
            total = z[labels == c].sum(axis=0) + anchor_z[pseudo_labels == c].sum(axis=0)
            enhanced[c] = total / (n_lab[c] + n_ps[c])
    return PrototypeSet(init, enhanced, n_lab, n_ps)


def proto_loss(z, labels, v, pseudo_labels, prototypes: PrototypeSet):
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    v = np.asarray(v, dtype=np.float64).reshape(-1, z.shape[1])
    pseudo_labels = np.asarray(pseudo_labels, dtype=int).reshape(-1)
    p = prototypes.enhanced
    total = 0.0
    for c in range(p.shape[0]):
        zc = z[labels == c]
        total += np.mean(np.sum((zc - p[c]) ** 2, axis=1))
        vc = v[pseudo_labels == c]
        if len(vc):
            total += np.mean(np.sum((vc - p[c]) ** 2, axis=1))
    return float(total / p.shape[0])


def dual_loss(irfs, v_u, v_ref):
    """Mean of (1 - IRF) * ||v_u - v_ref||^2 over pairs."""
    irfs = np.asarray(irfs, dtype=np.float64).reshape(-1)
    if irfs.size == 0:
        raise PairingError("no unlabeled/reference pairs")
    diff = np.asarray(v_u, dtype=np.float64) - np.asarray(v_ref, dtype=np.float64)
    return float(np.mean((1.0 - irfs) * np.sum(diff.reshape(irfs.size, -1) ** 2, axis=1)))


# --------------------------------------------------------------------------
# Discrete choices
# --------------------------------------------------------------------------

@dataclass
class Choices:
    """Frozen discrete decisions for one optimisation step.

    ``anchors[j]`` is the labeled index anchoring target j (positions within
    ``Batch.unlabeled_target``); ``dual`` lists (unlabeled, reference) pairs
    as indices into ``Batch.samples``; ``align[(a, b)]`` holds the row-argmax
    of sample a against sample b.
    """

    anchors: np.ndarray
    anchor_irf: np.ndarray
    pseudo_labels: np.ndarray
    dual: list
    dual_irf: np.ndarray
    align: dict

    def pairs(self, batch):
        tgt = batch.tgt_idx
        return [(tgt[j], int(a)) for j, a in enumerate(self.anchors)] + list(self.dual)


def _best(table):
    return np.argmax(table, axis=1), np.max(table, axis=1)


def select_choices(batch: Batch, params, reps=None) -> Choices:
    """Pseudo-anchors, dual-loss references and alignments under ``params``.

    Unlabeled targets anchor to their highest-IRF labeled sample. For the dual
    loss, unlabeled sources reference the highest-IRF labeled sample and
    unlabeled targets the highest-IRF unlabeled source. Ties go to the lowest
    index.
    """
    if reps is None:
        reps = [represent(s, params) for s in batch.samples]
    ip = irf_params(params)
    lab, src, tgt = batch.lab_idx, batch.src_idx, batch.tgt_idx
    labels = np.array([s.label for s in batch.labeled])
    lab_reps = [reps[i] for i in lab]

    if tgt:
        anchors, anchor_irf = _best(irf_table([reps[i] for i in tgt], lab_reps, ip))
    else:
        anchors, anchor_irf = np.zeros(0, int), np.zeros(0)
    pseudo = labels[anchors] if len(anchors) else np.zeros(0, int)

    dual, dual_irf = [], []
    if src:
        ref, val = _best(irf_table([reps[i] for i in src], lab_reps, ip))
        dual += [(u, lab[k]) for u, k in zip(src, ref)]
        dual_irf += list(val)
    if tgt:
        if not src:
            raise PairingError("unlabeled targets need an unlabeled-source reference pool")
        ref, val = _best(irf_table([reps[i] for i in tgt], [reps[i] for i in src], ip))
        dual += [(u, src[k]) for u, k in zip(tgt, ref)]
        dual_irf += list(val)

    choices = Choices(anchors, anchor_irf, pseudo, dual, np.array(dual_irf), {})
    for a, b in choices.pairs(batch):
        if (a, b) not in choices.align:
            R = resonance_matrix(reps[a].U, reps[a].B, reps[b].U, reps[b].B, ip)
            choices.align[(a, b)] = align(R)
    return choices


# --------------------------------------------------------------------------
# Objective and gradient
# --------------------------------------------------------------------------

@dataclass
class _Pair:
    x: np.ndarray
    y: np.ndarray
    nx: np.ndarray
    ny: np.ndarray
    cos: np.ndarray
    gap: np.ndarray
    e: np.ndarray
    irf: float
    v: np.ndarray


def _pair(fa: _Forward, fb: _Forward, j, delta):
    x, y = fa.U, fb.U[j]
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    cos = np.sum(unit_rows(x) * unit_rows(y), axis=1)
    gap = fa.B - fb.B[j]
    e = np.exp(-delta * gap * gap)
    return _Pair(x, y, nx, ny, cos, gap, e, float(np.mean(e * cos)), y.mean(axis=0))


def _pair_backward(p: _Pair, j, d_irf, d_v, delta, dU_a, dB_a, dU_b, dB_b, grads):
    T = len(j)
    dR = np.full(T, d_irf / T)
    dc = dR * p.e
    de = dR * p.cos
    grads["delta"] += np.sum(de * p.e * -(p.gap * p.gap))
    dgap = de * p.e * (-2.0 * delta * p.gap)
    dB_a += dgap
    np.add.at(dB_b, j, -dgap)

    ok = (p.nx * p.ny) > 0
    den = np.where(ok, p.nx * p.ny, 1.0)
    nx2 = np.where(ok, p.nx * p.nx, 1.0)
    ny2 = np.where(ok, p.ny * p.ny, 1.0)
    dx = (dc * ok)[:, None] * (p.y / den[:, None] - (p.cos / nx2)[:, None] * p.x)
    dy = (dc * ok)[:, None] * (p.x / den[:, None] - (p.cos / ny2)[:, None] * p.y)
    dU_a += dx
    np.add.at(dU_b, j, dy + d_v[None, :] / T)


def _sample_backward(sample: Sample, f: _Forward, dU, dB, params, grads):
    d = f.Hp.shape[1]
    A = np.abs(sample.D)
    dg = np.sum(dU[:, d:] * sample.D, axis=1) + dB * f.s
    gB = dB * f.g
    grads["alpha"] += np.dot(gB, A[:, 0])
    grads["beta"] += np.dot(gB, A[:, 1])
    grads["gamma"] += np.dot(gB, A[:, 2] + A[:, 3])
    da = dg * f.g * (1.0 - f.g)
    grads["w"] += f.Hp.T @ da
    grads["b"] += np.sum(da)
    if "proj" in params:
        dHp = dU[:, :d] + np.outer(da, params["w"])
        grads["proj"] += sample.H.T @ dHp


@dataclass
class LossTerms:
    total: float
    proto: float
    dual: float
    prototypes: PrototypeSet | None = None


def objective(batch: Batch, params, choices: Choices, tric: TricParams | None = None,
              use_proto=True, use_dual=True, with_grad=True, active=None):
    """Loss terms and (optionally) the gradient dict for frozen ``choices``.

    ``active`` restricts the unlabeled terms to a subset of ``batch.samples``
    indices (a mini-batch); the labeled term always covers every labeled
    sample. A disabled term is neither computed nor reported (its value is
    0.0).
    """
    tric = tric or TricParams()
    samples = batch.samples
    delta = float(params["delta"])
    C = batch.n_classes
    active = None if active is None else set(active)
    tgt_pairs = [(t, int(a)) for t, a in zip(batch.tgt_idx, choices.anchors)
                 if active is None or t in active]
    pseudo = np.array([samples[a].label for _, a in tgt_pairs], dtype=int)
    dual_pairs = [(u, r) for u, r in choices.dual if active is None or u in active]

    fw, dU, dB, dz = {}, {}, {}, {}

    def fwd(k):
        if k not in fw:
            fw[k] = _forward(samples[k], params)
            dU[k] = np.zeros_like(fw[k].U)
            dB[k] = np.zeros_like(fw[k].B)
            dz[k] = np.zeros(fw[k].U.shape[1])
        return fw[k]

    def z(k):
        return fwd(k).U.mean(axis=0)

    def pair(a, b):
        return _pair(fwd(a), fwd(b), choices.align[(a, b)], delta)

    def back(a, b, p, d_irf, d_v):
        _pair_backward(p, choices.align[(a, b)], d_irf, d_v, delta,
                       dU[a], dB[a], dU[b], dB[b], grads)

    grads = {k: np.zeros_like(v, dtype=np.float64) for k, v in params.items()}
    l_proto = l_dual = 0.0
    protos = None
    if use_proto:
        lab = batch.lab_idx
        labels = np.array([samples[i].label for i in lab])
        pairs = [pair(t, a) for t, a in tgt_pairs]
        zl = np.array([z(i) for i in lab])
        width = zl.shape[1]
        anchor_z = np.array([z(a) for _, a in tgt_pairs]).reshape(-1, width)
        protos = enhanced_prototypes(zl, labels, anchor_z, pseudo, C)
        vs = np.array([p.v for p in pairs]).reshape(-1, width)
        l_proto = proto_loss(zl, labels, vs, pseudo, protos)

        if with_grad:
            w1 = tric.lambda1
            p = protos.enhanced
            dp = np.zeros_like(p)
            for c in range(C):
                members = [i for i in lab if samples[i].label == c]
                for i in members:
                    g = w1 * 2.0 * (zl[i] - p[c]) / (C * len(members))
                    dz[i] += g
                    dp[c] -= g
                assigned = np.flatnonzero(pseudo == c)
                for k in assigned:
                    g = w1 * 2.0 * (pairs[k].v - p[c]) / (C * len(assigned))
                    t, a = tgt_pairs[k]
                    back(t, a, pairs[k], 0.0, g)
                    dp[c] -= g
                share = dp[c] / (len(members) + len(assigned))
                for i in members:
                    dz[i] += share
                for k in assigned:
                    dz[tgt_pairs[k][1]] += share

    if use_dual and dual_pairs:
        pairs = [pair(u, r) for u, r in dual_pairs]
        irfs = np.array([p.irf for p in pairs])
        vr = np.array([z(r) for _, r in dual_pairs])
        l_dual = dual_loss(irfs, np.array([p.v for p in pairs]), vr)
        if with_grad:
            n = len(pairs)
            w2 = tric.lambda2
            for (u, r), p, vref in zip(dual_pairs, pairs, vr):
                diff = p.v - vref
                gv = w2 * 2.0 * (1.0 - p.irf) * diff / n
                back(u, r, p, -w2 * float(np.dot(diff, diff)) / n, gv)
                dz[r] -= gv

    total = (tric.lambda1 * l_proto if use_proto else 0.0) + (tric.lambda2 * l_dual if use_dual else 0.0)
    terms = LossTerms(total, l_proto, l_dual, protos)
    if not with_grad:
        return terms, None

    for k, f in fw.items():
        dU[k] += dz[k][None, :] / f.U.shape[0]
        if np.any(dU[k]) or np.any(dB[k]):
            _sample_backward(samples[k], f, dU[k], dB[k], params, grads)
    return terms, grads


def total_loss(batch: Batch, params, tric: TricParams | None = None,
               use_proto=True, use_dual=True, choices=None):
    """(L_SERE, diagnostics). Discrete choices are taken at ``params``."""
    choices = choices or select_choices(batch, params)
    terms, _ = objective(batch, params, choices, tric, use_proto, use_dual, with_grad=False)
    diagnostics = {
        "proto": terms.proto,
        "dual": terms.dual,
        "pseudo_labels": choices.pseudo_labels,
        "anchors": choices.anchors,
        "anchor_irf": choices.anchor_irf,
        "dual_irf": choices.dual_irf,
        "prototypes": terms.prototypes,
        "choices": choices,
    }
    return terms.total, diagnostics


def grad_total_loss(batch: Batch, params, tric: TricParams | None = None,
                    use_proto=True, use_dual=True, choices=None):
    """Analytic gradient dict of L_SERE with discrete choices frozen at ``params``."""
    choices = choices or select_choices(batch, params)
    return objective(batch, params, choices, tric, use_proto, use_dual, with_grad=True)[1]


# --------------------------------------------------------------------------
# Inference
# --------------------------------------------------------------------------

def classify(x: EnhancedRepresentation, prototypes, references, params: IrfParams):
    """Nearest enhanced prototype to x's resonance-aware representation.

    ``references`` are EnhancedRepresentations; x is resonated against the
    one with highest IRF. ``prototypes`` is a PrototypeSet or a (C, D) array.
    """
    p = prototypes.enhanced if isinstance(prototypes, PrototypeSet) else np.asarray(prototypes)
    if p.size == 0:
        raise PreconditionError("empty prototype set")
    if not references:
        raise PreconditionError("empty reference pool")
    k = int(np.argmax(irf_table([x], references, params)[0]))
    return nearest_prototype(resonate(x, references[k], params).v, p)


def nearest_prototype(v, prototypes):
    p = np.asarray(prototypes, dtype=np.float64)
    return int(np.argmin(np.sum((p - np.asarray(v)[None, :]) ** 2, axis=1)))
