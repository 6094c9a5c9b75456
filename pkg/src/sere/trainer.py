"""Training loop, Adam, stratified folds, UAR evaluation and checkpoints."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io as sio
from .errors import (CompatibilityError, DivergenceError, ParseError, PreconditionError,
                     StratificationError)
from .idfe import EPSILON, dynamic_inputs
from .tric import (Batch, Sample, TricParams, init_params, irf_params, objective,
                   project_params, represent, select_choices)
from .tric import classify as tric_classify

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "sere-checkpoint"
SCALAR_ORDER = ("b", "alpha", "beta", "gamma", "delta")


@dataclass
class TrainConfig:
    epochs: int = 80
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 1.0
    disable_proto: bool = False
    disable_dual: bool = False
    shots_per_class: int = 5
    batch_size: int | None = None
    epsilon: float = EPSILON
    projection_dim: int | None = None
    classes: list | None = None
    folds: int = 5

    def __post_init__(self):
        if self.epochs < 1:
            raise PreconditionError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise PreconditionError("learning_rate must be positive")
        if self.shots_per_class < 1:
            raise PreconditionError("shots_per_class must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise PreconditionError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, data, path=None):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParseError(f"unknown config field(s): {', '.join(unknown)}", path=path)
        try:
            return cls(**data)
        except (TypeError, PreconditionError) as exc:
            raise ParseError(str(exc), path=path) from exc

    @classmethod
    def from_json(cls, path):
        text = Path(path).read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, line=exc.lineno, path=path) from exc
        if not isinstance(data, dict):
            raise ParseError("config must be a JSON object", line=1, path=path)
        return cls.from_dict(data, path=path)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class Dataset:
    classes: list
    labeled: list = field(default_factory=list)
    unlabeled_source: list = field(default_factory=list)
    unlabeled_target: list = field(default_factory=list)
    eval_target: list = field(default_factory=list)


@dataclass
class SereModel:
    params: dict
    prototypes: np.ndarray
    classes: list
    references: list
    lambda1: float = 1.0
    lambda2: float = 1.0

    def reference_reps(self):
        return [represent(s, self.params) for s in self.references]


@dataclass
class EvalReport:
    recall: np.ndarray
    uar: float
    confusion: np.ndarray
    fold: int = 0
    predictions: np.ndarray | None = None


@dataclass
class TrainResult:
    model: SereModel
    history: list
    initial_loss: float
    final_loss: float


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------

def load_sample(row: sio.ManifestRow, class_index, epsilon=EPSILON):
    H = sio.read_tensor(row.path).astype(np.float64)
    fpath = sio.features_path(row.path)
    if not fpath.exists():
        raise ParseError(f"feature file {fpath} missing for row {row.id!r}", line=row.line)
    feats = sio.read_tensor(fpath).astype(np.float64)
    if feats.shape[1] != 4:
        raise ParseError(f"feature file {fpath} must have 4 columns", line=row.line)
    _, D = dynamic_inputs(feats, H.shape[0], epsilon)
    label = class_index[row.label] if row.label is not None else None
    return Sample(row.id, H, D, label, row.language)


def load_dataset(manifest_path, classes=None, epsilon=EPSILON) -> Dataset:
    rows = sio.read_manifest(manifest_path, classes=classes)
    if classes is None:
        classes = sorted({r.label for r in rows if r.role == "labeled_source"})
    index = {c: i for i, c in enumerate(classes)}
    data = Dataset(list(classes))
    slots = {"labeled_source": data.labeled, "unlabeled_source": data.unlabeled_source,
             "unlabeled_target": data.unlabeled_target, "eval_target": data.eval_target}
    dims = set()
    for row in rows:
        s = load_sample(row, index, epsilon)
        dims.add(s.H.shape[1])
        slots[row.role].append(s)
    if len(dims) > 1:
        raise ParseError(f"embedding dimensions differ across manifest: {sorted(dims)}",
                         path=manifest_path)
    return data


def select_shots(labeled, n_classes, shots, seed):
    """First ``shots`` samples per class in a seed-shuffled order."""
    order = np.random.default_rng(seed).permutation(len(labeled))
    taken = {c: [] for c in range(n_classes)}
    for k in order:
        c = labeled[k].label
        if len(taken[c]) < shots:
            taken[c].append(int(k))
    short = [c for c, ks in taken.items() if len(ks) < shots]
    if short:
        raise PreconditionError(f"class(es) {short} have fewer than {shots} labeled samples")
    return [labeled[k] for k in sorted(k for ks in taken.values() for k in ks)]


# --------------------------------------------------------------------------
# Optimiser
# --------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``params`` and ``state`` change in place."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        if g.shape != p.shape:
            raise PreconditionError(f"gradient for {k} has shape {g.shape}, param {p.shape}")
        m = state.m.setdefault(k, np.zeros_like(p, dtype=np.float64))
        v = state.v.setdefault(k, np.zeros_like(p, dtype=np.float64))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

def _minibatches(batch, cfg, rng):
    """Index subsets of the unlabeled samples; ``[None]`` means the full batch."""
    if cfg.batch_size is None:
        return [None]
    pool = np.array(batch.src_idx + batch.tgt_idx)
    order = pool[rng.permutation(len(pool))]
    return [order[k:k + cfg.batch_size].tolist() for k in range(0, len(order), cfg.batch_size)]


def train(cfg: TrainConfig, data: Dataset, diagnostics=None) -> TrainResult:
    """Semi-supervised training with the TRIC objective.

    Pseudo-anchors, references and alignments are refreshed once per epoch.
    ``history`` holds one dict per epoch with the losses seen during that
    epoch (mean over mini-batches). ``initial_loss`` and ``final_loss`` are
    full-batch values before and after training. ``diagnostics`` is an
    optional callable ``(epoch, batch, choices, terms)``.
    """
    C = len(data.classes)
    shots = select_shots(data.labeled, C, cfg.shots_per_class, cfg.seed)
    if not data.unlabeled_source or not data.unlabeled_target:
        raise PreconditionError("training needs unlabeled source and unlabeled target samples")
    batch = Batch(shots, list(data.unlabeled_source), list(data.unlabeled_target), C)
    d = shots[0].H.shape[1]
    rng = np.random.default_rng(cfg.seed)
    params = init_params(d, cfg.projection_dim, rng if cfg.projection_dim else None)
    tric = TricParams(cfg.lambda1, cfg.lambda2)
    flags = (not cfg.disable_proto, not cfg.disable_dual)
    state = AdamState()
    history = []
    initial = None

    for epoch in range(cfg.epochs):
        choices = select_choices(batch, params)
        if initial is None:
            initial = objective(batch, params, choices, tric, *flags, with_grad=False)[0].total
        parts = []
        for active in _minibatches(batch, cfg, rng):
            terms, grads = objective(batch, params, choices, tric, *flags, active=active)
            if not np.isfinite(terms.total):
                raise DivergenceError(epoch, terms.total)
            parts.append((terms.proto, terms.dual, terms.total))
            adam_step(params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
            project_params(params)
        lp, ld, lt = (float(np.mean(col)) for col in zip(*parts))
        history.append({"epoch": epoch, "proto": lp, "dual": ld, "total": lt})
        if diagnostics is not None:
            diagnostics(epoch, batch, choices, history[-1])
        log.debug("epoch %d: L_proto=%.6g L_dual=%.6g L=%.6g", epoch, lp, ld, lt)

    final_choices = select_choices(batch, params)
    final, _ = objective(batch, params, final_choices, tric, *flags, with_grad=False)
    if not np.isfinite(final.total):
        raise DivergenceError(cfg.epochs, final.total)
    protos, _ = objective(batch, params, final_choices, tric, True, False, with_grad=False)
    model = SereModel(params, protos.prototypes.enhanced, list(data.classes), shots,
                      cfg.lambda1, cfg.lambda2)
    return TrainResult(model, history, initial, final.total)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def confusion_matrix(y_true, y_pred, n_classes):
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, int), np.asarray(y_pred, int)), 1)
    return cm


def uar_report(y_true, y_pred, n_classes, fold=0) -> EvalReport:
    """Per-class recall (NaN for classes absent from ``y_true``) and their mean."""
    if len(y_true) == 0:
        raise PreconditionError("empty evaluation set")
    cm = confusion_matrix(y_true, y_pred, n_classes)
    support = cm.sum(axis=1)
    recall = np.full(n_classes, np.nan)
    present = support > 0
    recall[present] = np.diag(cm)[present] / support[present]
    return EvalReport(recall, float(np.mean(recall[present])), cm, fold, np.asarray(y_pred))


def predict(model: SereModel, samples):
    refs = model.reference_reps()
    ip = irf_params(model.params)
    return np.array([tric_classify(represent(s, model.params), model.prototypes, refs, ip)
                     for s in samples], dtype=int)


def evaluate(model: SereModel, samples, fold=0) -> EvalReport:
    if not samples:
        raise PreconditionError("empty evaluation set")
    if any(s.label is None for s in samples):
        raise PreconditionError("evaluation samples need ground-truth labels")
    y_true = np.array([s.label for s in samples])
    return uar_report(y_true, predict(model, samples), len(model.classes), fold)


def make_folds(labels, k, seed=0):
    """Stratified k-fold split: a list of k sorted index arrays (the held-out parts)."""
    labels = np.asarray(labels)
    if k < 2:
        raise PreconditionError("need k >= 2 folds")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            raise StratificationError(f"class {c!r} has {len(members)} samples, fewer than {k} folds")
        members = rng.permutation(members)
        for n, idx in enumerate(members):
            folds[(n + offset) % k].append(int(idx))
        offset += len(members)
    return [np.array(sorted(f), dtype=int) for f in folds]


def evaluate_folds(model: SereModel, samples, k=5, seed=0):
    """Score a trained model on each stratified fold of ``samples``."""
    if not samples:
        raise PreconditionError("empty evaluation set")
    preds = predict(model, samples)
    y = np.array([s.label for s in samples])
    if k <= 1:
        return [uar_report(y, preds, len(model.classes), 0)]
    return [uar_report(y[idx], preds[idx], len(model.classes), f)
            for f, idx in enumerate(make_folds(y, k, seed))]


def cross_validate(cfg: TrainConfig, data: Dataset, k=None):
    """k-fold protocol over the evaluation target set.

    For each fold, the other folds' evaluation samples join the unlabeled
    target pool (labels dropped), a model is trained and the held-out fold
    is scored.
    """
    k = k or cfg.folds
    labels = [s.label for s in data.eval_target]
    reports = []
    for f, held in enumerate(make_folds(labels, k, cfg.seed)):
        held_set = set(held.tolist())
        extra = [Sample(s.id, s.H, s.D, None, s.language)
                 for i, s in enumerate(data.eval_target) if i not in held_set]
        fold_data = Dataset(data.classes, data.labeled, data.unlabeled_source,
                            data.unlabeled_target + extra)
        result = train(cfg, fold_data)
        reports.append(evaluate(result.model, [data.eval_target[i] for i in held], fold=f))
    return reports


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(model: SereModel, path, config: TrainConfig | None = None):
    """Write a checkpoint directory atomically (built aside, then renamed)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=path.parent, prefix=f".{path.name}."))
    try:
        p = model.params
        packed = np.concatenate([[float(p[k]) for k in SCALAR_ORDER], p["w"]])
        sio.write_tensor(tmp / "params.sere", packed[None, :])
        if "proj" in p:
            sio.write_tensor(tmp / "projection.sere", p["proj"])
        sio.write_tensor(tmp / "prototypes.sere", model.prototypes)
        (tmp / "refs").mkdir()
        for i, s in enumerate(model.references):
            sio.write_tensor(tmp / "refs" / f"{i:04d}.H.sere", s.H)
            sio.write_tensor(tmp / "refs" / f"{i:04d}.D.sere", s.D)
        meta = {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "classes": list(model.classes),
            "d": int(model.references[0].H.shape[1]),
            "lambda1": model.lambda1,
            "lambda2": model.lambda2,
            "references": [{"id": s.id, "label": int(s.label), "language": s.language}
                           for s in model.references],
            "config": config.to_dict() if config is not None else None,
        }
        (tmp / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_checkpoint(path) -> SereModel:
    path = Path(path)
    try:
        meta = json.loads((path / "model.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CompatibilityError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CompatibilityError(f"{path} is not a SERE checkpoint")
    packed = sio.read_tensor(path / "params.sere")[0].astype(np.float64)
    params = {k: np.array(packed[i]) for i, k in enumerate(SCALAR_ORDER)}
    params["w"] = packed[len(SCALAR_ORDER):].copy()
    if (path / "projection.sere").exists():
        params["proj"] = sio.read_tensor(path / "projection.sere").astype(np.float64)
    refs = []
    for i, r in enumerate(meta["references"]):
        H = sio.read_tensor(path / "refs" / f"{i:04d}.H.sere")
        D = sio.read_tensor(path / "refs" / f"{i:04d}.D.sere")
        refs.append(Sample(r["id"], H, D, r["label"], r.get("language", "")))
    protos = sio.read_tensor(path / "prototypes.sere").astype(np.float64)
    return SereModel(params, protos, list(meta["classes"]), refs,
                     meta.get("lambda1", 1.0), meta.get("lambda2", 1.0))


def losses_rows(history):
    return [[h["epoch"], h["proto"], h["dual"], h["total"]] for h in history]


def eval_rows(reports, classes):
    rows = []
    for rep in reports:
        for c, name in enumerate(classes):
            rec = rep.recall[c]
            rows.append([rep.fold, name, "" if np.isnan(rec) else float(rec), rep.uar])
    return rows
