"""Command-line entry point: ``sere <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as sio
from .dsp import FeatureConfig, decode_wav, extract_static
from .errors import (CompatibilityError, DivergenceError, ParseError, PreconditionError,
                     ProjectionError, SereError, ShapeError)
from .idfe import EPSILON, EnhancedRepresentation, dynamic_inputs
from .irf import IrfParams, align, burst_intensity, irf_score, resonance_matrix
from .tric import Sample, init_params, irf_params, pool_semantic, represent
from .trainer import (TrainConfig, evaluate_folds, load_checkpoint, load_dataset, losses_rows,
                      eval_rows, save_checkpoint, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

LOSSES_HEADER = ["epoch", "L_proto", "L_dual", "L_total"]
EVAL_HEADER = ["fold", "class", "recall", "uar"]
PLOT_HEADER = ["id", "label", "pc1", "pc2"]

log = logging.getLogger("sere")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# extract
# --------------------------------------------------------------------------

def _extract_one(wav, out_dir, cfg):
    wav = Path(wav)
    audio = decode_wav(wav.read_bytes())
    feats = extract_static(audio, cfg=cfg)
    target = (Path(out_dir) if out_dir else wav.parent) / f"{wav.stem}.feat.sere"
    sio.write_tensor(target, feats)
    return target


def cmd_extract(args):
    cfg = FeatureConfig(frame_ms=args.frame_ms, hop_ms=args.hop_ms, fmin=args.fmin,
                        fmax=args.fmax, n_mels=args.n_mels, n_fft=args.n_fft)
    if args.out_dir:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)

    def job(wav):
        try:
            return wav, _extract_one(wav, args.out_dir, cfg), None
        except (OSError, SereError, ValueError) as exc:
            return wav, None, exc

    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
        results = list(pool.map(job, args.wavs))
    failed = 0
    for wav, target, exc in results:
        if exc is None:
            print(target)
        else:
            failed += 1
            print(f"error: {wav}: {exc}", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


# --------------------------------------------------------------------------
# import
# --------------------------------------------------------------------------

def cmd_import(args):
    raw = Path(args.raw).read_bytes()
    data = sio.import_raw_float32(raw, args.rows, args.cols)
    sio.atomic_write_bytes(args.output, data)
    print(f"{args.output}: {args.rows}x{args.cols}, {len(data)} bytes")
    return EXIT_OK


# --------------------------------------------------------------------------
# resonate
# --------------------------------------------------------------------------

def _load_rep(path, params, irf, epsilon):
    """Enhanced representation for a tensor file.

    When a paired ``.feat.sere`` file exists the file holds H and U is built
    with the gate in ``params``; otherwise the file already holds U.
    """
    arr = sio.read_tensor(path).astype(np.float64)
    feats = sio.features_path(path)
    if feats.exists():
        _, D = dynamic_inputs(sio.read_tensor(feats).astype(np.float64), arr.shape[0], epsilon)
        return represent(Sample(Path(path).stem, arr, D), params)
    if arr.shape[1] < 5:
        raise ShapeError(f"{path}: a U file needs at least 5 columns, got {arr.shape[1]}")
    return EnhancedRepresentation(arr, burst_intensity(arr[:, -4:], irf))


def cmd_resonate(args):
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint).params
    else:
        d = sio.read_tensor(args.a).shape[1]
        params = init_params(d)
        for k in ("alpha", "beta", "gamma", "delta"):
            params[k] = np.array(float(getattr(args, k)))
    irf = irf_params(params)
    a = _load_rep(args.a, params, irf, args.epsilon)
    b = _load_rep(args.b, params, irf, args.epsilon)
    if a.U.shape[1] != b.U.shape[1]:
        raise ShapeError(f"dimension mismatch: {args.a} has {a.U.shape[1]} columns, "
                         f"{args.b} has {b.U.shape[1]}")
    R = resonance_matrix(a.U, a.B, b.U, b.B, irf)
    j = align(R)
    score = irf_score(R, j)
    if args.r_csv:
        sio.write_csv(args.r_csv, [f"t{k}" for k in range(R.shape[1])], R.tolist())
    if args.align_csv:
        rows = [[t, int(j[t]), float(R[t, j[t]])] for t in range(len(j))]
        sio.write_csv(args.align_csv, ["row", "j_star", "resonance"], rows)
    print(f"{score:.6f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

_OVERRIDES = {
    "epochs": "epochs", "lr": "learning_rate", "seed": "seed", "lambda1": "lambda1",
    "lambda2": "lambda2", "shots": "shots_per_class", "batch_size": "batch_size",
    "projection_dim": "projection_dim", "folds": "folds",
}


def resolve_config(args, environ=os.environ):
    """Config file, then SERE_SEED, then command-line flags (flags win)."""
    data = {}
    if getattr(args, "config", None):
        data = TrainConfig.from_json(args.config).to_dict()
    if environ.get("SERE_SEED"):
        try:
            data["seed"] = int(environ["SERE_SEED"])
        except ValueError:
            raise UsageError(f"SERE_SEED must be an integer, got {environ['SERE_SEED']!r}")
    for flag, name in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[name] = value
    if getattr(args, "disable_proto", False):
        data["disable_proto"] = True
    if getattr(args, "disable_dual", False):
        data["disable_dual"] = True
    return TrainConfig.from_dict(data)


class _Diagnostics:
    """Per-epoch pseudo-label table and IRF histogram."""

    bins = np.linspace(-1.0, 1.0, 21)

    def __init__(self):
        self.pseudo, self.hist = [], []

    def __call__(self, epoch, batch, choices, losses):
        tgt = batch.unlabeled_target
        for j, s in enumerate(tgt):
            anchor = batch.labeled[int(choices.anchors[j])]
            self.pseudo.append([epoch, s.id, anchor.id, int(choices.pseudo_labels[j]),
                                float(choices.anchor_irf[j])])
        values = np.concatenate([choices.anchor_irf, choices.dual_irf])
        counts, _ = np.histogram(np.clip(values, -1.0, 1.0), bins=self.bins)
        for k, n in enumerate(counts):
            self.hist.append([epoch, float(self.bins[k]), float(self.bins[k + 1]), int(n)])

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        sio.write_csv(out_dir / "pseudo_labels.csv",
                      ["epoch", "id", "anchor_id", "pseudo_label", "irf"], self.pseudo)
        sio.write_csv(out_dir / "irf_hist.csv", ["epoch", "bin_lo", "bin_hi", "count"], self.hist)


def cmd_train(args):
    cfg = resolve_config(args)
    data = load_dataset(args.manifest, classes=cfg.classes, epsilon=cfg.epsilon)
    diag = _Diagnostics() if args.diagnostics_dir else None
    result = train(cfg, data, diagnostics=diag)
    out = Path(args.output)
    save_checkpoint(result.model, out, cfg)
    losses = Path(args.losses) if args.losses else out.parent / "losses.csv"
    sio.write_csv(losses, LOSSES_HEADER, losses_rows(result.history))
    if diag is not None:
        diag.write(args.diagnostics_dir)
    print(f"initial L_SERE {result.initial_loss:.6f}, final L_SERE {result.final_loss:.6f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def _manifest_samples(args, model, roles):
    classes = list(model.classes)
    try:
        data = load_dataset(args.manifest, classes=classes)
    except ParseError as exc:
        if "not in class list" in str(exc):
            raise CompatibilityError(f"manifest labels do not match checkpoint classes "
                                     f"{classes}: {exc}") from exc
        raise
    d = model.references[0].H.shape[1]
    pools = {"labeled_source": data.labeled, "unlabeled_source": data.unlabeled_source,
             "unlabeled_target": data.unlabeled_target, "eval_target": data.eval_target}
    samples = [s for r in roles for s in pools[r]]
    if samples and samples[0].H.shape[1] != d:
        raise CompatibilityError(f"manifest embeddings have d={samples[0].H.shape[1]}, "
                                 f"checkpoint expects {d}")
    return samples


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    samples = _manifest_samples(args, model, ["eval_target"])
    if not samples:
        raise PreconditionError("manifest has no eval_target rows")
    seed = int(os.environ["SERE_SEED"]) if os.environ.get("SERE_SEED") else args.seed
    reports = evaluate_folds(model, samples, args.folds, seed)
    sio.write_csv(args.output, EVAL_HEADER, eval_rows(reports, model.classes))
    for rep in reports:
        print(f"fold {rep.fold}: UAR {rep.uar:.6f}")
    print(f"mean UAR {np.mean([r.uar for r in reports]):.6f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# export-plot
# --------------------------------------------------------------------------

def pca_2d(X):
    """Project rows of X onto their top two principal axes (via SVD)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 3:
        raise ProjectionError(f"need at least 3 samples for a projection, got {len(X)}")
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    out = np.zeros((X.shape[0], 2))
    k = min(2, Vt.shape[0])
    out[:, :k] = Xc @ Vt[:k].T
    return out


def cmd_export_plot(args):
    model = load_checkpoint(args.checkpoint)
    samples = _manifest_samples(args, model, args.roles)
    Z = [pool_semantic(represent(s, model.params).U) for s in samples]
    if len(Z) < 3:
        raise ProjectionError(f"need at least 3 samples for a projection, got {len(Z)}")
    P = pca_2d(np.stack(Z))
    rows = [[s.id, model.classes[s.label] if s.label is not None else "", p[0], p[1]]
            for s, p in zip(samples, P)]
    sio.write_csv(args.output, PLOT_HEADER, rows)
    print(f"{args.output}: {len(rows)} samples")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="sere", description="Cross-lingual speech emotion resonance toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    e = sub.add_parser("extract", help="static features (F0, energy, centroid, MFCC c2) from WAV")
    e.add_argument("wavs", nargs="+")
    e.add_argument("--out-dir", help="output directory (default: next to each WAV)")
    e.add_argument("--frame-ms", type=float, default=25.0)
    e.add_argument("--hop-ms", type=float, default=10.0)
    e.add_argument("--fmin", type=float, default=80.0)
    e.add_argument("--fmax", type=float, default=1000.0)
    e.add_argument("--n-mels", type=int, default=40)
    e.add_argument("--n-fft", type=int, default=512)
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_extract)

    i = sub.add_parser("import", help="wrap a raw float32 dump into a tensor file")
    i.add_argument("raw")
    i.add_argument("--rows", type=int, required=True)
    i.add_argument("--cols", type=int, required=True)
    i.add_argument("-o", "--output", required=True)
    i.set_defaults(func=cmd_import)

    r = sub.add_parser("resonate", help="resonance matrix, alignment and IRF of two utterances")
    r.add_argument("a")
    r.add_argument("b")
    r.add_argument("--checkpoint", help="take gate and intensity parameters from a checkpoint")
    r.add_argument("--alpha", type=float, default=1.0)
    r.add_argument("--beta", type=float, default=1.0)
    r.add_argument("--gamma", type=float, default=1.0)
    r.add_argument("--delta", type=float, default=1.0)
    r.add_argument("--epsilon", type=float, default=EPSILON)
    r.add_argument("--r-csv", help="write the resonance matrix here")
    r.add_argument("--align-csv", help="write row,j_star,resonance here")
    r.set_defaults(func=cmd_resonate)

    t = sub.add_parser("train", help="train on a manifest")
    t.add_argument("--config", help="JSON file with TrainConfig fields")
    t.add_argument("--manifest", required=True)
    t.add_argument("-o", "--output", required=True, help="checkpoint directory")
    t.add_argument("--losses", help="losses.csv path (default: next to the checkpoint)")
    t.add_argument("--diagnostics-dir", help="write per-epoch pseudo-label and IRF tables")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--shots", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--projection-dim", type=int)
    t.add_argument("--folds", type=int)
    t.add_argument("--disable-proto", action="store_true")
    t.add_argument("--disable-dual", action="store_true")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="per-fold UAR of a checkpoint on eval_target rows")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--manifest", required=True)
    v.add_argument("-o", "--output", default="eval.csv")
    v.add_argument("--folds", type=int, default=5)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-plot", help="2-D PCA of pooled representations as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--manifest", required=True)
    x.add_argument("-o", "--output", default="projection.csv")
    x.add_argument("--roles", nargs="+", default=["eval_target"], choices=sio.ROLES)
    x.set_defaults(func=cmd_export_plot)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SereError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
