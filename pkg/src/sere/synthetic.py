"""Synthetic cross-lingual toy corpus with known class structure.

Source embeddings are frame-wise draws from class-separated Gaussians; the
target language sees the same distribution through a fixed random rotation
plus noise. Static feature tracks are shared across languages: each class
has one feature with a single abrupt jump and several jumps in the others.
Jump counts survive the delta normalisation (jump sizes do not), so they are
what drives burst intensity.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import special_ortho_group

from . import io as sio
from .idfe import EPSILON, dynamic_inputs
from .tric import Sample
from .trainer import Dataset


@dataclass(frozen=True)
class ToySpec:
    n_classes: int = 4
    d: int = 16
    frames: tuple = (16, 24)
    sigma: float = 0.05
    separation: float = 4.0
    offset: float = 0.0
    target_noise: float = 0.1
    track_noise: float = 0.05
    max_jumps: int = 4
    shots: int = 5
    n_unlabeled_source: int = 40
    n_unlabeled_target: int = 40
    n_eval: int = 40


class ToyGenerator:
    def __init__(self, spec: ToySpec = ToySpec(), seed=0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.rng = rng
        C, d = spec.n_classes, spec.d
        # orthogonal directions scaled so every pair of means is `separation` sigmas apart
        basis = np.linalg.qr(rng.standard_normal((d, d)))[0][:, :C].T
        self.means = spec.offset * np.ones(d) / np.sqrt(d) \
            + spec.separation * spec.sigma / np.sqrt(2.0) * basis
        self.rotation = special_ortho_group.rvs(d, random_state=rng)
        # class c: a single abrupt jump in column c % 4, several elsewhere; each
        # class/feature pair always jumps in the same direction
        self.jumps = np.full((C, 4), spec.max_jumps - 1) + np.arange(C)[:, None] // 4
        self.jumps[np.arange(C), np.arange(C) % 4] = 1
        self.jump_scale = rng.uniform(0.5, 2.0, size=(C, 4))
        self.jump_sign = rng.choice([-1.0, 1.0], size=(C, 4))

    def tracks(self, c, T):
        """(T, 4) static tracks with class-specific jump counts per column."""
        s = self.spec
        out = np.empty((T, 4))
        for k in range(4):
            n = min(int(self.jumps[c, k]), T - 1)
            steps = np.zeros(T)
            where = self.rng.choice(np.arange(1, T), size=n, replace=False)
            steps[where] = self.jump_scale[c, k] * self.jump_sign[c, k]
            out[:, k] = np.cumsum(steps) + s.track_noise * self.rng.standard_normal(T)
        return out

    def utterance(self, c, target=False):
        s = self.spec
        T = int(self.rng.integers(s.frames[0], s.frames[1] + 1))
        H = self.means[c] + s.sigma * self.rng.standard_normal((T, s.d))
        if target:
            H = H @ self.rotation.T + s.target_noise * self.rng.standard_normal((T, s.d))
        return H, self.tracks(c, T)

    def samples(self, n, prefix, target, labeled):
        out, raw = [], []
        C = self.spec.n_classes
        for i in range(n):
            c = i % C
            H, F = self.utterance(c, target)
            _, D = dynamic_inputs(F, H.shape[0], EPSILON)
            uid = f"{prefix}{i:03d}"
            lang = "tgt" if target else "src"
            out.append(Sample(uid, H, D, c if labeled else None, lang))
            raw.append((uid, H, F, c, lang))
        return out, raw


def make_toy_dataset(seed=0, spec: ToySpec = ToySpec(), return_raw=False):
    """Dataset with the 5-shot labeled source, unlabeled pools and eval target.

    With ``return_raw`` also returns per-role lists of
    ``(id, H, static_tracks, class, language)`` for writing to disk.
    """
    gen = ToyGenerator(spec, seed)
    C = spec.n_classes
    lab, r_lab = gen.samples(spec.shots * C, "ls", False, True)
    src, r_src = gen.samples(spec.n_unlabeled_source, "us", False, False)
    tgt, r_tgt = gen.samples(spec.n_unlabeled_target, "ut", True, False)
    ev, r_ev = gen.samples(spec.n_eval, "ev", True, True)
    data = Dataset([f"emo{c}" for c in range(C)], lab, src, tgt, ev)
    if not return_raw:
        return data
    raw = {"labeled_source": r_lab, "unlabeled_source": r_src,
           "unlabeled_target": r_tgt, "eval_target": r_ev}
    return data, raw


def write_toy_corpus(out_dir, seed=0, spec: ToySpec = ToySpec()):
    """Write the toy dataset as tensor files plus ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "emb").mkdir(parents=True, exist_ok=True)
    _, raw = make_toy_dataset(seed, spec, return_raw=True)
    rows = []
    for role, items in raw.items():
        labeled = role in sio.LABELED_ROLES
        for uid, H, F, c, lang in items:
            rel = Path("emb") / f"{uid}.sere"
            sio.write_tensor(out / rel, H)
            sio.write_tensor(sio.features_path(out / rel), F)
            rows.append((uid, rel.as_posix(), lang, role, f"emo{c}" if labeled else ""))
    sio.write_manifest(out / "manifest.csv", rows)
    return out / "manifest.csv"
