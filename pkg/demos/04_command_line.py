"""The command-line pipeline on a toy corpus written to a temp directory.

Equivalent shell session:

    sere train --manifest toy/manifest.csv -o run/ckpt --epochs 20
    sere eval --checkpoint run/ckpt --manifest toy/manifest.csv -o run/eval.csv
    sere export-plot --checkpoint run/ckpt --manifest toy/manifest.csv -o run/pca.csv
    sere resonate toy/emb/ev000.sere toy/emb/ev004.sere
"""
import tempfile
from pathlib import Path

from sere.cli import main
from sere.synthetic import write_toy_corpus

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    manifest = write_toy_corpus(tmp / "toy", seed=1)
    print(manifest.read_text().splitlines()[:3])
    ckpt = tmp / "run" / "ckpt"
    steps = [
        ["train", "--manifest", manifest, "-o", ckpt, "--epochs", "20"],
        ["eval", "--checkpoint", ckpt, "--manifest", manifest, "-o", tmp / "run" / "eval.csv"],
        ["export-plot", "--checkpoint", ckpt, "--manifest", manifest, "-o", tmp / "run" / "pca.csv"],
        ["resonate", tmp / "toy" / "emb" / "ev000.sere", tmp / "toy" / "emb" / "ev004.sere"],
    ]
    for argv in steps:
        print("$ sere", " ".join(str(a).replace(str(tmp) + "/", "") for a in argv))
        rc = main([str(a) for a in argv])
        assert rc == 0, rc
    print((tmp / "run" / "losses.csv").read_text().splitlines()[-1])
    print((tmp / "run" / "pca.csv").read_text().splitlines()[:3])
