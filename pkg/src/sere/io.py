"""On-disk formats: TensorFile, manifests, CSV tables and atomic writes."""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmbeddingImportError, FormatError, ParseError, ValidationError

MAGIC = b"SERE"
VERSION = 1
HEADER = struct.Struct("<4sIII")

ROLES = ("labeled_source", "unlabeled_source", "unlabeled_target", "eval_target")
LABELED_ROLES = ("labeled_source", "eval_target")
MANIFEST_HEADER = ["id", "path", "language", "role", "label"]


# --------------------------------------------------------------------------
# Atomic writes
# --------------------------------------------------------------------------

def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# --------------------------------------------------------------------------
# TensorFile
# --------------------------------------------------------------------------

def tensor_to_bytes(array) -> bytes:
    a = np.asarray(array)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValidationError(f"TensorFile holds 2-D arrays, got shape {a.shape}")
    a = a.astype("<f4")
    if not np.all(np.isfinite(a)):
        raise ValidationError("TensorFile payload contains non-finite values")
    rows, cols = a.shape
    return HEADER.pack(MAGIC, VERSION, rows, cols) + np.ascontiguousarray(a).tobytes()


def tensor_from_bytes(data: bytes) -> np.ndarray:
    """Parse a TensorFile; returns a float32 (rows, cols) array."""
    if len(data) < HEADER.size:
        raise FormatError(f"TensorFile shorter than {HEADER.size}-byte header")
    magic, version, rows, cols = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported TensorFile version {version}")
    expected = HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(f"payload length {len(data)} != expected {expected} for {rows}x{cols}")
    a = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(rows, cols)
    if not np.all(np.isfinite(a)):
        raise ValidationError("TensorFile payload contains non-finite values")
    return a.astype(np.float32)


def write_tensor(path, array):
    atomic_write_bytes(path, tensor_to_bytes(array))


def read_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def import_raw_float32(raw: bytes, rows: int, cols: int) -> bytes:
    """Validate a headerless little-endian float32 dump and wrap it as a TensorFile."""
    if rows < 0 or cols < 0:
        raise EmbeddingImportError("rows and cols must be non-negative")
    if len(raw) != 4 * rows * cols:
        raise EmbeddingImportError(
            f"declared {rows}x{cols} needs {4 * rows * cols} bytes, got {len(raw)}")
    a = np.frombuffer(raw, dtype="<f4").reshape(rows, cols)
    if not np.all(np.isfinite(a)):
        raise ValidationError("embedding dump contains non-finite values")
    return tensor_to_bytes(a)


def features_path(embedding_path) -> Path:
    """Static-feature file paired with an embedding file: ``x.sere`` -> ``x.feat.sere``."""
    p = Path(embedding_path)
    return p.with_name(p.stem + ".feat" + (p.suffix or ".sere"))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def fmt_number(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_number(v) if isinstance(v, (int, float, np.number)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows):
    atomic_write_text(path, csv_text(header, rows))


def read_csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


# --------------------------------------------------------------------------
# Manifest
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    id: str
    path: Path
    language: str
    role: str
    label: str | None
    line: int


def read_manifest(path, classes=None, check_paths=True) -> list[ManifestRow]:
    """Parse and validate a manifest CSV.

    Relative paths resolve against the manifest's directory. ``classes``, if
    given, restricts the allowed labels.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty manifest", line=1, path=path) from None
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise ParseError(f"header must be {','.join(MANIFEST_HEADER)}", line=1, path=path)

        rows, seen = [], set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != 5:
                raise ParseError(f"expected 5 fields, got {len(rec)}", line=lineno, path=path)
            uid, p, lang, role, label = (f.strip() for f in rec)
            if not uid:
                raise ParseError("empty id", line=lineno, path=path)
            if uid in seen:
                raise ParseError(f"duplicate id {uid!r}", line=lineno, path=path)
            seen.add(uid)
            if role not in ROLES:
                raise ParseError(f"unknown role {role!r} in row {uid!r}", line=lineno, path=path)
            if role in LABELED_ROLES:
                if not label:
                    raise ParseError(f"row {uid!r} with role {role} needs a label", line=lineno, path=path)
                if classes is not None and label not in classes:
                    raise ParseError(f"label {label!r} not in class list", line=lineno, path=path)
            elif label:
                raise ParseError(f"row {uid!r} with role {role} must not carry a label",
                                 line=lineno, path=path)
            resolved = Path(p) if Path(p).is_absolute() else base / p
            if check_paths and not resolved.exists():
                raise ParseError(f"path {p!r} does not exist", line=lineno, path=path)
            rows.append(ManifestRow(uid, resolved, lang, role, label or None, lineno))
    return rows


def write_manifest(path, rows):
    """``rows`` are (id, path, language, role, label) tuples."""
    write_csv(path, MANIFEST_HEADER, [[str(x) if x is not None else "" for x in r] for r in rows])
