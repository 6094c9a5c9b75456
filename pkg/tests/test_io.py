import struct

import numpy as np
import pytest

from sere import io as sio
from sere.errors import EmbeddingImportError, FormatError, ParseError, ValidationError


def test_header_layout():
    data = sio.tensor_to_bytes(np.zeros((2, 3), dtype=np.float32))
    assert len(data) == 16 + 4 * 6
    assert struct.unpack("<4sIII", data[:16]) == (b"SERE", 1, 2, 3)


def test_write_read(tmp_path, rng):
    a = rng.normal(size=(5, 7)).astype(np.float32)
    sio.write_tensor(tmp_path / "x.sere", a)
    assert sio.read_tensor(tmp_path / "x.sere").tobytes() == a.tobytes()


def test_one_dimensional_becomes_row():
    assert sio.tensor_from_bytes(sio.tensor_to_bytes(np.arange(3.0))).shape == (1, 3)


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 2) + b[8:],
    lambda b: b[:-1],
    lambda b: b[:10],
])
def test_corrupt_headers(mutate):
    good = sio.tensor_to_bytes(np.ones((2, 2)))
    with pytest.raises(FormatError):
        sio.tensor_from_bytes(mutate(good))


def test_non_finite_payload_rejected():
    good = bytearray(sio.tensor_to_bytes(np.ones((1, 2))))
    good[16:20] = struct.pack("<f", float("nan"))
    with pytest.raises(ValidationError):
        sio.tensor_from_bytes(bytes(good))
    with pytest.raises(ValidationError):
        sio.tensor_to_bytes(np.array([[np.inf]]))


def test_import_raw():
    raw = np.arange(6, dtype="<f4").tobytes()
    out = sio.import_raw_float32(raw, 2, 3)
    assert len(out) == 40
    assert np.array_equal(sio.tensor_from_bytes(out), np.arange(6, dtype=np.float32).reshape(2, 3))
    with pytest.raises(EmbeddingImportError):
        sio.import_raw_float32(raw, 2, 4)
    with pytest.raises(ValidationError):
        sio.import_raw_float32(np.array([1, np.nan], dtype="<f4").tobytes(), 1, 2)


def test_features_path():
    assert sio.features_path("a/b/utt.sere").as_posix() == "a/b/utt.feat.sere"


def test_csv_is_plain(tmp_path):
    sio.write_csv(tmp_path / "o.csv", ["a", "b"], [[1, 0.1], [2, 1e-20]])
    assert (tmp_path / "o.csv").read_bytes() == b"a,b\n1,0.1\n2,1e-20\n"


def _manifest(tmp_path, body):
    (tmp_path / "x.sere").write_bytes(sio.tensor_to_bytes(np.ones((2, 2))))
    p = tmp_path / "m.csv"
    p.write_text("id,path,language,role,label\n" + body, encoding="utf-8")
    return p


def test_manifest_ok(tmp_path):
    p = _manifest(tmp_path, "u1,x.sere,en,labeled_source,happy\nu2,x.sere,de,unlabeled_target,\n")
    rows = sio.read_manifest(p)
    assert [r.role for r in rows] == ["labeled_source", "unlabeled_target"]
    assert rows[0].path == tmp_path / "x.sere" and rows[1].label is None


@pytest.mark.parametrize("body,line,needle", [
    ("u1,x.sere,en,teacher,happy\n", 2, "unknown role"),
    ("u1,x.sere,en,labeled_source,\n", 2, "needs a label"),
    ("u1,x.sere,en,unlabeled_source,sad\n", 2, "must not carry"),
    ("u1,x.sere,en,unlabeled_source,\nu1,x.sere,en,unlabeled_source,\n", 3, "duplicate"),
    ("u1,missing.sere,en,unlabeled_source,\n", 2, "does not exist"),
    ("u1,x.sere,en\n", 2, "expected 5"),
])
def test_manifest_errors_name_the_line(tmp_path, body, line, needle):
    with pytest.raises(ParseError) as info:
        sio.read_manifest(_manifest(tmp_path, body))
    assert info.value.line == line
    assert needle in str(info.value)


def test_manifest_class_list(tmp_path):
    p = _manifest(tmp_path, "u1,x.sere,en,labeled_source,bored\n")
    with pytest.raises(ParseError):
        sio.read_manifest(p, classes=["happy", "sad"])
