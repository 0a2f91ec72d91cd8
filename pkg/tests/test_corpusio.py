import struct

import numpy as np
import pytest

from matdnn.corpusio import (FeatureSequence, FormatError, Manifest, ManifestEntry, ValidationError,
                             check_tiling, feature_bytes, read_features, read_gold, read_labels,
                             read_manifest, read_model, read_relevance, write_features, write_gold,
                             write_labels, write_manifest, write_model, write_relevance, write_results)
from matdnn.match import SearchResult


def test_manifest_order_preserved(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("u1\ta.zrf\ts1\nu2\tb.zrf\ts1\nu3\tc.zrf\ts2\n")
    man = read_manifest(p)
    assert man.ids == ["u1", "u2", "u3"]
    assert man.speakers() == {"u1": "s1", "u2": "s1", "u3": "s2"}


def test_manifest_empty(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("")
    assert len(read_manifest(p)) == 0


def test_manifest_duplicate_cites_line(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("u1\ta\ts\nu2\tb\ts\nu3\tc\ts\nu1\td\ts\n")
    with pytest.raises(ValidationError, match=r"m\.tsv:4.*line 1"):
        read_manifest(p)


def test_manifest_malformed_line(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("u1\ta\ts\nu2 b s\n")
    with pytest.raises(FormatError, match=":2"):
        read_manifest(p)


def test_manifest_round_trip(tmp_path):
    man = Manifest([ManifestEntry("a", "x.zrf", "s0"), ManifestEntry("b", "y.zrf", "s1")])
    write_manifest(man, tmp_path / "m.tsv")
    assert read_manifest(tmp_path / "m.tsv").ids == ["a", "b"]


def test_features_round_trip_bit_exact(tmp_path):
    seq = FeatureSequence(np.array([[1, 2, 3], [4, 5, 6]], dtype=np.float32), 10, "u")
    write_features(seq, tmp_path / "u.zrf")
    back = read_features(tmp_path / "u.zrf")
    assert back.frames.dtype == np.float32
    assert back.frames.tobytes() == seq.frames.tobytes()
    assert back.frame_period == 10


def test_feature_header_layout():
    seq = FeatureSequence(np.zeros((2, 3), dtype=np.float32), 25)
    data = feature_bytes(seq)
    assert data[:4] == b"ZRF1"
    assert struct.unpack("<III", data[4:16]) == (2, 3, 25)
    assert len(data) == 16 + 2 * 3 * 4


def test_features_byte_stable():
    x = np.arange(6, dtype=np.float64).reshape(2, 3) / 7
    assert feature_bytes(FeatureSequence(x)) == feature_bytes(FeatureSequence(x.astype(">f8")))


def test_truncated_payload(tmp_path):
    data = feature_bytes(FeatureSequence(np.ones((4, 2), dtype=np.float32)))
    (tmp_path / "t.zrf").write_bytes(data[:-4])
    with pytest.raises(FormatError, match="truncated"):
        read_features(tmp_path / "t.zrf")


def test_bad_magic(tmp_path):
    (tmp_path / "t.zrf").write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError, match="magic"):
        read_features(tmp_path / "t.zrf")


def test_labels_single_segment_round_trip(tmp_path):
    labels = {(3, 50): {"u1": np.array([[7, 0, 42]])}}
    write_labels(labels, tmp_path / "l.tsv")
    assert (tmp_path / "l.tsv").read_text() == "u1\t3,50\t7\t0\t42\n"
    back = read_labels(tmp_path / "l.tsv")
    assert np.array_equal(back[(3, 50)]["u1"], [[7, 0, 42]])


def test_tiling_accepts_and_rejects():
    check_tiling(np.array([[0, 0, 10], [1, 10, 20]]), 20)
    with pytest.raises(ValidationError, match="overlap"):
        check_tiling(np.array([[0, 0, 10], [1, 9, 20]]), 20)
    with pytest.raises(ValidationError, match="gap"):
        check_tiling(np.array([[0, 0, 10], [1, 11, 20]]), 20)


def test_write_labels_rejects_overlap(tmp_path):
    with pytest.raises(ValidationError):
        write_labels({(3, 4): {"u": np.array([[0, 0, 10], [1, 9, 20]])}}, tmp_path / "l.tsv")


def test_sixteen_layers_sorted(tmp_path):
    grid = [(m, n) for m in (3, 5, 7, 9) for n in (50, 100, 300, 500)]
    labels = {layer: {"u": np.array([[1, 0, 20], [2, 20, 40]])} for layer in reversed(grid)}
    write_labels(labels, tmp_path / "l.tsv")
    lines = (tmp_path / "l.tsv").read_text().splitlines()
    assert len(lines) == 32
    layers = [tuple(int(v) for v in ln.split("\t")[1].split(",")) for ln in lines]
    assert layers[::2] == sorted(grid)
    assert len(read_labels(tmp_path / "l.tsv")) == 16


def test_model_round_trip(tmp_path):
    arrays = {"a": np.random.default_rng(0).normal(size=(3, 4)), "b": np.arange(5)}
    write_model(tmp_path / "x.model", "thing", {"k": [1, 2], "s": "v"}, arrays)
    kind, meta, back = read_model(tmp_path / "x.model")
    assert kind == "thing" and meta == {"k": [1, 2], "s": "v"}
    assert np.array_equal(back["a"], arrays["a"]) and back["b"].dtype == np.int64
    with pytest.raises(FormatError):
        read_model(tmp_path / "x.model", kind="other")


def test_gold_relevance_results(tmp_path):
    gold = {"u": {"speaker": "s", "segments": [("a", 0, 3), ("b", 3, 5)]}}
    write_gold(gold, tmp_path / "g.tsv")
    assert read_gold(tmp_path / "g.tsv") == gold
    write_relevance({"q": {"d2", "d1"}}, tmp_path / "r.tsv")
    assert read_relevance(tmp_path / "r.tsv") == {"q": {"d1", "d2"}}
    write_results([SearchResult("q", [("d1", 0.5), ("d2", 1.0)])], tmp_path / "res.tsv")
    assert (tmp_path / "res.tsv").read_text().splitlines()[1] == "q\td2\t2\t1.0"
