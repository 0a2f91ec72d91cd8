"""On-disk artifacts: manifests, ZRF1 feature files, label files, model files.

All formats are little-endian and byte-stable across platforms.

Feature file (ZRF1)::

    bytes 0-3    b"ZRF1"
    bytes 4-7    frame count      (u32 LE)
    bytes 8-11   dimension        (u32 LE)
    bytes 12-15  frame period ms  (u32 LE)
    bytes 16-    row-major float32 LE payload

Label file: TSV ``utt<TAB>m,n<TAB>token<TAB>start<TAB>end`` (frames, end exclusive).

Manifest: TSV ``utt<TAB>path<TAB>speaker``.

Model file: a text header terminated by a ``payload`` line, followed by the raw
little-endian array data in header order::

    ZRMODEL 1
    kind tokenset
    meta m 3
    array means <f8 4,3,12
    payload
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

FEATURE_MAGIC = b"ZRF1"
MODEL_MAGIC = "ZRMODEL"
MODEL_VERSION = 1

Layer = tuple  # (m, n)


class FormatError(ValueError):
    """A file does not follow its documented layout."""


class ValidationError(ValueError):
    """Content parses but violates an invariant."""


@dataclass
class FeatureSequence:
    """A T x d matrix of frame vectors for one utterance."""

    frames: np.ndarray
    frame_period: int = 10
    utt_id: str = ""

    def __post_init__(self):
        self.frames = np.atleast_2d(np.asarray(self.frames))
        if self.frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {self.frames.shape}")
        if self.frame_period < 1:
            raise ValueError("frame period must be >= 1 ms")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.n_frames


@dataclass
class ManifestEntry:
    utt_id: str
    path: str
    speaker: str


@dataclass
class Manifest:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list:
        return [e.utt_id for e in self.entries]

    def speakers(self) -> dict:
        return {e.utt_id: e.speaker for e in self.entries}


# ---------------------------------------------------------------------------
# manifests

def read_manifest(path) -> Manifest:
    """Parse a tab-separated manifest, preserving line order.

    Paths are returned as written; relative paths are resolved by the caller
    (see :func:`resolve_path`).
    """
    entries = []
    seen = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not all(p.strip() for p in parts):
                raise FormatError(f"{path}:{lineno}: expected 'utt<TAB>path<TAB>speaker'")
            utt, p, spk = (s.strip() for s in parts)
            if utt in seen:
                raise ValidationError(
                    f"{path}:{lineno}: duplicate utterance id {utt!r} (first on line {seen[utt]})")
            seen[utt] = lineno
            entries.append(ManifestEntry(utt, p, spk))
    return Manifest(entries)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest:
            f.write(f"{e.utt_id}\t{e.path}\t{e.speaker}\n")


def resolve_path(p: str, relative_to) -> Path:
    p = Path(p)
    if p.is_absolute():
        return p
    return Path(relative_to).parent / p


# ---------------------------------------------------------------------------
# features

def feature_bytes(seq: FeatureSequence) -> bytes:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    if frames.size == 0:
        raise ValidationError("cannot serialize an empty feature sequence")
    t, d = frames.shape
    header = FEATURE_MAGIC + struct.pack("<III", t, d, int(seq.frame_period))
    return header + frames.tobytes(order="C")


def write_features(seq: FeatureSequence, path) -> None:
    _atomic_write(path, feature_bytes(seq))


def read_features(path, utt_id: str | None = None) -> FeatureSequence:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a ZRF1 feature file")
    t, d, period = struct.unpack("<III", data[4:16])
    if d < 1 or period < 1:
        raise FormatError(f"{path}: invalid header (dim={d}, period={period})")
    expected = 16 + 4 * t * d
    if len(data) < expected:
        raise FormatError(f"{path}: truncated payload ({len(data) - 16} of {expected - 16} bytes)")
    if len(data) > expected:
        raise FormatError(f"{path}: {len(data) - expected} trailing bytes after payload")
    frames = np.frombuffer(data, dtype="<f4", count=t * d, offset=16).reshape(t, d).copy()
    if utt_id is None:
        utt_id = Path(path).stem
    return FeatureSequence(frames, period, utt_id)


# ---------------------------------------------------------------------------
# labels

def check_tiling(segments: np.ndarray, n_frames: int | None = None,
                 n_tokens: int | None = None, where: str = "") -> None:
    """Raise ValidationError unless ``segments`` tile ``[0, n_frames)``.

    ``segments`` is an int array of rows ``(token, start, end)``.
    """
    seg = np.asarray(segments)
    if seg.ndim != 2 or seg.shape[1] != 3 or len(seg) == 0:
        raise ValidationError(f"{where}: segments must be a non-empty (k, 3) array")
    starts, ends, toks = seg[:, 1], seg[:, 2], seg[:, 0]
    if starts[0] != 0:
        raise ValidationError(f"{where}: first segment starts at {starts[0]}, not 0")
    if np.any(ends <= starts):
        raise ValidationError(f"{where}: segment with start >= end")
    bad = np.nonzero(starts[1:] != ends[:-1])[0]
    if len(bad):
        k = bad[0]
        kind = "overlap" if starts[k + 1] < ends[k] else "gap"
        raise ValidationError(
            f"{where}: {kind} between [{starts[k]},{ends[k]}) and [{starts[k + 1]},{ends[k + 1]})")
    if n_frames is not None and ends[-1] != n_frames:
        raise ValidationError(f"{where}: last segment ends at {ends[-1]}, expected {n_frames}")
    if np.any(toks < 0) or (n_tokens is not None and np.any(toks >= n_tokens)):
        raise ValidationError(f"{where}: token id out of range")


def write_labels(labels: Mapping, path, frame_counts: Mapping | None = None) -> None:
    """Write ``{(m, n): {utt: segments}}`` as a label file.

    Lines are ordered by utterance id, then layer, then start frame.
    """
    rows = []
    for layer, per_utt in labels.items():
        m, n = (int(v) for v in layer)
        for utt, seg in per_utt.items():
            seg = np.asarray(seg, dtype=np.int64)
            check_tiling(seg, None if frame_counts is None else frame_counts[utt],
                         n, where=f"{utt} layer {m},{n}")
            for tok, s, e in seg:
                rows.append((utt, m, n, int(s), int(tok), int(e)))
    rows.sort()
    text = "".join(f"{u}\t{m},{n}\t{tok}\t{s}\t{e}\n" for u, m, n, s, tok, e in rows)
    _atomic_write(path, text.encode("utf-8"))


def read_labels(path) -> dict:
    """Inverse of :func:`write_labels`."""
    acc: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            try:
                utt, layer, tok, s, e = parts
                m, n = (int(v) for v in layer.split(","))
                row = (int(tok), int(s), int(e))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed label line") from None
            acc.setdefault((m, n), {}).setdefault(utt, []).append(row)
    out = {}
    for layer in sorted(acc):
        out[layer] = {}
        for utt in sorted(acc[layer]):
            seg = np.array(sorted(acc[layer][utt], key=lambda r: r[1]), dtype=np.int64)
            check_tiling(seg, None, layer[1], where=f"{path}: {utt} layer {layer}")
            out[layer][utt] = seg
    return out


# ---------------------------------------------------------------------------
# model files

def write_model(path, kind: str, meta: Mapping, arrays: Mapping) -> None:
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}", f"kind {kind}"]
    for key, value in meta.items():
        lines.append(f"meta {key} {json.dumps(value, sort_keys=True)}")
    payload = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dtype = "<i8" if np.issubdtype(arr.dtype, np.integer) else "<f8"
        arr = np.ascontiguousarray(arr, dtype=dtype)
        shape = ",".join(str(s) for s in arr.shape)
        lines.append(f"array {name} {dtype} {shape}")
        payload.append(arr.tobytes(order="C"))
    lines.append("payload")
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8") + b"".join(payload))


def read_model(path, kind: str | None = None) -> tuple:
    """Return ``(kind, meta, arrays)`` from a model file."""
    data = Path(path).read_bytes()
    pos = 0
    header = []
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise FormatError(f"{path}: missing payload marker")
        line = data[pos:nl].decode("utf-8")
        pos = nl + 1
        if line == "payload":
            break
        header.append(line)
    if not header or header[0].split()[0] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file")
    version = int(header[0].split()[1])
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model format version {version}")
    file_kind = None
    meta, specs = {}, []
    for line in header[1:]:
        tag, rest = line.split(" ", 1)
        if tag == "kind":
            file_kind = rest
        elif tag == "meta":
            key, value = rest.split(" ", 1)
            meta[key] = json.loads(value)
        elif tag == "array":
            name, dtype, shape = rest.split(" ")
            dims = tuple(int(s) for s in shape.split(",")) if shape else ()
            specs.append((name, dtype, dims))
        else:
            raise FormatError(f"{path}: unknown header tag {tag!r}")
    if kind is not None and file_kind != kind:
        raise FormatError(f"{path}: expected a {kind} model, found {file_kind}")
    arrays = {}
    for name, dtype, dims in specs:
        count = int(np.prod(dims)) if dims else 1
        nbytes = 8 * count
        if pos + nbytes > len(data):
            raise FormatError(f"{path}: truncated payload in array {name}")
        arrays[name] = np.frombuffer(data, dtype=dtype, count=count, offset=pos).reshape(dims).copy()
        pos += nbytes
    if pos != len(data):
        raise FormatError(f"{path}: trailing bytes after payload")
    return file_kind, meta, arrays


# ---------------------------------------------------------------------------
# gold alignments, queries, search results

def read_gold(path) -> dict:
    """Read ``utt<TAB>label<TAB>start<TAB>end<TAB>speaker`` rows.

    Returns ``{utt: {"speaker": str, "segments": [(label, start, end), ...]}}``.
    """
    gold: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 tab-separated fields")
            utt, label, s, e, spk = parts
            s, e = int(s), int(e)
            if s >= e:
                raise ValidationError(f"{path}:{lineno}: start >= end")
            entry = gold.setdefault(utt, {"speaker": spk, "segments": []})
            entry["segments"].append((label, s, e))
    for entry in gold.values():
        entry["segments"].sort(key=lambda r: r[1])
    return gold


def write_gold(gold: Mapping, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for utt in gold:
            spk = gold[utt]["speaker"]
            for label, s, e in gold[utt]["segments"]:
                f.write(f"{utt}\t{label}\t{s}\t{e}\t{spk}\n")


def read_relevance(path) -> dict:
    rel: dict = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'query<TAB>doc'")
            rel.setdefault(parts[0], set()).add(parts[1])
    return rel


def write_relevance(rel: Mapping, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for q in rel:
            for d in sorted(rel[q]):
                f.write(f"{q}\t{d}\n")


def write_results(results: Iterable, path) -> None:
    """Write search results as ``query<TAB>doc<TAB>rank<TAB>distance``."""
    lines = []
    for res in results:
        for rank, (doc, dist) in enumerate(res.ranking, start=1):
            lines.append(f"{res.query_id}\t{doc}\t{rank}\t{dist!r}\n")
    _atomic_write(path, "".join(lines).encode("utf-8"))


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
