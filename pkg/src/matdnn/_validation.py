"""Input validation shared by the estimators.

The estimators consume *corpora*: ordered collections of variable-length
sequences. A corpus may be given as a mapping ``{utt_id: sequence}`` or as a
list; each sequence may be a :class:`~matdnn.corpusio.FeatureSequence` or a
2-D array. These helpers normalize all of that to ``(ids, [ndarray])``.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np
from sklearn.utils.validation import check_array

from .corpusio import FeatureSequence


def as_matrix(seq, *, dtype=np.float64, min_frames: int = 1, name: str = "sequence") -> np.ndarray:
    if isinstance(seq, FeatureSequence):
        seq = seq.frames
    arr = check_array(seq, dtype=dtype, ensure_2d=True, ensure_min_samples=min_frames,
                      input_name=name)
    return arr


def check_corpus(X, *, min_frames: int = 1, dim: int | None = None) -> tuple:
    """Return ``(ids, matrices)`` with a shared feature dimension."""
    if isinstance(X, Mapping):
        ids = [str(k) for k in X.keys()]
        items = list(X.values())
    else:
        items = list(X)
        ids = []
        for i, seq in enumerate(items):
            uid = getattr(seq, "utt_id", "") or f"utt{i:05d}"
            ids.append(uid)
    if not items:
        raise ValueError("corpus is empty")
    if len(set(ids)) != len(ids):
        raise ValueError("corpus has duplicate utterance ids")
    mats = [as_matrix(s, min_frames=min_frames, name=uid) for uid, s in zip(ids, items)]
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise ValueError(f"feature dimension differs across the corpus: {sorted(dims)}")
    if dim is not None and dims.pop() != dim:
        raise ValueError(f"expected feature dimension {dim}, got {mats[0].shape[1]}")
    return ids, mats


def check_grid_values(values, name: str, minimum: int) -> tuple:
    vals = tuple(int(v) for v in values)
    if not vals:
        raise ValueError(f"{name} must be non-empty")
    if any(v < minimum for v in vals):
        raise ValueError(f"every {name} value must be >= {minimum}, got {vals}")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"{name} values must be strictly increasing, got {vals}")
    return vals
