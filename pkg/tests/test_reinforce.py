import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matdnn.corpusio import check_tiling
from matdnn.reinforce import (FusionConfig, LdaGibbs, Vocabulary, boundary_function, default_weights,
                              fuse_boundaries, joint_boundary, lda_fit, pick_peaks, relabel,
                              segment_documents)


def segs(bounds, T, tok=0):
    edges = [0] + list(bounds) + [T]
    return np.array([[tok, s, e] for s, e in zip(edges[:-1], edges[1:])])


def spans(bounds, T):
    edges = [0] + list(bounds) + [T]
    return [[s, e] for s, e in zip(edges[:-1], edges[1:])]


def test_boundary_function_and_weights():
    b = boundary_function(segs([4, 9], 12), 12)
    assert b.tolist() == [0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0]
    np.testing.assert_allclose(default_weights([(3, 4), (9, 4)]), [0.25, 0.75])


def test_unanimous_boundary_at_50():
    labelings = {layer: {"u": segs([50], 100)} for layer in [(3, 4), (5, 8), (7, 16)]}
    out = fuse_boundaries(labelings, {"u": 100})
    assert out["u"].tolist() == [[0, 50], [50, 100]]


def test_hand_traced_twenty_frames():
    # weights m / sum(m) = .2, .2, .6
    labelings = {(3, 4): {"u": segs([4, 9, 16], 20)},
                 (3, 8): {"u": segs([6, 9, 13], 20)},
                 (9, 4): {"u": segs([9], 20)}}
    B = joint_boundary(labelings, "u", 20)
    expect = np.zeros(21)
    expect[[4, 6, 13, 16]] = 0.2
    expect[9] = 1.0
    np.testing.assert_allclose(B, expect)
    # smoothed: S4=S5=S6=.1, S8=S10=.25, S9=.5, S13=S16=.1, mean over j=1..19 is 1.8/19.
    # 5 has zero second difference; 4 and 6 tie at .1, two apart, so 4 is kept.
    out = fuse_boundaries(labelings, {"u": 20})
    assert out["u"].tolist() == spans([4, 9, 13, 16], 20)
    # raising the threshold to 1.2 * mean = .114 leaves only the shared boundary
    strict = fuse_boundaries(labelings, {"u": 20}, config=FusionConfig(threshold=1.2))
    assert strict["u"].tolist() == spans([9], 20)


def test_adjacent_tie_keeps_lower():
    labelings = {(3, 2): {"u": segs([10], 20)}, (3, 4): {"u": segs([11], 20)}}
    B = joint_boundary(labelings, "u", 20, weights=[1.0, 1.0])
    assert B[10] == B[11] == 0.5
    assert pick_peaks(B).tolist() == [10]


def test_single_layer_identity(caplog):
    labelings = {(3, 4): {"u": segs([5, 12], 20)}}
    with caplog.at_level(logging.WARNING, logger="matdnn.reinforce"):
        out = fuse_boundaries(labelings, {"u": 20})
    assert out["u"].tolist() == spans([5, 12], 20)
    assert "single layer" in caplog.text


def test_bad_weights():
    labelings = {(3, 2): {"u": segs([10], 20)}, (3, 4): {"u": segs([11], 20)}}
    with pytest.raises(ValueError):
        joint_boundary(labelings, "u", 20, weights=[1.0, 0.0])


def test_general_kernel():
    B = np.zeros(31)
    B[15] = 1.0
    box = FusionConfig(kernel=(0.2, 0.2, 0.2, 0.2, 0.2))
    # five-wide plateau 13..17: only its two ends have a negative second difference
    assert pick_peaks(B, box).tolist() == [13, 17]
    assert pick_peaks(B).tolist() == [15]


@st.composite
def unanimous_case(draw):
    T = draw(st.integers(6, 80))
    pool = list(range(3, T - 2))
    bounds = []
    for j in draw(st.permutations(pool))[:draw(st.integers(0, 6))]:
        if all(abs(j - b) >= 3 for b in bounds):
            bounds.append(j)
    n_layers = draw(st.integers(2, 4))
    return T, sorted(bounds), n_layers


@settings(max_examples=60, deadline=None)
@given(unanimous_case())
def test_unanimous_layers_recovered_exactly(case):
    T, bounds, n_layers = case
    labelings = {(3, k + 2): {"u": segs(bounds, T)} for k in range(n_layers)}
    B = joint_boundary(labelings, "u", T, weights=np.ones(n_layers))
    assert set(np.unique(B)) <= {0.0, 1.0}
    out = fuse_boundaries(labelings, {"u": T}, weights=np.ones(n_layers))
    assert out["u"].tolist() == spans(bounds, T)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(10, 120))
def test_fused_segments_tile_with_minimum(seed, T):
    rng = np.random.default_rng(seed)
    labelings = {}
    for m in (3, 5, 7):
        cuts, t = [], 0
        while True:
            t += int(rng.integers(m, 3 * m))
            if t > T - m:
                break
            cuts.append(t)
        labelings[(m, 4)] = {"u": segs(cuts, T)}
    B = joint_boundary(labelings, "u", T)
    assert B.min() >= 0 and B.max() <= 1
    out = fuse_boundaries(labelings, {"u": T})["u"]
    check_tiling(np.column_stack([np.zeros(len(out), int), out]), T)
    assert np.all(out[:, 1] - out[:, 0] >= 3)


def disjoint_docs(rng, n_docs=20, length=10):
    docs, topic = [], []
    for i in range(n_docs):
        k = i % 2
        docs.append(list(rng.integers(5 * k, 5 * k + 5, size=length)))
        topic.append(k)
    return docs, np.array(topic)


def test_lda_purity(rng):
    docs, topic = disjoint_docs(rng)
    dom = lda_fit(docs, 2, seed=1, sweeps=200).dominant_topics()
    assert len(set(zip(dom, topic))) == 2


def test_lda_degenerate_vocabulary():
    lda = lda_fit([[0, 0, 0], [0], [0, 0]], 2, seed=0)
    np.testing.assert_allclose(lda.topic_word_distribution(), [[1.0], [1.0]])


def test_lda_determinism_and_conservation(rng):
    docs, _ = disjoint_docs(rng)
    a = lda_fit(docs, 3, seed=7, sweeps=50)
    b = lda_fit(docs, 3, seed=7, sweeps=50)
    assert np.array_equal(a.topic_word_, b.topic_word_) and np.array_equal(a.doc_topic_, b.doc_topic_)
    words = np.concatenate(docs)
    for sweeps in range(6):
        lda = lda_fit(docs, 3, seed=7, sweeps=sweeps)
        assert lda.topic_word_.min() >= 0 and lda.doc_topic_.min() >= 0
        assert lda.topic_word_.sum() == len(words)
        np.testing.assert_array_equal(lda.topic_word_.sum(axis=0), np.bincount(words, minlength=10))
        np.testing.assert_array_equal(lda.doc_topic_.sum(axis=1), [len(d) for d in docs])


def test_lda_errors_and_params():
    with pytest.raises(ValueError, match="document 1"):
        lda_fit([[0], []], 2)
    with pytest.raises(ValueError):
        lda_fit([[0]], 1)
    assert LdaGibbs(n_topics=4).alpha_ == 12.5
    assert LdaGibbs(n_topics=4).get_params()["beta"] == 0.01


def test_lda_save_load_and_fold_in(tmp_path, rng):
    docs, topic = disjoint_docs(rng)
    lda = lda_fit(docs, 2, seed=1)
    lda.save(tmp_path / "lda.model")
    back = LdaGibbs.load(tmp_path / "lda.model")
    assert np.array_equal(back.topic_word_, lda.topic_word_)
    pred = back.predict(docs)
    assert np.array_equal(pred, lda.dominant_topics())


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(2, 9), st.integers(2, 40)), min_size=1, max_size=6, unique=True))
def test_vocabulary_bijection(layers):
    vocab = Vocabulary(layers)
    seen = set()
    for layer in layers:
        for t in range(layer[1]):
            i = vocab.index(layer, t)
            assert vocab.word(i) == (layer, t)
            seen.add(i)
    assert seen == set(range(len(vocab)))


def test_overlap_rule():
    layer = (3, 10)
    vocab = Vocabulary([layer])
    labelings = {layer: {"u": np.array([[5, 0, 15], [9, 15, 40]])}}
    _, docs = segment_documents({"u": np.array([[10, 30]])}, labelings, vocab)
    assert sorted(vocab.word(w) for w in docs[0]) == [(layer, 5), (layer, 9)]


def test_relabel_single_word():
    labelings = {(3, 2): {"u": np.array([[1, 0, 10]])}}
    by_n, models = relabel({"u": np.array([[0, 10]])}, labelings, seed=0)
    label = by_n[2]["u"][0, 0]
    assert label == np.argmax(models[2].topic_word_distribution()[:, 1])
    assert by_n[2]["u"].tolist() == [[label, 0, 10]]


def test_relabel_separable(rng):
    A, B = (3, 2), (5, 2)
    seg_rows, la, lb, truth = [], [], [], []
    t = 0
    for i in range(30):
        k = int(rng.integers(0, 2))
        seg_rows.append([t, t + 10])
        la.append([k, t, t + 10])
        lb.append([k, t, t + 10])
        truth.append(k)
        t += 10
    by_n, _ = relabel({"u": np.array(seg_rows)}, {A: {"u": np.array(la)}, B: {"u": np.array(lb)}}, seed=3)
    out = by_n[2]["u"]
    assert set(out[:, 0]) <= {0, 1}
    assert len(set(zip(out[:, 0], truth))) == 2
    check_tiling(out, t)


def test_relabel_one_model_per_n(rng):
    labelings = {(3, 2): {"u": segs([10], 20, tok=1)}, (5, 2): {"u": segs([10], 20)},
                 (3, 4): {"u": segs([10], 20, tok=3)}}
    by_n, models = relabel({"u": np.array([[0, 10], [10, 20]])}, labelings, seed=0)
    assert sorted(by_n) == sorted(models) == [2, 4]
    assert models[4].n_topics == 4 and models[2].vocab_size_ == 8
    assert by_n[4]["u"][:, 0].max() < 4
