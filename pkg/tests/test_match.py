import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import dtw_enumerate, kl_quad
from matdnn.hmmtok import TokenSet
from matdnn.match import (FeatureStream, TokenLayer, combine, feature_dtw, frame_distances, gaussian_kl,
                          kl_matrix, matching_matrix, rank, std_search, token_dtw, znorm)


def one_state(means, variances):
    means = np.asarray(means, dtype=float).reshape(-1, 1, 1)
    variances = np.asarray(variances, dtype=float).reshape(-1, 1, 1)
    return TokenSet(means, variances, np.full((len(means), 1), 0.5))


def test_kl_hand_value():
    S = kl_matrix(one_state([0.0, 1.0], [1.0, 1.0]))
    assert S[0, 1] == pytest.approx(1.0, abs=1e-15)
    assert gaussian_kl([0.0], [1.0], [1.0], [1.0]) == pytest.approx(0.5)


def test_kl_against_quadrature(rng):
    for _ in range(10):
        mu = rng.normal(scale=2, size=2)
        var = rng.uniform(0.2, 3.0, size=2)
        S = kl_matrix(one_state(mu, var))
        ref = kl_quad(mu[0], var[0], mu[1], var[1]) + kl_quad(mu[1], var[1], mu[0], var[0])
        assert abs(S[0, 1] - ref) < 1e-3
    # equal variance scaling: S = (mu1 - mu2)^2 / var
    S = kl_matrix(one_state([0.0, 3.0], [4.0, 4.0]))
    assert S[0, 1] == pytest.approx(9.0 / 4.0)


def test_kl_matrix_multistate(rng):
    mu = rng.normal(size=(4, 3, 2))
    var = rng.uniform(0.5, 2.0, size=(4, 3, 2))
    S = kl_matrix(TokenSet(mu, var, np.full((4, 3), 0.5)))
    assert np.array_equal(S, S.T) and np.all(np.diag(S) == 0) and np.all(S >= 0)
    ref = sum(gaussian_kl(mu[1, s], var[1, s], mu[2, s], var[2, s])
              + gaussian_kl(mu[2, s], var[2, s], mu[1, s], var[1, s]) for s in range(3))
    assert S[1, 2] == pytest.approx(ref, rel=1e-12)


def test_token_dtw_examples():
    S = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert token_dtw([0, 1, 0, 1], [0, 1, 0, 1], S) == 0.0
    assert token_dtw([0, 1, 0], [1], S) == 0.0
    assert matching_matrix([0, 1, 0], [1], S).ravel().tolist() == [2.0, 0.0, 2.0]
    with pytest.raises(ValueError):
        token_dtw([], [0], S)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_token_dtw_matches_enumeration(seed, D, Q):
    rng = np.random.default_rng(seed)
    n = 4
    A = rng.uniform(0, 5, (n, n))
    S = A + A.T
    np.fill_diagonal(S, 0.0)
    doc, query = rng.integers(0, n, D), rng.integers(0, n, Q)
    mean, total = dtw_enumerate(S[np.ix_(doc, query)], subsequence=True)
    assert abs(token_dtw(doc, query, S) - mean) <= 1e-12
    assert abs(token_dtw(doc, query, S, normalize=False) - total) <= 1e-12


def test_token_dtw_three_by_two(rng):
    S = rng.uniform(0, 3, (3, 3))
    S = S + S.T
    np.fill_diagonal(S, 0)
    doc, query = [0, 2, 1], [1, 2]
    assert token_dtw(doc, query, S) == pytest.approx(dtw_enumerate(S[np.ix_(doc, query)], True)[0], abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6), st.sampled_from(["euclidean", "cosine"]))
def test_feature_dtw_matches_enumeration(seed, D, Q, metric):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(D, 3)), rng.normal(size=(Q, 3))
    cost = frame_distances(a, b, metric)
    assert abs(feature_dtw(a, b, metric) - dtw_enumerate(cost)[0]) <= 1e-12
    assert abs(feature_dtw(a, b, metric, subsequence=True) - dtw_enumerate(cost, True)[0]) <= 1e-12
    assert feature_dtw(a, b, metric) >= 0


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_feature_dtw_identity_and_stretch(rng, metric):
    a = rng.normal(size=(7, 4))
    assert feature_dtw(a, a, metric) == 0.0
    assert feature_dtw(np.repeat(a, 2, axis=0), a, metric) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="dimension"):
        feature_dtw(a, a[:, :3], metric)


def test_cosine_zero_vectors():
    d = frame_distances(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([[0.0, 0.0], [-1.0, 0.0]]), "cosine")
    np.testing.assert_allclose(d, [[0.0, 1.0], [1.0, 2.0]])
    with pytest.raises(ValueError):
        frame_distances(np.ones((1, 2)), np.ones((1, 2)), "manhattan")


def test_search_exact_hit_first():
    S = np.array([[0.0, 3.0, 3.0], [3.0, 0.0, 3.0], [3.0, 3.0, 0.0]])
    layer = TokenLayer(S, {"q": [1, 2]}, {"d0": [0, 0, 0], "d1": [0, 1, 2, 0], "d2": [2, 2, 0]})
    res = std_search(["q"], ["d0", "d1", "d2"], collections={"tok": [layer]}, mode="token")
    assert res[0].ranking[0] == ("d1", 0.0)
    assert set(res[0].streams["tok"]) == {"d0", "d1", "d2"}


def test_search_missing_coverage():
    layer = TokenLayer(np.zeros((2, 2)), {"q": [0]}, {"d0": [1]})
    with pytest.raises(ValueError, match="cover"):
        std_search(["q"], ["d0", "d1"], collections={"tok": [layer]})


def test_fusion_idempotent(rng):
    D = rng.uniform(size=(3, 6))
    one = combine({"a": D})
    two = combine({"a": D, "b": D.copy()})
    np.testing.assert_allclose(one, two)
    np.testing.assert_allclose(one, znorm(D))
    assert np.all(znorm(np.ones((2, 4))) == 0)
    with pytest.raises(ValueError):
        combine({"a": D}, mode="token")


def test_rank_ties_and_determinism():
    D = np.array([[1.0, 0.5, 1.0, 0.5]])
    res = rank(["q"], ["d3", "d2", "d1", "d0"], D)
    assert [d for d, _ in res[0].ranking] == ["d0", "d2", "d1", "d3"]


def test_search_modes_deterministic(rng):
    docs = {f"d{i}": rng.normal(size=(int(rng.integers(8, 15)), 3)) for i in range(5)}
    queries = {"q": docs["d2"][2:6]}
    S = np.array([[0, 1.0], [1.0, 0]])
    layer = TokenLayer(S, {"q": [0, 1]}, {d: list(rng.integers(0, 2, 5)) for d in docs})
    kw = dict(collections={"tok": [layer]}, features={"raw": FeatureStream(queries, docs)})
    ids = sorted(docs)
    a = std_search(["q"], ids, **kw)
    b = std_search(["q"], ids, **kw)
    assert a[0].ranking == b[0].ranking
    feat = std_search(["q"], ids, mode="feature", **kw)
    assert feat[0].ranking[0] == ("d2", 0.0)
