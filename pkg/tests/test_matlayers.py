import numpy as np
import pytest

from matdnn import hmmtok
from matdnn.corpusio import check_tiling
from matdnn.evalkit import boundary_prf, gold_boundaries, labeling_boundaries
from matdnn.matlayers import (DESK_GRID, FULL_GRID, GranularityGrid, IterationState, MultiLayerTokenizer,
                              apply_mr, frame_targets, layer_seed, net_input_width, net_inputs,
                              run_iteration, run_mat)

SMALL = GranularityGrid((3, 5), (4, 8))


@pytest.fixture(scope="module")
def corpus(synth_norm):
    return dict(list(synth_norm.items())[:12])


@pytest.fixture(scope="module")
def state(corpus):
    return run_mat(corpus, SMALL, seed=0, max_epochs=3)


def test_grid_validation():
    assert len(FULL_GRID) == 16 and len(DESK_GRID) == 9
    assert FULL_GRID.layers[0] == (3, 50) and FULL_GRID.layers[-1] == (9, 500)
    for bad in [((3, 3), (4,)), ((1, 3), (4,)), ((3,), (1,)), ((), (4,))]:
        with pytest.raises(ValueError):
            GranularityGrid(*bad)
    assert layer_seed(0, (3, 4)) != layer_seed(0, (4, 3))


def test_run_mat_layers_tile(state, corpus):
    assert list(state.layers) == SMALL.layers
    for (m, n), res in state.layers.items():
        for u, x in corpus.items():
            check_tiling(res.labels[u], len(x), n)
            assert np.all(res.labels[u][:, 2] - res.labels[u][:, 1] >= m)


def test_single_cell_equals_fit_layer(state, corpus):
    one = run_mat(corpus, GranularityGrid((5,), (8,)), seed=0, max_epochs=3)
    init = hmmtok.initialize(corpus, 5, 8, layer_seed(0, (5, 8)))
    tokens, labels, _ = hmmtok.fit_layer(corpus, 5, 8, init, 3)
    assert one.layers[(5, 8)].tokens.means.tobytes() == tokens.means.tobytes()
    assert hmmtok.labels_equal(one.layers[(5, 8)].labels, labels)
    # layer results do not depend on the rest of the grid
    assert hmmtok.labels_equal(state.layers[(5, 8)].labels, labels)


def test_run_mat_errors(corpus):
    with pytest.raises(ValueError):
        run_mat({}, SMALL)
    tiny = {"u": np.zeros((12, 2))}
    with pytest.raises(RuntimeError, match=r"m=3, n=4"):
        run_mat(tiny, SMALL)


def test_apply_mr_rounds(state, corpus):
    assert apply_mr(state, corpus, 0) is state
    two = apply_mr(state, corpus, 2, sweeps=20, max_epochs=2)
    assert two.mr_rounds == 2 and [a["mr_round"] for a in two.audit] == [1, 2]
    assert state.mr_rounds == 0 and state.audit == []
    assert set(two.artifacts) == {"fused", "lda", "init"}
    assert sorted(two.artifacts["lda"]) == [4, 8]
    for layer, res in two.layers.items():
        for u, x in corpus.items():
            check_tiling(res.labels[u], len(x), layer[1])
    with pytest.raises(ValueError):
        apply_mr(state, corpus, -1)
    with pytest.raises(ValueError):
        apply_mr(IterationState(), corpus, 1)


def test_mr_boundary_score_defined(synth, corpus, state):
    gold = {u: synth.gold_words[u] for u in corpus}
    gb = gold_boundaries(gold)

    def mean_f(s):
        return np.mean([boundary_prf(labeling_boundaries(r.labels), gb)[2] for r in s.layers.values()])

    mr1 = apply_mr(state, corpus, 1, sweeps=100, max_epochs=3)
    assert 0.0 <= mean_f(mr1) <= 1.0


def test_width_arithmetic(rng):
    assert net_input_width(39, 4, 1, aux_dim=400) == 751
    assert net_input_width(39, 4, 2, aux_dim=400, frame_aux_dim=39) == 1453
    for k in (1, 2, 3, 4):
        assert net_input_width(39, 4, k, aux_dim=400) == 39 * 9 * k + 400
    init = {"a": rng.normal(size=(6, 39)), "b": rng.normal(size=(5, 39))}
    aux = {"a": rng.normal(size=400), "b": rng.normal(size=400)}
    assert net_inputs(init, utt_aux=aux)["a"].frames.shape == (6, 751)
    bnf = {u: rng.normal(size=(len(x), 39)) for u, x in init.items()}
    fa = {u: rng.normal(size=(len(x), 39)) for u, x in init.items()}
    second = net_inputs(init, [bnf], frame_aux=fa, utt_aux=aux)
    assert second["b"].frames.shape == (5, 1453)
    with pytest.raises(ValueError, match="auxiliary"):
        net_inputs(init, utt_aux={"a": np.zeros(400), "b": np.zeros(3)})


def test_run_iteration(state, corpus):
    nxt, bnf, net = run_iteration(state, corpus, SMALL, context=1,
                                  net_params={"hidden": (8,), "bottleneck": 5, "epochs": 2})
    assert nxt.iteration == 2 and nxt.feature_id == "bnf-1"
    assert all(b.frames.shape == (len(corpus[u]), 5) for u, b in bnf.items())
    assert net.config_.input_width == corpus[next(iter(corpus))].shape[1] * 3
    assert net.config_.group_sizes == [4, 8, 4, 8]
    targets = frame_targets(state, corpus)
    assert all(targets[u].shape == (len(x), 4) for u, x in corpus.items())
    with pytest.raises(ValueError):
        run_iteration(IterationState(), corpus, SMALL)


def test_estimator(corpus):
    X = list(corpus.values())[:6]
    est = MultiLayerTokenizer((3,), (4, 8), max_epochs=2).fit(X)
    assert est.get_params()["n_values"] == (4, 8)
    pred = est.predict(X[:2])
    assert list(pred) == [(3, 4), (3, 8)]
    frames = est.transform(X[:2])
    assert frames[0].shape == (len(X[0]), 2)
