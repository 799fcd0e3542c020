import numpy as np
import pytest

from neptune_kg.model import (BatchNormState, ModelParams, batch_norm_forward, dropout_forward,
                              init_params, score_all_tails, score_neptune, score_ntn_form,
                              score_tucker)
from neptune_kg.tensor import DimensionError
from oracles import loop_neptune, loop_ntn, loop_tucker


def make(seed, n_ent=6, n_rel=3, d=3, k=2):
    return init_params(n_ent, n_rel, d, k, seed)


def test_init_deterministic():
    a, b = make(5), make(5)
    for x, y in zip(a.trainable().values(), b.trainable().values()):
        assert x.tobytes() == y.tobytes()


def test_init_shapes_and_bn():
    p = init_params(7, 4, 1, 1, 0)
    assert p.core.shape == (1, 1, 1)
    assert p.dims == (7, 4, 1, 1)
    assert np.all(p.bn_input.scale == 1) and np.all(p.bn_input.shift == 0)
    assert np.all(p.bn_hidden.running_mean == 0) and np.all(p.bn_hidden.running_var == 1)
    assert np.all(np.abs(make(0).core) <= 1)


def test_init_entity_mean_within_three_sigma():
    d, n = 25, 400     # |E| * d = 10^4
    p = init_params(n, 2, d, 3, 11)
    sigma = 1 / np.sqrt(d)
    assert abs(p.entity_emb.mean()) < 3 * sigma / np.sqrt(n * d)
    assert p.entity_emb.std() == pytest.approx(sigma, rel=0.05)


def test_core_shape_checked():
    with pytest.raises(DimensionError):
        ModelParams(np.zeros((3, 2)), np.zeros((2, 4)), np.zeros((2, 2, 2)))


def test_zero_core_scores_zero():
    p = make(1)
    p.core[:] = 0
    assert score_tucker(p, 0, 1, 2) == 0.0


def test_scalar_case():
    p = init_params(3, 2, 1, 1, 4)
    expected = p.core[0, 0, 0] * p.entity_emb[2, 0] * p.relation_emb[1, 0] * p.entity_emb[0, 0]
    assert score_tucker(p, 2, 1, 0) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_tucker_vs_loops(seed):
    p = make(seed, d=2, k=2)
    for h, r, t in [(0, 0, 1), (3, 2, 5), (4, 1, 4)]:
        expected = loop_tucker(p.core, p.entity_emb[h], p.relation_emb[r], p.entity_emb[t])
        assert score_tucker(p, h, r, t) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_neptune_relu_vs_loops(seed):
    p = make(seed, d=3, k=3)
    for h, r, t in [(0, 0, 1), (3, 2, 5), (5, 1, 0)]:
        expected = loop_neptune(p.core, p.entity_emb[h], p.relation_emb[r], p.entity_emb[t], "relu")
        assert score_neptune(p, h, r, t, "relu") == pytest.approx(expected, abs=1e-12)


def test_identity_collapses_to_tucker():
    p = make(9, d=4, k=3)
    for h in range(6):
        assert score_neptune(p, h, 2, 5 - h, "identity") == score_tucker(p, h, 2, 5 - h)


def test_relu_all_negative_preactivation():
    p = make(2, d=3, k=2)
    p.entity_emb[0] = [1.0, 0.0, 0.0]
    p.relation_emb[0] = [1.0, 0.0]
    p.core[0, 0, :] = -1.0
    assert score_neptune(p, 0, 0, 3, "relu") == 0.0


def test_unknown_activation():
    with pytest.raises(ValueError):
        score_neptune(make(0), 0, 0, 0, "gelu")


def test_ids_checked():
    p = make(0)
    with pytest.raises(IndexError):
        score_tucker(p, 6, 0, 0)
    with pytest.raises(IndexError):
        score_neptune(p, 0, 3, 0)
    with pytest.raises(IndexError):
        score_all_tails(p, 0, -1)


@pytest.mark.parametrize("seed", range(5))
def test_ntn_form_vs_loops(seed):
    r = np.random.default_rng(seed)
    core = r.standard_normal((3, 2, 3))
    e_h, e_t, w = r.standard_normal(3), r.standard_normal(3), r.standard_normal(2)
    for act in ("relu", "tanh", "identity"):
        assert score_ntn_form(core, w, e_h, e_t, act) == pytest.approx(
            loop_ntn(core, e_h, w, e_t, act), abs=1e-12)


def test_ntn_identity_equals_neptune_identity():
    p = make(3, d=4, k=3)
    for h, r, t in [(0, 1, 2), (5, 0, 5)]:
        ntn = score_ntn_form(p.core, p.relation_emb[r], p.entity_emb[h], p.entity_emb[t], "identity")
        assert ntn == pytest.approx(score_neptune(p, h, r, t, "identity"), abs=1e-12)


def test_ntn_relu_differs_somewhere():
    p = make(3, d=4, k=3)
    gaps = [abs(score_ntn_form(p.core, p.relation_emb[r], p.entity_emb[h], p.entity_emb[t], "relu")
                - score_neptune(p, h, r, t, "relu"))
            for h in range(6) for r in range(3) for t in range(6)]
    assert max(gaps) > 1e-6


@pytest.mark.parametrize("act", ["identity", "relu", "tanh"])
def test_all_tails_matches_per_triple(act):
    p = make(7, n_ent=9, d=3, k=3)
    for h, r in [(0, 0), (4, 2), (8, 1)]:
        phi = score_all_tails(p, h, r, act, use_bn=False)
        expected = [score_neptune(p, h, r, t, act) for t in range(9)]
        np.testing.assert_allclose(phi, expected, atol=1e-10)
        if act == "identity":
            np.testing.assert_allclose(phi, [score_tucker(p, h, r, t) for t in range(9)],
                                       atol=1e-10)


def test_all_tails_full_dropout_gives_zero():
    p = make(1)
    phi = score_all_tails(p, 2, 1, "relu", mode="train", dropout_rates=(0.0, 0.0, 1.0),
                          rng=np.random.default_rng(0))
    assert not phi.any()


def test_eval_mode_is_deterministic():
    p = make(4)
    p.bn_hidden.running_mean[:] = [0.1, -0.2, 0.3]
    a = score_all_tails(p, 1, 1, "relu", mode="eval", dropout_rates=(0.5, 0.5, 0.5))
    b = score_all_tails(p, 1, 1, "relu", mode="eval", dropout_rates=(0.5, 0.5, 0.5))
    assert a.tobytes() == b.tobytes()


def test_batch_norm_eval_identity_up_to_eps():
    state = BatchNormState.fresh(3)
    x = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]])
    out, _ = batch_norm_forward(state, x, "eval")
    np.testing.assert_allclose(out, x / np.sqrt(1 + state.eps), rtol=1e-15)
    np.testing.assert_allclose(out, x, rtol=1e-5)


def test_batch_norm_constant_batch_gives_shift():
    state = BatchNormState.fresh(2)
    state.shift[:] = [0.5, -1.5]
    out, _ = batch_norm_forward(state, np.full((4, 2), 3.0), "train")
    np.testing.assert_allclose(out, np.tile([0.5, -1.5], (4, 1)))
    out, _ = batch_norm_forward(state, np.array([[7.0, 8.0]]), "train")
    np.testing.assert_allclose(out, [[0.5, -1.5]])


def test_batch_norm_two_samples_by_hand():
    state = BatchNormState.fresh(2, momentum=0.1)
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    out, _ = batch_norm_forward(state, x, "train")
    # mean (2, 4), biased var (1, 4)
    expected = np.array([[-1 / np.sqrt(1 + 1e-5), -2 / np.sqrt(4 + 1e-5)],
                         [1 / np.sqrt(1 + 1e-5), 2 / np.sqrt(4 + 1e-5)]])
    np.testing.assert_allclose(out, expected, rtol=1e-14)
    np.testing.assert_allclose(state.running_mean, [0.2, 0.4])
    # unbiased var (2, 8) folded in
    np.testing.assert_allclose(state.running_var, [0.9 + 0.2, 0.9 + 0.8])


def test_dropout_rate_zero_and_eval():
    x = np.arange(5.0)
    out, mask = dropout_forward(x, 0.0, "train", np.random.default_rng(0))
    assert out is x and np.all(mask == 1)
    out, mask = dropout_forward(x, 0.7, "eval")
    assert out is x and np.all(mask == 1)


def test_dropout_survivor_fraction():
    x = np.ones(100_000)
    out, mask = dropout_forward(x, 0.5, "train", np.random.default_rng(3))
    survivors = np.count_nonzero(mask) / x.size
    assert abs(survivors - 0.5) <= 0.01
    np.testing.assert_array_equal(out[mask > 0], 2.0)
