import math

import numpy as np
import pytest

from conftest import gradient_check, tiny_dataset
from kgtrimmer.errors import ValidationError
from kgtrimmer.evaluator import DualViewEvaluator, ParameterStore
from kgtrimmer.gnn import (Batch, DropoutMasks, ImportanceAwareGNN, bpr_loss, cf_propagate_layer,
                           compute_gradients, forward, kg_propagate_layer, predict)
from kgtrimmer.graph_core import InteractionGraph, KnowledgeGraph, build_ckg
from kgtrimmer.qmatrix import build_user_entity_matrix
from kgtrimmer.trainer import TrainConfig


def naive_kg_layer(x, params, scores, kg):
    out = np.zeros_like(x)
    deg = np.bincount(kg.heads, minlength=kg.num_entities)
    for e, (h, r, t) in enumerate(zip(kg.heads, kg.relations, kg.tails)):
        out[h] += scores[e] / deg[h] * x[t] * params.relation_embeddings[r]
    return out


def test_single_edge_copies_tail():
    kg = KnowledgeGraph.from_triples([(0, 0, 1)], 2, 1)
    p = ParameterStore.init(1, 2, 2, 4, seed=1)
    p.relation_embeddings[:] = 1.0
    out = kg_propagate_layer(p.entity_embeddings, p, np.ones(kg.num_triples), kg)
    np.testing.assert_array_equal(out[0], p.entity_embeddings[1])
    np.testing.assert_array_equal(out[1], p.entity_embeddings[0])


def test_zero_scores_suppress_everything(tiny):
    _, kg = tiny
    p = ParameterStore.init(5, kg.num_entities, kg.num_relations, 4)
    out = kg_propagate_layer(p.entity_embeddings, p, np.zeros(kg.num_triples), kg)
    np.testing.assert_array_equal(out, 0.0)


def test_mixed_scores_match_naive():
    kg = KnowledgeGraph.from_triples([(0, 0, 1), (0, 1, 2), (2, 0, 1)], 3, 2)
    p = ParameterStore.init(1, 3, kg.num_relations, 5, seed=3)
    s = np.random.default_rng(0).uniform(size=kg.num_triples)
    np.testing.assert_allclose(kg_propagate_layer(p.entity_embeddings, p, s, kg),
                               naive_kg_layer(p.entity_embeddings, p, s, kg), rtol=0, atol=1e-12)


def test_cf_layer_means():
    inter = InteractionGraph.from_pairs([0, 1, 1], [0, 0, 1], num_users=3, num_items=2)
    x = np.array([[1.0, 2.0], [3.0, 6.0]])
    out = cf_propagate_layer(x, inter)
    np.testing.assert_array_equal(out[0], x[0])
    np.testing.assert_array_equal(out[1], [2.0, 4.0])
    np.testing.assert_array_equal(out[2], 0.0)  # user without items


def test_forward_one_layer_empty_kg():
    inter = InteractionGraph.from_pairs([0], [0], num_users=1, num_items=1)
    kg = KnowledgeGraph.from_triples(np.empty((0, 3)), 1, 1)
    p = ParameterStore.init(1, 1, kg.num_relations, 4, seed=5)
    fu, fe, _ = forward(p, kg, inter, np.ones(0), L=1)
    np.testing.assert_array_equal(fu[0], p.user_embeddings[0] + p.entity_embeddings[0])
    np.testing.assert_array_equal(fe[0], p.entity_embeddings[0])


def test_zero_scores_leave_items_at_layer0(tiny):
    inter, kg = tiny
    p = ParameterStore.init(5, kg.num_entities, kg.num_relations, 4, seed=2)
    fu, fe, _ = forward(p, kg, inter, np.zeros(kg.num_triples), L=3)
    np.testing.assert_array_equal(fe[:6], p.entity_embeddings[:6])
    # users still aggregate their items once (layer 1); deeper item layers are zero
    mean0 = np.stack([p.entity_embeddings[inter.train_items(u)].mean(0) for u in range(5)])
    np.testing.assert_allclose(fu, p.user_embeddings + mean0, atol=1e-15)


def test_two_layer_unrolled(tiny):
    inter, kg = tiny
    p = ParameterStore.init(5, kg.num_entities, kg.num_relations, 6, seed=8)
    s = np.random.default_rng(1).uniform(size=kg.num_triples)
    fu, fe, state = forward(p, kg, inter, s, L=2)
    x1 = naive_kg_layer(p.entity_embeddings, p, s, kg)
    x2 = naive_kg_layer(x1, p, s, kg)
    u1 = np.stack([p.entity_embeddings[inter.train_items(u)].mean(0) for u in range(5)])
    u2 = np.stack([x1[inter.train_items(u)].mean(0) for u in range(5)])
    np.testing.assert_allclose(fe, p.entity_embeddings + x1 + x2, atol=1e-12)
    np.testing.assert_allclose(fu, p.user_embeddings + u1 + u2, atol=1e-12)
    assert state.L == 2


def test_layer0_passthrough(tiny):
    inter, kg = tiny
    p = ParameterStore.init(5, kg.num_entities, kg.num_relations, 4, seed=0)
    fu, fe, _ = ImportanceAwareGNN(kg, inter, None, L=0).forward(p)
    assert predict(fu, fe, 2, 3) == pytest.approx(p.user_embeddings[2] @ p.entity_embeddings[3])


def test_predict_cases():
    e = np.eye(3)
    assert predict(e, e, 0, 0) == 1.0
    assert predict(e, e, 0, 1) == 0.0
    a, b = np.array([[0.5, -1.5, 2.0]]), np.array([[2.0, 1.0, 0.25]])
    assert predict(a, b, 0, 0) == pytest.approx(0.5 * 2 - 1.5 + 0.5)
    with pytest.raises(ValidationError):
        predict(e, e, 0, 2, num_items=2)


def test_bpr_loss_values():
    assert bpr_loss([0.3], [0.3]) == pytest.approx(math.log(2), abs=1e-15)
    assert bpr_loss([1e6], [0.0]) == pytest.approx(0.0, abs=1e-300)
    assert bpr_loss([1.0], [0.0]) == pytest.approx(math.log1p(math.exp(-1)), rel=1e-15)
    assert bpr_loss([1.0], [0.0]) == pytest.approx(0.313262, abs=1e-6)
    assert np.isfinite(bpr_loss([-1e6], [0.0]))


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("transform", ["tail", "mean", "product"])
def test_gradients_match_finite_differences(seed, transform):
    err = gradient_check(seed, transform)
    assert max(err.values()) < 1e-5, err


def test_gradient_gamma_zero_and_one():
    assert max(gradient_check(0, gamma=0.0).values()) < 1e-5
    assert max(gradient_check(1, gamma=1.0).values()) < 1e-5


def test_symmetric_saddle_zero_user_gradient(tiny):
    inter, kg = tiny
    ckg = build_ckg(inter, kg)
    p = ParameterStore.init(5, ckg.num_entities, ckg.kg.num_relations, 4, seed=0)
    # items 2 and 5 get identical embeddings, so pos and neg are indistinguishable
    model = ImportanceAwareGNN(KnowledgeGraph.from_triples(np.empty((0, 3)), 10, 2), inter,
                               None, L=0, l2=0.0)
    p.entity_embeddings[5] = p.entity_embeddings[2]
    _, grads, _ = model.loss_and_gradients(p, Batch(np.array([0]), np.array([2]), np.array([5])))
    np.testing.assert_array_equal(grads.user_embeddings, 0.0)


def test_gamma_zero_cuts_evaluator_user_path(tiny):
    inter, kg = tiny
    ckg = build_ckg(inter, kg)
    Q = build_user_entity_matrix(ckg, 50)
    p = ParameterStore.init(5, ckg.num_entities, ckg.kg.num_relations, 4, seed=0)
    ev = DualViewEvaluator(ckg.kg, Q, gamma=0.0)
    cache = ev.forward(p)
    from kgtrimmer.gnn import GradientStore
    g = GradientStore.zeros_like(p)
    ev.backward(p, cache, np.ones(ckg.num_entities), g)
    np.testing.assert_array_equal(g.user_embeddings, 0.0)
    np.testing.assert_array_equal(g.holistic_raw, 1.0)


def test_compute_gradients_wrapper(tiny):
    inter, kg = tiny
    ckg = build_ckg(inter, kg)
    Q = build_user_entity_matrix(ckg, 50)
    cfg = TrainConfig(d=4, L=2)
    p = ParameterStore.init(5, ckg.num_entities, ckg.kg.num_relations, 4, seed=0)
    loss, grads, s_hat = compute_gradients(p, Batch(np.array([0]), np.array([0]), np.array([3])),
                                           ckg.kg, inter, Q, cfg)
    assert np.isfinite(loss) and s_hat.shape == (ckg.num_entities,)
    assert grads.entity_embeddings.shape == p.entity_embeddings.shape


def test_suppressed_entity_is_invisible(tiny):
    inter, kg = tiny
    p = ParameterStore.init(5, kg.num_entities, kg.num_relations, 4, seed=4)
    t = 7  # non-item attribute
    s = np.ones(kg.num_triples)
    s[(kg.tails == t) | (kg.heads == t)] = 0.0
    fu, fe, _ = forward(p, kg, inter, s, L=2)
    p.entity_embeddings[t] += 10.0
    fu2, fe2, _ = forward(p, kg, inter, s, L=2)
    np.testing.assert_array_equal(fe[:6], fe2[:6])
    np.testing.assert_array_equal(fu, fu2)


def test_eval_forward_bit_identical(tiny):
    inter, kg = tiny
    p = ParameterStore.init(5, kg.num_entities, kg.num_relations, 8, seed=6)
    a = forward(p, kg, inter, np.full(kg.num_triples, 0.7), L=2)
    b = forward(p, kg, inter, np.full(kg.num_triples, 0.7), L=2)
    assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()


def test_node_dropout_renormalizes_over_kept_edges():
    kg = KnowledgeGraph.from_triples([(0, 0, 1), (0, 0, 2)], 3, 1)
    p = ParameterStore.init(1, 3, kg.num_relations, 3, seed=0)
    p.relation_embeddings[:] = 1.0
    keep = np.ones(kg.num_triples, bool)
    drop = np.flatnonzero((kg.heads == 0) & (kg.tails == 2))
    keep[drop] = False
    out = kg_propagate_layer(p.entity_embeddings, p, np.ones(kg.num_triples), kg, keep)
    np.testing.assert_array_equal(out[0], p.entity_embeddings[1])


def test_message_dropout_rescales():
    rng = np.random.default_rng(0)
    m = DropoutMasks.sample(rng, 10, 2000, 5, 16, 1, p_node=0.3, p_msg=0.25)
    vals = np.unique(m.entity[0])
    np.testing.assert_allclose(vals, [0.0, 1 / 0.75])
    assert abs(m.entity[0].mean() - 1.0) < 0.02
    assert m.edge_keep.dtype == bool


def test_dropout_gradients_match_finite_differences():
    inter, kg = tiny_dataset()
    ckg = build_ckg(inter, kg)
    Q = build_user_entity_matrix(ckg, 50)
    ev = DualViewEvaluator(ckg.kg, Q, 0.5)
    model = ImportanceAwareGNN(ckg.kg, inter, ev, L=2, l2=1e-4)
    p = ParameterStore.init(5, ckg.num_entities, ckg.kg.num_relations, 4, seed=3)
    p.holistic_raw = np.random.default_rng(3).uniform(0.2, 0.8, ckg.num_entities)
    masks = DropoutMasks.sample(np.random.default_rng(1), ckg.kg.num_triples, ckg.num_entities,
                                5, 4, 2, p_node=0.3, p_msg=0.3)
    batch = Batch(np.array([0, 2, 4]), np.array([1, 4, 5]), np.array([3, 0, 2]))
    _, grads, _ = model.loss_and_gradients(p, batch, masks)
    from kgtrimmer.gnn import finite_difference_gradients
    num = finite_difference_gradients(lambda q: model.loss(q, batch, masks), p)
    for g in ParameterStore.GROUPS:
        np.testing.assert_allclose(getattr(grads, g), num[g], rtol=1e-5, atol=1e-9)
