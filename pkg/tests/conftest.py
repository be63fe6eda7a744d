import numpy as np
import pytest

from kgtrimmer.graph_core import InteractionGraph, KnowledgeGraph, build_ckg

ACCEPTANCE_LINES = []


def tiny_dataset():
    """5 users, 6 items, 10 entities, 2 canonical relations.

    Items are entities 0..5; 6..9 are attributes. Entity 9 is two KG hops
    from item 5 only through entity 8.
    """
    triples = np.array([
        (0, 0, 6), (1, 0, 6), (2, 1, 7), (3, 1, 7), (4, 0, 8),
        (5, 1, 8), (6, 1, 7), (8, 0, 9), (0, 1, 8), (2, 0, 6),
    ])
    kg = KnowledgeGraph.from_triples(triples, 10, 2)
    train_u = [0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 4]
    train_i = [0, 1, 1, 2, 3, 4, 4, 5, 0, 3, 5]
    test_u = [0, 1, 2, 3, 4]
    test_i = [2, 3, 5, 0, 1]
    inter = InteractionGraph.from_pairs(train_u, train_i, test_u, test_i, 5, 6)
    return inter, kg


@pytest.fixture
def tiny():
    return tiny_dataset()


@pytest.fixture
def tiny_ckg():
    inter, kg = tiny_dataset()
    return build_ckg(inter, kg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def gradient_check(seed, transform="tail", gamma=0.5, step=1e-4):
    """Analytic vs central-difference gradients on the tiny fixture, dropout off.

    Returns ``{group: max relative error}`` with relative error
    ``|a - n| / max(|a|, |n|, 1e-8)`` per coordinate.
    """
    from kgtrimmer.gnn import Batch, ImportanceAwareGNN, finite_difference_gradients
    from kgtrimmer.evaluator import DualViewEvaluator, ParameterStore
    from kgtrimmer.qmatrix import build_user_entity_matrix

    inter, kg = tiny_dataset()
    ckg = build_ckg(inter, kg)
    Q = build_user_entity_matrix(ckg, k=50, hop_limit=2, seed=seed)
    ev = DualViewEvaluator(ckg.kg, Q, gamma, transform)
    model = ImportanceAwareGNN(ckg.kg, inter, ev, L=2, l2=1e-3)
    r = np.random.default_rng(seed)
    p = ParameterStore.init(inter.num_users, ckg.num_entities, ckg.kg.num_relations, 8, seed)
    # interior holistic values keep the clamp differentiable for the difference quotient
    p.holistic_raw = r.uniform(0.1, 0.9, ckg.num_entities)
    users, items = inter.train_pairs()
    neg = np.array([next(j for j in r.permutation(inter.num_items)
                         if j not in set(inter.train_items(u).tolist())) for u in users])
    batch = Batch(users, items, neg)
    _, grads, _ = model.loss_and_gradients(p, batch)
    numeric = finite_difference_gradients(lambda q: model.loss(q, batch), p, step)
    out = {}
    for g in ParameterStore.GROUPS:
        a, n = getattr(grads, g), numeric[g]
        out[g] = float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))
    return out
