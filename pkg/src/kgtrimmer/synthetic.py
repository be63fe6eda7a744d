"""Synthetic datasets with known ground truth.

The planted-hub generator builds clustered users and items. Each item links to a
few *discriminative* entities of its own cluster and to most of the *hub*
entities, which every cluster shares and so carry no preference signal. Some
items are cold (no training interactions) so that ranking them depends on KG
propagation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_core import InteractionGraph, KnowledgeGraph, write_interactions, write_triples

__all__ = ["PlantedHub", "make_planted_hub", "write_dataset"]


@dataclass(frozen=True, eq=False)
class PlantedHub:
    inter: InteractionGraph
    kg: KnowledgeGraph
    item_cluster: np.ndarray
    user_cluster: np.ndarray
    discriminative: np.ndarray
    hubs: np.ndarray
    cold_items: np.ndarray


def make_planted_hub(
    n_users=200,
    n_items=100,
    n_clusters=10,
    n_discriminative=60,
    n_hubs=5,
    hub_coverage=0.95,
    attrs_per_item=6,
    n_relations=2,
    train_per_user=6,
    test_per_user=3,
    cold_fraction=0.05,
    in_cluster_prob=0.9,
    hub_relation=True,
    seed=0,
):
    """Planted-hub dataset.

    With ``hub_relation`` every hub triple uses an extra relation id of its own
    (as generic "type"-style relations do in real KGs); otherwise hub triples
    draw from the same relations as discriminative ones.
    """
    rng = np.random.default_rng(seed)
    item_cluster = np.arange(n_items) % n_clusters
    user_cluster = np.arange(n_users) % n_clusters
    disc = n_items + np.arange(n_discriminative)
    disc_cluster = np.arange(n_discriminative) % n_clusters
    hubs = n_items + n_discriminative + np.arange(n_hubs)

    triples = []
    for i in range(n_items):
        own = disc[disc_cluster == item_cluster[i]]
        for e in rng.choice(own, size=min(attrs_per_item, len(own)), replace=False):
            triples.append((i, int(rng.integers(n_relations)), int(e)))
    n_cover = int(np.ceil(hub_coverage * n_items))
    for h in hubs:
        for i in rng.choice(n_items, size=n_cover, replace=False):
            r = n_relations if hub_relation else int(rng.integers(n_relations))
            triples.append((int(i), r, int(h)))
    n_entities = n_items + n_discriminative + n_hubs
    kg = KnowledgeGraph.from_triples(np.array(triples), n_entities, n_relations + bool(hub_relation))

    cold = np.sort(rng.choice(n_items, size=int(round(cold_fraction * n_items)), replace=False))
    is_cold = np.zeros(n_items, dtype=bool)
    is_cold[cold] = True

    tr_u, tr_i, te_u, te_i = [], [], [], []
    for u in range(n_users):
        c = user_cluster[u]
        own = np.flatnonzero(item_cluster == c)
        other = np.flatnonzero(item_cluster != c)

        def draw(pool_own, pool_other, n, exclude):
            picked = []
            while len(picked) < n:
                pool = pool_own if rng.random() < in_cluster_prob else pool_other
                pool = np.setdiff1d(pool, np.concatenate([exclude, picked]).astype(np.int64))
                if not len(pool):
                    pool = np.setdiff1d(np.concatenate([pool_own, pool_other]),
                                        np.concatenate([exclude, picked]).astype(np.int64))
                    if not len(pool):
                        break
                picked.append(int(rng.choice(pool)))
            return np.array(picked, dtype=np.int64)

        warm_own, warm_other = own[~is_cold[own]], other[~is_cold[other]]
        train = draw(warm_own, warm_other, train_per_user, np.empty(0, dtype=np.int64))
        test = draw(own, other, test_per_user, train)
        tr_u += [u] * len(train)
        tr_i += train.tolist()
        te_u += [u] * len(test)
        te_i += test.tolist()
    inter = InteractionGraph.from_pairs(tr_u, tr_i, te_u, te_i, n_users, n_items)
    return PlantedHub(inter, kg, item_cluster, user_cluster, disc, hubs, cold)


def write_dataset(path, data):
    """Write ``train.txt``, ``test.txt`` and ``kg_final.txt`` into directory ``path``."""
    from pathlib import Path

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_interactions(path / "train.txt", data.inter, "train")
    write_interactions(path / "test.txt", data.inter, "test")
    write_triples(path / "kg_final.txt", data.kg.canonical)
