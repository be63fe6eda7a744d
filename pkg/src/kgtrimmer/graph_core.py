"""Loading, validation and indexing of interaction data and knowledge graphs.

Items occupy the entity-id prefix ``[0, num_items)``; every other entity
follows. Inverse relations are materialized at load time: relation ``r``
is paired with ``r + R`` where ``R`` is the number of canonical relations.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import AlignmentError, DataFormatError, EmptyDatasetError, ValidationError

__all__ = [
    "KnowledgeGraph",
    "InteractionGraph",
    "CollaborativeGraph",
    "GraphStats",
    "add_inverse_relations",
    "load_interactions",
    "load_triples",
    "load_dataset",
    "build_ckg",
    "stats",
    "write_triples",
    "write_interactions",
    "k_core_filter",
    "kg_frequency_filter",
]


def _csr_from_pairs(rows, cols, n_rows):
    """Sorted, deduplicated CSR (indptr, indices) from parallel id arrays."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if rows.size:
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        keep = np.ones(rows.size, dtype=bool)
        keep[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        rows, cols = rows[keep], cols[keep]
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=indptr[1:])
    return indptr, cols


def add_inverse_relations(triples, num_canonical_relations):
    """Append ``(t, r + R, h)`` for every canonical ``(h, r, t)``.

    Returns the augmented ``(2n, 3)`` array (canonical rows first) and, for
    each augmented row, the index of the canonical triple it came from.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    inverse = np.stack(
        [triples[:, 2], triples[:, 1] + num_canonical_relations, triples[:, 0]], axis=1
    )
    n = len(triples)
    source = np.concatenate([np.arange(n), np.arange(n)])
    return np.concatenate([triples, inverse]), source


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Immutable triple store.

    ``canonical`` holds the deduplicated on-disk triples in lexicographic
    order. ``heads``/``relations``/``tails`` hold the inverse-augmented edge
    list sorted by head, so ``indptr`` is the CSR row pointer over heads.
    ``edge_canonical[e]`` is the canonical triple index of augmented edge e.
    """

    num_entities: int
    num_canonical_relations: int
    canonical: np.ndarray
    heads: np.ndarray
    relations: np.ndarray
    tails: np.ndarray
    edge_canonical: np.ndarray
    indptr: np.ndarray
    duplicates_dropped: int = 0

    @classmethod
    def from_triples(cls, triples, num_entities=None, num_relations=None, duplicates_dropped=0):
        """Build from canonical triples; ``num_relations`` counts canonical relations."""
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if triples.size and triples.min() < 0:
            raise ValidationError("negative entity or relation id")
        if len(triples):
            before = len(triples)
            triples = np.unique(triples, axis=0)
            duplicates_dropped += before - len(triples)
        max_ent = int(max(triples[:, 0].max(), triples[:, 2].max())) + 1 if len(triples) else 0
        max_rel = int(triples[:, 1].max()) + 1 if len(triples) else 0
        if num_entities is None:
            num_entities = max_ent
        elif max_ent > num_entities:
            raise ValidationError(f"entity id {max_ent - 1} exceeds vocabulary of {num_entities}")
        if num_relations is None:
            num_relations = max_rel
        elif max_rel > num_relations:
            raise ValidationError(f"relation id {max_rel - 1} exceeds vocabulary of {num_relations}")

        aug, source = add_inverse_relations(triples, num_relations)
        order = np.lexsort((aug[:, 2], aug[:, 1], aug[:, 0]))
        aug, source = aug[order], source[order]
        indptr = np.zeros(num_entities + 1, dtype=np.int64)
        np.cumsum(np.bincount(aug[:, 0], minlength=num_entities), out=indptr[1:])
        return cls(
            num_entities=int(num_entities),
            num_canonical_relations=int(num_relations),
            canonical=triples,
            heads=np.ascontiguousarray(aug[:, 0]),
            relations=np.ascontiguousarray(aug[:, 1]),
            tails=np.ascontiguousarray(aug[:, 2]),
            edge_canonical=source,
            indptr=indptr,
            duplicates_dropped=int(duplicates_dropped),
        )

    @property
    def num_relations(self):
        return 2 * self.num_canonical_relations

    @property
    def num_triples(self):
        return len(self.heads)

    @property
    def num_canonical_triples(self):
        return len(self.canonical)

    @property
    def triples(self):
        return np.stack([self.heads, self.relations, self.tails], axis=1)

    def inverse_relation(self, r):
        R = self.num_canonical_relations
        return r + R if r < R else r - R

    def out_neighbors(self, v):
        """(relation ids, tail ids) of the augmented out-edges of ``v``."""
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return self.relations[lo:hi], self.tails[lo:hi]

    def in_relations(self, v):
        """Relation ids (with multiplicity) of augmented triples whose tail is ``v``."""
        return np.sort(self.relations[self.tails == v])

    @property
    def in_degree(self):
        return np.bincount(self.tails, minlength=self.num_entities)

    @property
    def canonical_in_degree(self):
        return np.bincount(self.canonical[:, 2], minlength=self.num_entities)

    def with_num_entities(self, num_entities):
        if num_entities <= self.num_entities:
            return self
        return KnowledgeGraph.from_triples(
            self.canonical, num_entities, self.num_canonical_relations, self.duplicates_dropped
        )

    def subgraph(self, keep):
        """Keep the canonical triples selected by boolean ``keep``; vocabularies unchanged."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.num_canonical_triples,):
            raise ValidationError("mask length does not match canonical triple count")
        return KnowledgeGraph.from_triples(
            self.canonical[keep], self.num_entities, self.num_canonical_relations
        )


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """User-item interactions held as per-user CSR lists (sorted item ids)."""

    num_users: int
    num_items: int
    train_indptr: np.ndarray
    train_indices: np.ndarray
    test_indptr: np.ndarray
    test_indices: np.ndarray
    item_to_entity: np.ndarray
    duplicates_dropped: int = 0
    overlap_dropped: int = 0

    @classmethod
    def from_pairs(cls, train_users, train_items, test_users=(), test_items=(),
                   num_users=None, num_items=None, item_to_entity=None):
        tu = np.asarray(train_users, dtype=np.int64)
        ti = np.asarray(train_items, dtype=np.int64)
        su = np.asarray(test_users, dtype=np.int64)
        si = np.asarray(test_items, dtype=np.int64)
        if num_users is None:
            num_users = int(max(tu.max(initial=-1), su.max(initial=-1))) + 1
        if num_items is None:
            num_items = int(max(ti.max(initial=-1), si.max(initial=-1))) + 1
        for arr, lim, what in ((tu, num_users, "user"), (su, num_users, "user"),
                               (ti, num_items, "item"), (si, num_items, "item")):
            if arr.size and (arr.min() < 0 or arr.max() >= lim):
                raise ValidationError(f"{what} id out of range [0, {lim})")
        tr_ptr, tr_idx = _csr_from_pairs(tu, ti, num_users)
        te_ptr, te_idx = _csr_from_pairs(su, si, num_users)
        dups = len(tu) + len(su) - len(tr_idx) - len(te_idx)

        # test items the user already has in train are dropped from test
        overlap = 0
        if len(te_idx):
            te_rows = np.repeat(np.arange(num_users), np.diff(te_ptr))
            tr_rows = np.repeat(np.arange(num_users), np.diff(tr_ptr))
            key_tr = tr_rows * num_items + tr_idx
            key_te = te_rows * num_items + te_idx
            clash = np.isin(key_te, key_tr)
            overlap = int(clash.sum())
            if overlap:
                te_ptr, te_idx = _csr_from_pairs(te_rows[~clash], te_idx[~clash], num_users)
        if item_to_entity is None:
            item_to_entity = np.arange(num_items, dtype=np.int64)
        return cls(int(num_users), int(num_items), tr_ptr, tr_idx, te_ptr, te_idx,
                   np.asarray(item_to_entity, dtype=np.int64), dups, overlap)

    def train_items(self, u):
        return self.train_indices[self.train_indptr[u]:self.train_indptr[u + 1]]

    def test_items(self, u):
        return self.test_indices[self.test_indptr[u]:self.test_indptr[u + 1]]

    @property
    def train_edges(self):
        return [self.train_items(u) for u in range(self.num_users)]

    @property
    def test_edges(self):
        return [self.test_items(u) for u in range(self.num_users)]

    def train_pairs(self):
        users = np.repeat(np.arange(self.num_users), np.diff(self.train_indptr))
        return users, self.train_indices.copy()

    def test_pairs(self):
        users = np.repeat(np.arange(self.num_users), np.diff(self.test_indptr))
        return users, self.test_indices.copy()

    @property
    def num_train(self):
        return len(self.train_indices)

    @property
    def num_test(self):
        return len(self.test_indices)

    def train_matrix(self):
        """Binary |U| x |I| CSR matrix of training interactions."""
        data = np.ones(self.num_train)
        return sp.csr_matrix((data, self.train_indices, self.train_indptr),
                             shape=(self.num_users, self.num_items))

    def with_split(self, train_users, train_items, test_users, test_items):
        """New graph over the same id spaces with different train/test pairs."""
        return InteractionGraph.from_pairs(
            train_users, train_items, test_users, test_items,
            self.num_users, self.num_items, self.item_to_entity,
        )


@dataclass(frozen=True)
class GraphStats:
    users: int
    items: int
    interactions: int
    entities: int
    relations: int
    triples: int

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=False)


@dataclass(frozen=True, eq=False)
class CollaborativeGraph:
    """Joint view of the interaction graph and the KG through item alignment."""

    inter: InteractionGraph
    kg: KnowledgeGraph
    _item_users: sp.csr_matrix = field(repr=False, default=None)

    @property
    def num_users(self):
        return self.inter.num_users

    @property
    def num_entities(self):
        return self.kg.num_entities

    def user_entities(self, u):
        """Entities one interaction edge away from user ``u``."""
        return self.inter.item_to_entity[self.inter.train_items(u)]

    def entity_neighbors(self, v):
        return self.kg.out_neighbors(v)

    def entity_user_matrix(self):
        """|V| x |U| binary CSR: entity rows of items, columns of interacting users."""
        return self._item_users

    def kg_adjacency(self):
        """Undirected |V| x |V| binary adjacency of the KG (inverse edges make it symmetric)."""
        n = self.kg.num_entities
        data = np.ones(self.kg.num_triples, dtype=np.int8)
        adj = sp.csr_matrix((data, (self.kg.heads, self.kg.tails)), shape=(n, n))
        adj.data[:] = 1
        return adj


def build_ckg(inter, kg):
    """Fuse interactions and KG; widens the entity space to cover all items."""
    ite = inter.item_to_entity
    if len(ite) != inter.num_items or (ite.size and ite.min() < 0):
        raise AlignmentError("every item needs an aligned entity")
    kg = kg.with_num_entities(max(inter.num_items, int(ite.max(initial=-1)) + 1))
    users, items = inter.train_pairs()
    item_users = sp.csr_matrix(
        (np.ones(len(users), dtype=np.int8), (ite[items], users)),
        shape=(kg.num_entities, inter.num_users),
    )
    return CollaborativeGraph(inter, kg, item_users)


def stats(inter, kg):
    items = np.union1d(inter.train_indices, inter.test_indices)
    return GraphStats(
        users=int(inter.num_users),
        items=int(len(items)),
        interactions=int(inter.num_train + inter.num_test + inter.overlap_dropped),
        entities=int(kg.num_entities),
        relations=int(kg.num_canonical_relations),
        triples=int(kg.num_canonical_triples),
    )


def _read_interaction_file(path):
    path = Path(path)
    users, items, listed = [], [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            try:
                ids = [int(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(path, lineno, f"non-integer token ({exc})") from None
            if min(ids) < 0:
                raise DataFormatError(path, lineno, "negative id")
            u = ids[0]
            listed.add(u)
            users.extend([u] * (len(ids) - 1))
            items.extend(ids[1:])
    if not listed:
        raise EmptyDatasetError(f"{path}: no interactions")
    return np.array(users, dtype=np.int64), np.array(items, dtype=np.int64), listed


def load_interactions(path, test_path=None):
    """Read ``user item item ...`` lines; an optional second file provides test edges."""
    tu, ti, listed = _read_interaction_file(path)
    su = si = np.empty(0, dtype=np.int64)
    if test_path is not None:
        su, si, listed_test = _read_interaction_file(test_path)
        listed |= listed_test
    num_users = max(listed) + 1
    return InteractionGraph.from_pairs(tu, ti, su, si, num_users=num_users)


def load_triples(path, num_entities=None, num_relations=None):
    """Read ``head relation tail`` lines into a deduplicated, inverse-augmented KG."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise DataFormatError(path, lineno, f"expected 3 fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(parts[2])))
            except ValueError as exc:
                raise DataFormatError(path, lineno, f"non-integer token ({exc})") from None
    triples = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return KnowledgeGraph.from_triples(triples, num_entities, num_relations)


def load_dataset(data_dir, kg_file=None):
    """Load ``train.txt``, ``test.txt`` and ``kg_final.txt`` from a directory."""
    data_dir = Path(data_dir if data_dir is not None else os.environ.get("KGT_DATA_DIR", "."))
    for name in ("train.txt", "test.txt"):
        if not (data_dir / name).exists():
            raise FileNotFoundError(f"missing data file: {data_dir / name}")
    kg_path = Path(kg_file) if kg_file is not None else data_dir / "kg_final.txt"
    if not kg_path.exists():
        raise FileNotFoundError(f"missing data file: {kg_path}")
    inter = load_interactions(data_dir / "train.txt", data_dir / "test.txt")
    kg = load_triples(kg_path)
    return inter, kg.with_num_entities(inter.num_items)


def write_triples(path, triples):
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    with open(path, "w") as fh:
        fh.writelines(f"{h} {r} {t}\n" for h, r, t in triples.tolist())


def write_interactions(path, inter, which="train"):
    get = inter.train_items if which == "train" else inter.test_items
    with open(path, "w") as fh:
        for u in range(inter.num_users):
            items = get(u)
            if len(items):
                fh.write(" ".join(map(str, [u, *items.tolist()])) + "\n")


def k_core_filter(users, items, k=10):
    """Iteratively drop users and items with fewer than ``k`` interactions."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    keep = np.ones(len(users), dtype=bool)
    while True:
        u_cnt = np.bincount(users[keep], minlength=users.max(initial=-1) + 1)
        i_cnt = np.bincount(items[keep], minlength=items.max(initial=-1) + 1)
        new_keep = keep & (u_cnt[users] >= k) & (i_cnt[items] >= k)
        if new_keep.sum() == keep.sum():
            return keep
        keep = new_keep


def kg_frequency_filter(triples, min_entity_triples=10, min_relation_triples=50):
    """Boolean mask dropping triples that touch an infrequent entity or relation.

    Counts are taken on canonical triples in a single pass.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if not len(triples):
        return np.zeros(0, dtype=bool)
    ent = np.bincount(np.concatenate([triples[:, 0], triples[:, 2]]))
    rel = np.bincount(triples[:, 1])
    return (
        (ent[triples[:, 0]] >= min_entity_triples)
        & (ent[triples[:, 2]] >= min_entity_triples)
        & (rel[triples[:, 1]] >= min_relation_triples)
    )
