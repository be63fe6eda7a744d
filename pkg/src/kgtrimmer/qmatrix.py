"""User-entity matrix: which users can reach each entity through the CKG.

A user reaches entity ``v`` when one of the user's training items sits within
``hop_limit`` undirected KG edges of ``v``. Columns holding more than ``k``
users are replaced by a uniform random k-subset.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "UserEntityMatrix",
    "reachable_users",
    "reachable_user_matrix",
    "build_user_entity_matrix",
    "write_user_entity_matrix",
    "read_user_entity_matrix",
]


@dataclass(frozen=True, eq=False)
class UserEntityMatrix:
    """Sampled user neighbourhoods per entity, stored column-wise as CSR.

    ``users[indptr[v]:indptr[v+1]]`` is the sorted list of sampled users of
    entity ``v``.
    """

    indptr: np.ndarray
    users: np.ndarray
    num_users: int
    k: int
    hop_limit: int
    seed: int | None

    @property
    def num_entities(self):
        return len(self.indptr) - 1

    def column(self, v):
        return self.users[self.indptr[v]:self.indptr[v + 1]]

    @property
    def columns(self):
        return {v: self.column(v) for v in range(self.num_entities)}

    @property
    def counts(self):
        return np.diff(self.indptr)

    def pairs(self):
        """Parallel ``(user, entity)`` arrays of the nonzero entries."""
        ents = np.repeat(np.arange(self.num_entities), self.counts)
        return self.users, ents

    def to_sparse(self):
        """|U| x |V| binary matrix."""
        data = np.ones(len(self.users), dtype=np.int8)
        return sp.csc_matrix((data, self.users, self.indptr),
                             shape=(self.num_users, self.num_entities))

    @classmethod
    def from_columns(cls, columns, num_users, num_entities, k=None, hop_limit=0, seed=None):
        indptr = np.zeros(num_entities + 1, dtype=np.int64)
        cols = [np.sort(np.asarray(columns.get(v, ()), dtype=np.int64)) for v in range(num_entities)]
        np.cumsum([len(c) for c in cols], out=indptr[1:])
        users = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
        if k is None:
            k = int(max((len(c) for c in cols), default=0))
        return cls(indptr, users.astype(np.int64), int(num_users), int(k), int(hop_limit), seed)


def _hop_operator(ckg):
    adj = ckg.kg_adjacency().astype(np.int32)
    return (adj + sp.identity(adj.shape[0], dtype=np.int32, format="csr")).tocsr()


def reachable_user_matrix(ckg, hop_limit, entities=None):
    """Sparse |U| x |entities| matrix whose nonzeros mark reachability."""
    n = ckg.num_entities
    cols = np.arange(n) if entities is None else np.asarray(entities, dtype=np.int64)
    # propagate the selected entity indicator columns backwards hop by hop
    reach = sp.csr_matrix(
        (np.ones(len(cols), dtype=np.int32), (cols, np.arange(len(cols)))), shape=(n, len(cols))
    )
    if hop_limit > 0:
        step = _hop_operator(ckg)
        for _ in range(hop_limit):
            reach = step @ reach
            reach.data[:] = 1
    user_entity = ckg.entity_user_matrix().T.astype(np.int32).tocsr()
    out = (user_entity @ reach).tocsc()
    out.data[:] = 1
    out.sort_indices()
    return out


def reachable_users(ckg, v, hop_limit):
    """Set of users with an interaction edge followed by <= hop_limit KG edges to ``v``."""
    col = reachable_user_matrix(ckg, hop_limit, [v])
    return set(col.indices.tolist())


def build_user_entity_matrix(ckg, k=50, hop_limit=2, seed=0, chunk_size=4096):
    """Sample at most ``k`` reachable users per entity.

    Entities are processed in id order with a single generator so the result
    does not depend on ``chunk_size``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if hop_limit < 0:
        raise ValueError("hop_limit must be >= 0")
    rng = np.random.default_rng(seed)
    n = ckg.num_entities
    counts = np.zeros(n, dtype=np.int64)
    pieces = []
    for start in range(0, n, chunk_size):
        block = reachable_user_matrix(ckg, hop_limit, np.arange(start, min(n, start + chunk_size)))
        for j in range(block.shape[1]):
            users = block.indices[block.indptr[j]:block.indptr[j + 1]]
            if len(users) > k:
                users = np.sort(rng.choice(users, size=k, replace=False))
            counts[start + j] = len(users)
            pieces.append(users)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    users = np.concatenate(pieces).astype(np.int64) if pieces else np.empty(0, dtype=np.int64)
    return UserEntityMatrix(indptr, users, ckg.num_users, int(k), int(hop_limit), seed)


def write_user_entity_matrix(path, Q):
    """One line per entity: ``entity_id u1 u2 ...``."""
    with open(path, "w") as fh:
        for v in range(Q.num_entities):
            fh.write(" ".join(map(str, [v, *Q.column(v).tolist()])) + "\n")


def read_user_entity_matrix(path, num_users, k, hop_limit, seed=None):
    columns = {}
    with open(path) as fh:
        for line in fh:
            parts = [int(p) for p in line.split()]
            if parts:
                columns[parts[0]] = parts[1:]
    n = max(columns) + 1 if columns else 0
    return UserEntityMatrix.from_columns(columns, num_users, n, k, hop_limit, seed)
