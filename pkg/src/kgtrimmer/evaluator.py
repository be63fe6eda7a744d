"""Dual-view entity importance: collective (user attention) and holistic (learned mask).

The collective score of entity ``v`` is the mean clipped cosine similarity
between the layer-0 embeddings of its sampled users and the entity's
relation-enriched embedding ``mean(e_r for in-relations r) * e_v``. The
holistic score is a per-entity scalar clamped to ``[0, 1]``. The two are
blended with weight ``gamma`` and broadcast to triples by a transform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError

__all__ = [
    "TRANSFORMS",
    "ParameterStore",
    "ImportanceScores",
    "DualViewEvaluator",
    "relation_enriched_embedding",
    "relation_enriched_embeddings",
    "clipped_cosine",
    "collective_scores",
    "holistic_scores",
    "aggregate_scores",
    "triplet_score",
    "triplet_scores",
    "write_entity_scores",
    "write_triple_scores",
]

TRANSFORMS = ("tail", "mean", "product")


def xavier_uniform(rng, n, d):
    bound = np.sqrt(6.0 / (n + d))
    return rng.uniform(-bound, bound, size=(n, d))


@dataclass(eq=False)
class ParameterStore:
    """Learnable tables. ``holistic_raw`` is kept in [0, 1] by the optimizer."""

    user_embeddings: np.ndarray
    entity_embeddings: np.ndarray
    relation_embeddings: np.ndarray
    holistic_raw: np.ndarray

    GROUPS = ("user_embeddings", "entity_embeddings", "relation_embeddings", "holistic_raw")

    @classmethod
    def init(cls, num_users, num_entities, num_relations, d=64, seed=0):
        """Xavier-uniform embeddings, holistic mask at 1."""
        rng = np.random.default_rng(seed)
        return cls(
            xavier_uniform(rng, num_users, d),
            xavier_uniform(rng, num_entities, d),
            xavier_uniform(rng, num_relations, d),
            np.ones(num_entities),
        )

    @property
    def d(self):
        return self.user_embeddings.shape[1]

    def copy(self):
        return ParameterStore(*(getattr(self, g).copy() for g in self.GROUPS))

    def arrays(self):
        return {g: getattr(self, g) for g in self.GROUPS}

    def is_finite(self):
        return all(np.isfinite(a).all() for a in self.arrays().values())

    def save(self, path, **meta):
        np.savez(path, format_version=np.array(1), **self.arrays(),
                 **{f"meta_{k}": np.array(v) for k, v in meta.items()})

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            if int(data["format_version"]) != 1:
                raise ValueError(f"unsupported checkpoint version in {path}")
            return cls(*(data[g].copy() for g in cls.GROUPS))


@dataclass(frozen=True, eq=False)
class ImportanceScores:
    collective: np.ndarray
    holistic: np.ndarray
    aggregated: np.ndarray
    gamma: float


def _in_relation_operator(kg):
    """|V| x |R| averaging operator over in-relations, and the has-in mask."""
    n_in = np.bincount(kg.tails, minlength=kg.num_entities)
    has_in = n_in > 0
    w = 1.0 / n_in[kg.tails] if kg.num_triples else np.empty(0)
    op = sp.csr_matrix((w, (kg.tails, kg.relations)), shape=(kg.num_entities, kg.num_relations))
    op.sum_duplicates()
    return op, has_in


def relation_enriched_embeddings(params, kg, _op=None):
    op, has_in = _op if _op is not None else _in_relation_operator(kg)
    rel_mean = op @ params.relation_embeddings
    rel_mean[~has_in] = 1.0
    return rel_mean * params.entity_embeddings


def relation_enriched_embedding(v, params, kg):
    """``mean(e_r for r in in-relations(v)) * e_v``; ``e_v`` itself if v has no in-edges."""
    rels = kg.relations[kg.tails == v]
    e_v = params.entity_embeddings[v]
    if len(rels) == 0:
        return e_v.copy()
    return params.relation_embeddings[rels].mean(axis=0) * e_v


def clipped_cosine(a, b):
    """max(0, cos(a, b)); zero when either vector is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(0.0, float(a @ b) / (na * nb))


def _unit_rows(x):
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    safe = np.where(norms > 0, norms, 1.0)
    return x / safe[:, None], norms


def _pair_dots(a, b, rows, cols, dense_limit=4_000_000):
    """``a[rows[i]] . b[cols[i]]`` for every pair; one GEMM when ``a @ b.T`` is small."""
    if a.shape[0] * b.shape[0] <= dense_limit:
        return (a @ b.T)[rows, cols]
    return np.einsum("ij,ij->i", a[rows], b[cols])


def collective_scores(params, Q, kg):
    ev = DualViewEvaluator(kg, Q, gamma=1.0)
    return ev.forward(params)["collective"]


def holistic_scores(params):
    return np.clip(params.holistic_raw, 0.0, 1.0)


def _check_gamma(gamma):
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")


def aggregate_scores(s_c, s_h, gamma):
    _check_gamma(gamma)
    return gamma * np.asarray(s_c) + (1.0 - gamma) * np.asarray(s_h)


def _check_transform(transform):
    if transform not in TRANSFORMS:
        raise ConfigError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")


def triplet_scores(s_hat, heads, tails, transform="tail"):
    _check_transform(transform)
    sh, st = s_hat[heads], s_hat[tails]
    if transform == "tail":
        return st.copy()
    if transform == "mean":
        return 0.5 * (sh + st)
    return sh * st


def triplet_score(s_hat, triple, transform="tail"):
    h, _, t = triple
    return float(triplet_scores(np.asarray(s_hat, dtype=np.float64),
                                np.array([h]), np.array([t]), transform)[0])


class DualViewEvaluator:
    """Vectorized evaluator with the reverse pass needed for training.

    Index structures depending only on ``kg`` and ``Q`` are built once.
    """

    def __init__(self, kg, Q, gamma=0.5, transform="tail"):
        _check_gamma(gamma)
        _check_transform(transform)
        self.kg = kg
        self.gamma = float(gamma)
        self.transform = transform
        self._op = _in_relation_operator(kg)
        if Q is not None:
            if Q.num_entities != kg.num_entities:
                raise ValueError("user-entity matrix does not cover the KG entities")
            self.pair_users, self.pair_ents = Q.pairs()
            self.col_counts = Q.counts
            self.num_users = Q.num_users
        else:
            self.pair_users = self.pair_ents = np.empty(0, dtype=np.int64)
            self.col_counts = np.zeros(kg.num_entities, dtype=np.int64)
            self.num_users = 0
        self._inv_count = np.where(self.col_counts > 0, 1.0 / np.maximum(self.col_counts, 1), 0.0)

    def forward(self, params, need_collective=None):
        """Entity scores plus the intermediates ``backward`` needs."""
        if need_collective is None:
            need_collective = self.gamma > 0.0
        n = self.kg.num_entities
        cache = {"holistic": holistic_scores(params)}
        if need_collective and len(self.pair_users):
            enriched = relation_enriched_embeddings(params, self.kg, self._op)
            un, u_norm = _unit_rows(params.user_embeddings)
            en, e_norm = _unit_rows(enriched)
            cos = _pair_dots(un, en, self.pair_users, self.pair_ents)
            cos = np.where((u_norm[self.pair_users] > 0) & (e_norm[self.pair_ents] > 0), cos, 0.0)
            clipped = np.maximum(cos, 0.0)
            collective = np.bincount(self.pair_ents, weights=clipped, minlength=n) * self._inv_count
            cache.update(enriched=enriched, un=un, u_norm=u_norm, en=en, e_norm=e_norm, cos=cos)
        else:
            collective = np.zeros(n)
        cache["collective"] = collective
        cache["aggregated"] = self.gamma * collective + (1.0 - self.gamma) * cache["holistic"]
        return cache

    def scores(self, params):
        c = self.forward(params)
        return ImportanceScores(c["collective"], c["holistic"], c["aggregated"], self.gamma)

    def edge_scores(self, s_hat):
        """Score of every augmented edge."""
        return triplet_scores(s_hat, self.kg.heads, self.kg.tails, self.transform)

    def canonical_scores(self, s_hat):
        c = self.kg.canonical
        return triplet_scores(s_hat, c[:, 0], c[:, 2], self.transform)

    def edge_scores_backward(self, s_hat, g_edge):
        """Gradient w.r.t. entity scores given gradient w.r.t. augmented-edge scores."""
        n = self.kg.num_entities
        h, t = self.kg.heads, self.kg.tails
        if self.transform == "tail":
            return np.bincount(t, weights=g_edge, minlength=n)
        if self.transform == "mean":
            return 0.5 * (np.bincount(h, weights=g_edge, minlength=n)
                          + np.bincount(t, weights=g_edge, minlength=n))
        return (np.bincount(h, weights=g_edge * s_hat[t], minlength=n)
                + np.bincount(t, weights=g_edge * s_hat[h], minlength=n))

    def backward(self, params, cache, g_shat, grads):
        """Accumulate d(loss)/d(params) into ``grads`` given d(loss)/d(s_hat).

        The clamp on ``holistic_raw`` passes the gradient straight through.
        """
        grads.holistic_raw += (1.0 - self.gamma) * g_shat
        if self.gamma == 0.0 or "cos" not in cache:
            return grads
        g_col = self.gamma * g_shat * self._inv_count
        cos = cache["cos"]
        g_cos = np.where(cos > 0.0, g_col[self.pair_ents], 0.0)
        nu, nv = params.user_embeddings.shape[0], params.entity_embeddings.shape[0]
        S = sp.csr_matrix((g_cos, (self.pair_users, self.pair_ents)), shape=(nu, nv))
        un, en = cache["un"], cache["en"]
        g_un = S @ en
        g_en = S.T @ un
        # d(x/|x|) = (g - (g.x_hat) x_hat) / |x|
        u_norm = np.where(cache["u_norm"] > 0, cache["u_norm"], 1.0)
        e_norm = np.where(cache["e_norm"] > 0, cache["e_norm"], 1.0)
        g_user = (g_un - np.einsum("ij,ij->i", g_un, un)[:, None] * un) / u_norm[:, None]
        g_enr = (g_en - np.einsum("ij,ij->i", g_en, en)[:, None] * en) / e_norm[:, None]

        op, has_in = self._op
        rel_mean = op @ params.relation_embeddings
        rel_mean[~has_in] = 1.0
        grads.user_embeddings += g_user
        grads.entity_embeddings += g_enr * rel_mean
        g_rel_mean = g_enr * params.entity_embeddings
        g_rel_mean[~has_in] = 0.0
        grads.relation_embeddings += op.T @ g_rel_mean
        return grads


def write_entity_scores(path, scores):
    with open(path, "w") as fh:
        for v, (c, h, a) in enumerate(zip(scores.collective, scores.holistic, scores.aggregated)):
            fh.write(f"{v}\t{c:.17g}\t{h:.17g}\t{a:.17g}\n")


def write_triple_scores(path, triples, scores):
    with open(path, "w") as fh:
        for i, ((h, r, t), s) in enumerate(zip(np.asarray(triples).tolist(), scores)):
            fh.write(f"{i}\t{h}\t{r}\t{t}\t{s:.17g}\n")
