"""All-ranking top-K evaluation, pruning baselines and retrain-and-compare."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDatasetError
from .gnn import ImportanceAwareGNN
from .pruner import binarize_percentile, count_for_fraction

__all__ = [
    "EvalReport",
    "evaluate_all_ranking",
    "evaluate_params",
    "pop_baseline",
    "norm_baseline",
    "random_baseline",
    "retrain_and_compare",
    "write_comparison",
    "format_comparison",
]


@dataclass
class EvalReport:
    recall: dict
    ndcg: dict
    num_eval_users: int
    config_hash: str = ""

    def to_dict(self):
        out = {"num_eval_users": self.num_eval_users, "config_hash": self.config_hash}
        for k in sorted(self.recall):
            out[f"recall@{k}"] = self.recall[k]
            out[f"ndcg@{k}"] = self.ndcg[k]
        return out

    def to_json(self):
        return json.dumps(self.to_dict())


def _top_k(scores, k):
    """Indices of the ``k`` best entries per row, by descending score then ascending index."""
    n = scores.shape[1]
    if k >= n:
        return np.argsort(-scores, axis=1, kind="stable")[:, :k]
    kth = -np.partition(-scores, k - 1, axis=1)[:, k - 1]
    out = np.empty((len(scores), k), dtype=np.int64)
    for row, s in enumerate(scores):
        idx = np.flatnonzero(s >= kth[row])  # every tie at the boundary is a candidate
        out[row] = idx[np.lexsort((idx, -s[idx]))][:k]
    return out


def evaluate_all_ranking(final_user, final_entity, inter, Ks=(10, 20), chunk=512):
    """Rank every non-training item for each user with test items.

    Ties in score are broken by ascending item id.
    """
    Ks = tuple(sorted(set(int(k) for k in Ks)))
    users = np.flatnonzero(np.diff(inter.test_indptr) > 0)
    if not len(users):
        raise EmptyDatasetError("no users with test items")
    item_emb = final_entity[inter.item_to_entity]
    kmax = min(max(Ks), inter.num_items)
    discounts = 1.0 / np.log2(np.arange(2, kmax + 2))
    ideal = np.concatenate([[0.0], np.cumsum(discounts)])
    rec = {k: 0.0 for k in Ks}
    ndcg = {k: 0.0 for k in Ks}
    for start in range(0, len(users), chunk):
        us = users[start:start + chunk]
        scores = final_user[us] @ item_emb.T
        rows = np.repeat(np.arange(len(us)), np.diff(inter.train_indptr)[us])
        cols = np.concatenate([inter.train_items(u) for u in us]) if len(rows) else np.empty(0, int)
        scores[rows, cols.astype(np.int64)] = -np.inf
        top = _top_k(scores, kmax)
        for row, u in enumerate(us):
            test = inter.test_items(u)
            hit = np.isin(top[row], test).astype(np.float64)
            for k in Ks:
                h = hit[:k]
                rec[k] += h.sum() / len(test)
                ndcg[k] += (h @ discounts[:len(h)]) / ideal[min(k, len(test), kmax)]
    n = len(users)
    return EvalReport({k: rec[k] / n for k in Ks}, {k: ndcg[k] / n for k in Ks}, int(n))


def evaluate_params(params, kg, inter, L, evaluator=None, Ks=(10, 20)):
    """Eval-mode forward over all training interactions, then all-ranking on test."""
    model = ImportanceAwareGNN(kg.with_num_entities(inter.num_items), inter, evaluator, L)
    fu, fe, _ = model.forward(params)
    return evaluate_all_ranking(fu, fe, inter, Ks)


def pop_baseline(kg, ratio):
    """Remove highest in-degree entities (and all their triples) until the triple budget is met.

    In-degree is counted on canonical triples; ties go to the smaller entity id.
    Returns the keep mask over canonical triples.
    """
    n = kg.num_canonical_triples
    target = count_for_fraction(ratio, n)
    keep = np.ones(n, dtype=bool)
    if target == 0:
        return keep
    deg = kg.canonical_in_degree
    order = np.lexsort((np.arange(kg.num_entities), -deg))
    h, t = kg.canonical[:, 0], kg.canonical[:, 2]
    ends = np.concatenate([h, t])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    srt = np.argsort(ends, kind="stable")
    ends, idx = ends[srt], idx[srt]
    ptr = np.searchsorted(ends, np.arange(kg.num_entities + 1))
    removed = 0
    for v in order:
        if removed >= target:
            break
        inc = idx[ptr[v]:ptr[v + 1]]
        fresh = np.unique(inc[keep[inc]])  # a self-loop is listed twice
        keep[fresh] = False
        removed += len(fresh)
    return keep


def norm_baseline(params, kg, ratio):
    """Prune the canonical triples with the lowest ``|e_h| * |e_t|`` (unit-mask trained embeddings)."""
    if params is None:
        raise ValueError("norm baseline needs embeddings trained with a unit mask")
    norms = np.linalg.norm(params.entity_embeddings, axis=1)
    c = kg.canonical
    scores = norms[c[:, 0]] * norms[c[:, 2]]
    return binarize_percentile(scores, ratio)[0]


def random_baseline(kg, ratio, seed=0):
    scores = np.random.default_rng(seed).random(kg.num_canonical_triples)
    return binarize_percentile(scores, ratio)[0]


@dataclass
class ComparisonRow:
    name: str
    triples: int
    recall20: float
    ndcg20: float
    epochs: int
    wallclock_s: float
    report: EvalReport = field(repr=False, default=None)


def retrain_and_compare(graphs, inter, config, Ks=(10, 20)):
    """Train the unit-mask backbone on each named KG with the same config and seed.

    ``graphs`` maps a label to a :class:`KnowledgeGraph`.
    """
    from .trainer import train

    rows = []
    for name, kg in graphs.items():
        res = train(config, inter, kg, None, unit_mask=True)
        rep = evaluate_params(res.params, kg, inter, config.L, None, Ks)
        rep.config_hash = config.hash()
        rows.append(ComparisonRow(name, kg.num_canonical_triples, rep.recall.get(20, np.nan),
                                  rep.ndcg.get(20, np.nan), res.epochs_run, res.wallclock_s, rep))
    return rows


_COLUMNS = ("name", "triples", "recall20", "ndcg20", "epochs", "wallclock_s")


def write_comparison(path, rows):
    with open(path, "w") as fh:
        fh.write("\t".join(_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join(str(getattr(r, c)) for c in _COLUMNS) + "\n")


def format_comparison(rows):
    head = f"{'graph':<16}{'triples':>10}{'R@20':>10}{'N@20':>10}{'epochs':>8}{'time(s)':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.name:<16}{r.triples:>10}{r.recall20:>10.4f}{r.ndcg20:>10.4f}"
                     f"{r.epochs:>8}{r.wallclock_s:>10.2f}")
    return "\n".join(lines)
