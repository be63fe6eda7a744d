"""Turn per-epoch entity scores into a binary triple mask and a pruned KG."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .evaluator import triplet_scores
from .graph_core import write_triples

__all__ = [
    "AGG_STRATEGIES",
    "PrunedGraph",
    "count_for_fraction",
    "aggregate_masks",
    "canonical_triple_scores",
    "binarize_threshold",
    "binarize_percentile",
    "apply_mask",
    "score_histogram",
    "write_mask",
    "write_histogram",
]

AGG_STRATEGIES = ("mean", "mean_after_warmup", "last", "best_epoch")


def count_for_fraction(fraction, n):
    """ceil(fraction * n), immune to binary round-off such as 0.3 * 10 -> 3.0000000000000004."""
    return int(math.ceil(round(fraction * n, 9)))


def aggregate_masks(records, strategy="mean_after_warmup", warmup=0.5, best_epoch=None):
    """Elementwise aggregate of the entity-score snapshots.

    ``mean_after_warmup`` averages the records from index ``floor(warmup * n)`` on.
    """
    if not records:
        raise ValueError("no mask records to aggregate")
    stack = np.stack([r.scores for r in records])
    if strategy == "mean":
        return stack.mean(axis=0)
    if strategy == "mean_after_warmup":
        if not 0.0 <= warmup < 1.0:
            raise ConfigError("warmup fraction must lie in [0, 1)")
        start = int(math.floor(warmup * len(records)))
        return stack[start:].mean(axis=0)
    if strategy == "last":
        return stack[-1].copy()
    if strategy == "best_epoch":
        if best_epoch is None:
            raise ConfigError("best_epoch strategy needs the best epoch index")
        for r in records:
            if r.epoch == best_epoch:
                return r.scores.copy()
        raise ValueError(f"no record for epoch {best_epoch}")
    raise ConfigError(f"unknown aggregation {strategy!r}; expected one of {AGG_STRATEGIES}")


def canonical_triple_scores(kg, entity_scores, transform="tail"):
    c = kg.canonical
    return triplet_scores(np.asarray(entity_scores, dtype=np.float64), c[:, 0], c[:, 2], transform)


def binarize_threshold(scores, tau):
    """Keep triples whose score is >= tau."""
    return np.asarray(scores) >= tau


def binarize_percentile(scores, ratio):
    """Keep the ceil((1 - ratio) * n) best triples; ties go to the lower index.

    Returns (mask, tau_effective) where tau_effective is the smallest kept score
    (``inf`` when nothing is kept).
    """
    if not 0.0 <= ratio < 1.0:
        raise ConfigError(f"pruning ratio must lie in [0, 1), got {ratio}")
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    n_keep = count_for_fraction(1.0 - ratio, n)
    order = np.lexsort((np.arange(n), -scores))
    mask = np.zeros(n, dtype=bool)
    mask[order[:n_keep]] = True
    tau = float(scores[order[n_keep - 1]]) if n_keep else math.inf
    return mask, tau


@dataclass(frozen=True, eq=False)
class PrunedGraph:
    kept: np.ndarray
    mask: np.ndarray
    tau_effective: float
    provenance: dict
    kg: object

    @property
    def num_kept(self):
        return len(self.kept)

    def triples(self):
        return self.kg.canonical


def apply_mask(kg, mask, path=None, tau_effective=float("nan"), provenance=None):
    """Keep the canonical triples selected by ``mask``; inverse edges follow their partner."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (kg.num_canonical_triples,):
        raise ValidationError(
            f"mask length {mask.shape} does not match {kg.num_canonical_triples} canonical triples"
        )
    pruned = kg.subgraph(mask)
    if path is not None:
        write_triples(path, pruned.canonical)
    return PrunedGraph(np.flatnonzero(mask), mask, tau_effective, dict(provenance or {}), pruned)


def score_histogram(entity_scores, triple_scores, bins=20):
    """Counts of entity and triple scores over ``bins`` equal-width bins on [0, 1]."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    edges = np.linspace(0.0, 1.0, bins + 1)
    ent, _ = np.histogram(np.clip(entity_scores, 0, 1), bins=edges)
    tri, _ = np.histogram(np.clip(triple_scores, 0, 1), bins=edges)
    return edges, ent, tri


def write_mask(path, kg, scores, mask):
    with open(path, "w") as fh:
        fh.write("triple_index\th\tr\tt\tscore\tkeep\n")
        for i, ((h, r, t), s, k) in enumerate(zip(kg.canonical.tolist(), scores, mask)):
            fh.write(f"{i}\t{h}\t{r}\t{t}\t{s:.17g}\t{int(k)}\n")


def write_histogram(path, edges, ent_counts, tri_counts):
    with open(path, "w") as fh:
        fh.write("bin_lo\tbin_hi\tentity_count\ttriple_count\n")
        for lo, hi, e, t in zip(edges[:-1], edges[1:], ent_counts, tri_counts):
            fh.write(f"{lo:.6g}\t{hi:.6g}\t{e}\t{t}\n")
