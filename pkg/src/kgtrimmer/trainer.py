"""Training loop: batching, negative sampling, Adam, per-epoch mask snapshots, early stopping."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, EmptyDatasetError, TrainingDivergedError
from .evaluator import TRANSFORMS, DualViewEvaluator, ParameterStore
from .gnn import Batch, DropoutMasks, ImportanceAwareGNN

__all__ = [
    "TrainConfig",
    "MaskRecord",
    "AdamState",
    "TrainResult",
    "adam_step",
    "negative_sample",
    "sample_negatives",
    "validation_split",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters. Grid ranges are listed in the CLI help."""

    batch_size: int = 4096
    lr: float = 1e-3
    l2: float = 1e-5
    gamma: float = 0.5
    k: int = 50
    hop_limit: int = 2
    L: int = 2
    d: int = 64
    n_neg: int = 1
    p_node: float = 0.1
    p_msg: float = 0.1
    max_epochs: int = 1000
    patience: int = 100
    seed: int = 0
    transform: str = "tail"
    eval_every: int = 1
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        for name in ("p_node", "p_msg"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"unknown transform {self.transform!r}")
        if self.k < 1 or self.hop_limit < 0 or self.L < 0 or self.d < 1 or self.n_neg < 1:
            raise ConfigError("k, d, n_neg must be >= 1 and hop_limit, L >= 0")
        if self.eval_every < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("eval_every and patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class MaskRecord:
    epoch: int
    scores: np.ndarray


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params):
        return cls({g: np.zeros_like(a) for g, a in params.arrays().items()},
                   {g: np.zeros_like(a) for g, a in params.arrays().items()})


def adam_step(params, grads, state, lr):
    """In-place bias-corrected Adam update, then clamp the holistic mask to [0, 1]."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for g, p in params.arrays().items():
        grad = getattr(grads, g)
        m, v = state.m[g], state.v[g]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    np.clip(params.holistic_raw, 0.0, 1.0, out=params.holistic_raw)
    return params, state


def negative_sample(inter, u, rng, max_tries=1000):
    """Uniform item the user has not interacted with in training."""
    pos = inter.train_items(u)
    if len(pos) >= inter.num_items:
        raise ValueError(f"user {u} interacted with every item")
    for _ in range(max_tries):
        j = int(rng.integers(inter.num_items))
        if not _contains(pos, j):
            return j
    # dense fallback for users holding nearly every item
    free = np.setdiff1d(np.arange(inter.num_items), pos)
    return int(rng.choice(free))


def _contains(sorted_arr, x):
    k = np.searchsorted(sorted_arr, x)
    return k < len(sorted_arr) and sorted_arr[k] == x


def sample_negatives(inter, users, rng):
    """Vectorized rejection sampling; rows needing many retries fall back to the scalar path."""
    users = np.asarray(users, dtype=np.int64)
    # per-user item lists are sorted, so these keys are globally sorted
    keys = (np.repeat(np.arange(inter.num_users), np.diff(inter.train_indptr)) * inter.num_items
            + inter.train_indices)
    neg = rng.integers(inter.num_items, size=len(users))
    for _ in range(20):
        bad = _is_positive(keys, users * inter.num_items + neg)
        if not bad.any():
            return neg
        neg[bad] = rng.integers(inter.num_items, size=int(bad.sum()))
    for idx in np.flatnonzero(_is_positive(keys, users * inter.num_items + neg)):
        neg[idx] = negative_sample(inter, users[idx], rng)
    return neg


def _is_positive(keys, q):
    if not len(keys):
        return np.zeros(len(q), dtype=bool)
    pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
    return keys[pos] == q


def validation_split(inter, fraction, seed):
    """Hold out ``fraction`` of each user's training items (at least one item stays in train)."""
    rng = np.random.default_rng(seed)
    fit_u, fit_i, val_u, val_i = [], [], [], []
    for u in range(inter.num_users):
        items = inter.train_items(u)
        n_val = int(round(fraction * len(items))) if len(items) > 1 else 0
        n_val = min(n_val, len(items) - 1)
        perm = rng.permutation(len(items))
        val, fit = items[perm[:n_val]], items[perm[n_val:]]
        fit_u.append(np.full(len(fit), u))
        fit_i.append(fit)
        val_u.append(np.full(len(val), u))
        val_i.append(val)
    cat = lambda xs: np.concatenate(xs) if xs else np.empty(0, dtype=np.int64)
    return inter.with_split(cat(fit_u), cat(fit_i), cat(val_u), cat(val_i))


@dataclass
class TrainResult:
    params: ParameterStore
    records: list
    log: list
    best_epoch: int
    epochs_run: int
    wallclock_s: float = 0.0
    stopped_early: bool = False
    diverged: bool = False
    best_val_recall: float = field(default=float("nan"))


def train(config, inter, kg, Q, unit_mask=False, log_fn=None, params=None):
    """Run the training loop.

    With ``unit_mask=True`` every triple score is fixed at 1 and no masks are
    recorded (the plain backbone). ``log_fn`` receives one dict per epoch.
    """
    from .metrics import evaluate_all_ranking  # circular at import time

    if inter.num_train == 0:
        raise EmptyDatasetError("no training interactions")
    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    split = validation_split(inter, config.val_fraction, config.seed) if config.val_fraction > 0 else None
    fit = split if split is not None else inter
    kg = kg.with_num_entities(inter.num_items)

    evaluator = None if unit_mask else DualViewEvaluator(kg, Q, config.gamma, config.transform)
    model = ImportanceAwareGNN(kg, fit, evaluator, config.L, config.l2)
    if params is None:
        params = ParameterStore.init(inter.num_users, kg.num_entities, kg.num_relations,
                                     config.d, seed=config.seed)
    state = AdamState.zeros_like(params)
    users, items = fit.train_pairs()
    n = len(users)

    records, history = [], []
    best = (-np.inf, -1, params.copy())
    stopped_early = diverged = False
    epoch = -1
    last_good = params.copy()
    for epoch in range(config.max_epochs):
        t_ep = time.perf_counter()
        if epoch:
            last_good = params.copy()
        order = rng.permutation(n)
        total, seen = 0.0, 0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                bu = np.repeat(users[idx], config.n_neg)
                bi = np.repeat(items[idx], config.n_neg)
                bj = sample_negatives(fit, bu, rng)
                masks = DropoutMasks.sample(
                    rng, kg.num_triples, kg.num_entities, inter.num_users, config.d, config.L,
                    config.p_node, config.p_msg,
                )
                loss, grads, _ = model.loss_and_gradients(params, Batch(bu, bi, bj), masks)
                adam_step(params, grads, state, config.lr)
                if not params.is_finite():
                    raise TrainingDivergedError("non-finite parameters after update")
                total += loss * len(bu)
                seen += len(bu)
        except TrainingDivergedError as exc:
            log.warning("training diverged at epoch %d: %s", epoch, exc)
            diverged = True
            break

        cache, edge_w = model.importance(params)  # shared by the record and validation
        if evaluator is not None:
            records.append(MaskRecord(epoch, cache["aggregated"].copy()))
        entry = {"epoch": epoch, "loss": total / max(seen, 1)}
        if split is not None and (epoch + 1) % config.eval_every == 0 and split.num_test:
            fu, fe, _, _ = model.propagate(params, edge_w)
            rep = evaluate_all_ranking(fu, fe, split, Ks=(20,))
            val = rep.recall[20]
            entry["val_recall@20"] = val
            if val > best[0]:
                best = (val, epoch, params.copy())
        elif split is None or not split.num_test:
            best = (np.nan, epoch, params.copy())
        entry["wallclock_s"] = time.perf_counter() - t_ep
        history.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if best[1] >= 0 and epoch - best[1] >= config.patience:
            stopped_early = True
            break

    if best[1] >= 0:
        best_params = best[2]
    else:
        best_params = last_good if diverged else params
    return TrainResult(
        params=best_params,
        records=records,
        log=history,
        best_epoch=best[1],
        epochs_run=len(history),
        wallclock_s=time.perf_counter() - t0,
        stopped_early=stopped_early,
        diverged=diverged,
        best_val_recall=float(best[0]),
    )
