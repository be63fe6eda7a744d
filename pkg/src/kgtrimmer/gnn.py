"""Importance-aware propagation over the KG and the user-item graph.

Per layer ``l``::

    e_v(l) = 1/|N_v| * sum_{(r,t) in N_v} s(v,r,t) * (e_t(l-1) * e_r)
    e_u(l) = 1/|N_u| * sum_{i in N_u} e_i(l-1)

Final embeddings are the sums over layers ``0..L`` and predictions are inner
products. Gradients are derived by hand, including the path through the
importance evaluator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import TrainingDivergedError, ValidationError
from .evaluator import DualViewEvaluator, ParameterStore

__all__ = [
    "LayerState",
    "GradientStore",
    "DropoutMasks",
    "Batch",
    "ImportanceAwareGNN",
    "kg_propagate_layer",
    "cf_propagate_layer",
    "forward",
    "predict",
    "bpr_loss",
    "compute_gradients",
    "finite_difference_gradients",
]


@dataclass
class LayerState:
    entity_layers: list
    user_layers: list
    messages: list = None  # per layer, ``e_t * e_r`` on every augmented edge

    @property
    def L(self):
        return len(self.entity_layers) - 1


class GradientStore(ParameterStore):
    """Same shapes as :class:`ParameterStore`."""

    @classmethod
    def zeros_like(cls, params):
        return cls(*(np.zeros_like(getattr(params, g)) for g in cls.GROUPS))


@dataclass
class DropoutMasks:
    """Per-step random masks. ``None`` entries mean no dropout."""

    edge_keep: np.ndarray | None = None
    entity: list = field(default_factory=list)
    user: list = field(default_factory=list)

    @classmethod
    def sample(cls, rng, num_edges, num_entities, num_users, d, L, p_node=0.0, p_msg=0.0):
        edge_keep = rng.random(num_edges) >= p_node if p_node > 0 else None
        entity, user = [], []
        if p_msg > 0:
            scale = 1.0 / (1.0 - p_msg)
            for _ in range(L):
                entity.append((rng.random((num_entities, d)) >= p_msg) * scale)
                user.append((rng.random((num_users, d)) >= p_msg) * scale)
        return cls(edge_keep, entity, user)


@dataclass
class Batch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self):
        return len(self.users)


def _edge_coefficients(kg, edge_keep=None):
    """1/|N_v| for every kept augmented edge (degree over kept edges), 0 if dropped."""
    if edge_keep is None:
        deg = np.diff(kg.indptr)
        return 1.0 / deg[kg.heads] if kg.num_triples else np.empty(0)
    deg = np.bincount(kg.heads[edge_keep], minlength=kg.num_entities)
    return np.where(edge_keep, 1.0 / np.maximum(deg[kg.heads], 1), 0.0)


def _head_operator(kg, weights):
    """|V| x |E| matrix summing weighted edge messages into their heads."""
    return sp.csr_matrix((weights, np.arange(kg.num_triples), kg.indptr),
                         shape=(kg.num_entities, kg.num_triples))


def kg_propagate_layer(entity_in, params, triplet_scores, kg, edge_keep=None):
    """One KG layer; entities without out-edges get the zero vector."""
    coef = _edge_coefficients(kg, edge_keep) * triplet_scores
    msg = entity_in[kg.tails] * params.relation_embeddings[kg.relations]
    return _head_operator(kg, coef) @ msg


def _cf_operator(inter):
    deg = np.diff(inter.train_indptr).astype(np.float64)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    m = inter.train_matrix()
    return sp.diags(inv) @ m


def cf_propagate_layer(item_in, inter, _op=None):
    """Mean of the item rows of each user's training items; zero for item-less users."""
    op = _op if _op is not None else _cf_operator(inter)
    return op @ item_in


class ImportanceAwareGNN:
    """Forward/backward over fixed graphs.

    With ``evaluator=None`` every triple score is 1 (the plain backbone).
    """

    def __init__(self, kg, inter, evaluator=None, L=2, l2=1e-5):
        if inter.num_items > kg.num_entities:
            raise ValidationError("KG entity space must cover all items")
        self.kg = kg
        self.inter = inter
        self.evaluator = evaluator
        self.L = int(L)
        self.l2 = float(l2)
        self._cf = _cf_operator(inter)
        self._item_ent = inter.item_to_entity
        E = kg.num_triples
        self._tail_op = sp.csr_matrix((np.ones(E), (kg.tails, np.arange(E))),
                                      shape=(kg.num_entities, E))
        self._rel_op = sp.csr_matrix((np.ones(E), (kg.relations, np.arange(E))),
                                     shape=(kg.num_relations, E))

    def importance(self, params):
        if self.evaluator is None:
            return None, np.ones(self.kg.num_triples)
        cache = self.evaluator.forward(params)
        return cache, self.evaluator.edge_scores(cache["aggregated"])

    def propagate(self, params, edge_scores, masks=None):
        masks = masks or DropoutMasks()
        kg = self.kg
        coef = _edge_coefficients(kg, masks.edge_keep)
        head_op = _head_operator(kg, coef * edge_scores)
        rel_rows = params.relation_embeddings[kg.relations]
        ent = [params.entity_embeddings]
        usr = [params.user_embeddings]
        msgs = []
        for l in range(self.L):
            prev = ent[-1]
            msgs.append(prev[kg.tails] * rel_rows)
            x = head_op @ msgs[-1]
            u = self._cf @ prev[self._item_ent]
            if masks.entity:
                x = x * masks.entity[l]
                u = u * masks.user[l]
            ent.append(x)
            usr.append(u)
        state = LayerState(ent, usr, msgs)
        return np.sum(usr, axis=0), np.sum(ent, axis=0), state, coef

    def forward(self, params, masks=None):
        cache, w = self.importance(params)
        fu, fe, state, _ = self.propagate(params, w, masks)
        return fu, fe, state

    def loss(self, params, batch, masks=None):
        fu, fe, _ = self.forward(params, masks)
        return self._loss_from(params, fu, fe, batch)[0]

    def _loss_from(self, params, fu, fe, batch):
        eu = fu[batch.users]
        ei = fe[self._item_ent[batch.pos]]
        ej = fe[self._item_ent[batch.neg]]
        x = np.einsum("ij,ij->i", eu, ei - ej)
        n = len(batch)
        loss = bpr_loss(x, np.zeros_like(x)) / n
        reg = 0.0
        if self.l2:
            reg = (np.sum(params.user_embeddings[batch.users] ** 2)
                   + np.sum(params.entity_embeddings[self._item_ent[batch.pos]] ** 2)
                   + np.sum(params.entity_embeddings[self._item_ent[batch.neg]] ** 2))
            reg = self.l2 * reg / (2.0 * n)
        return loss + reg, x, eu, ei, ej

    def loss_and_gradients(self, params, batch, masks=None):
        """Batch loss, gradients for all four parameter groups, and the entity scores used."""
        kg = self.kg
        cache, w = self.importance(params)
        fu, fe, state, coef = self.propagate(params, w, masks)
        loss, x, eu, ei, ej = self._loss_from(params, fu, fe, batch)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss}")
        n = len(batch)
        grads = GradientStore.zeros_like(params)

        # d/dx of mean softplus(-x)
        gx = -0.5 * (1.0 - np.tanh(0.5 * x)) / n
        nu, nv = fu.shape[0], fe.shape[0]
        g_fu = _rows_add(nu, batch.users, gx[:, None] * (ei - ej))
        g_fe = _rows_add(nv, self._item_ent[batch.pos], gx[:, None] * eu)
        g_fe -= _rows_add(nv, self._item_ent[batch.neg], gx[:, None] * eu)

        masks = masks or DropoutMasks()
        g_w = np.zeros(kg.num_triples)
        rel_rows = params.relation_embeddings[kg.relations]
        cw = coef * w
        G = g_fe.copy()
        for l in range(self.L, 0, -1):
            prev = state.entity_layers[l - 1]
            gA = G * masks.entity[l - 1] if masks.entity else G
            gA_e = gA[kg.heads]
            msg = state.messages[l - 1]
            g_w += coef * np.einsum("ij,ij->i", gA_e, msg)
            g_msg = cw[:, None] * gA_e
            g_prev = self._tail_op @ (g_msg * rel_rows)
            grads.relation_embeddings += self._rel_op @ (g_msg * prev[kg.tails])
            gU = g_fu * masks.user[l - 1] if masks.user else g_fu
            g_items = self._cf.T @ gU
            g_prev[self._item_ent] += g_items
            G = g_fe + g_prev
        grads.entity_embeddings += G
        grads.user_embeddings += g_fu

        if self.l2:
            c = self.l2 / n
            grads.user_embeddings += _rows_add(nu, batch.users, c * params.user_embeddings[batch.users])
            for items in (batch.pos, batch.neg):
                ents = self._item_ent[items]
                grads.entity_embeddings += _rows_add(nv, ents, c * params.entity_embeddings[ents])

        s_hat = None
        if self.evaluator is not None:
            s_hat = cache["aggregated"]
            g_shat = self.evaluator.edge_scores_backward(s_hat, g_w)
            self.evaluator.backward(params, cache, g_shat, grads)
        if not grads.is_finite():
            raise TrainingDivergedError("non-finite gradient")
        return loss, grads, s_hat


def _rows_add(n_rows, idx, values):
    """Dense (n_rows, d) array with ``values`` scatter-added at row ``idx``."""
    m = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n_rows, len(idx)))
    return np.asarray(m @ values)


def forward(params, kg, inter, scores, L, masks=None):
    """Final (user, entity) embeddings and layer state for given augmented-edge scores."""
    model = ImportanceAwareGNN(kg, inter, None, L)
    fu, fe, state, _ = model.propagate(params, np.asarray(scores, dtype=np.float64), masks)
    return fu, fe, state


def predict(final_user, final_entity, u, i, num_items=None):
    if num_items is not None and not 0 <= i < num_items:
        raise ValidationError(f"entity {i} is not an item")
    return float(final_user[u] @ final_entity[i])


def bpr_loss(pos_scores, neg_scores):
    """Sum of -log sigmoid(pos - neg), computed as softplus(neg - pos)."""
    diff = np.asarray(pos_scores, dtype=np.float64) - np.asarray(neg_scores, dtype=np.float64)
    return float(np.sum(np.logaddexp(0.0, -diff)))


def compute_gradients(params, batch, kg, inter, Q, config, masks=None):
    """Loss, gradients and entity scores for one batch (builds the model on the fly)."""
    evaluator = DualViewEvaluator(kg, Q, config.gamma, config.transform)
    model = ImportanceAwareGNN(kg, inter, evaluator, config.L, config.l2)
    return model.loss_and_gradients(params, batch, masks)


def finite_difference_gradients(loss_fn, params, step=1e-4, groups=None):
    """Central differences over every coordinate; slow, for tests only."""
    groups = groups or ParameterStore.GROUPS
    out = {}
    for g in groups:
        arr = getattr(params, g)
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss_fn(params)
            flat[k] = orig - step
            down = loss_fn(params)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * step)
        out[g] = grad
    return out
