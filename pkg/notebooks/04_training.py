# %% [markdown]
# # Training the importance-aware GNN
#
# Triple scores weight KG messages. The BPR loss on user-item pairs therefore
# reaches the importance parameters, which is how the evaluator learns.
# Gradients are hand-written, so the first check is a finite-difference test.

# %%
import numpy as np

from kgtrimmer.evaluator import DualViewEvaluator, ParameterStore
from kgtrimmer.gnn import Batch, ImportanceAwareGNN, finite_difference_gradients
from kgtrimmer.graph_core import InteractionGraph, KnowledgeGraph, build_ckg
from kgtrimmer.qmatrix import build_user_entity_matrix
from kgtrimmer.trainer import TrainConfig, train

kg = KnowledgeGraph.from_triples([(0, 0, 6), (1, 0, 6), (2, 1, 7), (3, 1, 7), (4, 0, 8), (5, 1, 8),
                                  (6, 1, 7), (8, 0, 9)], 10, 2)
inter = InteractionGraph.from_pairs([0, 0, 1, 2, 3, 4], [0, 1, 2, 3, 4, 5], [0, 1], [2, 3], 5, 6)
ckg = build_ckg(inter, kg)
Q = build_user_entity_matrix(ckg, k=50, hop_limit=2)
model = ImportanceAwareGNN(ckg.kg, inter, DualViewEvaluator(ckg.kg, Q, 0.5), L=2, l2=1e-3)
p = ParameterStore.init(5, 10, ckg.kg.num_relations, 8, seed=0)
p.holistic_raw = np.random.default_rng(0).uniform(0.1, 0.9, 10)
batch = Batch(*inter.train_pairs(), np.array([3, 4, 5, 0, 1, 2]))
_, grads, _ = model.loss_and_gradients(p, batch)
numeric = finite_difference_gradients(lambda q: model.loss(q, batch), p)
for g in ParameterStore.GROUPS:
    print(f"{g:20s} max abs diff {np.abs(getattr(grads, g) - numeric[g]).max():.1e}")

# %% [markdown]
# ## The loop
# Adam, one negative per positive, a validation split for early stopping, and
# one snapshot of the entity scores per epoch for later aggregation.

# %%
cfg = TrainConfig(d=8, batch_size=4, lr=0.01, max_epochs=40, val_fraction=0.0)
res = train(cfg, inter, ckg.kg, Q)
print("loss", round(res.log[0]["loss"], 4), "->", round(res.log[-1]["loss"], 4))
print("score snapshots:", len(res.records), "last:", np.round(res.records[-1].scores, 2))
