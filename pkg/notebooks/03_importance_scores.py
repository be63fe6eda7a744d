# %% [markdown]
# # Two views of importance
#
# * **collective**: mean clipped cosine between an entity's relation-enriched
#   embedding and the embeddings of the users sampled for it;
# * **holistic**: a free per-entity value kept inside [0, 1].
#
# `gamma` mixes them, and a transform turns entity scores into triple scores.

# %%
import numpy as np

from kgtrimmer.evaluator import (DualViewEvaluator, ParameterStore, clipped_cosine,
                                 relation_enriched_embedding, triplet_score)
from kgtrimmer.graph_core import KnowledgeGraph
from kgtrimmer.qmatrix import UserEntityMatrix

kg = KnowledgeGraph.from_triples([(0, 0, 2), (1, 1, 2)], 3, 2)
p = ParameterStore.init(2, 3, kg.num_relations, 4, seed=0)
p.entity_embeddings[2] = [1.0, 2.0, 0.0, -1.0]
p.relation_embeddings[:2] = [[1, 1, 1, 1], [0, 2, 0, 2]]
print("enriched e_2:", relation_enriched_embedding(2, p, kg))

# %% [markdown]
# Negative similarity is clipped to zero: a user who dislikes an entity does not
# push its score below "irrelevant".

# %%
print(clipped_cosine([1, 0], [1, 1]), clipped_cosine([1, 0], [-1, 0]))

# %%
Q = UserEntityMatrix.from_columns({2: [0, 1]}, 2, 3)
p.holistic_raw[:] = [0.2, 0.9, 1.7]  # stored value outside [0, 1] is clamped when read
for gamma in (0.0, 0.5, 1.0):
    s = DualViewEvaluator(kg, Q, gamma).scores(p)
    print(f"gamma {gamma}: collective {np.round(s.collective, 3)}, aggregated {np.round(s.aggregated, 3)}")

# %%
s_hat = np.array([0.2, 0.6, 0.9])
for t in ("tail", "mean", "product"):
    print(t, triplet_score(s_hat, (0, 0, 2), t))
