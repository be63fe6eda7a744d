# %% [markdown]
# # Who cares about an entity?
#
# An entity's collective score averages the opinions of the users who can reach
# it: user -> item, then up to `hop_limit` KG hops. Popular entities can be
# reached by thousands of users, so each column is capped at `k` users drawn
# uniformly. The draw is a Monte-Carlo estimate of the full average.

# %%
import numpy as np

from kgtrimmer.evaluator import DualViewEvaluator, ParameterStore
from kgtrimmer.graph_core import InteractionGraph, KnowledgeGraph, build_ckg
from kgtrimmer.qmatrix import UserEntityMatrix, build_user_entity_matrix, reachable_users

n_users = 300
inter = InteractionGraph.from_pairs(np.arange(n_users), np.arange(n_users) % 3, num_users=n_users,
                                    num_items=3)
kg = KnowledgeGraph.from_triples([(0, 0, 3), (1, 0, 3), (2, 0, 4), (4, 1, 5)], 6, 2)
ckg = build_ckg(inter, kg)
for hop in range(3):
    print(f"hop {hop}:", [len(reachable_users(ckg, v, hop)) for v in range(6)])

# %% [markdown]
# Entity 5 is two KG hops from item 2, so it only becomes reachable at hop 2.
# Now cap the columns at 40 users.

# %%
Q = build_user_entity_matrix(ckg, k=40, hop_limit=2, seed=0)
print("column sizes:", Q.counts.tolist())

# %% [markdown]
# ## How good is the sampled average?
# Compare the collective score of entity 3 (200 reachable users) under many
# independent draws against the score computed from everybody.

# %%
params = ParameterStore.init(n_users, 6, kg.num_relations, 16, seed=1)
score = lambda Q: DualViewEvaluator(kg, Q, gamma=1.0).scores(params).collective[3]
everyone = UserEntityMatrix.from_columns({3: sorted(reachable_users(ckg, 3, 2))}, n_users, 6)
draws = np.array([score(build_user_entity_matrix(ckg, 40, 2, seed=s)) for s in range(200)])
print(f"population {score(everyone):.4f}, sampled mean {draws.mean():.4f} +- {draws.std() / np.sqrt(200):.4f}")
