# %% [markdown]
# # Graphs: triples, inverse relations and the collaborative graph
#
# A knowledge graph arrives as `h r t` lines. Internally every triple also gets
# an inverse edge `(t, r + R, h)`, so information flows both ways, and user
# interactions are stacked on top to form the collaborative graph.

# %%
import tempfile
from pathlib import Path

import numpy as np

from kgtrimmer.graph_core import (KnowledgeGraph, InteractionGraph, build_ckg, k_core_filter,
                                  kg_frequency_filter, load_triples, stats)

work = Path(tempfile.mkdtemp())
(work / "kg.txt").write_text("0 0 3\n1 0 3\n2 1 4\n0 0 3\n")  # last line is a duplicate
kg = load_triples(work / "kg.txt")
print("canonical:", kg.num_canonical_triples, "augmented:", kg.num_triples,
      "dropped duplicates:", kg.duplicates_dropped)

# %% [markdown]
# Augmented edges are kept sorted by head, CSR style, so "all edges leaving v"
# is a slice. Relation ids at or above `num_canonical_relations` are inverses.

# %%
for v in range(kg.num_entities):
    rels, tails = kg.out_neighbors(v)
    print(v, "->", list(zip(rels.tolist(), tails.tolist())))
print("inverse of relation 0:", kg.inverse_relation(0))

# %% [markdown]
# ## Interactions and dataset statistics
# Items share ids with the first entities, which is how a user reaches the KG.

# %%
inter = InteractionGraph.from_pairs([0, 0, 1], [0, 1, 2], [1], [0], num_users=2, num_items=3)
ckg = build_ckg(inter, kg)
print(stats(inter, kg).to_json())
print("user 0 touches entities", ckg.user_entities(0).tolist())

# %% [markdown]
# ## Preprocessing filters
# The usual recipe keeps users and items with at least 10 interactions and KG
# entities/relations that are not too rare. Both filters are plain masks.

# %%
rng = np.random.default_rng(0)
users, items = rng.integers(30, size=800), rng.integers(40, size=800)
keep = k_core_filter(users, items, k=10)
print("interactions kept by 10-core:", keep.sum(), "of", len(keep))
trip = np.stack([rng.integers(50, size=400), rng.integers(6, size=400), rng.integers(50, size=400)], 1)
print("triples kept by frequency filter:", kg_frequency_filter(trip, 10, 50).sum())
