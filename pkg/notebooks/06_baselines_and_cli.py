# %% [markdown]
# # Baselines and the command line
#
# Two simple pruners to compare against:
#
# * **Pop** removes the entities with the highest in-degree, with all their
#   triples, until the triple budget is met;
# * **norm** trains the backbone with every triple weight fixed to 1 and drops
#   the triples whose endpoint embeddings have the smallest norm product.

# %%
import json
import tempfile
from pathlib import Path

from kgtrimmer.cli import main
from kgtrimmer.metrics import norm_baseline, pop_baseline
from kgtrimmer.synthetic import make_planted_hub, write_dataset
from kgtrimmer.trainer import TrainConfig, train

data = make_planted_hub(seed=0)
m = pop_baseline(data.kg, 0.3)
print("pop at 30%: triples removed", (~m).sum(), "of", len(m))
res = train(TrainConfig(d=16, max_epochs=20, batch_size=256, lr=1e-2), data.inter, data.kg, None,
            unit_mask=True)
print("norm at 30%: triples removed", (~norm_baseline(res.params, data.kg, 0.3)).sum())

# %% [markdown]
# ## The `kgtrimmer` command
# Every subcommand writes `manifest.json` first, with the config, dataset
# hashes and per-stage timings, and fills in artifact hashes as they appear.

# %%
work = Path(tempfile.mkdtemp())
write_dataset(work / "data", data)
main(["stats", "--data-dir", str(work / "data")])
fast = ["--dim", "16", "--max-epochs", "30", "--batch-size", "256", "--lr", "1e-2"]
main(["prune", "--data-dir", str(work / "data"), "--out-dir", str(work / "run"), "--ratio", "0.5", *fast])
print(sorted(p.name for p in (work / "run").iterdir()))
print(json.loads((work / "run" / "manifest.json").read_text())["stages_s"])

# %%
main(["evaluate", "--data-dir", str(work / "data"), "--out-dir", str(work / "eval"),
      "--kg-file", str(work / "run" / "pruned_kg.txt"), "--compare", *fast])
