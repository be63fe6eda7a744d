"""Command-line entry point: ``kgtrimmer {stats,prune,evaluate,baseline,hist,preprocess}``.

Config precedence: command-line flag > ``--config`` JSON file > built-in default.
All randomness is derived from ``--seed``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import graph_core as gc
from .errors import KGTrimmerError
from .evaluator import TRANSFORMS, DualViewEvaluator, write_entity_scores
from .metrics import (evaluate_params, format_comparison, norm_baseline, pop_baseline,
                      random_baseline, retrain_and_compare, write_comparison)
from .pruner import (aggregate_masks, apply_mask, binarize_percentile, binarize_threshold,
                     canonical_triple_scores, score_histogram, write_histogram, write_mask)
from .qmatrix import build_user_entity_matrix
from .trainer import TrainConfig, train

AGG_CHOICES = {"mean": "mean", "warmup-mean": "mean_after_warmup", "last": "last", "best": "best_epoch"}

# flag -> TrainConfig field
CONFIG_FLAGS = {
    "seed": "seed", "gamma": "gamma", "k": "k", "hop_limit": "hop_limit", "layers": "L",
    "dim": "d", "batch_size": "batch_size", "lr": "lr", "l2": "l2", "node_dropout": "p_node",
    "msg_dropout": "p_msg", "transform": "transform", "n_neg": "n_neg",
    "max_epochs": "max_epochs", "patience": "patience", "eval_every": "eval_every",
    "val_fraction": "val_fraction",
}


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    datasets: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    stages_s: dict = field(default_factory=dict)
    status: str = "running"
    error: str = ""

    def write(self, out_dir):
        path = Path(out_dir) / "manifest.json"
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
        return path

    def add_artifact(self, path):
        self.artifacts[Path(path).name] = file_sha256(path)


class _Stage:
    def __init__(self, manifest, name):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.manifest.stages_s[self.name] = round(time.perf_counter() - self.t0, 4)


def _g(lo, hi):
    return f"(tuning grid {lo}..{hi})"


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data-dir", help="dataset directory with train.txt, test.txt, "
                        "kg_final.txt (default: $KGT_DATA_DIR)")
    common.add_argument("--out-dir", default=None, help="output directory (default: ./kgt_out)")
    common.add_argument("--config", help="JSON file with TrainConfig fields")
    common.add_argument("--seed", type=int, help="single source of randomness (default 0)")
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads (default: library default)")
    t = common.add_argument_group("training")
    t.add_argument("--gamma", type=float, help="collective/holistic trade-off in [0,1] (default 0.5)")
    t.add_argument("--k", type=int, help="max sampled users per entity (default 50) " + _g("20", "200"))
    t.add_argument("--hop-limit", type=int, help="max KG hops from item to entity for Q (default 2)")
    t.add_argument("--layers", type=int, help="propagation depth L (default 2) " + _g(1, 3))
    t.add_argument("--dim", type=int, help="embedding size (default 64)")
    t.add_argument("--batch-size", type=int, help="mini-batch size (default 4096)")
    t.add_argument("--lr", type=float, help="Adam learning rate (default 1e-3) " + _g("1e-5", "1e-3"))
    t.add_argument("--l2", type=float, help="L2 coefficient (default 1e-5) " + _g("1e-6", "1e-3"))
    t.add_argument("--node-dropout", type=float, help="triple dropout rate (default 0.1) " + _g(0.1, 0.7))
    t.add_argument("--msg-dropout", type=float, help="message dropout rate (default 0.1) " + _g(0.1, 0.7))
    t.add_argument("--transform", choices=TRANSFORMS, help="entity->triple score transform (default tail)")
    t.add_argument("--n-neg", type=int, help="negatives per positive (default 1)")
    t.add_argument("--max-epochs", type=int, help="epoch cap (default 1000)")
    t.add_argument("--patience", type=int, help="early-stopping patience in epochs (default 100)")
    t.add_argument("--eval-every", type=int, help="validation cadence in epochs (default 1)")
    t.add_argument("--val-fraction", type=float, help="per-user validation hold-out (default 0.1)")

    p = argparse.ArgumentParser(prog="kgtrimmer", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("stats", parents=[common], help="print dataset statistics as JSON")

    pr = sub.add_parser("prune", parents=[common], help="train the pruner and emit a pruned KG")
    _prune_flags(pr)
    pr.add_argument("--agg", choices=list(AGG_CHOICES), default="warmup-mean",
                    help="aggregation of per-epoch masks (default warmup-mean: last half of epochs)")
    pr.add_argument("--bins", type=int, default=20, help="histogram bins (default 20)")

    ev = sub.add_parser("evaluate", parents=[common], help="train the backbone on a KG and report metrics")
    ev.add_argument("--kg-file", help="triple file to evaluate (default: the dataset's kg_final.txt)")
    ev.add_argument("--baseline", choices=["none", "pop", "norm", "random"], default="none",
                    help="prune the dataset KG with a baseline first (default none)")
    ev.add_argument("--ratio", type=float, default=None, help="pruning ratio for --baseline")
    ev.add_argument("--compare", action="store_true",
                    help="also train on the original KG and write a comparison table")
    ev.add_argument("--ks", default="10,20", help="comma-separated K values (default 10,20)")

    bl = sub.add_parser("baseline", parents=[common], help="emit a baseline-pruned KG")
    bl.add_argument("--baseline", choices=["pop", "norm", "random"], required=True)
    bl.add_argument("--ratio", type=float, required=True, help="fraction of triples to prune")

    hi = sub.add_parser("hist", parents=[common], help="re-bin scores of a prune run")
    hi.add_argument("--run-dir", required=True, help="output directory of a prune run")
    hi.add_argument("--bins", type=int, default=20, help="histogram bins (default 20)")

    pp = sub.add_parser("preprocess", parents=[common], help="10-core and KG frequency filtering")
    pp.add_argument("--core", type=int, default=10, help="min interactions per user/item (default 10)")
    pp.add_argument("--min-entity-triples", type=int, default=10, help="default 10")
    pp.add_argument("--min-relation-triples", type=int, default=50, help="default 50")
    return p


def _prune_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ratio", type=float, help="fraction of triples to prune (default 0.5)")
    g.add_argument("--tau", type=float, help="keep triples with score >= tau")


def resolve_config(args):
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg.update(json.load(fh))
    for flag, name in CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            cfg[name] = val
    return TrainConfig.from_dict(cfg)


def _data_dir(args):
    d = args.data_dir or os.environ.get("KGT_DATA_DIR")
    if not d:
        raise FileNotFoundError("no --data-dir given and KGT_DATA_DIR is unset")
    return Path(d)


def _dataset_hashes(data_dir, kg_file=None):
    files = [data_dir / "train.txt", data_dir / "test.txt", Path(kg_file) if kg_file else data_dir / "kg_final.txt"]
    return {str(f): file_sha256(f) for f in files if f.exists()}


def _out_dir(args):
    out = Path(args.out_dir or "kgt_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_stats(args):
    inter, kg = gc.load_dataset(_data_dir(args))
    print(gc.stats(inter, kg).to_json())
    return 0


def run_prune(data_dir, out_dir, config, ratio=None, tau=None, agg="warmup-mean", bins=20,
              command="prune"):
    """Q build, training, aggregation, binarization; writes every artifact plus the manifest."""
    if ratio is None and tau is None:
        ratio = 0.5
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    man = RunManifest(command, config.to_dict(), config.seed, _dataset_hashes(Path(data_dir)))
    man.config.update(ratio=ratio, tau=tau, agg=agg, bins=bins)
    man.write(out_dir)
    try:
        with _Stage(man, "load"):
            inter, kg = gc.load_dataset(data_dir)
            ckg = gc.build_ckg(inter, kg)
        with _Stage(man, "qmatrix"):
            Q = build_user_entity_matrix(ckg, config.k, config.hop_limit, config.seed)
        log_path = out_dir / "train_log.jsonl"
        with _Stage(man, "train"), open(log_path, "w") as log_fh:
            res = train(config, inter, ckg.kg, Q, log_fn=lambda e: log_fh.write(
                json.dumps({**e, "seed": config.seed}) + "\n"))
        man.add_artifact(log_path)
        with _Stage(man, "binarize"):
            s_ent = aggregate_masks(res.records, AGG_CHOICES[agg], best_epoch=res.best_epoch)
            s_tri = canonical_triple_scores(ckg.kg, s_ent, config.transform)
            if tau is not None:
                mask, tau_eff = binarize_threshold(s_tri, tau), float(tau)
            else:
                mask, tau_eff = binarize_percentile(s_tri, ratio)
            pruned = apply_mask(ckg.kg, mask, out_dir / "pruned_kg.txt", tau_eff,
                                {"config_hash": config.hash(), "seed": config.seed})
        man.add_artifact(out_dir / "pruned_kg.txt")
        write_mask(out_dir / "mask.tsv", ckg.kg, s_tri, mask)
        man.add_artifact(out_dir / "mask.tsv")
        edges, ec, tc = score_histogram(s_ent, s_tri, bins)
        write_histogram(out_dir / "histogram.tsv", edges, ec, tc)
        man.add_artifact(out_dir / "histogram.tsv")
        scores = DualViewEvaluator(ckg.kg, Q, config.gamma, config.transform).scores(res.params)
        write_entity_scores(out_dir / "entity_scores.tsv", scores)
        man.add_artifact(out_dir / "entity_scores.tsv")
        with open(out_dir / "aggregated_scores.tsv", "w") as fh:
            fh.writelines(f"{v}\t{s:.17g}\n" for v, s in enumerate(s_ent))
        man.add_artifact(out_dir / "aggregated_scores.tsv")
        res.params.save(out_dir / "checkpoint.npz", config_hash=config.hash())
        man.add_artifact(out_dir / "checkpoint.npz")
        man.config.update(tau_effective=tau_eff, kept=int(pruned.num_kept),
                          epochs=res.epochs_run, best_epoch=res.best_epoch, diverged=res.diverged)
        man.status = "failed" if res.diverged else "ok"
        if res.diverged:
            man.error = "training diverged; artifacts come from the last good checkpoint"
    except Exception as exc:
        man.status, man.error = "failed", f"{type(exc).__name__}: {exc}"
        man.write(out_dir)
        raise
    man.write(out_dir)
    return pruned, man


def cmd_prune(args):
    config = resolve_config(args)
    pruned, man = run_prune(_data_dir(args), _out_dir(args), config, args.ratio, args.tau,
                            args.agg, args.bins)
    print(json.dumps({"kept": int(pruned.num_kept), "tau_effective": pruned.tau_effective,
                      "status": man.status}))
    return 0 if man.status == "ok" else 1


def _baseline_mask(name, kg, inter, config, ratio):
    if name == "pop":
        return pop_baseline(kg, ratio)
    if name == "random":
        return random_baseline(kg, ratio, config.seed)
    res = train(config, inter, kg, None, unit_mask=True)
    return norm_baseline(res.params, kg, ratio)


def cmd_baseline(args):
    config = resolve_config(args)
    data_dir, out = _data_dir(args), _out_dir(args)
    man = RunManifest("baseline", {**config.to_dict(), "baseline": args.baseline, "ratio": args.ratio},
                      config.seed, _dataset_hashes(data_dir))
    man.write(out)
    inter, kg = gc.load_dataset(data_dir)
    mask = _baseline_mask(args.baseline, kg, inter, config, args.ratio)
    apply_mask(kg, mask, out / "pruned_kg.txt")
    man.add_artifact(out / "pruned_kg.txt")
    write_mask(out / "mask.tsv", kg, mask.astype(float), mask)
    man.add_artifact(out / "mask.tsv")
    man.status = "ok"
    man.write(out)
    print(json.dumps({"baseline": args.baseline, "kept": int(mask.sum())}))
    return 0


def cmd_evaluate(args):
    config = resolve_config(args)
    data_dir, out = _data_dir(args), _out_dir(args)
    Ks = tuple(int(k) for k in args.ks.split(","))
    man = RunManifest("evaluate", {**config.to_dict(), "baseline": args.baseline, "ratio": args.ratio,
                                   "kg_file": args.kg_file}, config.seed,
                      _dataset_hashes(data_dir, args.kg_file))
    man.write(out)
    inter, original = gc.load_dataset(data_dir)
    if args.kg_file:
        target = gc.load_triples(args.kg_file, original.num_entities, original.num_canonical_relations)
    else:
        target = original
    if args.baseline != "none":
        if args.ratio is None:
            raise KGTrimmerError("--baseline needs --ratio")
        target = target.subgraph(_baseline_mask(args.baseline, target, inter, config, args.ratio))
    label = "pruned" if (args.kg_file or args.baseline != "none") else "original"
    graphs = {label: target}
    if args.compare and label != "original":
        graphs = {"original": original, label: target}
    rows = retrain_and_compare(graphs, inter, config, Ks)
    report = rows[-1].report
    (out / "eval_report.json").write_text(report.to_json() + "\n")
    man.add_artifact(out / "eval_report.json")
    if len(rows) > 1:
        write_comparison(out / "comparison.tsv", rows)
        man.add_artifact(out / "comparison.tsv")
        print(format_comparison(rows))
    print(report.to_json())
    man.status = "ok"
    man.write(out)
    return 0


def cmd_hist(args):
    run = Path(args.run_dir)
    s_ent = np.array([float(line.split("\t")[1]) for line in open(run / "aggregated_scores.tsv")])
    lines = open(run / "mask.tsv").read().splitlines()[1:]
    s_tri = np.array([float(line.split("\t")[4]) for line in lines])
    edges, ec, tc = score_histogram(s_ent, s_tri, args.bins)
    out = Path(args.out_dir) if args.out_dir else run
    out.mkdir(parents=True, exist_ok=True)
    write_histogram(out / "histogram.tsv", edges, ec, tc)
    print(out / "histogram.tsv")
    return 0


def cmd_preprocess(args):
    data_dir, out = _data_dir(args), _out_dir(args)
    inter, kg = gc.load_dataset(data_dir)
    tu, ti = inter.train_pairs()
    su, si = inter.test_pairs()
    users = np.concatenate([tu, su])
    items = np.concatenate([ti, si])
    is_test = np.concatenate([np.zeros(len(tu), bool), np.ones(len(su), bool)])
    keep = gc.k_core_filter(users, items, args.core)
    users, items, is_test = users[keep], items[keep], is_test[keep]
    kmask = gc.kg_frequency_filter(kg.canonical, args.min_entity_triples, args.min_relation_triples)
    triples = kg.canonical[kmask]

    # dense ids; kept items keep the entity-id prefix
    u_ids = np.unique(users)
    i_ids = np.unique(items)
    ents = np.unique(np.concatenate([triples[:, 0], triples[:, 2]]))
    others = np.setdiff1d(ents, i_ids)
    ent_map = np.full(kg.num_entities, -1, dtype=np.int64)
    ent_map[i_ids] = np.arange(len(i_ids))
    ent_map[others] = len(i_ids) + np.arange(len(others))
    rel_ids = np.unique(triples[:, 1])
    rel_map = np.full(kg.num_canonical_relations, -1, dtype=np.int64)
    rel_map[rel_ids] = np.arange(len(rel_ids))
    new_u = np.searchsorted(u_ids, users)
    new_i = ent_map[items]
    filtered = gc.InteractionGraph.from_pairs(new_u[~is_test], new_i[~is_test], new_u[is_test],
                                              new_i[is_test], len(u_ids), len(i_ids))
    gc.write_interactions(out / "train.txt", filtered, "train")
    gc.write_interactions(out / "test.txt", filtered, "test")
    new_triples = np.stack([ent_map[triples[:, 0]], rel_map[triples[:, 1]], ent_map[triples[:, 2]]], 1)
    gc.write_triples(out / "kg_final.txt", np.unique(new_triples, axis=0))
    new_kg = gc.KnowledgeGraph.from_triples(new_triples)
    print(gc.stats(filtered, new_kg.with_num_entities(filtered.num_items)).to_json())
    return 0


COMMANDS = {"stats": cmd_stats, "prune": cmd_prune, "evaluate": cmd_evaluate,
            "baseline": cmd_baseline, "hist": cmd_hist, "preprocess": cmd_preprocess}


def main(argv=None):
    args = build_parser().parse_args(argv)
    limiter = nullcontext()
    if args.threads:
        from threadpoolctl import threadpool_limits
        limiter = threadpool_limits(limits=args.threads)
    try:
        with limiter:
            return COMMANDS[args.command](args)
    except (KGTrimmerError, FileNotFoundError, OSError) as exc:
        print(f"kgtrimmer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
