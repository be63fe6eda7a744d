"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``[criterion N] PASS/FAIL`` line (also collected into the
terminal summary) before asserting.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

import conftest
from conftest import gradient_check, tiny_dataset
from test_metrics import brute_force, pop_oracle
from kgtrimmer.cli import run_prune
from kgtrimmer.evaluator import DualViewEvaluator, ParameterStore, relation_enriched_embeddings
from kgtrimmer.graph_core import InteractionGraph, KnowledgeGraph, build_ckg, load_dataset, load_triples, stats
from kgtrimmer.metrics import evaluate_all_ranking, evaluate_params, norm_baseline, pop_baseline, random_baseline
from kgtrimmer.pruner import (aggregate_masks, apply_mask, binarize_percentile, binarize_threshold,
                              canonical_triple_scores)
from kgtrimmer.qmatrix import UserEntityMatrix, build_user_entity_matrix, reachable_users
from kgtrimmer.synthetic import make_planted_hub, write_dataset
from kgtrimmer.trainer import TrainConfig, train


def report(n, ok, detail):
    line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# users, items, interactions, entities, relations, triples
TABLE = {
    "amazon-book": (70679, 24915, 847733, 88572, 39, 2557746),
    "last-fm": (23566, 48123, 3034796, 58266, 9, 464567),
    "alibaba-fashion": (114737, 30040, 1781093, 59156, 51, 279155),
}


@pytest.mark.parametrize("name", sorted(TABLE))
def test_c1_dataset_contract(name):
    root = os.environ.get("KGT_DATA_DIR")
    d = Path(root) / name if root else None
    if d is None or not (d / "train.txt").exists():
        report(1, False, f"{name}: released dataset not found (set KGT_DATA_DIR to a directory "
                         f"holding {name}/train.txt, test.txt, kg_final.txt)")
    t0 = time.perf_counter()
    s = stats(*load_dataset(d))
    dt = time.perf_counter() - t0
    got = (s.users, s.items, s.interactions, s.entities, s.relations, s.triples)
    report(1, got == TABLE[name] and dt < 60, f"{name}: {got} vs {TABLE[name]}, {dt:.1f}s")


def test_c2_gradients():
    t0 = time.perf_counter()
    worst = max(max(gradient_check(seed).values()) for seed in (0, 1, 2))
    dt = time.perf_counter() - t0
    report(2, worst < 1e-5 and dt < 10, f"max relative error {worst:.2e} over 3 seeds, {dt:.2f}s")


def test_c3_ranges_and_clipping():
    inter, kg = tiny_dataset()
    ckg = build_ckg(inter, kg)
    Q = build_user_entity_matrix(ckg, k=50, hop_limit=2)
    r = np.random.default_rng(0)
    bad = 0
    for i in range(10_000):
        scale = 10.0 ** r.uniform(-6, 6)
        p = ParameterStore.init(inter.num_users, ckg.num_entities, ckg.kg.num_relations, 8, seed=i)
        p.user_embeddings = r.normal(size=p.user_embeddings.shape) * scale
        p.entity_embeddings = r.normal(size=p.entity_embeddings.shape) * scale
        p.relation_embeddings = r.normal(size=p.relation_embeddings.shape)
        p.holistic_raw = r.normal(0.5, 2.0, ckg.num_entities)
        ev = DualViewEvaluator(ckg.kg, Q, r.uniform(), ("tail", "mean", "product")[i % 3])
        s = ev.scores(p)
        tri = ev.edge_scores(s.aggregated)
        for arr in (s.collective, s.holistic, s.aggregated, tri):
            bad += int(np.any((arr < 0) | (arr > 1)) or not np.all(np.isfinite(arr)))
    # anti-parallel: the only user in the column points opposite the enriched embedding
    k2 = KnowledgeGraph.from_triples([(0, 0, 1)], 3, 1)
    p = ParameterStore.init(1, 3, k2.num_relations, 8, seed=1)
    p.user_embeddings[0] = -3.0 * relation_enriched_embeddings(p, k2)[1]
    Qa = UserEntityMatrix.from_columns({1: [0]}, 1, 3)
    anti = DualViewEvaluator(k2, Qa, gamma=1.0).scores(p).collective[1]
    report(3, bad == 0 and anti == 0.0,
           f"{bad} out-of-range arrays in 10^4 draws; anti-parallel score {anti}")


def star(n_users):
    inter = InteractionGraph.from_pairs(np.arange(n_users), np.zeros(n_users, int),
                                        num_users=n_users, num_items=1)
    return build_ckg(inter, KnowledgeGraph.from_triples([(0, 0, 1)]))


def test_c4_monte_carlo():
    ckg = star(200)
    p = ParameterStore.init(200, 2, ckg.kg.num_relations, 16, seed=7)
    pop_users = sorted(reachable_users(ckg, 1, 1))
    assert len(pop_users) == 200
    population = UserEntityMatrix.from_columns({1: pop_users}, 200, 2)
    score = lambda Q: DualViewEvaluator(ckg.kg, Q, gamma=1.0).scores(p).collective[1]
    exact = score(population)
    full = score(build_user_entity_matrix(ckg, k=200, hop_limit=1))
    draws = np.array([score(build_user_entity_matrix(ckg, k=50, hop_limit=1, seed=s))
                      for s in range(100)])
    se = draws.std(ddof=1) / math.sqrt(len(draws))
    gap = abs(draws.mean() - exact)
    report(4, full == exact and gap <= 3 * se,
           f"k=200 {full!r} vs population {exact!r}; k=50 mean off by {gap:.2e} (3 SE = {3 * se:.2e})")


def test_c5_binarization(tmp_path):
    kg = make_planted_hub(seed=0).kg
    n = kg.num_canonical_triples
    r = np.random.default_rng(0)
    scores = np.round(r.random(n), 2)  # plenty of ties
    orig = {tuple(t) for t in kg.canonical.tolist()}
    problems = []
    for rho in (0.0, 0.3, 0.7, 0.9, 0.98):
        mask, tau = binarize_percentile(scores, rho)
        if mask.sum() != math.ceil(round((1 - rho) * n, 9)):
            problems.append(f"count at {rho}")
        thr = binarize_threshold(scores, tau)
        if not (np.all(thr >= mask) and np.all(scores[thr != mask] == tau)):
            problems.append(f"threshold at {rho}")
        apply_mask(kg, mask, tmp_path / "p.txt")
        sub = {tuple(t) for t in load_triples(tmp_path / "p.txt").canonical.tolist()}
        if not sub <= orig or len(sub) != mask.sum():
            problems.append(f"file at {rho}")
    report(5, not problems, "all five ratios" if not problems else ", ".join(problems))


def test_c6_metric_oracles():
    r = np.random.default_rng(0)
    worst, cases = 0.0, 0
    while cases < 500:
        nu, ni = int(r.integers(1, 6)), int(r.integers(2, 11))
        pairs = [(u, i) for u in range(nu) for i in range(ni) if r.random() < 0.5]
        split = r.random(len(pairs)) < 0.4
        tr = [p for p, s in zip(pairs, split) if not s]
        te = [p for p, s in zip(pairs, split) if s]
        if not te:
            continue
        inter = InteractionGraph.from_pairs([p[0] for p in tr], [p[1] for p in tr],
                                            [p[0] for p in te], [p[1] for p in te], nu, ni)
        fu, fe = r.normal(size=(nu, 3)), r.normal(size=(ni, 3))
        if cases % 2:
            fu, fe = np.round(fu), np.round(fe)
        Ks = (1, 2, 5, 10, 20)
        rep = evaluate_all_ranking(fu, fe, inter, Ks)
        rec, ndcg = brute_force(fu, fe, inter, Ks)
        for k in Ks:
            worst = max(worst, abs(rep.recall[k] - rec[k]), abs(rep.ndcg[k] - ndcg[k]))
        cases += 1
    report(6, worst <= 1e-12, f"max deviation {worst:.1e} over {cases} fixtures")


def test_c8_baselines():
    problems = []
    for seed in range(30):
        r = np.random.default_rng(seed)
        t = np.stack([r.integers(15, size=40), r.integers(3, size=40), r.integers(15, size=40)], 1)
        kg = KnowledgeGraph.from_triples(t, 15, 3)
        p = ParameterStore.init(2, 15, 6, 4, seed=seed)
        p.entity_embeddings[r.integers(15)] = 0.0
        norms = [math.sqrt(sum(x * x for x in row)) for row in p.entity_embeddings.tolist()]
        prod = [norms[h] * norms[tt] for h, _, tt in kg.canonical.tolist()]
        for ratio in (0.0, 0.3, 0.5, 0.7, 0.9):
            if not np.array_equal(pop_baseline(kg, ratio), pop_oracle(kg, ratio)):
                problems.append(f"pop seed {seed} ratio {ratio}")
            order = sorted(range(len(prod)), key=lambda j: (-prod[j], j))
            want = np.zeros(len(prod), bool)
            want[order[:math.ceil(round((1 - ratio) * len(prod), 9))]] = True
            if not np.array_equal(norm_baseline(p, kg, ratio), want):
                problems.append(f"norm seed {seed} ratio {ratio}")
            if not (np.array_equal(pop_baseline(kg, ratio), pop_baseline(kg, ratio))
                    and np.array_equal(norm_baseline(p, kg, ratio), norm_baseline(p, kg, ratio))):
                problems.append(f"nondeterministic seed {seed}")
    report(8, not problems, "150 graph/ratio cases" if not problems else ", ".join(problems[:5]))


def test_c9_determinism(tmp_path):
    data_dir = tmp_path / "data"
    write_dataset(data_dir, make_planted_hub(seed=1))
    cfg = TrainConfig(d=16, max_epochs=20, batch_size=256, lr=1e-2, p_node=0.3, p_msg=0.3, seed=11)
    for sub in ("a", "b"):
        run_prune(data_dir, tmp_path / sub, cfg, ratio=0.7)
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("pruned_kg.txt", "mask.tsv", "histogram.tsv")]
    report(9, all(same), f"byte-identical pruned_kg/mask/histogram: {same}")


HUB_CONFIG = TrainConfig(lr=1e-2, d=32, L=2, max_epochs=300, patience=100, k=50, p_node=0.1,
                         p_msg=0.1, l2=1e-4, batch_size=256)


@pytest.mark.slow
def test_c7_planted_hub():
    t0 = time.perf_counter()
    data = make_planted_hub(seed=0)
    inter, kg = data.inter, data.kg
    assert len(data.discriminative) == 60 and len(data.hubs) == 5
    cover = [np.isin(np.arange(100), kg.canonical[kg.canonical[:, 2] == h, 0]).mean() for h in data.hubs]
    assert min(cover) >= 0.9
    ckg = build_ckg(inter, kg)
    cfg = HUB_CONFIG
    Q = build_user_entity_matrix(ckg, cfg.k, cfg.hop_limit, cfg.seed)
    res = train(cfg, inter, ckg.kg, Q)
    s = aggregate_masks(res.records)
    hub, disc = s[data.hubs].mean(), s[data.discriminative].mean()
    mask, _ = binarize_percentile(canonical_triple_scores(ckg.kg, s), 0.5)

    def recall(graph, seed):
        r = train(cfg.replace(seed=seed), inter, graph, None, unit_mask=True)
        return evaluate_params(r.params, graph, inter, cfg.L).recall[20]

    full, learned, rand = [], [], []
    for seed in range(5):
        full.append(recall(ckg.kg, seed))
        learned.append(recall(ckg.kg.subgraph(mask), seed))
        rand.append(recall(ckg.kg.subgraph(random_baseline(ckg.kg, 0.5, seed)), seed))
    dt = time.perf_counter() - t0
    f, lr_, rn = np.mean(full), np.mean(learned), np.mean(rand)
    a, b, c = hub < disc, abs(lr_ - f) <= 0.02, (f - rn) > (f - lr_)
    report(7, a and b and c and dt < 300,
           f"(a) hub {hub:.3f} < disc {disc:.3f}: {a}; (b) R@20 full {f:.4f} learned {lr_:.4f}: {b}; "
           f"(c) random {rn:.4f}: {c}; epochs {res.epochs_run}, {dt:.0f}s")


def test_c10_performance(tmp_path):
    data = make_planted_hub(n_users=1000, n_items=1000, n_clusters=20, n_discriminative=600,
                            hub_coverage=0.8, train_per_user=10, seed=0)
    n_tri = data.kg.num_canonical_triples
    data_dir = tmp_path / "data"
    write_dataset(data_dir, data)
    cfg = TrainConfig(max_epochs=100, patience=1000, seed=0)
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        pruned, man = run_prune(data_dir, tmp_path / "out", cfg, ratio=0.5)
        dt = time.perf_counter() - t0
    ok = dt < 60 and man.config["epochs"] == 100 and 9_000 <= n_tri <= 11_000
    report(10, ok, f"{n_tri} triples, 1000 users, 100 epochs: {dt:.1f}s single-threaded "
                   f"(stages {man.stages_s})")
