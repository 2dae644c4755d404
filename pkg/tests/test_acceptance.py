"""Acceptance gate: the engine's headline behaviors at their tolerances.

One test per criterion, in order, so a verbose run prints one pass/fail
line per criterion:

 01  reference baseline rows recomputed from counts (±0.1 pt, < 1 s)
 02  logical closure equals a brute-force fixed point on 200 graphs (< 10 s)
 03  posterior marginals equal exact enumeration on 100 graphs (< 30 s)
 04  self-training grows link sets monotonically; the degenerate run
     (promotion threshold 1.0, one iteration) returns exactly the
     seeded-plus-propagated links
 05  self-training lifts planted-link resolution recall by >= 15 points
     on a 200-document corpus (< 5 min)
 06  on the hard subset (key pair never co-paragraph) the full engine
     reaches F1 >= 0.70 while the paragraph-local ablation stays <= 0.30,
     and the all-positive baseline matches its analytic value (< 10 min)
 07  replacing detection with always-positive raises recall to the
     resolution-reachable ceiling and lowers precision on the hard subset
 08  distant supervision emits zero segment-restriction violations
     over 1000 random documents
 09  scorer gradients match finite differences (rel. err < 1e-4)
 10  two pipeline runs with seed 7 give byte-identical metrics files;
     multi-seed reporting emits mean ± sd
"""

import itertools
import json
import random
import time

import numpy as np
import pytest

from docrex.cli import main
from docrex.evaluation import (
    GoldSet,
    all_positive,
    all_positive_metrics,
    evaluate,
    hard_subset,
)
from docrex.factorgraph import Factor, FactorGraph, e_step
from docrex.inference import (
    InferenceConfig,
    InferenceModels,
    QueryError,
    extract,
)
from docrex.learning import initial_link_graph, self_train_resolution
from docrex.optim import TrainConfig
from docrex.relation import NativeRelationScorer, train_relation_detector
from docrex.resolution import (
    COREF,
    ISA,
    PART_OF,
    PairScorer,
    Provenance,
    ResolutionGraph,
    ResolutionLink,
    close_graph,
)
from docrex.supervision import DSConfig, generate_relation_examples
from docrex.synth import SynthConfig, generate

ROLES = ("drug", "gene", "mutation")


def note(text):
    print(f"  -> {text}")


# -- 01: reference baseline rows from counts --------------------------------


def counted_gold(n_pos, n_total):
    return GoldSet([{"doc": f"d{i}", "drug": "a", "gene": "b",
                     "mutation": "c", "label": int(i < n_pos)}
                    for i in range(n_total)])


def test_01_reference_rows_from_counts():
    started = time.time()
    cases = [
        (1904, 17744, 10.7, 100.0, 19.4),
        (332, 12122, 2.7, 100.0, 5.3),
    ]
    for n_pos, n_total, want_p, want_r, want_f1 in cases:
        gold = counted_gold(n_pos, n_total)
        got = evaluate(all_positive(gold), gold)
        direct = all_positive_metrics(n_pos, n_total)
        for name in ("precision", "recall", "f1"):
            assert got[name] == direct[name]
        assert abs(100 * got["precision"] - want_p) <= 0.1, got
        assert abs(100 * got["recall"] - want_r) <= 0.1, got
        assert abs(100 * got["f1"] - want_f1) <= 0.1, got
    elapsed = time.time() - started
    assert elapsed < 1.0, f"took {elapsed:.2f}s"
    note(f"both count-derived baseline rows within 0.1 pt in {elapsed:.2f}s")


# -- 02: closure vs brute-force fixed point ----------------------------------
#
# Independent oracle: full-sweep fixed point over a plain edge->confidence
# dict, rescanning every pair until nothing improves. Input edges keep
# their confidence; derived confidence is the best chain minimum.


def oracle_close(input_edges):
    conf = dict(input_edges)
    inputs = set(input_edges)

    def better(key, c):
        if key[0] == key[1] or key in inputs:
            return False
        if conf.get(key, -1.0) >= c:
            return False
        conf[key] = c
        return True

    changed = True
    while changed:
        changed = False
        items = list(conf.items())
        for (a, b, k), c in items:
            if k == COREF and better((b, a, COREF), c):
                changed = True
            if k in (COREF, ISA, PART_OF) and better((a, b, "Resolve"), c):
                changed = True
        items = list(conf.items())
        for (a, b, k1), c1 in items:
            for (b2, d, k2), c2 in items:
                if b2 != b:
                    continue
                if k1 == k2 == COREF and better((a, d, COREF), min(c1, c2)):
                    changed = True
                if k1 == k2 == "Resolve" and \
                        better((a, d, "Resolve"), min(c1, c2)):
                    changed = True
        for (a, b, k1), c1 in items:
            if k1 != "Resolve":
                continue
            for (c, b2, k2), c2 in items:
                if k2 == COREF and b2 == b and \
                        better((a, c, "Resolve"), min(c1, c2)):
                    changed = True
    return conf


def random_link_graph(rng, max_mentions=50, max_edges=45):
    ids = [f"m{i}" for i in range(rng.randint(2, max_mentions))]
    graph = ResolutionGraph("d0", ids)
    for _ in range(rng.randint(1, max_edges)):
        a, b = rng.sample(ids, 2)
        kind = rng.choice((COREF, ISA, PART_OF))
        conf = 1.0 if rng.random() < 0.5 else round(rng.uniform(0.2, 0.999), 3)
        graph.add_link(ResolutionLink(a, b, kind, conf, Provenance("t")))
    return graph


def test_02_closure_matches_fixed_point_oracle():
    started = time.time()
    rng = random.Random(17)
    for i in range(200):
        graph = random_link_graph(rng)
        closed = close_graph(graph)
        want = oracle_close({k: l.confidence for k, l in graph.edges.items()})
        got = {k: l.confidence for k, l in closed.edges.items()}
        assert got == want, f"graph {i} diverged from the fixed point"
    elapsed = time.time() - started
    assert elapsed < 10.0, f"took {elapsed:.2f}s"
    note(f"200 random graphs (<=50 mentions) closed exactly in {elapsed:.2f}s")


# -- 03: marginals vs exact enumeration --------------------------------------


def oracle_marginals(graph):
    names = list(graph.variables)
    z = 0.0
    ones = {v: 0.0 for v in names}
    for bits in itertools.product((0, 1), repeat=len(names)):
        a = dict(zip(names, bits))
        w = 1.0
        for f in graph.factors:
            w *= float(f.table[tuple(a[v] for v in f.vars)])
        z += w
        for v in names:
            if a[v]:
                ones[v] += w
    assert z > 0.0
    return {v: ones[v] / z for v in names}


def random_factor_graph(rng, max_vars=12):
    n = rng.randint(2, max_vars)
    graph = FactorGraph()
    for i in range(n):
        graph.add_variable(f"v{i}")
    for i in rng.sample(range(n), rng.randint(1, n)):
        table = np.array([rng.uniform(0.1, 3.0), rng.uniform(0.1, 3.0)])
        graph.add_factor(Factor(f"u{i}", (f"v{i}",), table))
    n_edges = rng.randint(n - 1, n + 3)
    for j in range(n_edges):
        a, b = rng.sample(range(n), 2)
        table = np.array([[rng.uniform(0.1, 3.0) for _ in range(2)]
                          for _ in range(2)])
        graph.add_factor(Factor(f"e{j}", (f"v{a}", f"v{b}"), table))
    return graph


def test_03_marginals_match_enumeration():
    started = time.time()
    rng = random.Random(23)
    worst = 0.0
    cyclic = 0
    for _ in range(100):
        graph = random_factor_graph(rng)
        cyclic += not graph.is_acyclic()
        got = e_step(graph)
        want = oracle_marginals(graph)
        for v in graph.variables:
            worst = max(worst, abs(got[v] - want[v]))
    elapsed = time.time() - started
    assert worst <= 1e-6, worst
    assert elapsed < 30.0, f"took {elapsed:.2f}s"
    note(f"100 graphs ({cyclic} cyclic), max abs error {worst:.2e} "
         f"in {elapsed:.2f}s")


# -- 04: link growth invariants ----------------------------------------------


def test_04_growth_is_monotone_and_degenerate_run_is_exact():
    for seed, cross in ((3, 0.0), (5, 0.5), (9, 1.0)):
        result = generate(SynthConfig(num_docs=24, seed=seed,
                                      cross_paragraph_fraction=cross))
        trained = self_train_resolution(
            result.documents, iterations=3, dim=1 << 14,
            train_cfg=TrainConfig(epochs=10, seed=seed), seed=seed,
            keep_iterates=True)
        for doc in result.documents:
            for prev, cur in zip(trained.iterates, trained.iterates[1:]):
                assert set(prev[doc.id].edges) <= set(cur[doc.id].edges), \
                    f"link set shrank in {doc.id} (seed {seed})"

        degenerate = self_train_resolution(
            result.documents, iterations=1, threshold=1.0, dim=1 << 14,
            train_cfg=TrainConfig(epochs=3, seed=seed), seed=seed)
        for doc in result.documents:
            want = set(initial_link_graph(doc).edges)
            assert set(degenerate.graphs[doc.id].edges) == want, doc.id
        assert degenerate.history[-1]["added_learned"] == 0
    note("monotone growth on 3 corpora; threshold-1.0 single step returned "
         "the seeded links exactly")


# -- 05/06/07: the trained 200-document pipeline ------------------------------


@pytest.fixture(scope="module")
def trained():
    times = {}
    started = time.time()
    result = generate(SynthConfig(num_docs=200, seed=7,
                                  cross_paragraph_fraction=0.5))
    docs = {d.id: d for d in result.documents}
    times["synth"] = time.time() - started

    started = time.time()
    examples = generate_relation_examples(result.documents, result.kb,
                                          DSConfig(seed=7))
    detector, _ = train_relation_detector(examples, TrainConfig(seed=7),
                                          dim=1 << 18)
    times["detector"] = time.time() - started

    started = time.time()
    st = self_train_resolution(
        result.documents, iterations=8,
        train_cfg=TrainConfig(seed=7, early_metric="loss"),
        dim=1 << 18, seed=7, keep_iterates=True)
    times["self_train"] = time.time() - started

    return {"result": result, "docs": docs, "detector": detector,
            "st": st, "gold": GoldSet(result.gold), "times": times}


def planted_recall(certificates, graphs):
    hit = 0
    for cert in certificates:
        closed = close_graph(graphs[cert["doc"]])
        hit += tuple(cert["goal"]) in closed.edges
    return hit / len(certificates)


def test_05_self_training_lifts_planted_link_recall(trained):
    started = time.time()
    certs = trained["result"].certificates
    iterates = trained["st"].iterates
    assert len(certs) > 50
    r0 = planted_recall(certs, iterates[0])
    r_final = planted_recall(certs, iterates[-1])
    gain = r_final - r0
    elapsed = (trained["times"]["synth"] + trained["times"]["self_train"]
               + time.time() - started)
    assert gain >= 0.15, f"recall {r0:.3f} -> {r_final:.3f} (+{gain:.3f})"
    assert elapsed < 300.0, f"took {elapsed:.1f}s"
    note(f"planted-link recall {r0:.3f} -> {r_final:.3f} "
         f"(+{100 * gain:.1f} pts) in {elapsed:.1f}s")


@pytest.fixture(scope="module")
def system_scores(trained):
    """Prediction records for the three systems, plus the hard subset."""
    started = time.time()
    docs = trained["docs"]
    gold = trained["gold"]

    def predict(models, cfg):
        records = []
        for row in gold:
            query = {role: row[role] for role in ROLES}
            try:
                decision = extract(docs[row["doc"]], query, models,
                                   cfg).decision
            except QueryError:
                decision = False
            records.append({**{r: row[r] for r in ROLES},
                            "doc": row["doc"], "decision": int(decision)})
        return records

    graphs = trained["st"].graphs
    full_models = InferenceModels(relation=trained["detector"], graphs=graphs)
    preds = {
        "full": predict(full_models, InferenceConfig()),
        "local": predict(full_models, InferenceConfig(closure=False)),
        "always_positive": predict(InferenceModels(graphs=graphs),
                                   InferenceConfig(always_positive=True)),
    }
    hard = hard_subset(gold, trained["docs"].values())
    return {"preds": preds, "hard": hard,
            "elapsed": time.time() - started}


def test_06_modular_beats_paragraph_local_on_hard_subset(trained,
                                                         system_scores):
    hard = system_scores["hard"]
    assert 0 < len(hard) < len(trained["gold"])
    assert 0 < hard.positives() < len(hard)

    full = evaluate(system_scores["preds"]["full"], hard)
    local = evaluate(system_scores["preds"]["local"], hard)
    baseline = evaluate(all_positive(hard), hard)
    analytic = all_positive_metrics(hard.positives(), len(hard))

    elapsed = sum(trained["times"].values()) + system_scores["elapsed"]
    assert full["f1"] >= 0.70, full
    assert local["f1"] <= 0.30, local
    assert abs(100 * baseline["f1"] - 100 * analytic["f1"]) <= 0.1
    assert elapsed < 600.0, f"took {elapsed:.1f}s"
    note(f"hard subset ({len(hard)} rows): full F1={full['f1']:.3f} "
         f">= 0.70, paragraph-local F1={local['f1']:.3f} <= 0.30, "
         f"all-positive F1 matches analytic {analytic['f1']:.3f}; "
         f"{elapsed:.1f}s total")


def test_07_always_positive_reaches_resolution_ceiling(trained,
                                                       system_scores):
    hard = system_scores["hard"]
    ap = evaluate(system_scores["preds"]["always_positive"], hard)
    full = evaluate(system_scores["preds"]["full"], hard)

    certs = {c["doc"]: c for c in trained["result"].certificates}
    hard_pos = [row for row in hard if row["label"] == 1]
    reachable = 0
    for row in hard_pos:
        cert = certs.get(row["doc"])
        if cert is None:
            continue
        closed = close_graph(trained["st"].graphs[cert["doc"]])
        reachable += tuple(cert["goal"]) in closed.edges
    ceiling = reachable / len(hard_pos)

    assert ap["recall"] >= full["recall"]
    assert abs(ap["recall"] - ceiling) < 1e-9, (ap["recall"], ceiling)
    assert ap["precision"] < full["precision"], (ap, full)
    note(f"always-positive recall {ap['recall']:.3f} == reachable ceiling "
         f"{ceiling:.3f}; precision {ap['precision']:.3f} < "
         f"{full['precision']:.3f}")


# -- 08: supervision restrictions ---------------------------------------------


def test_08_supervision_respects_segment_restrictions():
    cfg = DSConfig(seed=11)
    result = generate(SynthConfig(num_docs=1000, seed=11,
                                  cross_paragraph_fraction=0.5))
    docs = {d.id: d for d in result.documents}
    examples = generate_relation_examples(result.documents, result.kb, cfg)
    assert len(examples) > 1000
    violations = 0
    for ex in examples:
        doc = docs[ex.provenance["doc"]]
        p, s0, s1 = ex.provenance["segment"]
        if not 0 <= s0 <= s1 < len(doc.paragraphs[p].sentences):
            violations += 1
        elif s1 - s0 + 1 > cfg.k_max:
            violations += 1
        elif any(doc.mentions[mid].p != p
                 for mid in ex.provenance["mentions"]):
            violations += 1
    assert violations == 0
    note(f"{len(examples)} examples over 1000 documents, 0 violations")


# -- 09: gradient checks -------------------------------------------------------


def relative_error(got, want):
    return abs(got - want) / max(abs(got) + abs(want), 1e-8)


def test_09_scorer_gradients_match_finite_differences():
    rng = random.Random(21)
    nprng = np.random.default_rng(21)
    dim = 1 << 10

    detector = NativeRelationScorer.fresh(dim=dim)
    detector.model.w[:] = nprng.normal(0, 0.3, size=dim)
    detector.model.b = 0.17
    templates = [tuple(rng.choice(["[CLS]", "[X1]", "[X3]", "alpha", "beta",
                                   "gamma", "sensitive", "to"])
                       for _ in range(rng.randint(4, 9)))
                 for _ in range(12)]
    targets = [rng.random() for _ in templates]
    worst = 0.0
    eps = 1e-5
    _, gw, gb = detector.loss_and_grad(templates, targets)
    for i in sorted(gw)[:40]:
        orig = detector.model.w[i]
        detector.model.w[i] = orig + eps
        up, _, _ = detector.loss_and_grad(templates, targets)
        detector.model.w[i] = orig - eps
        down, _, _ = detector.loss_and_grad(templates, targets)
        detector.model.w[i] = orig
        worst = max(worst, relative_error(gw[i], (up - down) / (2 * eps)))
    detector.model.b += eps
    up, _, _ = detector.loss_and_grad(templates, targets)
    detector.model.b -= 2 * eps
    down, _, _ = detector.loss_and_grad(templates, targets)
    detector.model.b += eps
    worst = max(worst, relative_error(gb, (up - down) / (2 * eps)))
    assert worst < 1e-4, worst

    result = generate(SynthConfig(num_docs=6, seed=13))
    pair_scorer = PairScorer.fresh(dim=dim)
    pair_scorer.model.w = nprng.normal(0, 0.05, size=dim)
    pair_scorer.model.b = 0.1
    samples = []
    for doc in result.documents:
        named = [m.id for m in doc.mentions_in_order()][:4]
        samples.extend((doc, a, b) for a, b in zip(named, named[1:]))
    targets = [float(t) for t in nprng.uniform(0.05, 0.95, len(samples))]
    pair_worst = 0.0
    _, gw, gb = pair_scorer.loss_and_grad(samples, targets)

    def pair_loss():
        return pair_scorer.loss_and_grad(samples, targets)[0]

    for key in sorted(gw)[:40]:
        pair_scorer.model.w[key] += eps
        up = pair_loss()
        pair_scorer.model.w[key] -= 2 * eps
        down = pair_loss()
        pair_scorer.model.w[key] += eps
        pair_worst = max(pair_worst,
                         relative_error(gw[key], (up - down) / (2 * eps)))
    pair_scorer.model.b += eps
    up = pair_loss()
    pair_scorer.model.b -= 2 * eps
    down = pair_loss()
    pair_scorer.model.b += eps
    pair_worst = max(pair_worst, relative_error(gb, (up - down) / (2 * eps)))
    assert pair_worst < 1e-4, pair_worst
    note(f"relation worst rel. err {worst:.2e}, pairwise {pair_worst:.2e}")


# -- 10: determinism and multi-seed reporting ----------------------------------


def run_cli(*argv):
    return main([str(a) for a in argv])


def run_pipeline(root, train_seed):
    """synth(7) -> gen-ds(7) -> train(train_seed) -> extract -> eval."""
    out = root / f"seed{train_seed}"
    assert run_cli("synth", "--num-docs", 60, "--seed", 7,
                   "--cross-paragraph-fraction", 0.5,
                   "--outdir", out, "--run-id", "data") == 0
    data = out / "data"
    assert run_cli("gen-ds", "--corpus", data / "corpus.jsonl",
                   "--kb", data / "kb.jsonl", "--seed", 7,
                   "--outdir", out, "--run-id", "ds") == 0
    assert run_cli("train", "--corpus", data / "corpus.jsonl",
                   "--examples", out / "ds" / "examples.jsonl",
                   "--iterations", 3, "--seed", train_seed,
                   "--dim", 1 << 15, "--outdir", out,
                   "--run-id", "model") == 0
    queries = out / "queries.jsonl"
    with queries.open("w") as fh:
        for row in GoldSet.load(data / "gold.jsonl"):
            fh.write(json.dumps({k: row[k] for k in ("doc", *ROLES)}) + "\n")
    assert run_cli("extract", "--corpus", data / "corpus.jsonl",
                   "--queries", queries,
                   "--relation-model", out / "model" / "relation.json",
                   "--graphs", out / "model" / "graphs.jsonl",
                   "--outdir", out, "--run-id", "run") == 0
    assert run_cli("eval", "--gold", data / "gold.jsonl",
                   "--predictions", out / "run" / "results.jsonl",
                   "--corpus", data / "corpus.jsonl",
                   "--outdir", out, "--run-id", "scores") == 0
    return out


def test_10_pipeline_determinism_and_seed_reporting(tmp_path, capsys):
    first = run_pipeline(tmp_path / "a", 7)
    second = run_pipeline(tmp_path / "b", 7)
    for name in ("metrics.json", "metrics.tsv", "metrics.txt"):
        same = ((first / "scores" / name).read_bytes()
                == (second / "scores" / name).read_bytes())
        assert same, f"{name} differs between identical seed-7 runs"

    results = [first / "run" / "results.jsonl"]
    for seed in (12, 17):
        results.append(run_pipeline(tmp_path / "a", seed)
                       / "run" / "results.jsonl")
    capsys.readouterr()
    assert run_cli("eval", "--gold", first / "data" / "gold.jsonl",
                   "--predictions", *results,
                   "--outdir", tmp_path, "--run-id", "seeds") == 0
    table = capsys.readouterr().out
    assert "±" in table
    rows = json.loads((tmp_path / "seeds" / "metrics.json")
                      .read_text())["rows"]
    system = next(r for r in rows if r["system"] == "two-stage")
    assert system["runs"] == 3
    assert set(system["sd"]) == {"precision", "recall", "f1"}
    note("seed-7 metrics byte-identical; three-seed report carries "
         f"mean ± sd (f1 {system['f1']:.3f} ± "
         f"{system['sd']['f1']:.3f})")
