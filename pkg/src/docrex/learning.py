"""Self-training loops that grow supervision from the rule seeds.

The relation detector retrains on soft targets (m_step) while the
resolution side runs iterative link growth: train a pairwise scorer on
the current link set, score every still-unlinked mention pair, promote
the confident ones, re-apply distant supervision, repeat. Pairs the
rule closure already entails count as certain, which is what pinning
the existing links to true and reading off the forced posterior gives.

Everything is deterministic given the seed: mention pairs are visited
in document order, negatives are drawn by a seeded generator, and the
promoted links carry the iteration that found them in their provenance.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .optim import TrainConfig, train_logistic
from .relation import DEFAULT_DIM, NativeRelationScorer, template_features
from .resolution import (
    RESOLVE,
    PairSample,
    PairScorer,
    Provenance,
    ResolutionGraph,
    ResolutionLink,
    build_mention_view,
    close_graph,
    ds_links,
    seed_links,
    train_pair_scorer,
)

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.9
NEGATIVE_MULTIPLIER = 2


def m_step_relation(templates, q_values, cfg: TrainConfig | None = None,
                    dim: int = DEFAULT_DIM):
    """Refit the relation detector against posterior targets.

    With q values of exactly 0 and 1 this is ordinary supervised
    training; fractional values weight the two label directions by
    their posterior mass, which is what the soft cross-entropy already
    does. Returns (scorer, history).
    """
    cfg = cfg or TrainConfig()
    xs = [template_features(t, dim) for t in templates]
    qs = [float(q) for q in q_values]
    for q in qs:
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"posterior target out of range: {q}")
    model, history = train_logistic(xs, qs, cfg, dim)
    return NativeRelationScorer(model=model, dim=dim), history


def m_step_pairs(samples, cfg: TrainConfig | None = None,
                 dim: int = DEFAULT_DIM):
    """Refit the pairwise resolution scorer against posterior targets."""
    for s in samples:
        if not 0.0 <= s.label <= 1.0:
            raise ValueError(f"posterior target out of range: {s.label}")
    return train_pair_scorer(samples, cfg, dim)


def initial_link_graph(doc) -> ResolutionGraph:
    """Seed rules plus one distant-supervision pass over their output."""
    g = ResolutionGraph(doc.id, nodes=set(doc.mentions))
    g.add_links(seed_links(doc))
    g.add_links(ds_links(g, doc))
    return g


def _linked_pairs(graph: ResolutionGraph) -> set:
    return {(src, dst) for src, dst, _ in graph.edges}


def _unlinked_pairs(doc, graph: ResolutionGraph):
    linked = _linked_pairs(graph)
    order = [m.id for m in doc.mentions_in_order()]
    for a in order:
        for b in order:
            if a != b and (a, b) not in linked:
                yield a, b


@dataclass
class SelfTrainResult:
    graphs: dict                 # doc id -> ResolutionGraph
    scorer: PairScorer | None
    history: list                # one record per iteration, 0 = initial
    iterates: list | None = None # optional per-iteration graph snapshots


def self_train_resolution(docs, iterations=3, threshold=DEFAULT_THRESHOLD,
                          train_cfg: TrainConfig | None = None,
                          dim: int = DEFAULT_DIM, seed: int = 7,
                          keep_iterates: bool = False) -> SelfTrainResult:
    """Iterative link growth from the seeded graphs.

    Each iteration trains the pairwise scorer on the current links
    (against twice as many sampled unlinked negatives), scores every
    unlinked ordered pair q from the frozen previous-iteration state
    (certain when the closed graph already entails the pair, the scorer
    probability otherwise), promotes pairs with q strictly above the
    threshold, and re-applies distant supervision to the grown set.
    Link sets only ever grow. With the threshold at 1.0 nothing can be
    promoted, leaving exactly the seeded graphs.
    """
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    docs = sorted(docs, key=lambda d: d.id)
    train_cfg = train_cfg or TrainConfig(seed=seed)
    graphs = {doc.id: initial_link_graph(doc) for doc in docs}
    views = {doc.id: {m.id: build_mention_view(doc, m)
                      for m in doc.mentions_in_order()} for doc in docs}
    history = [{"iteration": 0, "links": sum(len(g.edges) for g in graphs.values()),
                "added_learned": 0, "added_ds": 0}]
    iterates = [{d: g.copy() for d, g in graphs.items()}] if keep_iterates \
        else None
    scorer = None

    for t in range(1, iterations + 1):
        positives = []
        seen = set()
        for doc in docs:
            for src, dst in sorted(_linked_pairs(graphs[doc.id])):
                if (doc.id, src, dst) not in seen:
                    seen.add((doc.id, src, dst))
                    positives.append(PairSample(doc, src, dst, 1.0))
        pool = [(doc, a, b) for doc in docs
                for a, b in _unlinked_pairs(doc, graphs[doc.id])]
        rng = random.Random(seed * 1009 + t)
        n_neg = min(len(pool), NEGATIVE_MULTIPLIER * len(positives))
        negatives = [PairSample(doc, a, b, 0.0)
                     for doc, a, b in rng.sample(pool, n_neg)]
        if positives and negatives:
            scorer, _ = train_pair_scorer(positives + negatives, train_cfg,
                                          dim)
        else:
            log.warning("iteration %d: no %s pairs, scorer not retrained",
                        t, "linked" if not positives else "unlinked")

        added_learned = 0
        added_ds = 0
        for doc in docs:
            graph = graphs[doc.id]
            closed = close_graph(graph)
            promoted = []
            for a, b in _unlinked_pairs(doc, graph):
                if (a, b, RESOLVE) in closed.edges:
                    q = 1.0
                elif scorer is not None:
                    q = scorer.score(doc, a, b, views=views[doc.id])
                else:
                    q = 0.0
                if q > threshold:
                    promoted.append(ResolutionLink(
                        a, b, RESOLVE, q, Provenance(f"learned:iter{t}")))
            added_learned += graph.add_links(promoted)
            added_ds += graph.add_links(ds_links(graph, doc))
        history.append({"iteration": t,
                        "links": sum(len(g.edges) for g in graphs.values()),
                        "added_learned": added_learned,
                        "added_ds": added_ds})
        if iterates is not None:
            iterates.append({d: g.copy() for d, g in graphs.items()})
    return SelfTrainResult(graphs=graphs, scorer=scorer, history=history,
                           iterates=iterates)
