"""Two-stage document-level extraction.

Stage one builds the document's resolution graph and closes it; stage
two enumerates segments whose mentions resolve to the query entities,
scores the anchor pair with the relation detector, checks the
augmentation pairs by co-occurrence, and composes the n-ary decision.

Every positive decision is auditable: each evidence carries, per role,
the chain of resolution links (with provenance) that justified its slot
filler, and ``explain`` re-verifies those links against the graph the
result was computed on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .config import coerce_dataclass, load_toml
from .corpus import (
    CANDIDATE_NP,
    NAMED,
    Document,
    Entity,
    Segment,
    canonical_name,
    enumerate_segments,
    segment_text,
)
from .relation import (
    DummifyError,
    RelationEvidence,
    RelationScheme,
    compose_nary,
    dummify,
    noisy_or,
    score_relation,
)
from .resolution import (
    DEFAULT_SIEVES,
    RESOLVE,
    ResolutionGraph,
    StaleGraphError,
    close_graph,
    ds_links,
    replay_provenance,
    run_sieves,
)

AGGREGATIONS = ("existential", "noisy_or")


class QueryError(ValueError):
    """The query names an entity the document does not mention."""


@dataclass
class InferenceConfig:
    """Extraction switches.

    ``closure`` off is the paragraph-local ablation: the resolution
    module contributes nothing, so only named mentions of the query
    entities can fill slots. It is not merely skipping the closure
    step, because self-training already materializes entailed links
    into the trained graphs; the ablation has to ignore those too.
    """

    k_max: int = 2
    threshold: float = 0.5
    aggregation: str = "existential"
    closure: bool = True            # document-global resolution switch
    always_positive: bool = False   # relation-detection ablation
    sieve_threshold: float = 0.5    # learned-sieve cutoff when building graphs

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, "
                             f"got {self.aggregation!r}")

    @classmethod
    def from_toml(cls, path) -> "InferenceConfig":
        return coerce_dataclass(cls, load_toml(path), where=str(path))


@dataclass
class InferenceModels:
    """Trained pieces the extractor consumes.

    ``graphs`` holds per-document link graphs from training; documents
    without one get a graph built on the fly from the rule sieves (plus
    the learned sieve when a pair scorer is present) and link
    propagation.
    """

    relation: object | None = None         # .score(template) -> probability
    pairs: object | None = None            # PairScorer-compatible
    graphs: dict | None = None             # doc id -> ResolutionGraph


@dataclass
class EvidenceRecord:
    evidence: RelationEvidence
    text: str                              # raw segment text
    chains: dict = field(default_factory=dict)   # role -> list of link dicts


@dataclass
class ExtractionResult:
    doc: str
    query: dict                            # role -> entity name
    decision: bool
    score: float
    evidences: list                        # EvidenceRecord, anchors first
    graph: ResolutionGraph
    graph_version: int
    subrelations: dict = field(default_factory=dict)  # pair -> bool


def build_resolution_graph(doc: Document, models: InferenceModels,
                           cfg: InferenceConfig) -> ResolutionGraph:
    """Stage one: the document's link graph, closed unless disabled."""
    if models.graphs is not None and doc.id in models.graphs:
        base = models.graphs[doc.id]
    else:
        sieves = DEFAULT_SIEVES if models.pairs is not None \
            else tuple(s for s in DEFAULT_SIEVES if s.name != "learned")
        base = run_sieves(doc, sieves, scorer=models.pairs,
                          cfg={"sieve_threshold": cfg.sieve_threshold})
        base.add_links(ds_links(base, doc))
    return close_graph(base) if cfg.closure else base


def _typed_submention(doc: Document, np, roles) -> bool:
    for m in doc.mentions.values():
        if m.entity is None or (m.p, m.s) != (np.p, np.s):
            continue
        if np.t0 <= m.t0 and m.t1 <= np.t1 \
                and doc.entities[m.entity].type in roles:
            return True
    return False


def candidate_mentions(doc: Document, graph: ResolutionGraph,
                       entity: Entity,
                       scheme: RelationScheme = RelationScheme()) -> set:
    """Mentions that can fill the entity's slot.

    The entity's own named mentions always qualify. A candidate noun
    phrase qualifies when it contains some typed mention and one of the
    entity's mentions resolves to it in the graph.
    """
    named = {mid for mid in entity.mentions
             if doc.mentions[mid].kind == NAMED}
    out = set(named)
    for m in doc.mentions.values():
        if m.kind != CANDIDATE_NP:
            continue
        if not _typed_submention(doc, m, scheme.roles):
            continue
        if any((q, m.id, RESOLVE) in graph.edges for q in named):
            out.add(m.id)
    return out


def _find_entity(doc: Document, role: str, name: str) -> Entity | None:
    want = canonical_name(name)
    for ent in doc.entities.values():
        if ent.type == role and canonical_name(ent.name) == want:
            return ent
    return None


def _expand_chain(graph: ResolutionGraph, key, out, seen) -> None:
    if key in seen:
        return
    seen.add(key)
    link = graph.edges[key]
    for ant in link.provenance.antecedents:
        _expand_chain(graph, tuple(ant), out, seen)
    out.append(link)


def resolution_chain(graph: ResolutionGraph, query_mids, slot_mid) -> list:
    """Links justifying the slot filler, derivation order, inputs first.

    A direct named mention needs no justification: empty chain.
    """
    if slot_mid in query_mids:
        return []
    for q in sorted(query_mids):
        key = (q, slot_mid, RESOLVE)
        if key in graph.edges:
            links = []
            _expand_chain(graph, key, links, set())
            return [{"src": l.src, "dst": l.dst, "kind": l.kind,
                     "conf": round(l.confidence, 9),
                     "source": l.provenance.source} for l in links]
    raise LookupError(f"no resolve path to {slot_mid}")


def _evidence_sort_key(rec: EvidenceRecord):
    seg = rec.evidence.segment
    return (-(rec.evidence.score or 0.0), seg.p, seg.s0, seg.s1)


def extract(doc: Document, query: dict, models: InferenceModels,
            cfg: InferenceConfig | None = None,
            scheme: RelationScheme = RelationScheme()) -> ExtractionResult:
    """Decide whether the document supports the queried relation tuple."""
    cfg = cfg or InferenceConfig()
    if set(query) != set(scheme.roles):
        raise QueryError(f"query roles {sorted(query)} do not match the "
                         f"scheme roles {sorted(scheme.roles)}")
    if models.relation is None and not cfg.always_positive:
        raise ValueError("no relation scorer supplied and the "
                         "always-positive ablation is off")

    entities = {}
    for role in scheme.roles:
        ent = _find_entity(doc, role, query[role])
        if ent is None or not ent.mentions:
            raise QueryError(
                f"doc {doc.id}: no {role} entity named {query[role]!r}")
        entities[role] = ent

    graph = build_resolution_graph(doc, models, cfg)
    named = {role: {mid for mid in ent.mentions
                    if doc.mentions[mid].kind == NAMED}
             for role, ent in entities.items()}
    if cfg.closure:
        cands = {role: candidate_mentions(doc, graph, ent, scheme)
                 for role, ent in entities.items()}
    else:
        cands = {role: set(mids) for role, mids in named.items()}

    anchor = tuple(scheme.anchor)
    pairs = [anchor] + [tuple(p) for p in scheme.augmentations]
    records: dict[tuple, list] = {pair: [] for pair in pairs}

    for seg in enumerate_segments(doc, cfg.k_max):
        inseg = set(seg.mentions)
        for pair in pairs:
            role_a, role_b = pair
            for a in sorted(cands[role_a] & inseg):
                for b in sorted(cands[role_b] & inseg):
                    if a == b:
                        continue
                    try:
                        template = dummify(doc, seg,
                                           {role_a: a, role_b: b}, scheme)
                    except DummifyError:
                        continue
                    score = None
                    if pair == anchor:
                        score = 1.0 if cfg.always_positive \
                            else score_relation(models.relation, template)
                    records[pair].append(EvidenceRecord(
                        evidence=RelationEvidence(
                            doc=doc.id, segment=seg, subrelation=pair,
                            slots={role_a: a, role_b: b},
                            template=template, score=score),
                        text=segment_text(doc, seg)))

    anchor_scores = [r.evidence.score for r in records[anchor]]
    if cfg.aggregation == "existential":
        agg = max(anchor_scores, default=0.0)
    else:
        agg = noisy_or(anchor_scores)
    sub_decisions = {anchor: agg >= cfg.threshold and bool(anchor_scores)}
    for pair in pairs[1:]:
        sub_decisions[pair] = bool(records[pair])
    decision = compose_nary(sub_decisions, scheme)

    if decision:
        # anchors above threshold first, then the augmentation witnesses
        kept = [r for r in records[anchor]
                if r.evidence.score >= cfg.threshold]
        for pair in pairs[1:]:
            kept.extend(records[pair])
    else:
        # nearest miss: the best-scoring anchor candidate, if any
        kept = sorted(records[anchor], key=_evidence_sort_key)[:1]
    for rec in kept:
        rec.chains = {
            role: resolution_chain(graph, named[role], mid)
            for role, mid in rec.evidence.slots.items()}
    anchors = sorted((r for r in kept if r.evidence.subrelation == anchor),
                     key=_evidence_sort_key)
    others = sorted((r for r in kept if r.evidence.subrelation != anchor),
                    key=lambda r: _evidence_sort_key(r)[1:])
    evidences = anchors + others

    return ExtractionResult(
        doc=doc.id, query=dict(query), decision=decision,
        score=round(agg, 9), evidences=evidences, graph=graph,
        graph_version=graph.version,
        subrelations={pair: sub_decisions[pair] for pair in pairs})


def verify_chains(result: ExtractionResult) -> None:
    """Every chain link must still be an edge of the result's graph."""
    if result.graph.version != result.graph_version:
        raise StaleGraphError(
            f"doc {result.doc}: graph changed since extraction "
            f"(version {result.graph.version} != {result.graph_version})")
    for rec in result.evidences:
        for role, chain in rec.chains.items():
            for link in chain:
                key = (link["src"], link["dst"], link["kind"])
                if key not in result.graph.edges:
                    raise StaleGraphError(
                        f"doc {result.doc}: chain link {key} missing from "
                        f"the graph")
                if not replay_provenance(result.graph,
                                         result.graph.edges[key]):
                    raise StaleGraphError(
                        f"doc {result.doc}: chain link {key} no longer "
                        f"re-derives from its recorded antecedents")


def explain(result: ExtractionResult) -> str:
    """Human-readable report with replayable provenance chains."""
    verify_chains(result)
    lines = []
    q = ", ".join(f"{role}={result.query[role]}"
                  for role in sorted(result.query))
    lines.append(f"document {result.doc}: {q}")
    lines.append(f"decision: {'positive' if result.decision else 'negative'} "
                 f"(score {result.score:.3f})")
    if not result.decision and not result.evidences:
        lines.append("no resolvable evidence: the anchor pair never "
                     "co-occurs in a segment")
        return "\n".join(lines)
    if not result.decision:
        lines.append("nearest miss:")
    for rec in result.evidences:
        ev = rec.evidence
        seg = ev.segment
        what = "-".join(ev.subrelation)
        shown = "co-occurrence" if ev.score is None else f"{ev.score:.3f}"
        lines.append(f"  [{what}] p{seg.p} s{seg.s0}..{seg.s1} "
                     f"score {shown}: {rec.text}")
        for role in ev.subrelation:
            chain = rec.chains.get(role, [])
            if not chain:
                lines.append(f"    {role} <- {ev.slots[role]} (named mention)")
                continue
            lines.append(f"    {role} <- {ev.slots[role]} via:")
            for link in chain:
                lines.append(
                    f"      {link['src']} -{link['kind']}-> {link['dst']} "
                    f"[conf {link['conf']:.2f}, {link['source']}]")
    return "\n".join(lines)


# -- batch driver -------------------------------------------------------------


def load_queries(path) -> list[dict]:
    """Line-delimited {doc, drug, gene, mutation} records."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            out.append(rec)
    return out


def result_to_record(result: ExtractionResult) -> dict:
    return {
        "doc": result.doc,
        **{role: result.query[role] for role in sorted(result.query)},
        "decision": int(result.decision),
        "score": result.score,
        "evidences": [
            {"subrelation": list(rec.evidence.subrelation),
             "segment": [rec.evidence.segment.p, rec.evidence.segment.s0,
                         rec.evidence.segment.s1],
             "slots": dict(rec.evidence.slots),
             "score": rec.evidence.score,
             "text": rec.text,
             "chains": rec.chains}
            for rec in result.evidences],
        "graph_version": result.graph_version,
    }


def run_queries(docs_by_id: dict, queries, models: InferenceModels,
                cfg: InferenceConfig | None = None,
                scheme: RelationScheme = RelationScheme()):
    """Extract every query; absent entities come back as negatives.

    Returns (records, results) where records are serializable dicts in
    query order. A query whose document is missing is a hard error; a
    query whose entities are absent is a negative with a note.
    """
    cfg = cfg or InferenceConfig()
    records, results = [], []
    for q in queries:
        doc = docs_by_id.get(q["doc"])
        if doc is None:
            raise QueryError(f"unknown document {q['doc']!r}")
        query = {role: q[role] for role in scheme.roles}
        try:
            res = extract(doc, query, models, cfg, scheme)
        except QueryError as exc:
            records.append({"doc": q["doc"],
                            **{r: q[r] for r in scheme.roles},
                            "decision": 0, "score": 0.0,
                            "evidences": [], "note": str(exc)})
            results.append(None)
            continue
        records.append(result_to_record(res))
        results.append(res)
    return records, results
