"""Document-global argument resolution.

Mentions are tied together by typed links: Coref (same thing), ISA
(specific to general), PartOf (part to whole). Each of them licenses
argument substitution, written as a Resolve edge from the mention that
may take over a slot to the mention that currently fills it. Closure
applies a fixed rule set to a least fixed point:

  * Coref is symmetric and transitive;
  * every Coref/ISA/PartOf edge casts a Resolve shadow;
  * Resolve is transitive;
  * Resolve(a, b) combined with Coref(c, b) yields Resolve(a, c).

Links enter the graph from three sources ordered by precision: seed
rules (exact surface match, appositive constructions), distant
supervision over entity-linked mention pairs, and a learned pairwise
scorer run as the last sieve.

Derived edges carry confidence equal to the best chain's weakest link
and a provenance record that replays: the named rule applied to the
recorded antecedents reproduces the edge, confidence included.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace

from .config import ConfigError
from .corpus import Document
from .optim import SparseLogistic, TrainConfig, train_logistic

COREF = "Coref"
ISA = "ISA"
PART_OF = "PartOf"
RESOLVE = "Resolve"
LINK_KINDS = (COREF, ISA, PART_OF, RESOLVE)

DEFAULT_DIM = 1 << 18
SIEVE_THRESHOLD = 0.5

EdgeKey = tuple[str, str, str]  # (src, dst, kind)


class GraphError(ValueError):
    pass


class StaleGraphError(GraphError):
    """The graph changed since the result referencing it was produced."""


@dataclass(frozen=True)
class Provenance:
    source: str
    antecedents: tuple[EdgeKey, ...] = ()

    def to_dict(self) -> dict:
        d = {"source": self.source}
        if self.antecedents:
            d["antecedents"] = [list(k) for k in self.antecedents]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        return cls(source=d["source"],
                   antecedents=tuple(tuple(a) for a in d.get("antecedents", ())))


@dataclass(frozen=True)
class ResolutionLink:
    """A directed typed link between two mentions of one document."""

    src: str
    dst: str
    kind: str
    confidence: float
    provenance: Provenance

    def key(self) -> EdgeKey:
        return (self.src, self.dst, self.kind)

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise GraphError(f"unknown link kind {self.kind!r}")
        if self.src == self.dst:
            raise GraphError(f"self link on mention {self.src!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise GraphError(f"confidence out of range: {self.confidence}")


class ResolutionGraph:
    """Typed mention links of one document.

    Coref edges are stored symmetrically: adding one direction adds the
    mirror with the same confidence and provenance. Other kinds stay
    directed. ``version`` bumps on every mutation so downstream results
    can detect staleness.
    """

    def __init__(self, doc_id: str, nodes=()):
        self.doc = doc_id
        self.nodes = set(nodes)
        self.edges: dict[EdgeKey, ResolutionLink] = {}
        self.version = 0

    def __contains__(self, key: EdgeKey) -> bool:
        return tuple(key) in self.edges

    def add_link(self, link: ResolutionLink) -> bool:
        """Insert a link unless that exact edge exists; first one wins.

        Returns True when the graph changed. Coref mirrors are added
        automatically.
        """
        if link.key() in self.edges:
            return False
        self.nodes.add(link.src)
        self.nodes.add(link.dst)
        self.edges[link.key()] = link
        self.version += 1
        if link.kind == COREF:
            mirror = replace(link, src=link.dst, dst=link.src)
            if mirror.key() not in self.edges:
                self.edges[mirror.key()] = mirror
        return True

    def add_links(self, links) -> int:
        return sum(1 for l in links if self.add_link(l))

    def links(self) -> list[ResolutionLink]:
        return [self.edges[k] for k in sorted(self.edges)]

    def has_pair(self, src: str, dst: str) -> bool:
        return any((src, dst, kind) in self.edges for kind in LINK_KINDS)

    def out_edges(self, src: str, kind: str | None = None):
        return [l for l in self.edges.values()
                if l.src == src and (kind is None or l.kind == kind)]

    def copy(self) -> "ResolutionGraph":
        g = ResolutionGraph(self.doc, self.nodes)
        g.edges = dict(self.edges)
        g.version = self.version
        return g


# -- seed rules -----------------------------------------------------------


def _longest_mention_starting_at(doc: Document, p: int, s: int, t0: int):
    best = None
    for m in doc.mentions.values():
        if (m.p, m.s, m.t0) == (p, s, t0):
            if best is None or m.t1 > best.t1:
                best = m
    return best


def seed_links(doc: Document) -> list[ResolutionLink]:
    """High-precision rule links: exact matches and appositives.

    Exact surface match (case-insensitive) anywhere in the document
    gives Coref. "X , a/an Y" and "X ( Y )" inside a sentence give
    ISA(X -> Y), Y being the longest mention starting where the pattern
    demands.
    """
    links = []
    mentions = doc.mentions_in_order()

    by_surface: dict[str, list] = {}
    for m in mentions:
        by_surface.setdefault(doc.mention_surface(m).casefold(), []).append(m)
    for group in by_surface.values():
        for a, b in itertools.combinations(group, 2):
            links.append(ResolutionLink(
                a.id, b.id, COREF, 1.0, Provenance("seed:exact_match")))

    for x in mentions:
        toks = doc.sentence(x.p, x.s).tokens
        # X , a/an Y
        if x.t1 + 2 <= len(toks) - 1 and toks[x.t1] == "," \
                and toks[x.t1 + 1].lower() in ("a", "an"):
            y = _longest_mention_starting_at(doc, x.p, x.s, x.t1 + 2)
            if y is not None and y.id != x.id:
                links.append(ResolutionLink(
                    x.id, y.id, ISA, 1.0, Provenance("seed:apposition")))
        # X ( Y )
        if x.t1 + 1 <= len(toks) - 1 and toks[x.t1] == "(":
            y = _longest_mention_starting_at(doc, x.p, x.s, x.t1 + 1)
            if y is not None and y.id != x.id and y.t1 < len(toks) \
                    and toks[y.t1] == ")":
                links.append(ResolutionLink(
                    x.id, y.id, ISA, 1.0, Provenance("seed:apposition")))
    return links


def ds_links(existing, doc: Document) -> list[ResolutionLink]:
    """Propagate entity-level links to co-sentence mention pairs.

    When a mention of entity E1 is linked to a mention of E2, every
    other (E1, E2) mention pair sharing a sentence earns the same kind
    of link. Only mentions carrying entity links participate. Returns
    the new links only; calling again on the grown set adds nothing.
    """
    if isinstance(existing, ResolutionGraph):
        present = set(existing.edges)
        edge_list = existing.links()
    else:
        present = {l.key() for l in existing}
        edge_list = sorted(existing, key=ResolutionLink.key)
    new = []
    for link in edge_list:
        m = doc.mentions.get(link.src)
        n = doc.mentions.get(link.dst)
        if m is None or n is None or m.entity is None or n.entity is None:
            continue
        for m2 in doc.mentions_of(m.entity):
            for n2 in doc.mentions_of(n.entity):
                if m2.id == n2.id:
                    continue
                if (m2.p, m2.s) != (n2.p, n2.s):
                    continue
                key = (m2.id, n2.id, link.kind)
                if key in present or key == link.key():
                    continue
                present.add(key)
                nl = ResolutionLink(m2.id, n2.id, link.kind, 1.0,
                                    Provenance("ds", (link.key(),)))
                new.append(nl)
                if link.kind == COREF:
                    present.add((n2.id, m2.id, COREF))
    return new


# -- closure ----------------------------------------------------------------

_SUBSTITUTABLE = (COREF, ISA, PART_OF)

RULE_COREF_SYMMETRY = "coref_symmetry"
RULE_COREF_TRANSITIVITY = "coref_transitivity"
RULE_KIND_IMPLIES_RESOLVE = "kind_implies_resolve"
RULE_RESOLVE_TRANSITIVITY = "resolve_transitivity"
RULE_COREF_SUBSTITUTION = "coref_substitution"


def close_graph(graph: ResolutionGraph) -> ResolutionGraph:
    """Least fixed point of the reasoning rules over the graph.

    Pure input edges are never modified. Each derived edge carries the
    confidence of its best derivation (max over chains of the chain
    minimum) and the antecedents of the chain that achieved it, so
    closure output is independent of rule application order.
    """
    conf: dict[EdgeKey, float] = {}
    prov: dict[EdgeKey, Provenance] = {}
    input_keys = set(graph.edges)
    out_by: dict[tuple[str, str], set[str]] = {}   # (src, kind) -> dsts
    in_by: dict[tuple[str, str], set[str]] = {}    # (dst, kind) -> srcs

    def index(key: EdgeKey):
        src, dst, kind = key
        out_by.setdefault((src, kind), set()).add(dst)
        in_by.setdefault((dst, kind), set()).add(src)

    work: deque[EdgeKey] = deque()
    for key in sorted(graph.edges):
        conf[key] = graph.edges[key].confidence
        index(key)
        work.append(key)

    def derive(src, dst, kind, c, rule, antecedents):
        if src == dst:
            return
        key = (src, dst, kind)
        if key in input_keys:
            return  # input edges stay as given
        if conf.get(key, -1.0) >= c:
            return
        if key not in conf:
            index(key)
        conf[key] = c
        prov[key] = Provenance(f"closure:{rule}", tuple(antecedents))
        work.append(key)

    while work:
        key = work.popleft()
        src, dst, kind = key
        c = conf[key]
        if kind == COREF:
            derive(dst, src, COREF, c, RULE_COREF_SYMMETRY, (key,))
            for d2 in sorted(out_by.get((dst, COREF), ())):
                other = (dst, d2, COREF)
                derive(src, d2, COREF, min(c, conf[other]),
                       RULE_COREF_TRANSITIVITY, (key, other))
            for s2 in sorted(in_by.get((src, COREF), ())):
                other = (s2, src, COREF)
                derive(s2, dst, COREF, min(c, conf[other]),
                       RULE_COREF_TRANSITIVITY, (other, key))
        if kind in _SUBSTITUTABLE:
            derive(src, dst, RESOLVE, c, RULE_KIND_IMPLIES_RESOLVE, (key,))
        if kind == RESOLVE:
            for d2 in sorted(out_by.get((dst, RESOLVE), ())):
                other = (dst, d2, RESOLVE)
                derive(src, d2, RESOLVE, min(c, conf[other]),
                       RULE_RESOLVE_TRANSITIVITY, (key, other))
            for s2 in sorted(in_by.get((src, RESOLVE), ())):
                other = (s2, src, RESOLVE)
                derive(s2, dst, RESOLVE, min(c, conf[other]),
                       RULE_RESOLVE_TRANSITIVITY, (other, key))
            # Resolve(a, b) + Coref(c, b) -> Resolve(a, c)
            for c2 in sorted(in_by.get((dst, COREF), ())):
                other = (c2, dst, COREF)
                derive(src, c2, RESOLVE, min(c, conf[other]),
                       RULE_COREF_SUBSTITUTION, (key, other))
        if kind == COREF:
            # the same substitution triggered from the coref side
            for a in sorted(in_by.get((dst, RESOLVE), ())):
                other = (a, dst, RESOLVE)
                derive(a, src, RESOLVE, min(c, conf[other]),
                       RULE_COREF_SUBSTITUTION, (other, key))

    closed = ResolutionGraph(graph.doc, graph.nodes)
    for key in sorted(conf):
        src, dst, kind = key
        if key in input_keys:
            closed.edges[key] = graph.edges[key]
        else:
            closed.edges[key] = ResolutionLink(src, dst, kind, conf[key],
                                               prov[key])
        closed.nodes.add(src)
        closed.nodes.add(dst)
    closed.version = 1
    return closed


_RULE_CHECKS = {
    RULE_COREF_SYMMETRY: lambda ants, e: (
        len(ants) == 1 and ants[0][2] == COREF
        and (e.src, e.dst) == (ants[0][1], ants[0][0]) and e.kind == COREF),
    RULE_COREF_TRANSITIVITY: lambda ants, e: (
        len(ants) == 2 and all(a[2] == COREF for a in ants)
        and ants[0][1] == ants[1][0] and e.kind == COREF
        and (e.src, e.dst) == (ants[0][0], ants[1][1])),
    RULE_KIND_IMPLIES_RESOLVE: lambda ants, e: (
        len(ants) == 1 and ants[0][2] in _SUBSTITUTABLE and e.kind == RESOLVE
        and (e.src, e.dst) == (ants[0][0], ants[0][1])),
    RULE_RESOLVE_TRANSITIVITY: lambda ants, e: (
        len(ants) == 2 and all(a[2] == RESOLVE for a in ants)
        and ants[0][1] == ants[1][0] and e.kind == RESOLVE
        and (e.src, e.dst) == (ants[0][0], ants[1][1])),
    RULE_COREF_SUBSTITUTION: lambda ants, e: (
        len(ants) == 2 and ants[0][2] == RESOLVE and ants[1][2] == COREF
        and ants[0][1] == ants[1][1] and e.kind == RESOLVE
        and (e.src, e.dst) == (ants[0][0], ants[1][0])),
}


def replay_provenance(graph: ResolutionGraph, link: ResolutionLink) -> bool:
    """Check a closure edge re-derives from its recorded antecedents."""
    source = link.provenance.source
    if not source.startswith("closure:"):
        return True  # base links are their own evidence
    rule = source.split(":", 1)[1]
    check = _RULE_CHECKS.get(rule)
    ants = link.provenance.antecedents
    if check is None or not check(ants, link):
        return False
    confs = []
    for key in ants:
        if tuple(key) not in graph.edges:
            return False
        confs.append(graph.edges[tuple(key)].confidence)
    return math.isclose(min(confs), link.confidence, rel_tol=0, abs_tol=0.0)


# -- sieves -------------------------------------------------------------------


@dataclass
class Sieve:
    name: str
    apply: object  # callable(doc, graph, scorer, cfg) -> list[ResolutionLink]


def _exact_match_sieve(doc, graph, scorer, cfg):
    out = []
    by_surface: dict[str, list] = {}
    for m in doc.mentions_in_order():
        by_surface.setdefault(doc.mention_surface(m).casefold(), []).append(m)
    for group in by_surface.values():
        for a, b in itertools.combinations(group, 2):
            out.append(ResolutionLink(a.id, b.id, COREF, 1.0,
                                      Provenance("sieve:exact_match")))
    return out


def _parenthetical_sieve(doc, graph, scorer, cfg):
    out = []
    for x in doc.mentions_in_order():
        toks = doc.sentence(x.p, x.s).tokens
        if x.t1 + 1 <= len(toks) - 1 and toks[x.t1] == "(":
            y = _longest_mention_starting_at(doc, x.p, x.s, x.t1 + 1)
            if y is not None and y.id != x.id and y.t1 < len(toks) \
                    and toks[y.t1] == ")":
                out.append(ResolutionLink(x.id, y.id, ISA, 1.0,
                                          Provenance("sieve:parenthetical")))
    return out


def _apposition_sieve(doc, graph, scorer, cfg):
    out = []
    for x in doc.mentions_in_order():
        toks = doc.sentence(x.p, x.s).tokens
        if x.t1 + 2 <= len(toks) - 1 and toks[x.t1] == "," \
                and toks[x.t1 + 1].lower() in ("a", "an"):
            y = _longest_mention_starting_at(doc, x.p, x.s, x.t1 + 2)
            if y is not None and y.id != x.id:
                out.append(ResolutionLink(x.id, y.id, ISA, 1.0,
                                          Provenance("sieve:apposition")))
    return out


def _learned_sieve(doc, graph, scorer, cfg):
    if scorer is None:
        raise ConfigError("the learned sieve needs a pair scorer")
    threshold = cfg.get("sieve_threshold", SIEVE_THRESHOLD)
    out = []
    views = {m.id: build_mention_view(doc, doc.mentions[m.id])
             for m in doc.mentions_in_order()}
    order = [m.id for m in doc.mentions_in_order()]
    for a in order:
        for b in order:
            if a == b or graph.has_pair(a, b):
                continue
            p = scorer.score(doc, a, b, views=views)
            if p >= threshold:
                out.append(ResolutionLink(a, b, RESOLVE, p,
                                          Provenance("sieve:learned")))
    return out


EXACT_MATCH_SIEVE = Sieve("exact_match", _exact_match_sieve)
PARENTHETICAL_SIEVE = Sieve("parenthetical", _parenthetical_sieve)
APPOSITION_SIEVE = Sieve("apposition", _apposition_sieve)
LEARNED_SIEVE = Sieve("learned", _learned_sieve)

DEFAULT_SIEVES = (EXACT_MATCH_SIEVE, PARENTHETICAL_SIEVE, APPOSITION_SIEVE,
                  LEARNED_SIEVE)

SIEVES_BY_NAME = {s.name: s for s in DEFAULT_SIEVES}


def run_sieves(doc: Document, sieves=DEFAULT_SIEVES, scorer=None,
               cfg: dict | None = None) -> ResolutionGraph:
    """Apply sieves in order, most precise first.

    Every sieve sees the links its predecessors added; an edge present
    from an earlier tier is never overwritten by a later one.
    """
    cfg = cfg or {}
    graph = ResolutionGraph(doc.id, nodes=set(doc.mentions))
    for sieve in sieves:
        graph.add_links(sieve.apply(doc, graph, scorer, cfg))
    return graph


# -- pairwise scorer -----------------------------------------------------------


_COPULAS = ("is", "are", "was", "were")


@dataclass
class MentionView:
    """Cached per-mention features used by the pair scorer."""

    feats: dict[str, float]
    toks: frozenset
    chars: frozenset
    head: str
    surface: str
    p: int
    s: int
    t0: int
    t1: int


def _char_trigrams(s: str) -> frozenset:
    padded = f"^{s}$"
    return frozenset(padded[i:i + 3] for i in range(len(padded) - 2))


def build_mention_view(doc: Document, m) -> MentionView:
    raw = doc.mention_tokens(m)
    toks = tuple(t.lower() for t in raw)
    surface = " ".join(toks)
    feats: dict[str, float] = {}

    def add(f, v=1.0):
        feats[f] = v

    add(f"surf:{surface}")
    for t in toks:
        add(f"tok:{t}")
    add(f"head:{toks[-1]}")
    etype = doc.mention_type(m) or "np"
    add(f"type:{etype}")
    add(f"kind:{m.kind}")
    if any(ch.isdigit() for t in raw for ch in t):
        add("shape:digit")
    if any(ch.isupper() for t in raw for ch in t):
        add("shape:upper")
    add(f"len:{min(len(toks), 3)}")
    sent = doc.sentence(m.p, m.s).tokens
    left = sent[m.t0 - 1].lower() if m.t0 > 0 else "<s>"
    right = sent[m.t1].lower() if m.t1 < len(sent) else "</s>"
    add(f"lc1:{left}")
    add(f"rc1:{right}")
    if m.t0 > 1:
        add(f"lc2:{sent[m.t0 - 2].lower()}|{left}")
    chars = _char_trigrams(surface.replace(" ", ""))
    return MentionView(feats=feats, toks=frozenset(toks), chars=chars,
                       head=toks[-1], surface=surface,
                       p=m.p, s=m.s, t0=m.t0, t1=m.t1)


def _jaccard(a: frozenset, b: frozenset) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def pair_feature_strings(doc: Document, mv: MentionView,
                         nv: MentionView) -> dict[str, float]:
    """Interaction features of a mention pair, computed from the views."""
    out: dict[str, float] = {}
    out["tok_jac"] = _jaccard(mv.toks, nv.toks)
    out["c3_jac"] = _jaccard(mv.chars, nv.chars)
    if mv.head == nv.head:
        out["same_head"] = 1.0
    if mv.surface == nv.surface:
        out["same_surface"] = 1.0
    ta = next((f[5:] for f in mv.feats if f.startswith("type:")), "np")
    tb = next((f[5:] for f in nv.feats if f.startswith("type:")), "np")
    if ta == tb:
        out["same_type"] = 1.0
    out[f"types:{ta}|{tb}"] = 1.0
    if mv.p == nv.p:
        out["same_paragraph"] = 1.0
        out[f"sdist:{min(abs(mv.s - nv.s), 3)}"] = 1.0
    else:
        out[f"pdist:{min(abs(mv.p - nv.p), 3)}"] = 1.0
    if (mv.p, mv.s) == (nv.p, nv.s):
        out["same_sentence"] = 1.0
        first, second = (mv, nv) if mv.t0 <= nv.t0 else (nv, mv)
        if mv.t0 <= nv.t0:
            out["m_first"] = 1.0
        gap = doc.sentence(mv.p, mv.s).tokens[first.t1:second.t0]
        gap = [t.lower() for t in gap]
        if 0 < len(gap) <= 4:
            if "," in gap:
                out["btw_comma"] = 1.0
            if "a" in gap or "an" in gap:
                out["btw_article"] = 1.0
            if any(t in _COPULAS for t in gap):
                out["btw_copula"] = 1.0
            if "(" in gap:
                out["btw_paren"] = 1.0
            if len(gap) <= 3:
                out[f"btw:{'|'.join(gap)}"] = 1.0
    out[f"lendiff:{min(abs(len(mv.toks) - len(nv.toks)), 3)}"] = 1.0
    return out


PAIR_FEATURE_RECIPE = (
    "per-mention lexical/head/type/context features scored twice (shared "
    "mention weights plus side-specific weights), their elementwise "
    "product, and aggregate pair interactions (token/char overlap, "
    "matching head/type, positional and between-token cues)")


def _h(feat: str, dim: int) -> int:
    import zlib
    return zlib.crc32(feat.encode("utf-8")) % dim


@dataclass
class PairScorer:
    """sigmoid(s_m(x) + s_m(y) + s_c(x, y)) as one sparse linear model.

    s_m is a shared per-mention score (the "m:" feature block applied to
    both sides); s_c covers the side-specific blocks ("cx:"/"cy:"),
    their elementwise product ("cxy:") and the aggregate pair features
    ("pi:"). Linearity makes the whole thing one logistic regression.
    """

    model: SparseLogistic
    dim: int = DEFAULT_DIM
    features: str = PAIR_FEATURE_RECIPE

    @classmethod
    def fresh(cls, dim: int = DEFAULT_DIM) -> "PairScorer":
        return cls(model=SparseLogistic(dim=dim), dim=dim)

    def feature_strings(self, doc, m_id, n_id, views=None):
        if views is None:
            views = {}
        for mid in (m_id, n_id):
            if mid not in views:
                views[mid] = build_mention_view(doc, doc.mentions[mid])
        mv, nv = views[m_id], views[n_id]
        acc: dict[str, float] = {}
        for f, v in mv.feats.items():
            acc[f"m:{f}"] = acc.get(f"m:{f}", 0.0) + v
            acc[f"cx:{f}"] = v
        for f, v in nv.feats.items():
            acc[f"m:{f}"] = acc.get(f"m:{f}", 0.0) + v
            acc[f"cy:{f}"] = v
        for f, v in mv.feats.items():
            if f in nv.feats:
                acc[f"cxy:{f}"] = v * nv.feats[f]
        for f, v in pair_feature_strings(doc, mv, nv).items():
            acc[f"pi:{f}"] = v
        return acc

    def featurize(self, doc, m_id, n_id, views=None) -> dict[int, float]:
        out: dict[int, float] = {}
        for f, v in self.feature_strings(doc, m_id, n_id, views).items():
            i = _h(f, self.dim)
            out[i] = out.get(i, 0.0) + v
        return out

    def score(self, doc, m_id, n_id, views=None) -> float:
        return self.model.prob(self.featurize(doc, m_id, n_id, views))

    def loss_and_grad(self, samples, targets, views=None):
        xs = [self.featurize(doc, m, n, views) for doc, m, n in samples]
        return self.model.loss_and_grad(xs, targets)

    def to_dict(self) -> dict:
        return {"kind": "native_pair", "features": self.features,
                "params": self.model.params_to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "PairScorer":
        model = SparseLogistic.params_from_dict(d["params"])
        return cls(model=model, dim=model.dim,
                   features=d.get("features", PAIR_FEATURE_RECIPE))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "PairScorer":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def score_pair(scorer, doc: Document, m_id: str, n_id: str,
               views=None) -> float:
    """Probability that m may substitute into n's argument slot."""
    p = scorer.score(doc, m_id, n_id, views=views)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"pair scorer returned probability out of range: {p}")
    eps = 1e-9
    return min(max(p, eps), 1.0 - eps)


@dataclass
class PairSample:
    doc: Document
    m: str
    n: str
    label: float


def train_pair_scorer(samples, cfg: TrainConfig | None = None,
                      dim: int = DEFAULT_DIM):
    """Fit the pairwise scorer on labeled mention pairs."""
    cfg = cfg or TrainConfig()
    scorer = PairScorer.fresh(dim=dim)
    view_cache: dict[str, dict] = {}
    xs = []
    for s in samples:
        views = view_cache.setdefault(s.doc.id, {})
        xs.append(scorer.featurize(s.doc, s.m, s.n, views=views))
    qs = [float(s.label) for s in samples]
    model, history = train_logistic(xs, qs, cfg, dim)
    scorer.model = model
    return scorer, history


# -- graph dump ----------------------------------------------------------------


def save_graph(graph: ResolutionGraph, fh) -> None:
    """Write one link per line, deterministically ordered."""
    for link in graph.links():
        fh.write(json.dumps({
            "doc": graph.doc, "from": link.src, "to": link.dst,
            "kind": link.kind, "conf": round(link.confidence, 9),
            "provenance": link.provenance.to_dict(),
        }, sort_keys=True) + "\n")


def load_graph_records(fh):
    """Yield (doc_id, ResolutionLink) pairs from a dump."""
    for line in fh:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        yield rec["doc"], ResolutionLink(
            rec["from"], rec["to"], rec["kind"], rec["conf"],
            Provenance.from_dict(rec.get("provenance", {"source": "dump"})))
