"""Distant supervision for the relation detector.

Labels come from a fact knowledge base: a segment whose co-occurring
entity pair matches a KB fact becomes a positive example, a co-occurring
pair absent from the KB becomes a negative candidate. Two restrictions
keep the noise down:

(1) an example's text never exceeds the segment limit and never spans
    paragraphs (structural: examples are built from enumerated
    segments only);
(2) positives for an entity pair are kept only when the pair co-occurs
    in at least ``min_segments`` segments of the document; a single
    co-occurrence is too often incidental.

Negatives are sampled down to ``negative_ratio`` times the positive
count, and the balanced batch stream presents both polarities 50/50 to
the trainer regardless of that ratio.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field

from . import optim
from .config import ConfigError, coerce_dataclass, load_toml
from .corpus import Document, canonical_name, co_occurring_pairs, enumerate_segments
from .relation import DummifyError, RelationScheme, dummify

log = logging.getLogger(__name__)


class KBError(ValueError):
    """Malformed knowledge base file."""


@dataclass
class KnowledgeBase:
    """Facts as (relation, canonical argument tuple)."""

    facts: set = field(default_factory=set)
    arity: dict = field(default_factory=dict)

    def add(self, relation: str, args) -> None:
        names = tuple(canonical_name(a) for a in args)
        known = self.arity.get(relation)
        if known is not None and known != len(names):
            raise KBError(f"relation {relation!r} used with arity {len(names)} "
                          f"but previously {known}")
        self.arity[relation] = len(names)
        self.facts.add((relation, names))

    def has(self, relation: str, args) -> bool:
        return (relation, tuple(canonical_name(a) for a in args)) in self.facts

    def projection(self, relation: str, idx_a: int, idx_b: int) -> set:
        """Canonical name pairs at two argument positions of a relation."""
        return {(args[idx_a], args[idx_b])
                for rel, args in self.facts if rel == relation}

    def __len__(self):
        return len(self.facts)


def load_kb(path) -> KnowledgeBase:
    kb = KnowledgeBase()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                kb.add(rec["relation"], rec["args"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise KBError(f"{path}: line {lineno}: {exc}") from exc
    return kb


def save_kb(kb: KnowledgeBase, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for relation, args in sorted(kb.facts):
            fh.write(json.dumps({"relation": relation, "args": list(args)}) + "\n")


@dataclass
class DSConfig:
    k_max: int = 2
    min_segments: int = 2
    negative_ratio: float = 5.0
    seed: int = 7
    relation: str = "response"

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError(f"k_max must be >= 1, got {self.k_max}")
        if self.min_segments < 1:
            raise ValueError(f"min_segments must be >= 1, got {self.min_segments}")
        if self.negative_ratio < 0:
            raise ValueError("negative_ratio must be >= 0")

    @classmethod
    def from_toml(cls, path) -> "DSConfig":
        return coerce_dataclass(cls, load_toml(path), where=str(path))


@dataclass
class LabeledExample:
    """A dummified segment with a soft target and its provenance."""

    template: tuple[str, ...]
    label: float
    polarity: str               # "positive" | "negative"
    provenance: dict = field(default_factory=dict)


def _candidate_examples(doc: Document, kb_pairs: set, cfg: DSConfig,
                        scheme: RelationScheme):
    """All co-occurrence examples of the anchor pair in one document.

    Returns (examples, segment_counts) where segment_counts maps an
    entity-id pair to the number of distinct segments it co-occurs in.
    """
    role_a, role_b = scheme.anchor
    examples = []
    seg_counts: dict[tuple[str, str], set] = {}
    for seg in enumerate_segments(doc, cfg.k_max):
        for mid_a, mid_b in co_occurring_pairs(doc, seg, (role_a, role_b)):
            m_a, m_b = doc.mentions[mid_a], doc.mentions[mid_b]
            ent_pair = (m_a.entity, m_b.entity)
            name_pair = (canonical_name(doc.entities[m_a.entity].name),
                         canonical_name(doc.entities[m_b.entity].name))
            positive = name_pair in kb_pairs
            try:
                template = dummify(doc, seg, {role_a: mid_a, role_b: mid_b},
                                   scheme)
            except DummifyError:
                continue  # overlapping spans cannot be dummified
            seg_counts.setdefault(ent_pair, set()).add((seg.p, seg.s0, seg.s1))
            examples.append(LabeledExample(
                template=template,
                label=1.0 if positive else 0.0,
                polarity="positive" if positive else "negative",
                provenance={
                    "source": "distant_supervision",
                    "doc": doc.id,
                    "pair": list(ent_pair),
                    "names": list(name_pair),
                    "mentions": [mid_a, mid_b],
                    "segment": [seg.p, seg.s0, seg.s1],
                    "fact": ([scheme.relation, *name_pair] if positive else None),
                }))
    counts = {pair: len(segs) for pair, segs in seg_counts.items()}
    return examples, counts


def apply_noise_filters(candidates, cfg: DSConfig):
    """Enforce both noise restrictions on a candidate pool.

    Restriction (1) is re-checked from provenance: a segment wider than
    k_max sentences is a hard error since no example should ever have
    been built from one. Restriction (2) drops positive groups whose
    per-document segment count is below min_segments; negatives pass
    through untouched.
    """
    counts: dict[tuple, set] = {}
    for ex in candidates:
        p, s0, s1 = ex.provenance["segment"]
        if s1 - s0 + 1 > cfg.k_max:
            raise ValueError(
                f"candidate segment spans {s1 - s0 + 1} sentences, over the "
                f"k_max={cfg.k_max} limit; segments must come from "
                f"enumerate_segments")
        key = (ex.provenance["doc"], tuple(ex.provenance["pair"]))
        counts.setdefault(key, set()).add((p, s0, s1))
    kept = []
    for ex in candidates:
        if ex.polarity == "positive":
            key = (ex.provenance["doc"], tuple(ex.provenance["pair"]))
            if len(counts[key]) < cfg.min_segments:
                continue
        kept.append(ex)
    return kept


def generate_relation_examples(corpus, kb: KnowledgeBase, cfg: DSConfig,
                               scheme: RelationScheme = RelationScheme()):
    """Build the DS training set for the anchor subrelation.

    Positives are KB-matched co-occurrences surviving the noise filters;
    negatives are sampled from the non-KB co-occurrences at
    cfg.negative_ratio per positive (all of them if fewer exist).
    """
    if cfg.relation not in kb.arity:
        raise ConfigError(
            f"relation {cfg.relation!r} is absent from the knowledge base "
            f"(known: {sorted(kb.arity)})")
    idx_a = scheme.roles.index(scheme.anchor[0])
    idx_b = scheme.roles.index(scheme.anchor[1])
    kb_pairs = kb.projection(cfg.relation, idx_a, idx_b)

    candidates = []
    for doc in corpus:
        examples, _ = _candidate_examples(doc, kb_pairs, cfg, scheme)
        candidates.extend(examples)
    kept = apply_noise_filters(candidates, cfg)

    positives = [ex for ex in kept if ex.polarity == "positive"]
    negatives = [ex for ex in kept if ex.polarity == "negative"]
    want_neg = int(round(cfg.negative_ratio * len(positives)))
    if len(negatives) > want_neg:
        rng = random.Random(cfg.seed)
        negatives = rng.sample(negatives, want_neg)
    log.info("distant supervision: %d positives, %d negatives (of %d candidates)",
             len(positives), len(negatives), len(candidates))
    return positives + negatives


def balanced_batches(examples, batch_size: int = 32, seed: int = 7):
    """Endless stream of minibatches with an expected 50/50 polarity mix.

    Deterministic for a fixed seed. Raises if either polarity pool is
    empty.
    """
    polarities = [ex.polarity == "positive" for ex in examples]
    stream = optim.balanced_index_stream(polarities, batch_size, seed)
    for batch in stream:
        yield [examples[i] for i in batch]


def save_examples(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "template": list(ex.template), "label": ex.label,
                "polarity": ex.polarity, "provenance": ex.provenance,
            }, sort_keys=True) + "\n")


def load_examples(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(LabeledExample(
                template=tuple(rec["template"]), label=rec["label"],
                polarity=rec["polarity"], provenance=rec.get("provenance", {})))
    return out
