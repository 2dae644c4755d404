"""Document model and corpus IO.

A corpus is a JSONL file, one document per line:

    {"id": "...",
     "paragraphs": [{"sentences": [{"tokens": ["..."]}]}],
     "entities":   [{"id": "...", "type": "drug", "name": "...",
                     "mentions": ["m1", ...]}],
     "mentions":   [{"id": "m1", "entity": "e1", "kind": "named",
                     "p": 0, "s": 0, "t0": 3, "t1": 5}]}

Mention spans are half-open token ranges [t0, t1) inside a single
sentence, addressed by paragraph index ``p`` and sentence index ``s``.
A mention either carries an entity link (``kind == "named"``, usually)
or is an unlinked candidate noun phrase (``kind == "candidate_np"``).

Segments are contiguous sentence windows inside one paragraph; they are
the only unit the relation detector ever sees, so nothing here lets a
window cross a paragraph boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

# mention kinds
NAMED = "named"
CANDIDATE_NP = "candidate_np"
MENTION_KINDS = (NAMED, CANDIDATE_NP)

# the entity types the default extraction scheme cares about; corpora may
# carry other type tags, they just never match a typed query
DRUG = "drug"
GENE = "gene"
MUTATION = "mutation"


class CorpusError(ValueError):
    """Base error for corpus loading and validation."""


class CorpusFormatError(CorpusError):
    """A record could not be parsed; message names the offending line."""


class ValidationError(CorpusError):
    """A parsed record violates a document invariant."""


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Paragraph:
    sentences: tuple[Sentence, ...]


@dataclass(frozen=True)
class Mention:
    """A token span inside one sentence.

    ``entity`` is the id of the linked entity, or None for unlinked
    candidate noun phrases.
    """

    id: str
    kind: str
    p: int
    s: int
    t0: int
    t1: int
    entity: str | None = None

    def order_key(self) -> tuple:
        return (self.p, self.s, self.t0, self.t1, self.id)


@dataclass(frozen=True)
class Entity:
    id: str
    type: str
    name: str
    mentions: tuple[str, ...] = ()


@dataclass
class Document:
    id: str
    paragraphs: tuple[Paragraph, ...]
    entities: dict[str, Entity] = field(default_factory=dict)
    mentions: dict[str, Mention] = field(default_factory=dict)

    # -- convenience accessors ------------------------------------------

    def sentence(self, p: int, s: int) -> Sentence:
        return self.paragraphs[p].sentences[s]

    def mention_tokens(self, m: Mention) -> tuple[str, ...]:
        return self.sentence(m.p, m.s).tokens[m.t0:m.t1]

    def mention_surface(self, m: Mention) -> str:
        return " ".join(self.mention_tokens(m))

    def mention_type(self, m: Mention) -> str | None:
        if m.entity is None:
            return None
        return self.entities[m.entity].type

    def mentions_in_order(self) -> list[Mention]:
        return sorted(self.mentions.values(), key=Mention.order_key)

    def mentions_of(self, entity_id: str) -> list[Mention]:
        ent = self.entities[entity_id]
        return [self.mentions[mid] for mid in ent.mentions]

    def entity_by_name(self, name: str) -> Entity | None:
        wanted = canonical_name(name)
        for ent in self.entities.values():
            if canonical_name(ent.name) == wanted:
                return ent
        return None

    def validate(self) -> None:
        """Raise ValidationError on the first violated invariant."""
        seen_mention_ids = set()
        for m in self.mentions.values():
            if m.id in seen_mention_ids:
                raise ValidationError(f"doc {self.id}: duplicate mention id {m.id!r}")
            seen_mention_ids.add(m.id)
            if m.kind not in MENTION_KINDS:
                raise ValidationError(
                    f"doc {self.id}: mention {m.id!r} has unknown kind {m.kind!r}")
            if not (0 <= m.p < len(self.paragraphs)):
                raise ValidationError(
                    f"doc {self.id}: mention {m.id!r} paragraph {m.p} out of range")
            sentences = self.paragraphs[m.p].sentences
            if not (0 <= m.s < len(sentences)):
                raise ValidationError(
                    f"doc {self.id}: mention {m.id!r} sentence {m.s} out of range")
            ntok = len(sentences[m.s].tokens)
            if not (0 <= m.t0 < m.t1 <= ntok):
                raise ValidationError(
                    f"doc {self.id}: mention {m.id!r} span [{m.t0},{m.t1}) does not "
                    f"fit inside sentence of {ntok} tokens (spans never cross "
                    f"sentence boundaries)")
            if m.entity is not None:
                if m.entity not in self.entities:
                    raise ValidationError(
                        f"doc {self.id}: mention {m.id!r} links to missing entity "
                        f"{m.entity!r}")
                if m.id not in self.entities[m.entity].mentions:
                    raise ValidationError(
                        f"doc {self.id}: mention {m.id!r} links to entity "
                        f"{m.entity!r} which does not list it back")
            if m.kind == CANDIDATE_NP and m.entity is not None:
                raise ValidationError(
                    f"doc {self.id}: candidate noun phrase {m.id!r} must not carry "
                    f"an entity link")
        for ent in self.entities.values():
            if not ent.name:
                raise ValidationError(f"doc {self.id}: entity {ent.id!r} has no name")
            for mid in ent.mentions:
                if mid not in self.mentions:
                    raise ValidationError(
                        f"doc {self.id}: entity {ent.id!r} lists missing mention "
                        f"{mid!r}")
                if self.mentions[mid].entity != ent.id:
                    raise ValidationError(
                        f"doc {self.id}: entity {ent.id!r} lists mention {mid!r} "
                        f"which is not linked to it")


@dataclass(frozen=True)
class Segment:
    """A window of consecutive sentences s0..s1 (inclusive) in paragraph p."""

    doc: str
    p: int
    s0: int
    s1: int
    mentions: tuple[str, ...]

    def n_sentences(self) -> int:
        return self.s1 - self.s0 + 1

    def contains(self, m: Mention) -> bool:
        return m.p == self.p and self.s0 <= m.s <= self.s1


def canonical_name(name: str) -> str:
    """Case-insensitive canonical form used for KB lookups and queries."""
    return " ".join(name.casefold().split())


def segment_tokens(doc: Document, seg: Segment) -> tuple[str, ...]:
    """Concatenated tokens of the segment's sentences, in order."""
    out: list[str] = []
    for s in range(seg.s0, seg.s1 + 1):
        out.extend(doc.sentence(seg.p, s).tokens)
    return tuple(out)


def segment_text(doc: Document, seg: Segment) -> str:
    return " ".join(segment_tokens(doc, seg))


# -- JSONL IO -----------------------------------------------------------


def document_from_record(rec: dict) -> Document:
    try:
        doc_id = rec["id"]
        paragraphs = tuple(
            Paragraph(tuple(Sentence(tuple(sent["tokens"]))
                            for sent in para["sentences"]))
            for para in rec["paragraphs"])
        entities = {}
        for e in rec.get("entities", []):
            ent = Entity(id=e["id"], type=e["type"], name=e["name"],
                         mentions=tuple(e.get("mentions", ())))
            if ent.id in entities:
                raise ValidationError(f"doc {doc_id}: duplicate entity id {ent.id!r}")
            entities[ent.id] = ent
        mentions = {}
        for m in rec.get("mentions", []):
            men = Mention(id=m["id"], kind=m["kind"], p=m["p"], s=m["s"],
                          t0=m["t0"], t1=m["t1"], entity=m.get("entity"))
            if men.id in mentions:
                raise ValidationError(f"doc {doc_id}: duplicate mention id {men.id!r}")
            mentions[men.id] = men
    except KeyError as exc:
        raise CorpusFormatError(f"record is missing field {exc}") from exc
    doc = Document(id=doc_id, paragraphs=paragraphs,
                   entities=entities, mentions=mentions)
    doc.validate()
    return doc


def document_to_record(doc: Document) -> dict:
    return {
        "id": doc.id,
        "paragraphs": [
            {"sentences": [{"tokens": list(s.tokens)} for s in p.sentences]}
            for p in doc.paragraphs],
        "entities": [
            {"id": e.id, "type": e.type, "name": e.name,
             "mentions": list(e.mentions)}
            for e in sorted(doc.entities.values(), key=lambda e: e.id)],
        "mentions": [
            {"id": m.id, **({"entity": m.entity} if m.entity else {}),
             "kind": m.kind, "p": m.p, "s": m.s, "t0": m.t0, "t1": m.t1}
            for m in doc.mentions_in_order()],
    }


def load_corpus(path) -> list[Document]:
    """Load a JSONL corpus; documents come back sorted by id.

    Raises CorpusFormatError naming the line number for unparseable
    records, ValidationError for structurally broken ones or for
    duplicate document ids.
    """
    docs: dict[str, Document] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
            try:
                doc = document_from_record(rec)
            except CorpusFormatError as exc:
                raise CorpusFormatError(f"{path}: line {lineno}: {exc}") from exc
            if doc.id in docs:
                raise ValidationError(
                    f"{path}: line {lineno}: duplicate document id {doc.id!r}")
            docs[doc.id] = doc
    return [docs[k] for k in sorted(docs)]


def save_corpus(docs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(document_to_record(doc), sort_keys=False) + "\n")


# -- segment and pair enumeration ---------------------------------------


def enumerate_segments(doc: Document, k_max: int = 2) -> list[Segment]:
    """All windows of 1..k_max consecutive sentences, per paragraph.

    Windows never cross a paragraph boundary. Order is reading order:
    by paragraph, then start sentence, then window end.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    by_pos: dict[tuple[int, int], list[Mention]] = {}
    for m in doc.mentions_in_order():
        by_pos.setdefault((m.p, m.s), []).append(m)
    segments = []
    for p, para in enumerate(doc.paragraphs):
        n = len(para.sentences)
        for s0 in range(n):
            for s1 in range(s0, min(s0 + k_max, n)):
                mids = []
                for s in range(s0, s1 + 1):
                    mids.extend(m.id for m in by_pos.get((p, s), ()))
                segments.append(Segment(doc=doc.id, p=p, s0=s0, s1=s1,
                                        mentions=tuple(mids)))
    return segments


def co_occurring_pairs(doc: Document, seg: Segment,
                       type_pair: tuple[str, str]) -> list[tuple[str, str]]:
    """Ordered mention-id pairs inside the segment matching the type pair.

    Types come from the linked entity, so unlinked candidate phrases
    never match. A mention is never paired with itself.
    """
    ta, tb = type_pair
    firsts = [mid for mid in seg.mentions
              if doc.mention_type(doc.mentions[mid]) == ta]
    seconds = [mid for mid in seg.mentions
               if doc.mention_type(doc.mentions[mid]) == tb]
    return [(a, b) for a in firsts for b in seconds if a != b]
