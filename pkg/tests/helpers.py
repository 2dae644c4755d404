"""Shared builders for test documents."""

from __future__ import annotations

import random

from docrex.corpus import (
    CANDIDATE_NP,
    NAMED,
    Document,
    Entity,
    Mention,
    Paragraph,
    Sentence,
)


def _find_occurrences(tokens, phrase_tokens, fold_case=False):
    n = len(phrase_tokens)
    if fold_case:
        tokens = [t.casefold() for t in tokens]
        phrase_tokens = [t.casefold() for t in phrase_tokens]
    for i in range(len(tokens) - n + 1):
        if tokens[i:i + n] == list(phrase_tokens):
            yield i, i + n


def make_doc(doc_id, paragraphs, entities=(), nps=()):
    """Build a document from sentence strings.

    paragraphs: list of paragraphs, each a list of sentence strings
        (whitespace-tokenized).
    entities: iterable of (entity_id, type, name); every exact token
        occurrence of the name becomes a named mention linked to it.
    nps: iterable of phrases; every occurrence becomes an unlinked
        candidate noun phrase mention.
    """
    paras = tuple(
        Paragraph(tuple(Sentence(tuple(s.split())) for s in para))
        for para in paragraphs)
    mentions = {}
    ent_mentions = {eid: [] for eid, _, _ in entities}
    counter = 0

    def add_mention(kind, entity, p, s, t0, t1):
        nonlocal counter
        mid = f"m{counter}"
        counter += 1
        mentions[mid] = Mention(id=mid, kind=kind, entity=entity,
                                p=p, s=s, t0=t0, t1=t1)
        return mid

    for p, para in enumerate(paras):
        for s, sent in enumerate(para.sentences):
            toks = list(sent.tokens)
            for eid, _, name in entities:
                for t0, t1 in _find_occurrences(toks, name.split()):
                    mid = add_mention(NAMED, eid, p, s, t0, t1)
                    ent_mentions[eid].append(mid)
            for phrase in nps:
                for t0, t1 in _find_occurrences(toks, phrase.split()):
                    add_mention(CANDIDATE_NP, None, p, s, t0, t1)

    ents = {eid: Entity(id=eid, type=typ, name=name,
                        mentions=tuple(ent_mentions[eid]))
            for eid, typ, name in entities}
    doc = Document(id=doc_id, paragraphs=paras, entities=ents,
                   mentions=mentions)
    doc.validate()
    return doc


def random_doc(rng: random.Random, doc_id="d", max_paras=4, max_sents=4,
               max_tokens=10, entity_specs=None):
    """A random well-formed document for property-style checks."""
    if entity_specs is None:
        entity_specs = [("e_d", "drug", f"drug{rng.randrange(100)}"),
                        ("e_g", "gene", f"GENE{rng.randrange(100)}"),
                        ("e_m", "mutation", f"K{rng.randrange(100)}T")]
    filler = ["the", "was", "observed", "in", "cells", "with", "and",
              "treated", "response", "to", "study", "cohort"]
    paragraphs = []
    for _ in range(rng.randint(1, max_paras)):
        para = []
        for _ in range(rng.randint(1, max_sents)):
            toks = [rng.choice(filler) for _ in range(rng.randint(2, max_tokens))]
            # sprinkle entity names
            for _, _, name in entity_specs:
                if rng.random() < 0.4:
                    pos = rng.randrange(len(toks) + 1)
                    toks[pos:pos] = name.split()
            para.append(" ".join(toks))
        paragraphs.append(para)
    return make_doc(doc_id, paragraphs, entities=entity_specs)
