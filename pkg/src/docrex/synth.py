"""Synthetic corpora with known ground truth.

Documents are assembled from sentence templates around planted
drug-gene-mutation facts. A fact's drug evidence either names the drug
inside the relation-bearing paragraph or routes through a chain: the
relation sentence uses a class phrase ("the KRTF inhibitor"), an
earlier paragraph introduces the drug with an appositive, and the two
phrase occurrences match exactly. Chains come in two flavors: ones the
appositive seed rule catches, and near-miss variants with an adjective
inserted ("a novel KRTF inhibitor") that only a learned scorer will
link. Distractor sentences mention a drug near a mutation without any
relational cue; they back the labeled negatives.

Knowledge-base facts and gold facts use disjoint drug and mutation
pools, so nothing the detector saw as distant supervision reappears in
evaluation. Every cross-paragraph positive ships a certificate: the
base links of its chain and the resolve edge their closure must
produce.

Generation is deterministic for a seed: same config, same bytes.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass, field

from .config import coerce_dataclass, load_toml
from .corpus import (
    CANDIDATE_NP,
    DRUG,
    GENE,
    MUTATION,
    NAMED,
    Document,
    Entity,
    Mention,
    Paragraph,
    Sentence,
)
from .supervision import KnowledgeBase


@dataclass
class SynthConfig:
    num_docs: int = 200
    seed: int = 7
    relation: str = "response"
    cross_paragraph_fraction: float = 0.0   # of gold-positive documents
    learnable_fraction: float = 0.5         # of cross-paragraph chains
    kb_doc_fraction: float = 0.25
    negative_doc_fraction: float = 0.2
    negative_chain_fraction: float = 0.5    # of negative docs: phrase-chain bait
    distractor_rate: float = 0.3            # extra distractor in positive docs
    np_noise_rate: float = 0.15             # stray class-phrase sentence
    n_kb_facts: int = 12
    n_drugs: int = 36
    n_genes: int = 18
    n_mutations: int = 40

    def __post_init__(self):
        for name in ("cross_paragraph_fraction", "learnable_fraction",
                     "kb_doc_fraction", "negative_doc_fraction",
                     "negative_chain_fraction", "distractor_rate",
                     "np_noise_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.kb_doc_fraction + self.negative_doc_fraction >= 1.0:
            raise ValueError("kb and negative fractions leave no room for "
                             "positive documents")
        if self.num_docs < 1:
            raise ValueError("num_docs must be positive")
        for name in ("n_kb_facts", "n_drugs", "n_genes", "n_mutations"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_toml(cls, path) -> "SynthConfig":
        return coerce_dataclass(cls, load_toml(path), where=str(path))


@dataclass
class SynthResult:
    documents: list
    kb: KnowledgeBase
    gold: list            # {"doc","drug","gene","mutation","label"}
    certificates: list    # {"doc","drug","base":[[s,d,kind]..],"goal":[s,d,kind]}


# -- vocabulary ---------------------------------------------------------------

_SYLLABLES = ("ba", "co", "da", "fe", "gi", "lu", "ma", "ne",
              "pa", "ro", "sa", "tu", "ve", "zo", "ki", "bre")
_DRUG_SUFFIXES = ("nib", "mab", "tinib", "ciclib")


def _make_vocab(rng: random.Random, cfg: SynthConfig):
    drugs, genes, mutations = [], [], []
    used = set()
    while len(drugs) < cfg.n_drugs:
        name = "".join(rng.choice(_SYLLABLES)
                       for _ in range(rng.randint(2, 3)))
        name += rng.choice(_DRUG_SUFFIXES)
        if name not in used:
            used.add(name)
            drugs.append(name)
    while len(genes) < cfg.n_genes:
        name = "".join(rng.choice(string.ascii_uppercase)
                       for _ in range(rng.randint(3, 4)))
        if rng.random() < 0.4:
            name += str(rng.randint(1, 9))
        if name not in used:
            used.add(name)
            genes.append(name)
    while len(mutations) < cfg.n_mutations:
        name = (rng.choice(string.ascii_uppercase)
                + str(rng.randint(10, 9999))
                + rng.choice(string.ascii_uppercase))
        if name not in used:
            used.add(name)
            mutations.append(name)
    return drugs, genes, mutations


# -- sentence templates -------------------------------------------------------
#
# A plan is a list of parts; strings are literal token runs, tuples are
# (slot, surface) placements that become mentions.

_CUE_TEMPLATES = (
    ("cells with", ("mutation",), "were sensitive to", ("drug",), "."),
    (("mutation",), "conferred sensitivity to", ("drug",), "."),
    ("patients harboring", ("mutation",), "responded to", ("drug",), "."),
    (("drug",), "inhibited growth of", ("mutation",), "positive cells ."),
)

_DISTRACTOR_TEMPLATES = (
    (("drug",), "and", ("mutation",), "were discussed ."),
    (("drug",), "was studied alongside", ("mutation",), "."),
    ("the report mentioned", ("drug",), "near", ("mutation",), "."),
    (("drug",), "trials excluded", ("mutation",), "carriers ."),
)

_GENE_TEMPLATES = (
    ("the", ("gene",), ("mutation",), "variant was genotyped ."),
    ("sequencing confirmed the", ("gene",), ("mutation",), "allele ."),
)

_FILLER = (
    "the cohort was large .",
    "samples were sequenced in duplicate .",
    "clinical notes were reviewed .",
    "the assay passed quality control .",
    "follow up continued for two years .",
    "enrollment closed early .",
)

_APPOS_MIDS = ("was administered", "entered the trial", "was evaluated",
               "showed activity")
_NEAR_MISS_ADJ = ("novel", "selective", "potent", "known")


def _realize(parts, fillers):
    """Expand a template into (tokens, placements).

    placements: list of (slot_name, t0, t1).
    """
    tokens = []
    placements = []
    for part in parts:
        if isinstance(part, tuple):
            slot = part[0]
            surface = fillers[slot]
            t0 = len(tokens)
            tokens.extend(surface.split())
            placements.append((slot, t0, len(tokens)))
        else:
            tokens.extend(part.split())
    return tokens, placements


def _np_mentions(np_surface, t0):
    """A class phrase plus its nested gene mention.

    Candidate phrases only count as argument fillers when they contain
    a typed mention, so every planted phrase carries one.
    """
    words = np_surface.split()
    return [(CANDIDATE_NP, None, np_surface, t0, t0 + len(words)),
            (NAMED, GENE, words[0], t0, t0 + 1)]


class _DocBuilder:
    """Accumulates sentences and mention placements, then freezes a Document."""

    def __init__(self, doc_id):
        self.doc_id = doc_id
        self.paragraphs = []       # list of list of token-lists
        self.placed = []           # (p, s, t0, t1, kind, etype, name)

    def new_paragraph(self):
        self.paragraphs.append([])

    def add_sentence(self, tokens, mentions=()):
        p = len(self.paragraphs) - 1
        s = len(self.paragraphs[p])
        self.paragraphs[p].append(list(tokens))
        for kind, etype, name, t0, t1 in mentions:
            self.placed.append((p, s, t0, t1, kind, etype, name))

    def build(self) -> Document:
        paras = tuple(Paragraph(tuple(Sentence(tuple(toks)) for toks in para))
                      for para in self.paragraphs)
        entity_key = {}
        entities = {}
        mentions = {}
        ent_mentions = {}
        for i, (p, s, t0, t1, kind, etype, name) in enumerate(
                sorted(self.placed, key=lambda r: r[:4])):
            mid = f"m{i}"
            eid = None
            if kind == NAMED:
                key = (etype, name)
                if key not in entity_key:
                    eid = f"e{len(entity_key)}"
                    entity_key[key] = eid
                    ent_mentions[eid] = []
                eid = entity_key[key]
                ent_mentions[eid].append(mid)
            mentions[mid] = Mention(id=mid, kind=kind, entity=eid,
                                    p=p, s=s, t0=t0, t1=t1)
        for (etype, name), eid in entity_key.items():
            entities[eid] = Entity(id=eid, type=etype, name=name,
                                   mentions=tuple(ent_mentions[eid]))
        doc = Document(id=self.doc_id, paragraphs=paras, entities=entities,
                       mentions=mentions)
        doc.validate()
        return doc

    def mention_id_at(self, doc, p, s, t0):
        for m in doc.mentions.values():
            if (m.p, m.s, m.t0) == (p, s, t0):
                return m.id
        raise LookupError(f"no mention at ({p}, {s}, {t0})")


def _cue_sentence(builder, rng, drug_name, mut_name, drug_as_np=False,
                  np_surface=None):
    parts = rng.choice(_CUE_TEMPLATES)
    mentions = []
    tokens = []
    for part in parts:
        if isinstance(part, tuple):
            slot = part[0]
            if slot == "drug" and drug_as_np:
                # same token shape as a named drug so the dummified
                # template is identical either way
                t0 = len(tokens)
                tokens.extend(np_surface.split())
                mentions.extend(_np_mentions(np_surface, t0))
            elif slot == "drug":
                mentions.append((NAMED, DRUG, drug_name, len(tokens),
                                 len(tokens) + 1))
                tokens.append(drug_name)
            else:
                mentions.append((NAMED, MUTATION, mut_name, len(tokens),
                                 len(tokens) + 1))
                tokens.append(mut_name)
        else:
            tokens.extend(part.split())
    builder.add_sentence(tokens, mentions)


def _gene_sentence(builder, rng, gene_name, mut_name):
    parts = rng.choice(_GENE_TEMPLATES)
    tokens, placements = _realize(
        parts, {"gene": gene_name, "mutation": mut_name})
    mentions = []
    for slot, t0, t1 in placements:
        etype = GENE if slot == "gene" else MUTATION
        name = gene_name if slot == "gene" else mut_name
        mentions.append((NAMED, etype, name, t0, t1))
    builder.add_sentence(tokens, mentions)


def _distractor_sentence(builder, rng, drug_name, mut_name, drug_as_np=False,
                         np_surface=None):
    parts = rng.choice(_DISTRACTOR_TEMPLATES)
    mentions = []
    tokens = []
    for part in parts:
        if isinstance(part, tuple):
            slot = part[0]
            if slot == "drug" and drug_as_np:
                t0 = len(tokens)
                tokens.extend(np_surface.split())
                mentions.extend(_np_mentions(np_surface, t0))
            elif slot == "drug":
                mentions.append((NAMED, DRUG, drug_name, len(tokens),
                                 len(tokens) + 1))
                tokens.append(drug_name)
            else:
                mentions.append((NAMED, MUTATION, mut_name, len(tokens),
                                 len(tokens) + 1))
                tokens.append(mut_name)
        else:
            tokens.extend(part.split())
    builder.add_sentence(tokens, mentions)


def _appositive_sentence(builder, rng, drug_name, np_surface, learnable):
    tokens = [drug_name, ",", "a"]
    mentions = [(NAMED, DRUG, drug_name, 0, 1)]
    if learnable:
        tokens.append(rng.choice(_NEAR_MISS_ADJ))
    t0 = len(tokens)
    tokens.extend(np_surface.split())
    mentions.extend(_np_mentions(np_surface, t0))
    tokens.extend([","] + rng.choice(_APPOS_MIDS).split() + ["."])
    builder.add_sentence(tokens, mentions)


def _np_noise_sentence(builder, rng, np_surface):
    tokens = ["the"]
    t0 = len(tokens)
    tokens.extend(np_surface.split())
    mentions = _np_mentions(np_surface, t0)
    tokens.extend(rng.choice((["was", "shelved", "."],
                              ["program", "was", "paused", "."])))
    builder.add_sentence(tokens, mentions)


def _filler(builder, rng):
    builder.add_sentence(rng.choice(_FILLER).split())


# -- document kinds -----------------------------------------------------------


def _kb_document(builder, rng, fact, neg_pool):
    drug, gene, mut = fact
    builder.new_paragraph()
    _cue_sentence(builder, rng, drug, mut)
    _cue_sentence(builder, rng, drug, mut)
    _filler(builder, rng)
    builder.new_paragraph()
    _gene_sentence(builder, rng, gene, mut)
    if rng.random() < 0.6:
        nd, nm = neg_pool(rng)
        _distractor_sentence(builder, rng, nd, nm)
    _filler(builder, rng)


def _in_paragraph_document(builder, rng, fact):
    # every argument shows up inside one paragraph: the easy case
    drug, gene, mut = fact
    builder.new_paragraph()
    _cue_sentence(builder, rng, drug, mut)
    _gene_sentence(builder, rng, gene, mut)
    _filler(builder, rng)
    builder.new_paragraph()
    _filler(builder, rng)


def _cross_paragraph_document(builder, rng, fact, class_gene, learnable):
    drug, gene, mut = fact
    np_surface = f"{class_gene} inhibitor"
    builder.new_paragraph()
    _appositive_sentence(builder, rng, drug, np_surface, learnable)
    _filler(builder, rng)
    builder.new_paragraph()
    _cue_sentence(builder, rng, drug, mut, drug_as_np=True,
                  np_surface=np_surface)
    _cue_sentence(builder, rng, drug, mut, drug_as_np=True,
                  np_surface=np_surface)
    builder.new_paragraph()
    _gene_sentence(builder, rng, gene, mut)
    _filler(builder, rng)
    return np_surface


def _distractor_block(builder, rng, drug, gene, mut, with_gene):
    """Bait paragraphs: a drug-mutation co-occurrence with no cue.

    The pair shares a sentence, so these rows are easy negatives: the
    detector alone must turn them down.
    """
    builder.new_paragraph()
    _distractor_sentence(builder, rng, drug, mut)
    _filler(builder, rng)
    if with_gene:
        builder.new_paragraph()
        _gene_sentence(builder, rng, gene, mut)


def _distractor_chain_document(builder, rng, drug, gene, mut, class_gene):
    """A resolvable class phrase beside the mutation, but no cue anywhere.

    The named drug and the mutation never share a paragraph, yet after
    closure the appositive chain puts a drug candidate in the mutation's
    sentence. Only the relation detector can reject these rows, which
    is what makes them hard negatives.
    """
    np_surface = f"{class_gene} inhibitor"
    builder.new_paragraph()
    _appositive_sentence(builder, rng, drug, np_surface, learnable=False)
    _filler(builder, rng)
    builder.new_paragraph()
    _distractor_sentence(builder, rng, drug, mut, drug_as_np=True,
                         np_surface=np_surface)
    _filler(builder, rng)
    builder.new_paragraph()
    _gene_sentence(builder, rng, gene, mut)


def _chain_certificate(builder, doc, drug_name, np_surface, learnable):
    """Base links of the planted chain and the edge closure must derive."""
    appos_p, appos_s = 0, 0
    drug_m = builder.mention_id_at(doc, appos_p, appos_s, 0)
    np0 = None
    for m in sorted(doc.mentions.values(), key=lambda m: m.order_key()):
        if m.kind == CANDIDATE_NP and (m.p, m.s) == (appos_p, appos_s):
            np0 = m.id
        if m.kind == CANDIDATE_NP and m.p == 1 and np0 is not None:
            base_kind = "Resolve" if learnable else "ISA"
            return {
                "doc": doc.id,
                "drug": drug_name,
                "learnable": learnable,
                "base": [[drug_m, np0, base_kind],
                         [np0, m.id, "Coref"]],
                "goal": [drug_m, m.id, "Resolve"],
            }
    raise LookupError(f"chain mentions missing in {doc.id}")


def generate(cfg: SynthConfig) -> SynthResult:
    """Build the corpus, knowledge base, gold labels, and certificates."""
    rng = random.Random(cfg.seed)
    drugs, genes, mutations = _make_vocab(rng, cfg)

    kb_drugs = drugs[:len(drugs) // 3]
    gold_drugs = drugs[len(drugs) // 3:]
    kb_muts = mutations[:len(mutations) // 3]
    gold_muts = mutations[len(mutations) // 3:]

    # keep original-case fact tuples; the KB stores canonical names
    kb = KnowledgeBase()
    kb_fact_list = []
    kb_pairs = set()
    while len(kb) < cfg.n_kb_facts:
        fact = (rng.choice(kb_drugs), rng.choice(genes), rng.choice(kb_muts))
        if (fact[0], fact[2]) in kb_pairs:
            continue
        kb_pairs.add((fact[0], fact[2]))
        kb.add(cfg.relation, fact)
        kb_fact_list.append(fact)

    def neg_pair(rng, pools=(kb_drugs, kb_muts)):
        while True:
            d, m = rng.choice(pools[0]), rng.choice(pools[1])
            if (d, m) not in kb_pairs:
                return d, m

    n_kb_docs = round(cfg.num_docs * cfg.kb_doc_fraction)
    n_neg_docs = round(cfg.num_docs * cfg.negative_doc_fraction)
    n_gold_docs = cfg.num_docs - n_kb_docs - n_neg_docs

    documents = []
    gold = []
    certificates = []
    gold_triples = set()

    for i in range(cfg.num_docs):
        builder = _DocBuilder(f"d{i:04d}")
        if i < n_kb_docs:
            _kb_document(builder, rng, kb_fact_list[i % len(kb_fact_list)],
                         neg_pair)
            documents.append(builder.build())
            continue

        if i < n_kb_docs + n_neg_docs:
            d, m = neg_pair(rng, pools=(gold_drugs, gold_muts))
            g = rng.choice(genes)
            if rng.random() < cfg.negative_chain_fraction:
                _distractor_chain_document(builder, rng, d, g, m,
                                           class_gene=rng.choice(genes))
            else:
                _distractor_block(builder, rng, d, g, m,
                                  with_gene=rng.random() < 0.7)
            doc = builder.build()
            documents.append(doc)
            gold.append({"doc": doc.id, "drug": d, "gene": g,
                         "mutation": m, "label": 0})
            continue

        # gold-positive document; fresh triples preferred, reuse tolerated
        # when the vocabulary is too small to keep them all distinct
        for _ in range(64):
            fact = (rng.choice(gold_drugs), rng.choice(genes),
                    rng.choice(gold_muts))
            if fact not in gold_triples:
                break
        gold_triples.add(fact)
        cross = rng.random() < cfg.cross_paragraph_fraction
        learnable = cross and rng.random() < cfg.learnable_fraction
        if cross:
            class_gene = rng.choice(genes)
            np_surface = _cross_paragraph_document(builder, rng, fact,
                                                   class_gene, learnable)
        else:
            _in_paragraph_document(builder, rng, fact)
            np_surface = None
        has_distractor = rng.random() < cfg.distractor_rate
        neg_row = None
        if has_distractor:
            nd, nm = neg_pair(rng, pools=(gold_drugs, gold_muts))
            while nd == fact[0] or nm == fact[2]:
                nd, nm = neg_pair(rng, pools=(gold_drugs, gold_muts))
            ng = rng.choice(genes)
            while ng == fact[1]:
                ng = rng.choice(genes)
            _distractor_block(builder, rng, nd, ng, nm,
                              with_gene=rng.random() < 0.7)
            neg_row = (nd, ng, nm)
        if rng.random() < cfg.np_noise_rate:
            builder.new_paragraph()
            _np_noise_sentence(builder, rng,
                               f"{rng.choice(genes)} inhibitor")
        doc = builder.build()
        documents.append(doc)
        gold.append({"doc": doc.id, "drug": fact[0], "gene": fact[1],
                     "mutation": fact[2], "label": 1})
        if neg_row is not None:
            gold.append({"doc": doc.id, "drug": neg_row[0],
                         "gene": neg_row[1], "mutation": neg_row[2],
                         "label": 0})
        if cross:
            certificates.append(_chain_certificate(
                builder, doc, fact[0], np_surface, learnable))

    return SynthResult(documents=documents, kb=kb, gold=gold,
                       certificates=certificates)
