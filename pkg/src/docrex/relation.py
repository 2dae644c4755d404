"""Paragraph-local relation detection.

A detector never sees raw entity names: the mention spans filling the
argument slots are replaced by role placeholders ([X1], [X2], ...) and a
sequence-start marker is prepended, so the score depends on the textual
pattern around the slots rather than on which entities fill them.

The native scorer is logistic regression over hashed n-gram features of
the dummified template plus binned slot-distance features. A served
scorer speaking the line-delimited JSON protocol can be swapped in
behind the same score() interface (see protocol.py).
"""

from __future__ import annotations

import json
import math
import re
import zlib
from dataclasses import dataclass, field

import numpy as np

from .corpus import Document, Segment, segment_tokens
from .optim import SparseLogistic, TrainConfig, train_logistic

CLS = "[CLS]"
_SLOT_RE = re.compile(r"^\[X(\d+)\]$")

DEFAULT_DIM = 1 << 18


class SchemeError(ValueError):
    """The subrelation scheme or a slot map is inconsistent."""


class DummifyError(ValueError):
    """Slots cannot be substituted into the segment."""


@dataclass(frozen=True)
class RelationScheme:
    """Role layout of the n-ary relation and its binary decomposition.

    The anchor pair is the subrelation the detector is trained on; the
    augmentation pairs are high-precision associations that must also
    hold for the full tuple. Together they must touch every role.
    """

    relation: str = "response"
    roles: tuple[str, ...] = ("drug", "gene", "mutation")
    anchor: tuple[str, str] = ("drug", "mutation")
    augmentations: tuple[tuple[str, str], ...] = (("gene", "mutation"),)

    def __post_init__(self):
        covered = set(self.anchor)
        for pair in self.augmentations:
            covered.update(pair)
        for pair in (self.anchor, *self.augmentations):
            for role in pair:
                if role not in self.roles:
                    raise SchemeError(f"subrelation role {role!r} is not one of "
                                      f"{self.roles}")
        missing = set(self.roles) - covered
        if missing:
            raise SchemeError(
                f"subrelations leave roles uncovered: {sorted(missing)}")

    def role_index(self, role: str) -> int:
        """1-based slot index of a role, in declared role order."""
        return self.roles.index(role) + 1

    def slot_token(self, role: str) -> str:
        return f"[X{self.role_index(role)}]"

    def arity(self) -> int:
        return len(self.roles)


@dataclass
class RelationEvidence:
    """One scored segment supporting a subrelation."""

    doc: str
    segment: Segment
    subrelation: tuple[str, str]
    slots: dict[str, str]          # role -> mention id
    template: tuple[str, ...]
    score: float | None = None


def slot_index_of(token: str) -> int | None:
    m = _SLOT_RE.match(token)
    return int(m.group(1)) if m else None


def template_slot_positions(template) -> dict[int, int]:
    """Map slot index -> token position within the template."""
    out = {}
    for pos, tok in enumerate(template):
        idx = slot_index_of(tok)
        if idx is not None:
            out[idx] = pos
    return out


def dummify(doc: Document, seg: Segment, slots: dict[str, str],
            scheme: RelationScheme = RelationScheme()) -> tuple[str, ...]:
    """Replace each slot mention span with its role placeholder.

    Tokens outside the slots are untouched; the [CLS] marker is
    prepended. Slots must name mentions inside the segment with
    non-overlapping spans.
    """
    # segment-local offset of each sentence
    offsets = {}
    off = 0
    for s in range(seg.s0, seg.s1 + 1):
        offsets[s] = off
        off += len(doc.sentence(seg.p, s).tokens)
    spans = []  # (start, end, placeholder)
    for role, mid in slots.items():
        if role not in scheme.roles:
            raise SchemeError(f"slot role {role!r} is not one of {scheme.roles}")
        m = doc.mentions[mid]
        if not seg.contains(m):
            raise DummifyError(
                f"mention {mid!r} lies outside segment "
                f"(p={seg.p}, s={seg.s0}..{seg.s1})")
        start = offsets[m.s] + m.t0
        spans.append((start, start + (m.t1 - m.t0), scheme.slot_token(role)))
    spans.sort()
    for (a0, a1, _), (b0, b1, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise DummifyError("slot mention spans overlap")
    toks = segment_tokens(doc, seg)
    out = [CLS]
    cursor = 0
    for start, end, placeholder in spans:
        out.extend(toks[cursor:start])
        out.append(placeholder)
        cursor = end
    out.extend(toks[cursor:])
    return tuple(out)


def noisy_or(probs) -> float:
    """1 - prod(1 - p): probability that at least one evidence fires."""
    acc = 1.0
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability out of range: {p}")
        acc *= 1.0 - p
    return 1.0 - acc


def compose_nary(binary_results: dict[tuple[str, str], bool],
                 scheme: RelationScheme = RelationScheme()) -> bool:
    """The n-ary decision: anchor holds and every augmentation holds."""
    required = [tuple(scheme.anchor)] + [tuple(p) for p in scheme.augmentations]
    for pair in required:
        if pair not in binary_results:
            raise SchemeError(f"missing binary decision for subrelation {pair}")
    return all(binary_results[pair] for pair in required)


# -- native scorer --------------------------------------------------------


def _h(feat: str, dim: int) -> int:
    return zlib.crc32(feat.encode("utf-8")) % dim


_DIST_BINS = ((1, "1"), (2, "2"), (3, "3"), (4, "4"), (5, "5"),
              (8, "6-8"), (15, "9-15"))


def _dist_bin(d: int) -> str:
    for limit, name in _DIST_BINS:
        if d <= limit:
            return name
    return "16+"


def template_features(template, dim: int = DEFAULT_DIM) -> dict[int, float]:
    """Hashed 1/2/3-gram presence features plus slot-distance bins."""
    feats = set()
    toks = tuple(template)
    for i, t in enumerate(toks):
        feats.add(f"u:{t}")
        if i + 1 < len(toks):
            feats.add(f"b:{t}|{toks[i + 1]}")
        if i + 2 < len(toks):
            feats.add(f"t:{t}|{toks[i + 1]}|{toks[i + 2]}")
    positions = template_slot_positions(toks)
    for a in sorted(positions):
        for b in sorted(positions):
            if a < b:
                d = abs(positions[b] - positions[a])
                feats.add(f"d:X{a}:X{b}:{_dist_bin(d)}")
    out: dict[int, float] = {}
    for f in feats:
        out[_h(f, dim)] = 1.0
    return out


FEATURE_RECIPE = ("hashed token n-grams (n<=3) over the dummified template "
                  "plus binned token distances between slot placeholders")


@dataclass
class NativeRelationScorer:
    """Logistic regression over template_features."""

    model: SparseLogistic
    dim: int = DEFAULT_DIM
    features: str = FEATURE_RECIPE

    @classmethod
    def fresh(cls, dim: int = DEFAULT_DIM) -> "NativeRelationScorer":
        return cls(model=SparseLogistic(dim=dim), dim=dim)

    def featurize(self, template) -> dict[int, float]:
        return template_features(template, self.dim)

    def score(self, template) -> float:
        return self.model.prob(self.featurize(template))

    def loss_and_grad(self, templates, targets):
        xs = [self.featurize(t) for t in templates]
        return self.model.loss_and_grad(xs, targets)

    def to_dict(self) -> dict:
        return {"kind": "native_relation", "features": self.features,
                "params": self.model.params_to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "NativeRelationScorer":
        model = SparseLogistic.params_from_dict(d["params"])
        return cls(model=model, dim=model.dim, features=d.get("features",
                                                              FEATURE_RECIPE))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "NativeRelationScorer":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def score_relation(scorer, template) -> float:
    """Posterior that the dummified segment states the subrelation."""
    p = scorer.score(tuple(template))
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"scorer returned probability out of range: {p}")
    eps = 1e-9
    return min(max(p, eps), 1.0 - eps)


def train_relation_detector(examples, cfg: TrainConfig | None = None,
                            dim: int = DEFAULT_DIM):
    """Fit the native detector on labeled templates.

    examples need .template and .label (a soft target in [0, 1]).
    Returns (scorer, history).
    """
    cfg = cfg or TrainConfig()
    xs = [template_features(ex.template, dim) for ex in examples]
    qs = [float(ex.label) for ex in examples]
    model, history = train_logistic(xs, qs, cfg, dim)
    return NativeRelationScorer(model=model, dim=dim), history
