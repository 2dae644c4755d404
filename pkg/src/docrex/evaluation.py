"""Scoring harness: gold sets, P/R/F1, the hard subset, baselines.

The gold file is line-delimited {doc, drug, gene, mutation, label}.
Negative candidates are exactly the explicit label-0 entries; nothing
is generated implicitly. Keys are canonicalized case-insensitively.
"""

from __future__ import annotations

import json
import statistics
import warnings
from dataclasses import dataclass, field

from .corpus import NAMED, canonical_name

ROLES = ("drug", "gene", "mutation")


class GoldError(ValueError):
    pass


def gold_key(row: dict) -> tuple:
    return (row["doc"],) + tuple(canonical_name(row[r]) for r in ROLES)


@dataclass
class GoldSet:
    rows: list = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            for col in ("doc", *ROLES, "label"):
                if col not in row:
                    raise GoldError(f"gold row missing {col!r}: {row}")
            if row["label"] not in (0, 1):
                raise GoldError(f"gold label must be 0 or 1: {row}")
            key = gold_key(row)
            if key in seen:
                raise GoldError(f"duplicate gold key {key}")
            seen.add(key)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def positives(self) -> int:
        return sum(r["label"] for r in self.rows)

    @classmethod
    def load(cls, path) -> "GoldSet":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise GoldError(f"{path}: line {lineno}: {exc}") from exc
        return cls(rows)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def metrics_from_counts(tp: int, fp: int, fn: int) -> dict:
    """P/R/F1 with explicit flags for zero denominators."""
    flags = []
    if tp + fp == 0:
        precision = 0.0
        flags.append("no_predicted_positives")
    else:
        precision = tp / (tp + fp)
    if tp + fn == 0:
        recall = 0.0
        flags.append("no_gold_positives")
    else:
        recall = tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 \
        else 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1,
            "counts": {"tp": tp, "fp": fp, "fn": fn}, "flags": flags}


def evaluate(predictions, gold: GoldSet) -> dict:
    """Score predictions against the gold candidates.

    ``predictions`` is an iterable of records carrying the gold key
    columns plus a truthy ``decision`` (run_queries output works as
    is), or a mapping from gold_key tuples to booleans. Gold keys with
    no prediction count as negative; predictions outside the gold set
    are ignored, since the gold entries define the candidate universe.
    """
    if isinstance(predictions, dict):
        decided = dict(predictions)
    else:
        decided = {}
        for rec in predictions:
            key = gold_key(rec)
            if key in decided:
                raise GoldError(f"duplicate prediction for {key}")
            decided[key] = bool(rec["decision"])
    tp = fp = fn = tn = 0
    for row in gold:
        pred = bool(decided.get(gold_key(row), False))
        if row["label"] == 1:
            tp += pred
            fn += not pred
        else:
            fp += pred
            tn += not pred
    out = metrics_from_counts(tp, fp, fn)
    out["counts"]["tn"] = tn
    out["counts"]["n"] = len(gold)
    return out


def all_positive(gold: GoldSet) -> dict:
    """The recall-friendly baseline: predict positive for every entry."""
    return {gold_key(row): True for row in gold}


def all_positive_metrics(n_positive: int, n_candidates: int) -> dict:
    """Closed-form scores of the all-positive baseline from counts."""
    if not 0 <= n_positive <= n_candidates:
        raise ValueError("positives cannot exceed candidates")
    return metrics_from_counts(tp=n_positive, fp=n_candidates - n_positive,
                               fn=0)


def _mention_paragraphs(doc, role: str, name: str) -> set | None:
    want = canonical_name(name)
    for ent in doc.entities.values():
        if ent.type == role and canonical_name(ent.name) == want:
            paras = {doc.mentions[mid].p for mid in ent.mentions
                     if doc.mentions[mid].kind == NAMED}
            return paras or None
    return None


def hard_subset(gold: GoldSet, corpus) -> GoldSet:
    """Entries whose drug and mutation never share a paragraph.

    The test runs over named mentions of the two key entities. Entries
    whose key entities have no mentions in their document are dropped
    with a warning rather than guessed at.
    """
    docs = corpus if isinstance(corpus, dict) else {d.id: d for d in corpus}
    rows = []
    for row in gold:
        doc = docs.get(row["doc"])
        if doc is None:
            warnings.warn(f"hard_subset: document {row['doc']!r} missing; "
                          f"entry dropped")
            continue
        drug_ps = _mention_paragraphs(doc, "drug", row["drug"])
        mut_ps = _mention_paragraphs(doc, "mutation", row["mutation"])
        if drug_ps is None or mut_ps is None:
            warnings.warn(f"hard_subset: doc {row['doc']}: key entity "
                          f"without mentions; entry dropped")
            continue
        if not drug_ps & mut_ps:
            rows.append(row)
    return GoldSet(rows)


def summarize_over_seeds(values) -> dict:
    """Mean and sample standard deviation across per-seed metric values."""
    vals = list(values)
    if not vals:
        raise ValueError("no values to summarize")
    mean = statistics.fmean(vals)
    sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return {"mean": mean, "sd": sd, "n": len(vals)}
