"""Scoring predicted label sets against gold annotations.

Reports micro and macro precision/recall/F1, the "ign" variants that drop
predictions whose entity pair (or full fact) was already seen in training,
and restricted slices (long-tail, extreme long-tail).  Entity identity
across documents uses the case-normalized set of mention surfaces, since
entity indices only mean something within one document.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import Corpus, EntityPairKey
from .predictions import PredictionMatrix

Prediction = tuple[EntityPairKey, str]

FULL_SLICE = "full"


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class MetricSet:
    precision: float
    recall: float
    f1: float
    ign_precision: float
    ign_recall: float
    ign_f1: float


@dataclass(frozen=True)
class MetricsReport:
    # keyed by (slice name, "micro" | "macro")
    metrics: dict[tuple[str, str], MetricSet]
    # per relation: slice-independent pooled counts
    relation_counts: dict[str, tuple[int, int, int]]  # (tp, fp, fn)

    def get(self, slice_name: str, averaging: str) -> MetricSet:
        return self.metrics[(slice_name, averaging)]


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def pair_identity(corpus: Corpus, pair: EntityPairKey) -> tuple[frozenset[str], frozenset[str]]:
    doc = corpus.get(pair.doc_id)
    if doc is None:
        raise EvaluationError(f"pair references unknown document {pair.doc_id!r}")
    return (doc.entities[pair.head_idx].surfaces(), doc.entities[pair.tail_idx].surfaces())


@dataclass(frozen=True)
class IgnIndex:
    mode: str  # "pair" or "fact"
    entries: frozenset

    def covers(self, identity, relation: str) -> bool:
        if self.mode == "pair":
            return identity in self.entries
        return (identity, relation) in self.entries


def build_ign_index(train: Corpus, mode: str = "pair") -> IgnIndex:
    """Index of pair identities (or facts) present in training labels."""
    if mode not in ("pair", "fact"):
        raise ValueError(f"ign mode must be 'pair' or 'fact', got {mode!r}")
    entries = set()
    for doc in train.documents:
        for lab in doc.gold_labels:
            identity = (
                doc.entities[lab.head_idx].surfaces(),
                doc.entities[lab.tail_idx].surfaces(),
            )
            entries.add(identity if mode == "pair" else (identity, lab.relation))
    return IgnIndex(mode=mode, entries=frozenset(entries))


def _pooled(pred: set[Prediction], gold: set[Prediction]) -> tuple[int, int, int]:
    tp = len(pred & gold)
    return tp, len(pred) - tp, len(gold) - tp


def _macro(pred: set[Prediction], gold: set[Prediction]) -> tuple[float, float, float]:
    """Unweighted mean over relations that have any gold or predicted instance."""
    relations = {r for _, r in pred} | {r for _, r in gold}
    if not relations:
        return 0.0, 0.0, 0.0
    precisions, recalls, f1s = [], [], []
    for rel in relations:
        p_r = {x for x in pred if x[1] == rel}
        g_r = {x for x in gold if x[1] == rel}
        p, r, f = _prf(*_pooled(p_r, g_r))
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    n = len(relations)
    return sum(precisions) / n, sum(recalls) / n, sum(f1s) / n


def evaluate(
    pred: Iterable[Prediction],
    gold: Corpus,
    ign: IgnIndex | None = None,
    slices: Mapping[str, frozenset[str] | set[str]] | None = None,
    *,
    ign_filter_gold: bool = False,
) -> MetricsReport:
    """Score a prediction set against the gold corpus.

    Ign metrics are the plain metrics recomputed after removing predictions
    the index covers; gold stays whole unless ign_filter_gold is set, so ign
    recall normally penalizes memorized positives.
    """
    pred_set = set(pred)
    gold_set: set[Prediction] = set()
    for doc in gold.documents:
        for lab in doc.gold_labels:
            gold_set.add((EntityPairKey(doc.doc_id, lab.head_idx, lab.tail_idx), lab.relation))

    known_relations = set(gold.schema.relations)
    for key, rel in pred_set:
        if rel not in known_relations:
            raise EvaluationError(f"prediction uses unknown relation {rel!r}")
        if gold.get(key.doc_id) is None:
            raise EvaluationError(f"prediction references unknown document {key.doc_id!r}")

    if ign is not None:
        identity_cache: dict[EntityPairKey, tuple] = {}

        def seen(item: Prediction) -> bool:
            key, rel = item
            identity = identity_cache.get(key)
            if identity is None:
                identity = pair_identity(gold, key)
                identity_cache[key] = identity
            return ign.covers(identity, rel)

        pred_ign = {x for x in pred_set if not seen(x)}
        gold_ign = {x for x in gold_set if not seen(x)} if ign_filter_gold else gold_set
    else:
        pred_ign, gold_ign = pred_set, gold_set

    all_slices: dict[str, frozenset[str] | None] = {FULL_SLICE: None}
    for name, rels in (slices or {}).items():
        all_slices[name] = frozenset(rels)

    metrics: dict[tuple[str, str], MetricSet] = {}
    for name, rels in all_slices.items():
        if rels is None:
            p_s, g_s, pi_s, gi_s = pred_set, gold_set, pred_ign, gold_ign
        else:
            p_s = {x for x in pred_set if x[1] in rels}
            g_s = {x for x in gold_set if x[1] in rels}
            pi_s = {x for x in pred_ign if x[1] in rels}
            gi_s = {x for x in gold_ign if x[1] in rels}
        mp, mr, mf = _prf(*_pooled(p_s, g_s))
        ip, ir, if1 = _prf(*_pooled(pi_s, gi_s))
        metrics[(name, "micro")] = MetricSet(mp, mr, mf, ip, ir, if1)
        map_, mar, maf = _macro(p_s, g_s)
        iap, iar, iaf = _macro(pi_s, gi_s)
        metrics[(name, "macro")] = MetricSet(map_, mar, maf, iap, iar, iaf)

    relation_counts: dict[str, tuple[int, int, int]] = {}
    for rel in {r for _, r in pred_set} | {r for _, r in gold_set}:
        relation_counts[rel] = _pooled(
            {x for x in pred_set if x[1] == rel}, {x for x in gold_set if x[1] == rel}
        )
    return MetricsReport(metrics=metrics, relation_counts=relation_counts)


def matrix_predictions(matrix: PredictionMatrix, threshold: float) -> set[Prediction]:
    """Threshold a score matrix into a prediction set."""
    out: set[Prediction] = set()
    for pair, scores in matrix.items():
        for rel, score in scores.items():
            if score >= threshold:
                out.add((pair, rel))
    return out


@dataclass(frozen=True)
class ScoreHistogram:
    bins: int
    counts: tuple[int, ...]
    mean: float | None  # None when the matrix holds no scores

    def edges(self) -> list[float]:
        return [i / self.bins for i in range(self.bins + 1)]


def score_histogram(matrix: PredictionMatrix, bins: int) -> ScoreHistogram:
    """Distribution of stored scores; scores of exactly 1.0 land in the last bin."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts = [0] * bins
    total = 0.0
    n = 0
    for _, scores in matrix.items():
        for score in scores.values():
            idx = min(int(score * bins), bins - 1)
            counts[idx] += 1
            total += score
            n += 1
    return ScoreHistogram(bins=bins, counts=tuple(counts), mean=(total / n if n else None))


def report_rows(report: MetricsReport) -> list[dict]:
    rows = []
    for (slice_name, averaging), ms in sorted(report.metrics.items()):
        rows.append(
            {
                "slice": slice_name,
                "averaging": averaging,
                "precision": ms.precision,
                "recall": ms.recall,
                "f1": ms.f1,
                "ign_precision": ms.ign_precision,
                "ign_recall": ms.ign_recall,
                "ign_f1": ms.ign_f1,
            }
        )
    return rows


def write_report_csv(report: MetricsReport, path: str | Path) -> None:
    rows = report_rows(report)
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def write_report_jsonl(report: MetricsReport, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in report_rows(report):
            fh.write(json.dumps(row) + "\n")


def write_histogram_csv(hist: ScoreHistogram, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_start", "bin_end", "count"])
        edges = hist.edges()
        for i, count in enumerate(hist.counts):
            writer.writerow([edges[i], edges[i + 1], count])
        writer.writerow(["mean", "", hist.mean if hist.mean is not None else "undefined"])
