"""Candidate filtering and deterministic top-k selection.

Only pairs where some committee member predicts a long-tail relation are
candidates; the k highest-scoring unannotated candidates form the next
annotation batch.  Ties break by ascending pair key so batches are
reproducible regardless of how the score stream was sharded.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import Corpus, EntityPairKey, document_to_record
from .predictions import ModelPool, PredictionMatrix, predicted_relations


@dataclass(frozen=True)
class SamplerConfig:
    k: int
    long_tail: frozenset[str]
    decision_threshold: float = 0.5
    max_per_doc: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.long_tail:
            raise ValueError("long-tail relation set must be nonempty")


@dataclass(frozen=True)
class SampleItem:
    key: EntityPairKey
    score: float
    model_predictions: dict[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class SampleBatch:
    iteration: int
    items: tuple[SampleItem, ...]
    shortfall: bool = False

    def keys(self) -> list[EntityPairKey]:
        return [item.key for item in self.items]


def candidate_pairs(
    matrices: Sequence[PredictionMatrix],
    pool: ModelPool,
    long_tail: frozenset[str] | set[str],
) -> set[EntityPairKey]:
    """Pairs where at least one model predicts some long-tail relation."""
    out: set[EntityPairKey] = set()
    for matrix in matrices:
        thr = pool.threshold(matrix.model)
        for pair, scores in matrix.items():
            if pair in out:
                continue
            for rel, score in scores.items():
                if score >= thr and rel in long_tail:
                    out.add(pair)
                    break
    return out


class _Worse:
    """heapq wrapper: the heap root is the worst item (lowest score, then
    largest key), so pushpop evicts correctly."""

    __slots__ = ("score", "key")

    def __init__(self, score: float, key: EntityPairKey):
        self.score = score
        self.key = key

    def __lt__(self, other: "_Worse") -> bool:
        if self.score != other.score:
            return self.score < other.score
        return self.key > other.key


class TopKSelector:
    """Bounded-memory streaming selection of the k best (score, key) items.

    Shards can each run their own selector and feed results into a merged
    one; the outcome equals a full sort because selection only depends on
    the multiset of inputs.
    """

    def __init__(self, k: int):
        self.k = k
        self._heap: list[_Worse] = []

    def offer(self, key: EntityPairKey, score: float) -> None:
        entry = _Worse(score, key)
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, entry)
        elif self._heap[0] < entry:
            heapq.heapreplace(self._heap, entry)

    def merge(self, other: "TopKSelector") -> None:
        for entry in other._heap:
            self.offer(entry.key, entry.score)

    def result(self) -> list[tuple[EntityPairKey, float]]:
        ordered = sorted(self._heap, key=lambda e: (-e.score, e.key))
        return [(e.key, e.score) for e in ordered]


def select_top_k(
    candidates: Iterable[EntityPairKey],
    scores: Mapping[EntityPairKey, float],
    cfg: SamplerConfig,
    already_annotated: set[EntityPairKey],
    *,
    iteration: int = 0,
    k: int | None = None,
) -> SampleBatch:
    """Pick the k best-scoring fresh candidates (all of them if fewer exist)."""
    k = cfg.k if k is None else k
    fresh = [c for c in candidates if c not in already_annotated]
    if cfg.max_per_doc is None:
        selector = TopKSelector(k)
        for key in fresh:
            selector.offer(key, scores[key])
        chosen = selector.result()
    else:
        ranked = sorted(fresh, key=lambda key: (-scores[key], key))
        chosen = []
        per_doc: dict[str, int] = {}
        for key in ranked:
            if per_doc.get(key.doc_id, 0) >= cfg.max_per_doc:
                continue
            chosen.append((key, scores[key]))
            per_doc[key.doc_id] = per_doc.get(key.doc_id, 0) + 1
            if len(chosen) >= k:
                break
    items = tuple(SampleItem(key=key, score=score) for key, score in chosen)
    return SampleBatch(iteration=iteration, items=items, shortfall=len(items) < k)


def attach_predictions(
    batch: SampleBatch,
    matrices: Sequence[PredictionMatrix],
    pool: ModelPool,
) -> SampleBatch:
    """Decorate batch items with each model's thresholded relation set."""
    items = []
    for item in batch.items:
        preds = {
            m.model: tuple(sorted(predicted_relations(m, item.key, pool.threshold(m.model))))
            for m in matrices
        }
        items.append(SampleItem(key=item.key, score=item.score, model_predictions=preds))
    return SampleBatch(iteration=batch.iteration, items=tuple(items), shortfall=batch.shortfall)


def write_batch_file(batch: SampleBatch, corpus: Corpus, path: str | Path) -> None:
    """Annotation hand-off file: pair, score, per-model hints, full document."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in batch.items:
            doc = corpus.get(item.key.doc_id)
            if doc is None:
                raise KeyError(f"batch pair references unknown document {item.key.doc_id!r}")
            fh.write(
                json.dumps(
                    {
                        "title": item.key.doc_id,
                        "h_idx": item.key.head_idx,
                        "t_idx": item.key.tail_idx,
                        "iteration": batch.iteration,
                        "score": item.score,
                        "predictions": {m: list(rs) for m, rs in item.model_predictions.items()},
                        "document": document_to_record(doc),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
