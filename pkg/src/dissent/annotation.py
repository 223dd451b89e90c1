"""The human-labeled sample pool and the queue that feeds annotators.

Everything is event-sourced: enqueued batches and submitted annotations are
appended to a log, and replaying the log reconstructs pool and queue state
exactly.  An empty label set is the N/A verdict (no relation holds).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from .corpus import Corpus, Document, EntityPairKey, GoldLabel, RelationSchema, merge_corpora
from .sampler import SampleBatch


class AnnotationError(Exception):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    pair: EntityPairKey
    labels: frozenset[str]
    annotator: str
    iteration: int
    timestamp: str  # UTC ISO-8601

    @property
    def is_na(self) -> bool:
        return not self.labels


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class AnnotationPool:
    """Append-only set of human verdicts; one record per pair, ever."""

    def __init__(self):
        self.records: list[AnnotationRecord] = []
        self._by_pair: dict[EntityPairKey, AnnotationRecord] = {}

    @property
    def budget_used(self) -> int:
        return len(self.records)

    def __contains__(self, pair: EntityPairKey) -> bool:
        return pair in self._by_pair

    def annotated_pairs(self) -> set[EntityPairKey]:
        return set(self._by_pair)

    def add(self, record: AnnotationRecord) -> None:
        if record.pair in self._by_pair:
            raise AnnotationError(f"pair {record.pair.as_tuple()} already annotated")
        self.records.append(record)
        self._by_pair[record.pair] = record


@dataclass
class QueueItem:
    key: EntityPairKey
    score: float
    iteration: int
    model_predictions: dict[str, tuple[str, ...]] = field(default_factory=dict)
    leased_until: float = 0.0

    def leased(self, now: float) -> bool:
        return self.leased_until > now


class AnnotationQueue:
    """Pending batch items, served best-score-first with expiring leases.

    A lease keeps an item from being handed to two annotators at once; if
    the lease lapses without a submission the item is served again.
    """

    def __init__(self, lease_seconds: float = 300.0, clock: Callable[[], float] = time.time):
        self.lease_seconds = lease_seconds
        self._clock = clock
        self._items: dict[EntityPairKey, QueueItem] = {}

    def __len__(self) -> int:
        return len(self._items)

    def pending_keys(self) -> list[EntityPairKey]:
        return [i.key for i in self._ordered()]

    def _ordered(self) -> list[QueueItem]:
        return sorted(self._items.values(), key=lambda i: (-i.score, i.key))

    def enqueue(self, item: QueueItem, pool: AnnotationPool) -> None:
        if item.key in pool:
            raise AnnotationError(f"pair {item.key.as_tuple()} already annotated")
        if item.key in self._items:
            raise AnnotationError(f"pair {item.key.as_tuple()} already queued")
        self._items[item.key] = item

    def lease_next(self) -> QueueItem | None:
        now = self._clock()
        for item in self._ordered():
            if not item.leased(now):
                item.leased_until = now + self.lease_seconds
                return item
        return None

    def is_leased(self, pair: EntityPairKey) -> bool:
        item = self._items.get(pair)
        return item is not None and item.leased(self._clock())

    def get(self, pair: EntityPairKey) -> QueueItem | None:
        return self._items.get(pair)

    def remove(self, pair: EntityPairKey) -> None:
        self._items.pop(pair, None)


class AnnotationLog:
    """Durable event log; the single source of truth for pool and queue.

    A path of None makes the log ephemeral (in-memory runs, simulations).
    """

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None

    def append(self, event: dict) -> None:
        if self.path is None:
            return
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")

    def replay(self) -> Iterable[dict]:
        if self.path is None or not self.path.exists():
            return []
        events = []
        with self.path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events


class AnnotationManager:
    """Single-writer façade over pool + queue + log."""

    def __init__(self, log: AnnotationLog, lease_seconds: float = 300.0,
                 clock: Callable[[], float] = time.time):
        self.pool = AnnotationPool()
        self.queue = AnnotationQueue(lease_seconds=lease_seconds, clock=clock)
        self.log = log

    @classmethod
    def restore(cls, log: AnnotationLog, **kwargs) -> "AnnotationManager":
        mgr = cls(log, **kwargs)
        for event in log.replay():
            if event["event"] == "batch":
                for raw in event["items"]:
                    mgr.queue.enqueue(
                        QueueItem(
                            key=EntityPairKey(raw["title"], raw["h_idx"], raw["t_idx"]),
                            score=raw["score"],
                            iteration=event["iteration"],
                            model_predictions={
                                m: tuple(rs) for m, rs in raw.get("predictions", {}).items()
                            },
                        ),
                        mgr.pool,
                    )
            elif event["event"] == "annotation":
                record = AnnotationRecord(
                    pair=EntityPairKey(event["title"], event["h_idx"], event["t_idx"]),
                    labels=frozenset(event["labels"]),
                    annotator=event["annotator"],
                    iteration=event["iteration"],
                    timestamp=event["timestamp"],
                )
                mgr.queue.remove(record.pair)
                mgr.pool.add(record)
        return mgr

    def enqueue_batch(self, batch: SampleBatch) -> None:
        for item in batch.items:
            if item.key in self.pool:
                raise AnnotationError(f"pair {item.key.as_tuple()} already annotated")
            if self.queue.get(item.key) is not None:
                raise AnnotationError(f"pair {item.key.as_tuple()} already queued")
        for item in batch.items:
            self.queue.enqueue(
                QueueItem(
                    key=item.key,
                    score=item.score,
                    iteration=batch.iteration,
                    model_predictions=dict(item.model_predictions),
                ),
                self.pool,
            )
        self.log.append(
            {
                "event": "batch",
                "iteration": batch.iteration,
                "items": [
                    {
                        "title": i.key.doc_id,
                        "h_idx": i.key.head_idx,
                        "t_idx": i.key.tail_idx,
                        "score": i.score,
                        "predictions": {m: list(rs) for m, rs in i.model_predictions.items()},
                    }
                    for i in batch.items
                ],
            }
        )

    def submit(
        self,
        pair: EntityPairKey,
        labels: Iterable[str],
        annotator: str,
        schema: RelationSchema,
    ) -> AnnotationRecord:
        item = self.queue.get(pair)
        if item is None:
            raise AnnotationError(f"pair {pair.as_tuple()} is not pending")
        labels = frozenset(labels)
        unknown = [r for r in labels if r not in schema]
        if unknown:
            raise AnnotationError(f"unknown relations {unknown}")
        record = AnnotationRecord(
            pair=pair,
            labels=labels,
            annotator=annotator,
            iteration=item.iteration,
            timestamp=_utc_now(),
        )
        self.queue.remove(pair)
        self.pool.add(record)
        self.log.append(
            {
                "event": "annotation",
                "title": pair.doc_id,
                "h_idx": pair.head_idx,
                "t_idx": pair.tail_idx,
                "labels": sorted(labels),
                "annotator": annotator,
                "iteration": record.iteration,
                "timestamp": record.timestamp,
            }
        )
        return record


def training_augment(pool: AnnotationPool, ha: Corpus, ds: Corpus) -> Corpus:
    """HA plus one gold label per annotated (pair, relation).

    N/A pairs carry no labels but are exported as explicit negatives so the
    adapter can treat them as hard negative pairs.
    """
    by_doc: dict[str, list[AnnotationRecord]] = {}
    negatives: list[EntityPairKey] = []
    for record in pool.records:
        if record.is_na:
            negatives.append(record.pair)
        else:
            by_doc.setdefault(record.pair.doc_id, []).append(record)

    extra_docs: list[Document] = []
    for doc_id, records in by_doc.items():
        src = ds.get(doc_id)
        if src is None:
            raise AnnotationError(f"annotated pair references unknown document {doc_id!r}")
        labels = tuple(
            GoldLabel(head_idx=r.pair.head_idx, tail_idx=r.pair.tail_idx, relation=rel)
            for r in sorted(records, key=lambda r: r.pair)
            for rel in sorted(r.labels)
        )
        extra_docs.append(
            Document(
                doc_id=src.doc_id,
                title=src.title,
                sentences=src.sentences,
                entities=src.entities,
                gold_labels=labels,
            )
        )
    extra_docs.sort(key=lambda d: d.doc_id)
    merged = merge_corpora(ha, extra_docs)
    return Corpus(
        split=merged.split,
        documents=merged.documents,
        schema=merged.schema,
        negative_pairs=tuple(sorted(negatives)),
    )


@dataclass(frozen=True)
class RoundStats:
    """Per-iteration annotation outcome counts; categories partition."""

    per_iteration: dict[int, dict[str, int]]
    totals: dict[str, int]

    def total_annotations(self) -> int:
        return sum(self.totals.values())


def round_stats(pool: AnnotationPool, long_tail: frozenset[str] | set[str]) -> RoundStats:
    """Classify records: long-tail beats frequent when labels span both."""
    per_iteration: dict[int, dict[str, int]] = {}
    totals = {"long_tail": 0, "frequent": 0, "na": 0}
    for record in pool.records:
        if record.is_na:
            category = "na"
        elif record.labels & long_tail:
            category = "long_tail"
        else:
            category = "frequent"
        bucket = per_iteration.setdefault(
            record.iteration, {"long_tail": 0, "frequent": 0, "na": 0}
        )
        bucket[category] += 1
        totals[category] += 1
    return RoundStats(per_iteration=per_iteration, totals=totals)


def export_annotations(pool: AnnotationPool, path: str | Path) -> None:
    """Offline interchange format, one record per line."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for record in pool.records:
            fh.write(
                json.dumps(
                    {
                        "title": record.pair.doc_id,
                        "h_idx": record.pair.head_idx,
                        "t_idx": record.pair.tail_idx,
                        "labels": sorted(record.labels),
                        "annotator": record.annotator,
                        "iteration": record.iteration,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_annotation_file(path: str | Path) -> dict[EntityPairKey, frozenset[str]]:
    """Read offline annotations as a lookup table pair -> label set."""
    table: dict[EntityPairKey, frozenset[str]] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pair = EntityPairKey(rec["title"], int(rec["h_idx"]), int(rec["t_idx"]))
                table[pair] = frozenset(rec["labels"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise AnnotationError(f"annotation file line {lineno}: {exc}") from exc
    return table
