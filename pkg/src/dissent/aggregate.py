"""Denoised dataset construction from committee predictions.

A label survives aggregation only when at least one model scores it
strictly above tau, a precision-preserving filter; the hybrid merge then
lets a second denoiser own the frequent relations while this pipeline owns
the long tail.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .corpus import Corpus, Document, EntityPairKey, load_corpus, write_corpus
from .predictions import PredictionMatrix


class AggregationError(Exception):
    pass


@dataclass(frozen=True)
class AggregationConfig:
    tau: float = 0.7

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0,1), got {self.tau}")


@dataclass(frozen=True)
class LabelProvenance:
    max_confidence: float
    model: str


@dataclass
class DenoisedDataset:
    labels: dict[EntityPairKey, set[str]] = field(default_factory=dict)
    provenance: dict[tuple[EntityPairKey, str], LabelProvenance] = field(default_factory=dict)

    def add(self, pair: EntityPairKey, relation: str, prov: LabelProvenance) -> None:
        self.labels.setdefault(pair, set()).add(relation)
        self.provenance[(pair, relation)] = prov

    def num_labels(self) -> int:
        return sum(len(rels) for rels in self.labels.values())

    def label_items(self) -> list[tuple[EntityPairKey, str]]:
        return sorted((pair, rel) for pair, rels in self.labels.items() for rel in rels)


def aggregate_labels(
    matrices: Sequence[PredictionMatrix], cfg: AggregationConfig
) -> DenoisedDataset:
    """Keep (pair, relation) iff max over models of its score exceeds tau."""
    if not matrices:
        raise AggregationError("no matrices to aggregate")
    best: dict[tuple[EntityPairKey, str], LabelProvenance] = {}
    for matrix in matrices:
        for pair, scores in matrix.items():
            for rel, score in scores.items():
                key = (pair, rel)
                current = best.get(key)
                if current is None or score > current.max_confidence:
                    best[key] = LabelProvenance(max_confidence=score, model=matrix.model)
    dds = DenoisedDataset()
    for (pair, rel), prov in best.items():
        if prov.max_confidence > cfg.tau:
            dds.add(pair, rel, prov)
    return dds


def hybrid_merge(
    dds: DenoisedDataset,
    other: DenoisedDataset,
    long_tail: frozenset[str] | set[str],
) -> DenoisedDataset:
    """Long-tail labels from `dds`, frequent labels from `other`."""
    merged = DenoisedDataset()
    for pair, rel in dds.label_items():
        if rel in long_tail:
            merged.add(pair, rel, dds.provenance[(pair, rel)])
    for pair, rel in other.label_items():
        if rel not in long_tail:
            merged.add(pair, rel, other.provenance[(pair, rel)])
    return merged


def write_dds(dds: DenoisedDataset, ds_corpus: Corpus, path: str | Path) -> None:
    """Write the corpus file whose documents carry the aggregated labels.

    Output keeps the distant split's document order and is byte-deterministic.
    """
    from .corpus import GoldLabel  # local to avoid widening the module surface

    for pair in dds.labels:
        doc = ds_corpus.get(pair.doc_id)
        if doc is None:
            raise AggregationError(f"aggregated pair references unknown document {pair.doc_id!r}")
        if pair.head_idx >= len(doc.entities) or pair.tail_idx >= len(doc.entities):
            raise AggregationError(f"aggregated pair {pair.as_tuple()} outside document entities")

    by_doc: dict[str, list[tuple[int, int, str]]] = {}
    for pair, rel in dds.label_items():
        by_doc.setdefault(pair.doc_id, []).append((pair.head_idx, pair.tail_idx, rel))

    documents = []
    for doc in ds_corpus.documents:
        triples = sorted(by_doc.get(doc.doc_id, []))
        documents.append(
            Document(
                doc_id=doc.doc_id,
                title=doc.title,
                sentences=doc.sentences,
                entities=doc.entities,
                gold_labels=tuple(GoldLabel(h, t, r) for h, t, r in triples),
            )
        )
    out = Corpus(split=ds_corpus.split, documents=tuple(documents), schema=ds_corpus.schema)
    write_corpus(out, path)


def write_provenance(dds: DenoisedDataset, path: str | Path) -> None:
    """Sidecar: which model pushed each retained label past tau."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair, rel in dds.label_items():
            prov = dds.provenance[(pair, rel)]
            fh.write(
                json.dumps(
                    {
                        "title": pair.doc_id,
                        "h_idx": pair.head_idx,
                        "t_idx": pair.tail_idx,
                        "r": rel,
                        "max_conf": prov.max_confidence,
                        "model": prov.model,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_dds(path: str | Path, corpus: Corpus) -> DenoisedDataset:
    """Read a DDS corpus file back into label-set form (provenance-free)."""
    loaded = load_corpus(path, corpus.split, corpus.schema)
    dds = DenoisedDataset()
    for doc in loaded.documents:
        for lab in doc.gold_labels:
            dds.add(
                EntityPairKey(doc.doc_id, lab.head_idx, lab.tail_idx),
                lab.relation,
                LabelProvenance(max_confidence=1.0, model="file"),
            )
    return dds
