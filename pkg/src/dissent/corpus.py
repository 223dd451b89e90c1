"""Corpus ingestion for DocRED-format relation extraction data.

A corpus file is a single JSON array of document objects with fields
``title``, ``sents``, ``vertexSet``, and ``labels``.  Documents are validated
on load and immutable afterwards, so they can be shared freely between
workers.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class CorpusFormatError(Exception):
    """Raised when a corpus file cannot be parsed into documents."""

    def __init__(self, message: str, doc_index: int | None = None, field_name: str | None = None):
        self.doc_index = doc_index
        self.field_name = field_name
        where = []
        if doc_index is not None:
            where.append(f"document #{doc_index}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class CorpusValidationError(Exception):
    """Raised when a parsed document violates a structural invariant."""

    def __init__(self, doc_id: str, problems: Sequence[str]):
        self.doc_id = doc_id
        self.problems = list(problems)
        details = "; ".join(self.problems)
        super().__init__(f"invalid document {doc_id!r}: {details}")


class SplitTag(enum.Enum):
    HA = "ha"
    DS = "ds"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True, order=True)
class EntityPairKey:
    """Ordered (head, tail) entity pair within one document.

    The dataclass ordering (doc_id, head_idx, tail_idx) is the total order
    used everywhere ties must break deterministically.
    """

    doc_id: str
    head_idx: int
    tail_idx: int

    def as_tuple(self) -> tuple[str, int, int]:
        return (self.doc_id, self.head_idx, self.tail_idx)


@dataclass(frozen=True)
class Mention:
    sent_idx: int
    start: int
    end: int
    surface: str


@dataclass(frozen=True)
class Entity:
    entity_idx: int
    mentions: tuple[Mention, ...]
    entity_type: str

    def surfaces(self) -> frozenset[str]:
        """Case-normalized mention surfaces, the cross-document identity."""
        return frozenset(m.surface.casefold() for m in self.mentions)


@dataclass(frozen=True)
class GoldLabel:
    head_idx: int
    tail_idx: int
    relation: str
    evidence: tuple[int, ...] = ()


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    sentences: tuple[tuple[str, ...], ...]
    entities: tuple[Entity, ...]
    gold_labels: tuple[GoldLabel, ...]

    def label_set(self) -> set[tuple[int, int, str]]:
        return {(l.head_idx, l.tail_idx, l.relation) for l in self.gold_labels}


@dataclass(frozen=True)
class RelationSchema:
    """The closed relation universe of a corpus (|R| fixed per corpus)."""

    relations: tuple[str, ...]
    display_names: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.relations)) != len(self.relations):
            raise ValueError("relation ids must be unique")
        object.__setattr__(self, "_index", {r: i for i, r in enumerate(self.relations)})

    def __contains__(self, relation: str) -> bool:
        return relation in self._index

    def __len__(self) -> int:
        return len(self.relations)

    def index_of(self, relation: str) -> int:
        return self._index[relation]

    def display(self, relation: str) -> str:
        return self.display_names.get(relation, relation)

    @classmethod
    def from_file(cls, path: str | Path) -> "RelationSchema":
        """Read a schema from JSON: either a list of ids or {id: display name}."""
        raw = json.loads(Path(path).read_text())
        if isinstance(raw, list):
            return cls(relations=tuple(raw))
        if isinstance(raw, dict):
            return cls(relations=tuple(raw.keys()), display_names=dict(raw))
        raise CorpusFormatError("schema file must hold a JSON list or object")


@dataclass(frozen=True)
class FrequencyTable:
    """Training-instance counts per relation, over the full schema universe."""

    counts: dict[str, int]

    def total(self) -> int:
        return sum(self.counts.values())

    def merged(self, other: "FrequencyTable") -> "FrequencyTable":
        keys = set(self.counts) | set(other.counts)
        return FrequencyTable({r: self.counts.get(r, 0) + other.counts.get(r, 0) for r in keys})


@dataclass(frozen=True)
class Corpus:
    split: SplitTag
    documents: tuple[Document, ...]
    schema: RelationSchema
    # Pairs a human marked as relation-free; adapters may use them as hard
    # negatives.  Not representable in the DocRED file format itself.
    negative_pairs: tuple[EntityPairKey, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {d.doc_id: d for d in self.documents})

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def get(self, doc_id: str) -> Document | None:
        return self._by_id.get(doc_id)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def label_instances(self) -> Iterator[tuple[EntityPairKey, str]]:
        for doc in self.documents:
            for lab in doc.gold_labels:
                yield EntityPairKey(doc.doc_id, lab.head_idx, lab.tail_idx), lab.relation

    def num_label_instances(self) -> int:
        return sum(len(d.gold_labels) for d in self.documents)


def _parse_document(raw: dict, doc_index: int, schema: RelationSchema) -> Document:
    if not isinstance(raw, dict):
        raise CorpusFormatError("document is not an object", doc_index)

    def need(name: str, kind: type):
        if name not in raw:
            raise CorpusFormatError("missing field", doc_index, name)
        value = raw[name]
        if not isinstance(value, kind):
            raise CorpusFormatError(f"expected {kind.__name__}", doc_index, name)
        return value

    title = need("title", str)
    sents_raw = need("sents", list)
    vertex_raw = need("vertexSet", list)
    labels_raw = raw.get("labels", [])
    if not isinstance(labels_raw, list):
        raise CorpusFormatError("expected list", doc_index, "labels")

    sentences = []
    for s_i, sent in enumerate(sents_raw):
        if not isinstance(sent, list) or not all(isinstance(t, str) for t in sent):
            raise CorpusFormatError("sentence is not a token list", doc_index, f"sents[{s_i}]")
        sentences.append(tuple(sent))

    entities = []
    for e_i, ent in enumerate(vertex_raw):
        if not isinstance(ent, list):
            raise CorpusFormatError("entity is not a mention list", doc_index, f"vertexSet[{e_i}]")
        mentions = []
        ent_type = ""
        for m_i, men in enumerate(ent):
            if not isinstance(men, dict):
                raise CorpusFormatError(
                    "mention is not an object", doc_index, f"vertexSet[{e_i}][{m_i}]"
                )
            try:
                pos = men["pos"]
                mentions.append(
                    Mention(
                        sent_idx=int(men["sent_id"]),
                        start=int(pos[0]),
                        end=int(pos[1]),
                        surface=str(men.get("name", "")),
                    )
                )
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise CorpusFormatError(
                    f"bad mention: {exc}", doc_index, f"vertexSet[{e_i}][{m_i}]"
                ) from exc
            ent_type = str(men.get("type", ent_type))
        entities.append(Entity(entity_idx=e_i, mentions=tuple(mentions), entity_type=ent_type))

    labels = []
    for l_i, lab in enumerate(labels_raw):
        if not isinstance(lab, dict):
            raise CorpusFormatError("label is not an object", doc_index, f"labels[{l_i}]")
        try:
            labels.append(
                GoldLabel(
                    head_idx=int(lab["h"]),
                    tail_idx=int(lab["t"]),
                    relation=str(lab["r"]),
                    evidence=tuple(int(e) for e in lab.get("evidence", [])),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(f"bad label: {exc}", doc_index, f"labels[{l_i}]") from exc

    doc = Document(
        doc_id=title,
        title=title,
        sentences=tuple(sentences),
        entities=tuple(entities),
        gold_labels=tuple(labels),
    )
    _validate_document(doc, schema)
    return doc


def _validate_document(doc: Document, schema: RelationSchema) -> None:
    problems = []
    n_sents = len(doc.sentences)
    for ent in doc.entities:
        if not ent.mentions:
            problems.append(f"entity {ent.entity_idx} has no mentions")
        for men in ent.mentions:
            if not 0 <= men.sent_idx < n_sents:
                problems.append(
                    f"entity {ent.entity_idx} mention sentence {men.sent_idx} out of range"
                )
                continue
            sent_len = len(doc.sentences[men.sent_idx])
            if men.end <= men.start:
                problems.append(f"entity {ent.entity_idx} has degenerate span {men.start}:{men.end}")
            if men.start < 0 or men.end > sent_len:
                problems.append(
                    f"entity {ent.entity_idx} span {men.start}:{men.end} exceeds sentence "
                    f"{men.sent_idx} length {sent_len}"
                )
    n_ents = len(doc.entities)
    for lab in doc.gold_labels:
        if not 0 <= lab.head_idx < n_ents or not 0 <= lab.tail_idx < n_ents:
            problems.append(f"label ({lab.head_idx},{lab.tail_idx},{lab.relation}) references missing entity")
        if lab.head_idx == lab.tail_idx:
            problems.append(f"label on self-pair ({lab.head_idx},{lab.head_idx})")
        if lab.relation not in schema:
            problems.append(f"unknown relation {lab.relation!r}")
    if problems:
        raise CorpusValidationError(doc.doc_id, problems)


def load_corpus(path: str | Path, split: SplitTag, schema: RelationSchema) -> Corpus:
    """Load and validate one DocRED-format file as the given split."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise CorpusFormatError("top level must be an array of documents")

    documents = []
    seen_ids: set[str] = set()
    for i, raw_doc in enumerate(raw):
        doc = _parse_document(raw_doc, i, schema)
        if doc.doc_id in seen_ids:
            raise CorpusValidationError(doc.doc_id, ["duplicate title"])
        seen_ids.add(doc.doc_id)
        documents.append(doc)
    return Corpus(split=split, documents=tuple(documents), schema=schema)


def document_to_record(doc: Document) -> dict:
    return {
        "title": doc.title,
        "sents": [list(s) for s in doc.sentences],
        "vertexSet": [
            [
                {
                    "sent_id": m.sent_idx,
                    "pos": [m.start, m.end],
                    "name": m.surface,
                    "type": e.entity_type,
                }
                for m in e.mentions
            ]
            for e in doc.entities
        ],
        "labels": [
            {"h": l.head_idx, "t": l.tail_idx, "r": l.relation, "evidence": list(l.evidence)}
            for l in doc.gold_labels
        ],
    }


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    """Emit the corpus in the same file format load_corpus accepts.

    Output is byte-deterministic for a given corpus.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("[")
        for i, doc in enumerate(corpus.documents):
            if i:
                fh.write(",\n")
            json.dump(document_to_record(doc), fh, ensure_ascii=False)
        fh.write("]")


def relation_frequencies(corpus: Corpus) -> FrequencyTable:
    """Count label instances per relation (a pair with 2 relations adds 2)."""
    counts = {r: 0 for r in corpus.schema.relations}
    for doc in corpus.documents:
        for lab in doc.gold_labels:
            counts[lab.relation] += 1
    return FrequencyTable(counts)


def long_tail_set(freq: FrequencyTable, threshold: int) -> set[str]:
    """Relations with strictly fewer than `threshold` training instances."""
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    return {r for r, c in freq.counts.items() if c < threshold}


def enumerate_pairs(doc: Document) -> list[EntityPairKey]:
    """All ordered pairs of distinct entities, in total key order."""
    m = len(doc.entities)
    return [
        EntityPairKey(doc.doc_id, h, t)
        for h in range(m)
        for t in range(m)
        if h != t
    ]


def enumerate_corpus_pairs(corpus: Corpus) -> Iterator[EntityPairKey]:
    for doc in corpus.documents:
        yield from enumerate_pairs(doc)


def merge_corpora(base: Corpus, extra_docs: Iterable[Document], split: SplitTag | None = None) -> Corpus:
    """Append documents, merging label sets for documents already present."""
    merged: dict[str, Document] = {d.doc_id: d for d in base.documents}
    order = [d.doc_id for d in base.documents]
    for doc in extra_docs:
        if doc.doc_id in merged:
            existing = merged[doc.doc_id]
            known = existing.label_set()
            new_labels = tuple(
                l for l in doc.gold_labels if (l.head_idx, l.tail_idx, l.relation) not in known
            )
            merged[doc.doc_id] = Document(
                doc_id=existing.doc_id,
                title=existing.title,
                sentences=existing.sentences,
                entities=existing.entities,
                gold_labels=existing.gold_labels + new_labels,
            )
        else:
            merged[doc.doc_id] = doc
            order.append(doc.doc_id)
    return Corpus(
        split=split or base.split,
        documents=tuple(merged[i] for i in order),
        schema=base.schema,
        negative_pairs=base.negative_pairs,
    )
