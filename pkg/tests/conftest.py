import json

import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed"):
        for report in terminalreporter.stats.get(outcome, []):
            if getattr(report, "when", "call") != "call":
                continue
            if "test_acceptance.py" in report.nodeid:
                name = report.nodeid.split("::")[-1]
                lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{name}: {outcome}")

from dissent.corpus import (
    Corpus,
    Document,
    Entity,
    EntityPairKey,
    GoldLabel,
    Mention,
    RelationSchema,
    SplitTag,
)
from dissent.predictions import PredictionMatrix


def build_doc(doc_id: str, n_entities: int = 3, labels=()) -> Document:
    sentences = []
    entities = []
    for i in range(n_entities):
        name = f"{doc_id}_e{i}"
        sentences.append(("Token", name, "ends", "."))
        entities.append(
            Entity(entity_idx=i, mentions=(Mention(i, 1, 2, name),), entity_type="MISC")
        )
    return Document(
        doc_id=doc_id,
        title=doc_id,
        sentences=tuple(sentences),
        entities=tuple(entities),
        gold_labels=tuple(GoldLabel(h, t, r) for h, t, r in labels),
    )


def build_corpus(docs, schema, split=SplitTag.HA) -> Corpus:
    return Corpus(split=split, documents=tuple(docs), schema=schema)


def build_matrix(model: str, entries: dict, iteration: int = 0) -> PredictionMatrix:
    """entries: {(doc_id, h, t): {rel: score}}"""
    matrix = PredictionMatrix(model, iteration)
    for (doc_id, h, t), scores in entries.items():
        matrix.set_scores(EntityPairKey(doc_id, h, t), dict(scores))
    return matrix


def raw_doc(title: str, n_entities: int = 2, labels=()) -> dict:
    """A DocRED-format record mirroring build_doc's layout."""
    return {
        "title": title,
        "sents": [["Token", f"{title}_e{i}", "ends", "."] for i in range(n_entities)],
        "vertexSet": [
            [{"sent_id": i, "pos": [1, 2], "name": f"{title}_e{i}", "type": "MISC"}]
            for i in range(n_entities)
        ],
        "labels": [{"h": h, "t": t, "r": r, "evidence": []} for h, t, r in labels],
    }


def write_corpus_file(tmp_path, docs: list[dict], name="corpus.json"):
    path = tmp_path / name
    path.write_text(json.dumps(docs))
    return path


@pytest.fixture
def schema():
    return RelationSchema(relations=("r1", "r2", "r3", "rare1", "rare2"))


@pytest.fixture
def pair():
    return EntityPairKey("d1", 0, 1)
