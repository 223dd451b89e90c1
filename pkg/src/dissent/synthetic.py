"""Synthetic corpora and committee members for desk-scale runs.

Real distant-supervision corpora are far too large to iterate on at a desk,
so simulations fabricate a small world with a known truth: power-law
relation frequencies, a handful of genuinely long-tail relations, and noisy
oracle models whose per-relation skill improves as annotated examples
accumulate.  Scores are emitted densely over the schema (absent scores mean
zero disagreement, which would zero out every pair product and stall the
loop's stopping statistic).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .corpus import (
    Corpus,
    Document,
    Entity,
    EntityPairKey,
    GoldLabel,
    Mention,
    RelationSchema,
    SplitTag,
    relation_frequencies,
)
from .predictions import PredictionMatrix, SyntheticModelParams, synthetic_model
from .sampler import SampleBatch


@dataclass(frozen=True)
class WorldConfig:
    seed: int
    n_relations: int = 20
    n_long_tail: int = 5
    n_ha_docs: int = 60
    n_ds_docs: int = 200
    n_dev_docs: int = 60
    entities_per_doc: tuple[int, int] = (4, 7)
    labels_per_doc: tuple[int, int] = (2, 5)
    # exact per-relation instance quotas in the HA split
    ha_frequent_count: int = 14
    ha_long_tail_count: int = 3
    long_tail_threshold: int = 10
    # share of DS/dev truth labels drawn from long-tail relations
    long_tail_share: float = 0.3


@dataclass(frozen=True)
class SyntheticWorld:
    schema: RelationSchema
    ha: Corpus
    ds: Corpus
    dev: Corpus
    long_tail: frozenset[str]
    truth: dict[EntityPairKey, frozenset[str]]

    def truth_labels(self, pair: EntityPairKey) -> frozenset[str]:
        return self.truth.get(pair, frozenset())


def _make_doc(
    doc_id: str, rng: np.random.Generator, cfg: WorldConfig, name_pool: list[str]
) -> Document:
    n_entities = int(rng.integers(cfg.entities_per_doc[0], cfg.entities_per_doc[1] + 1))
    names = rng.choice(name_pool, size=n_entities, replace=False)
    sentences = []
    entities = []
    for i, name in enumerate(names):
        sentences.append(("Entity", str(name), "appears", "in", "this", "sentence", "."))
        entities.append(
            Entity(
                entity_idx=i,
                mentions=(Mention(sent_idx=i, start=1, end=2, surface=str(name)),),
                entity_type="MISC",
            )
        )
    return Document(
        doc_id=doc_id,
        title=doc_id,
        sentences=tuple(sentences),
        entities=tuple(entities),
        gold_labels=(),
    )


def _with_labels(doc: Document, triples: set[tuple[int, int, str]]) -> Document:
    labels = tuple(GoldLabel(h, t, r) for h, t, r in sorted(triples))
    return Document(
        doc_id=doc.doc_id,
        title=doc.title,
        sentences=doc.sentences,
        entities=doc.entities,
        gold_labels=labels,
    )


def _random_pair(rng: np.random.Generator, n_entities: int) -> tuple[int, int]:
    h = int(rng.integers(0, n_entities))
    t = int(rng.integers(0, n_entities - 1))
    if t >= h:
        t += 1
    return h, t


def build_world(cfg: WorldConfig) -> SyntheticWorld:
    """Generate the HA/DS/dev corpora; deterministic for a given seed."""
    rng = np.random.default_rng(cfg.seed)
    relations = tuple(f"R{i:02d}" for i in range(cfg.n_relations))
    schema = RelationSchema(relations=relations)
    frequent = relations[: cfg.n_relations - cfg.n_long_tail]
    long_tail = relations[cfg.n_relations - cfg.n_long_tail :]
    name_pool = [f"N{i:03d}" for i in range(400)]

    # frequent relations follow a power law; the long tail is uniform-rare
    weights = np.array([1.0 / (i + 1) for i in range(len(frequent))])
    weights /= weights.sum()

    def draw_relation() -> str:
        if rng.random() < cfg.long_tail_share:
            return str(long_tail[int(rng.integers(0, len(long_tail)))])
        return str(rng.choice(frequent, p=weights))

    def fill_split(prefix: str, n_docs: int) -> list[Document]:
        docs = [_make_doc(f"{prefix}_{i:04d}", rng, cfg, name_pool) for i in range(n_docs)]
        for i, doc in enumerate(docs):
            n_labels = int(rng.integers(cfg.labels_per_doc[0], cfg.labels_per_doc[1] + 1))
            triples: set[tuple[int, int, str]] = set()
            for _ in range(n_labels):
                h, t = _random_pair(rng, len(doc.entities))
                triples.add((h, t, draw_relation()))
            docs[i] = _with_labels(doc, triples)
        return docs

    # HA gets exact per-relation quotas so the long-tail set is stable
    ha_docs = [_make_doc(f"ha_{i:04d}", rng, cfg, name_pool) for i in range(cfg.n_ha_docs)]
    ha_triples: list[set[tuple[int, int, str]]] = [set() for _ in ha_docs]
    for rel in relations:
        quota = cfg.ha_long_tail_count if rel in long_tail else cfg.ha_frequent_count
        placed = 0
        while placed < quota:
            d = int(rng.integers(0, len(ha_docs)))
            h, t = _random_pair(rng, len(ha_docs[d].entities))
            if (h, t, rel) in ha_triples[d]:
                continue
            ha_triples[d].add((h, t, rel))
            placed += 1
    ha_docs = [_with_labels(doc, triples) for doc, triples in zip(ha_docs, ha_triples)]

    ha = Corpus(split=SplitTag.HA, documents=tuple(ha_docs), schema=schema)
    ds = Corpus(split=SplitTag.DS, documents=tuple(fill_split("ds", cfg.n_ds_docs)), schema=schema)
    dev = Corpus(
        split=SplitTag.DEV, documents=tuple(fill_split("dev", cfg.n_dev_docs)), schema=schema
    )

    truth: dict[EntityPairKey, frozenset[str]] = {}
    for doc in ds.documents:
        by_pair: dict[EntityPairKey, set[str]] = {}
        for lab in doc.gold_labels:
            by_pair.setdefault(EntityPairKey(doc.doc_id, lab.head_idx, lab.tail_idx), set()).add(
                lab.relation
            )
        truth.update({k: frozenset(v) for k, v in by_pair.items()})

    counts = relation_frequencies(ha)
    lt = frozenset(r for r, c in counts.counts.items() if c < cfg.long_tail_threshold)
    return SyntheticWorld(schema=schema, ha=ha, ds=ds, dev=dev, long_tail=lt, truth=truth)


@dataclass(frozen=True)
class SkillConfig:
    """How a synthetic committee member converts training counts into noise.

    Flip rates start at the base values and halve every `halving` annotated
    instances a relation gains beyond its pretrain baseline.  Confidence
    sharpens globally: scores start centered at confidence_mean (its
    complement for negatives) and move toward certainty as the training set
    grows, halving the distance every `confidence_halving` new instances.
    The sharpened center is clamped so scores stay inside (0, 1) and remain
    stored rather than pruned as near-zero.
    """

    flip_rate: float = 0.3
    long_tail_flip_rate: float = 0.35
    negative_flip_rate: float = 0.01
    confidence_mean: float = 0.7
    confidence_spread: float = 0.15
    halving: float = 4.0
    confidence_halving: float = 15.0
    max_confidence: float = 0.97


class SyntheticAdapter:
    """In-process committee member driven by hidden gold labels.

    Checkpoints are plain dicts (JSON-safe): the training round plus the
    per-relation label counts at pretrain and now.  Prediction draws are
    seeded from (model seed, round, target split), so re-running any call
    reproduces its output exactly.
    """

    def __init__(
        self,
        name: str,
        seed: int,
        schema: RelationSchema,
        long_tail: frozenset[str],
        skill: SkillConfig | None = None,
    ):
        self.name = name
        self.seed = seed
        self.schema = schema
        self.long_tail = long_tail
        self.skill = skill or SkillConfig()

    def _counts(self, corpus: Corpus) -> dict[str, int]:
        return dict(relation_frequencies(corpus).counts)

    def update(
        self, ckpt_in: dict | None, train: Corpus, predict: Corpus, iteration: int
    ) -> tuple[PredictionMatrix, dict]:
        if len(train.documents) == 0:
            if ckpt_in is None:
                raise ValueError("predict-only call requires a checkpoint")
            ckpt = ckpt_in
        elif ckpt_in is None:
            counts = self._counts(train)
            ckpt = {"round": 0, "baseline": counts, "counts": counts}
        else:
            ckpt = {
                "round": iteration,
                "baseline": ckpt_in["baseline"],
                "counts": self._counts(train),
            }
        return self._predict(ckpt, predict), ckpt

    def _flip_rates(self, ckpt: Mapping) -> tuple[dict[str, float], dict[str, float]]:
        skill = self.skill
        positive: dict[str, float] = {}
        negative: dict[str, float] = {}
        for rel in self.schema.relations:
            base = skill.long_tail_flip_rate if rel in self.long_tail else skill.flip_rate
            extra = max(0, ckpt["counts"].get(rel, 0) - ckpt["baseline"].get(rel, 0))
            decay = 2.0 ** (-extra / skill.halving)
            positive[rel] = base * decay
            negative[rel] = skill.negative_flip_rate * decay
        return positive, negative

    def _confidence(self, ckpt: Mapping) -> float:
        total_extra = sum(
            max(0, ckpt["counts"].get(r, 0) - ckpt["baseline"].get(r, 0))
            for r in self.schema.relations
        )
        gap = (1.0 - self.skill.confidence_mean) * 2.0 ** (
            -total_extra / self.skill.confidence_halving
        )
        cap = max(self.skill.max_confidence, self.skill.confidence_mean)
        return min(cap, 1.0 - gap)

    def _predict(self, ckpt: Mapping, targets: Corpus) -> PredictionMatrix:
        positive, negative = self._flip_rates(ckpt)
        tag = {"ha": 0, "ds": 1, "dev": 2, "test": 3}[targets.split.value]
        seed_seq = np.random.SeedSequence(self.seed, spawn_key=(int(ckpt["round"]), tag))
        params = SyntheticModelParams(
            seed=int(seed_seq.generate_state(1)[0]),
            confidence_mean=self._confidence(ckpt),
            confidence_spread=self.skill.confidence_spread,
            flip_rate=0.0,
            per_relation_skill=positive,
            negative_flip_rate=0.0,
            per_relation_negative=negative,
        )
        return synthetic_model(
            targets, params, self.schema, model=self.name, iteration=int(ckpt["round"])
        )


class PerfectAnnotator:
    """Simulated annotator: answers every sampled pair with its true labels."""

    def __init__(self, world: SyntheticWorld, name: str = "oracle"):
        self.world = world
        self.name = name

    def __call__(self, batch: SampleBatch) -> dict[EntityPairKey, frozenset[str]]:
        return {item.key: self.world.truth_labels(item.key) for item in batch.items}
