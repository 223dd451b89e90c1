"""Committee disagreement scores over entity pairs.

For one relation, the committee disagrees unless every model predicts it or
every model rejects it; with independent models that probability is

    phi(r) = 1 - [prod_i p_i(r) + prod_i (1 - p_i(r))].

Per pair, the relation-wise values multiply into an overall disagreement,
and a log transform spreads the tiny products apart for ranking:

    product(pair) = prod_r phi(r)        psi(pair) = sum_r log(phi(r) + delta)

Three alternative selection criteria are provided for ablations: PPM (mean
of 1 - prod_i p_i over relations), PPD (log-sum of the same quantity), and
summed binary entropy of the committee-mean score.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._kernels import active as kernels
from .corpus import EntityPairKey, RelationSchema
from .predictions import PredictionMatrix

DEFAULT_DELTA = 1e-12

# Pairs per dense scoring block; bounds peak memory at
# chunk * n_models * |R| * 8 bytes.
CHUNK_PAIRS = 2048


class CriterionKind(enum.Enum):
    DOREMI_LOG = "doremi_log"
    PPM = "ppm"
    PPD = "ppd"
    MAX_ENTROPY = "max_entropy"


@dataclass(frozen=True)
class DisagreementConfig:
    schema: RelationSchema
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not 0.0 < self.delta < 1e-6:
            raise ValueError(f"delta must be in (0, 1e-6), got {self.delta}")


@dataclass(frozen=True)
class DisagreementScore:
    pair: EntityPairKey
    per_relation: dict[str, float]
    pair_product: float
    log_score: float


def relation_disagreement(probs: Sequence[float]) -> float:
    """Probability the committee is not unanimous on one relation."""
    if len(probs) < 2:
        raise ValueError("need at least 2 model probabilities")
    prod_yes = 1.0
    prod_no = 1.0
    for p in probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability outside [0,1]: {p}")
        prod_yes *= p
        prod_no *= 1.0 - p
    return max(0.0, 1.0 - (prod_yes + prod_no))


def assemble_block(
    matrices: Sequence[PredictionMatrix],
    pairs: Sequence[EntityPairKey],
    schema: RelationSchema,
) -> np.ndarray:
    """Densify sparse matrices for a pair chunk: shape (pairs, models, |R|)."""
    block = np.zeros((len(pairs), len(matrices), len(schema)))
    index_of = schema.index_of
    for m, matrix in enumerate(matrices):
        for i, pair in enumerate(pairs):
            for rel, score in matrix.scores_for(pair).items():
                block[i, m, index_of(rel)] = score
    return block


def _check_committee(matrices: Sequence[PredictionMatrix]) -> None:
    if len(matrices) < 2:
        raise ValueError("disagreement needs at least 2 model matrices")


def pair_disagreement(
    matrices: Sequence[PredictionMatrix],
    pair: EntityPairKey,
    cfg: DisagreementConfig,
) -> DisagreementScore:
    """Full disagreement record for one pair over the whole schema."""
    _check_committee(matrices)
    block = assemble_block(matrices, [pair], cfg.schema)
    phi = kernels.relation_disagreements(block)[0]
    log_score = float(kernels.committee_log_scores(block, cfg.delta)[0])
    product = float(kernels.pair_products(block)[0])
    return DisagreementScore(
        pair=pair,
        per_relation={r: float(phi[j]) for j, r in enumerate(cfg.schema.relations)},
        pair_product=product,
        log_score=log_score,
    )


def ppm_score(
    matrices: Sequence[PredictionMatrix], pair: EntityPairKey, cfg: DisagreementConfig
) -> float:
    _check_committee(matrices)
    return float(kernels.ppm_scores(assemble_block(matrices, [pair], cfg.schema))[0])


def ppd_score(
    matrices: Sequence[PredictionMatrix], pair: EntityPairKey, cfg: DisagreementConfig
) -> float:
    _check_committee(matrices)
    return float(kernels.ppd_scores(assemble_block(matrices, [pair], cfg.schema), cfg.delta)[0])


def entropy_score(
    matrices: Sequence[PredictionMatrix], pair: EntityPairKey, cfg: DisagreementConfig
) -> float:
    _check_committee(matrices)
    return float(kernels.entropy_scores(assemble_block(matrices, [pair], cfg.schema))[0])


def _criterion_kernel(criterion: CriterionKind, block: np.ndarray, delta: float) -> np.ndarray:
    if criterion is CriterionKind.DOREMI_LOG:
        return kernels.committee_log_scores(block, delta)
    if criterion is CriterionKind.PPM:
        return kernels.ppm_scores(block)
    if criterion is CriterionKind.PPD:
        return kernels.ppd_scores(block, delta)
    if criterion is CriterionKind.MAX_ENTROPY:
        return kernels.entropy_scores(block)
    raise ValueError(f"unknown criterion {criterion!r}")


def _chunked(pairs: Iterable[EntityPairKey], size: int) -> Iterator[list[EntityPairKey]]:
    chunk: list[EntityPairKey] = []
    for pair in pairs:
        chunk.append(pair)
        if len(chunk) >= size:
            yield chunk
            chunk = []
    if chunk:
        yield chunk


def scored_chunks(
    matrices: Sequence[PredictionMatrix],
    pairs: Iterable[EntityPairKey],
    cfg: DisagreementConfig,
    criterion: CriterionKind,
    *,
    chunk_size: int = CHUNK_PAIRS,
) -> Iterator[tuple[list[EntityPairKey], np.ndarray, np.ndarray]]:
    """Yield (pairs, criterion scores, pair products) per dense chunk.

    One densification feeds both reductions, so a full scoring pass over the
    distant split touches each sparse entry once.
    """
    _check_committee(matrices)
    for chunk in _chunked(pairs, chunk_size):
        block = assemble_block(matrices, chunk, cfg.schema)
        yield chunk, _criterion_kernel(criterion, block, cfg.delta), kernels.pair_products(block)


def score_pairs(
    criterion: CriterionKind,
    matrices: Sequence[PredictionMatrix],
    pairs: Iterable[EntityPairKey],
    cfg: DisagreementConfig,
) -> Iterator[tuple[EntityPairKey, float]]:
    """Stream (pair, score) under the chosen criterion."""
    for chunk, scores, _ in scored_chunks(matrices, pairs, cfg, criterion):
        for pair, score in zip(chunk, scores):
            yield pair, float(score)


def mean_disagreement(scores: Iterable[DisagreementScore]) -> float:
    """Arithmetic mean of pair products; exact summation, order-invariant."""
    return mean_of_products(s.pair_product for s in scores)


def mean_of_products(products: Iterable[float]) -> float:
    parts = list(products)
    if not parts:
        raise ValueError("mean disagreement over an empty stream is undefined")
    return math.fsum(parts) / len(parts)


def dump_scores(
    scored: Iterable[tuple[EntityPairKey, float]],
    criterion: CriterionKind,
    path: str | Path,
) -> int:
    """Write the audit stream: one line per scored pair."""
    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair, score in scored:
            fh.write(
                json.dumps(
                    {
                        "title": pair.doc_id,
                        "h_idx": pair.head_idx,
                        "t_idx": pair.tail_idx,
                        "criterion": criterion.value,
                        "score": score,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            n += 1
    return n
