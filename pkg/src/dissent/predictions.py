"""Per-model probability matrices and the ways they get produced.

Real relation extraction models live behind a file-based subprocess
protocol (one invocation trains or finetunes, predicts, and writes scores).
Desk-scale runs use the synthetic noisy oracle instead, which fabricates
scores from hidden gold labels.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .corpus import Corpus, EntityPairKey, RelationSchema, enumerate_pairs, write_corpus

# Scores this small are indistinguishable from "not predicted" and are not
# stored; keeps matrices sparse at distant-supervision scale.
MIN_STORED_SCORE = 1e-4


class PredictionLoadError(Exception):
    pass


class AdapterError(Exception):
    """Adapter subprocess failed; carries captured diagnostics."""

    def __init__(self, message: str, stdout: str = "", stderr: str = ""):
        self.stdout = stdout
        self.stderr = stderr
        tail = ("\n--- stderr ---\n" + stderr.strip()) if stderr.strip() else ""
        super().__init__(message + tail)


class AdapterProtocolError(AdapterError):
    """Adapter exited 0 but did not honor the file contract."""


@dataclass(frozen=True)
class ModelPool:
    """The committee: model names plus per-model decision thresholds."""

    models: tuple[str, ...]
    decision_thresholds: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.models) < 2:
            raise ValueError("a committee needs at least 2 models")
        if len(set(self.models)) != len(self.models):
            raise ValueError("model names must be unique")
        if len(self.models) % 2 == 0:
            warnings.warn("even committee size; an odd count is recommended", stacklevel=2)
        for name, thr in self.decision_thresholds.items():
            if not 0.0 <= thr <= 1.0:
                raise ValueError(f"threshold for {name} outside [0,1]: {thr}")

    def __len__(self) -> int:
        return len(self.models)

    def threshold(self, model: str) -> float:
        return self.decision_thresholds.get(model, 0.5)


class PredictionMatrix:
    """Sparse scores per (entity pair, relation); absent entries read as 0.0."""

    def __init__(self, model: str, iteration: int):
        self.model = model
        self.iteration = iteration
        self._entries: dict[EntityPairKey, dict[str, float]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def set_scores(self, pair: EntityPairKey, scores: dict[str, float]) -> None:
        self._entries[pair] = scores

    def lookup(self, pair: EntityPairKey, relation: str) -> float:
        by_rel = self._entries.get(pair)
        if by_rel is None:
            return 0.0
        return by_rel.get(relation, 0.0)

    def scores_for(self, pair: EntityPairKey) -> Mapping[str, float]:
        return self._entries.get(pair, {})

    def pairs(self) -> Iterator[EntityPairKey]:
        return iter(self._entries)

    def items(self) -> Iterator[tuple[EntityPairKey, Mapping[str, float]]]:
        return iter(self._entries.items())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PredictionMatrix):
            return NotImplemented
        return (
            self.model == other.model
            and self.iteration == other.iteration
            and self._entries == other._entries
        )


def predicted_relations(
    matrix: PredictionMatrix, pair: EntityPairKey, threshold: float
) -> set[str]:
    """Relations scored at or above the threshold.

    Comparison is inclusive; at threshold 0 only explicitly stored entries
    qualify, otherwise every pair would predict the whole schema.
    """
    return {r for r, s in matrix.scores_for(pair).items() if s >= threshold}


def ingest_predictions(
    path: str | Path, model: str, iteration: int, schema: RelationSchema
) -> PredictionMatrix:
    """Read a line-delimited prediction file into a matrix."""
    matrix = PredictionMatrix(model, iteration)
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                title = rec["title"]
                pair = EntityPairKey(title, int(rec["h_idx"]), int(rec["t_idx"]))
                scores = rec["scores"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise PredictionLoadError(f"record {lineno}: malformed ({exc})") from exc
            clean: dict[str, float] = {}
            for rel, score in scores.items():
                if rel not in schema:
                    raise PredictionLoadError(f"record {lineno}: unknown relation {rel!r}")
                score = float(score)
                if not 0.0 <= score <= 1.0:
                    raise PredictionLoadError(
                        f"record {lineno}: probability {score} outside [0,1] for {rel!r}"
                    )
                clean[rel] = score
            matrix.set_scores(pair, clean)
    return matrix


def write_predictions(matrix: PredictionMatrix, path: str | Path) -> None:
    """Inverse of ingest_predictions, deterministic record and key order."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in sorted(matrix.pairs()):
            rec = {
                "title": pair.doc_id,
                "h_idx": pair.head_idx,
                "t_idx": pair.tail_idx,
                "scores": dict(sorted(matrix.scores_for(pair).items())),
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# --- subprocess adapter protocol ---

PLACEHOLDERS = ("{TRAIN}", "{PREDICT}", "{CHECKPOINT_IN}", "{CHECKPOINT_OUT}", "{OUT}")

# Substituted for {CHECKPOINT_IN} when no input checkpoint exists (pretrain).
NO_CHECKPOINT = "-"


@dataclass(frozen=True)
class ModelAdapterSpec:
    """How to invoke one external model: argv template plus runtime limits.

    The template must mention every placeholder slot: {TRAIN}, {PREDICT},
    {CHECKPOINT_IN}, {CHECKPOINT_OUT}, and {OUT} for the prediction file the
    adapter is required to write.
    """

    command: tuple[str, ...]
    workdir: str | None = None
    timeout: float = 3600.0

    def __post_init__(self):
        joined = " ".join(self.command)
        missing = [p for p in PLACEHOLDERS if p not in joined]
        if missing:
            raise ValueError(f"adapter command template missing slots: {missing}")


def run_model_adapter(
    spec: ModelAdapterSpec,
    train: Corpus,
    predict_targets: Corpus,
    checkpoint_in: str | Path | None,
    *,
    model: str,
    iteration: int,
    schema: RelationSchema,
    scratch_dir: str | Path | None = None,
) -> tuple[PredictionMatrix, Path]:
    """One adapter invocation: (fine)tune on `train`, predict over targets.

    An empty training corpus means predict-only: the adapter must load
    {CHECKPOINT_IN} and may write it through unchanged to {CHECKPOINT_OUT}.
    """
    scratch = Path(scratch_dir) if scratch_dir else Path(tempfile.mkdtemp(prefix="adapter_"))
    scratch.mkdir(parents=True, exist_ok=True)
    train_path = scratch / "train.json"
    predict_path = scratch / "predict.json"
    out_path = scratch / "predictions.jsonl"
    ckpt_out = scratch / "checkpoint.out"
    write_corpus(train, train_path)
    write_corpus(predict_targets, predict_path)
    if train.negative_pairs:
        with (scratch / "train.negatives.jsonl").open("w", encoding="utf-8") as fh:
            for pair in train.negative_pairs:
                fh.write(
                    json.dumps(
                        {"title": pair.doc_id, "h_idx": pair.head_idx, "t_idx": pair.tail_idx}
                    )
                    + "\n"
                )

    substitutions = {
        "{TRAIN}": str(train_path),
        "{PREDICT}": str(predict_path),
        "{CHECKPOINT_IN}": str(checkpoint_in) if checkpoint_in else NO_CHECKPOINT,
        "{CHECKPOINT_OUT}": str(ckpt_out),
        "{OUT}": str(out_path),
    }
    argv = list(spec.command)
    for i, arg in enumerate(argv):
        for slot, value in substitutions.items():
            arg = arg.replace(slot, value)
        argv[i] = arg

    try:
        proc = subprocess.run(
            argv,
            cwd=spec.workdir,
            capture_output=True,
            text=True,
            timeout=spec.timeout,
        )
    except subprocess.TimeoutExpired as exc:
        raise AdapterError(f"adapter for {model!r} timed out after {spec.timeout}s") from exc
    except OSError as exc:
        raise AdapterError(f"adapter for {model!r} could not start: {exc}") from exc
    if proc.returncode != 0:
        raise AdapterError(
            f"adapter for {model!r} exited {proc.returncode}",
            stdout=proc.stdout,
            stderr=proc.stderr,
        )
    if not out_path.exists():
        raise AdapterProtocolError(
            f"adapter for {model!r} exited 0 but wrote no prediction file at {out_path}"
        )
    matrix = ingest_predictions(out_path, model, iteration, schema)
    if not ckpt_out.exists():
        raise AdapterProtocolError(f"adapter for {model!r} wrote no checkpoint at {ckpt_out}")
    return matrix, ckpt_out


# --- synthetic noisy oracle ---


@dataclass(frozen=True)
class SyntheticModelParams:
    """Controls the fake committee member used for desk-scale runs.

    flip_rate is the chance a cell's score is drawn from the wrong side: a
    true label scored like a negative, or vice versa.  Flips are symmetric by
    default; negative_flip_rate, when set, gives non-label cells their own
    (usually far smaller) rate, since a corpus has vastly more negative cells
    than labels.  The per-relation maps override the respective base rates.
    """

    seed: int
    confidence_mean: float = 0.7
    confidence_spread: float = 0.15
    flip_rate: float = 0.0
    per_relation_skill: dict[str, float] = field(default_factory=dict)
    negative_flip_rate: float | None = None
    per_relation_negative: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        checks = [("confidence_mean", self.confidence_mean), ("flip_rate", self.flip_rate)]
        if self.negative_flip_rate is not None:
            checks.append(("negative_flip_rate", self.negative_flip_rate))
        for name, value in checks:
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} outside [0,1]: {value}")
        if self.confidence_spread < 0.0:
            raise ValueError("confidence_spread must be nonnegative")
        for rel, rate in {**self.per_relation_skill, **self.per_relation_negative}.items():
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"per-relation flip rate outside [0,1] for {rel!r}")


def synthetic_model(
    gold: Corpus,
    params: SyntheticModelParams,
    schema: RelationSchema,
    *,
    model: str = "synthetic",
    iteration: int = 0,
    min_score: float = MIN_STORED_SCORE,
) -> PredictionMatrix:
    """Fabricate a prediction matrix from gold labels plus controlled noise.

    True labels score near confidence_mean, everything else near its
    complement; each cell flips sides with probability flip_rate.  Scores are
    the center plus symmetric triangular noise of half-width
    confidence_spread, clipped to [0,1].  Deterministic for a given seed.
    """
    rng = np.random.default_rng(params.seed)
    n_rels = len(schema)
    pos_flip = np.full(n_rels, params.flip_rate)
    for rel, rate in params.per_relation_skill.items():
        pos_flip[schema.index_of(rel)] = rate
    if params.negative_flip_rate is None:
        neg_flip = pos_flip.copy()
    else:
        neg_flip = np.full(n_rels, params.negative_flip_rate)
    for rel, rate in params.per_relation_negative.items():
        neg_flip[schema.index_of(rel)] = rate

    matrix = PredictionMatrix(model, iteration)
    rel_list = list(schema.relations)
    for doc in gold.documents:
        pairs = enumerate_pairs(doc)
        if not pairs:
            continue
        pair_index = {(p.head_idx, p.tail_idx): i for i, p in enumerate(pairs)}
        truth = np.zeros((len(pairs), n_rels), dtype=bool)
        for lab in doc.gold_labels:
            truth[pair_index[(lab.head_idx, lab.tail_idx)], schema.index_of(lab.relation)] = True

        flip_vec = np.where(truth, pos_flip, neg_flip)
        flips = rng.random(truth.shape) < flip_vec
        positive = truth ^ flips
        centers = np.where(positive, params.confidence_mean, 1.0 - params.confidence_mean)
        if params.confidence_spread > 0.0:
            w = params.confidence_spread
            noise = rng.triangular(-w, 0.0, w, size=truth.shape)
        else:
            noise = 0.0
        scores = np.clip(centers + noise, 0.0, 1.0)

        keep = scores >= min_score
        for i, pair in enumerate(pairs):
            row = keep[i]
            if not row.any():
                continue
            idx = np.nonzero(row)[0]
            vals = scores[i, idx]
            matrix.set_scores(pair, dict(zip([rel_list[j] for j in idx], vals.tolist())))
    return matrix
