"""Orchestration of the iterative annotate/finetune cycle.

One iteration: sample the k highest-disagreement candidate pairs, collect
human (or simulated) labels, finetune every committee member from its
previous checkpoint on the grown training set, re-predict the distant
split, and refresh the stopping statistic.  The loop ends when the mean
disagreement falls to epsilon or the annotation budget is spent, after
which each model's best iteration (by long-tail dev F1) feeds aggregation.

State lives in a run directory (state.json, pool.log, matrices/, ckpt/)
so a half-finished human-in-the-loop run survives restarts; simulations
can run purely in memory instead.
"""

from __future__ import annotations

import enum
import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .aggregate import AggregationConfig, DenoisedDataset, aggregate_labels
from .annotation import AnnotationManager, training_augment
from .corpus import Corpus, EntityPairKey, SplitTag, enumerate_corpus_pairs
from .disagreement import (
    DEFAULT_DELTA,
    CriterionKind,
    DisagreementConfig,
    mean_of_products,
    scored_chunks,
)
from .evaluation import evaluate, matrix_predictions
from .predictions import (
    ingest_predictions,
    ModelAdapterSpec,
    ModelPool,
    PredictionMatrix,
    run_model_adapter,
    write_predictions,
)
from .sampler import SampleBatch, SampleItem, SamplerConfig, attach_predictions, select_top_k

STATE_VERSION = 1


class LoopError(Exception):
    pass


class IncompleteAnnotationError(LoopError):
    def __init__(self, pending: Sequence[EntityPairKey]):
        self.pending = list(pending)
        shown = ", ".join(str(p.as_tuple()) for p in self.pending[:5])
        more = f" (+{len(self.pending) - 5} more)" if len(self.pending) > 5 else ""
        super().__init__(f"iteration has unannotated pairs: {shown}{more}")


class RestoreError(LoopError):
    pass


class MigrationError(RestoreError):
    pass


class StopDecision(enum.Enum):
    CONTINUE = "continue"
    STOP_EPSILON = "stop_epsilon"
    STOP_BUDGET = "stop_budget"


@dataclass(frozen=True)
class LoopConfig:
    budget: int
    sampler: SamplerConfig
    epsilon: float = 0.0
    criterion: CriterionKind = CriterionKind.DOREMI_LOG
    mean_over: str = "candidates"  # or "all"
    aggregate_from: str = "best"  # or "final"
    tau: float = 0.7
    delta: float = DEFAULT_DELTA
    sampling: str = "criterion"  # or "random" (baseline)
    random_seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be nonnegative")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative (0 = pretrain only)")
        if self.mean_over not in ("candidates", "all"):
            raise ValueError(f"mean_over must be 'candidates' or 'all', got {self.mean_over!r}")
        if self.aggregate_from not in ("best", "final"):
            raise ValueError("aggregate_from must be 'best' or 'final'")
        if self.sampling not in ("criterion", "random"):
            raise ValueError("sampling must be 'criterion' or 'random'")


@dataclass
class IterationState:
    iteration: int
    mean_disagreement: float
    budget_used: int
    checkpoints: dict[str, object]
    matrices: dict[str, PredictionMatrix]
    dev_f1_history: dict[str, list[float]]
    mean_history: list[float]
    # model -> (iteration, dev F1); the matrix itself lives in memory only
    # when the run has no directory to persist into
    best: dict[str, tuple[int, float]]
    best_matrices: dict[str, PredictionMatrix] = field(default_factory=dict)


def should_stop(state: IterationState, cfg: LoopConfig) -> StopDecision:
    """Continue only while disagreement exceeds epsilon and budget remains."""
    if state.mean_disagreement <= cfg.epsilon:
        return StopDecision.STOP_EPSILON
    if state.budget_used >= cfg.budget:
        return StopDecision.STOP_BUDGET
    return StopDecision.CONTINUE


def best_iterations(state: IterationState) -> dict[str, int]:
    """Per model, the iteration with the highest dev long-tail F1 (earliest tie)."""
    out = {}
    for model, history in state.dev_f1_history.items():
        if not history:
            raise LoopError(f"model {model!r} has no dev F1 history")
        best_idx = 0
        for i, f1 in enumerate(history):
            if f1 > history[best_idx]:
                best_idx = i
        out[model] = best_idx
    return out


class CommitteeAdapter(Protocol):
    """One committee member behind a train/finetune/predict surface."""

    name: str

    def update(
        self, ckpt_in: object | None, train: Corpus, predict: Corpus, iteration: int
    ) -> tuple[PredictionMatrix, object]: ...


class SubprocessCommitteeAdapter:
    """Committee member backed by the file-based subprocess protocol.

    Checkpoints are opaque files owned by the adapter command; dev-set
    predictions reuse the fresh checkpoint with an empty training corpus
    (the predict-only convention).
    """

    def __init__(self, name: str, spec: ModelAdapterSpec, schema, scratch_root: Path | None = None):
        self.name = name
        self.spec = spec
        self.schema = schema
        self.scratch_root = scratch_root

    def update(self, ckpt_in, train, predict, iteration):
        scratch = None
        if self.scratch_root is not None:
            scratch = Path(self.scratch_root) / f"{self.name}_{iteration}_{predict.split.value}"
        matrix, ckpt_out = run_model_adapter(
            self.spec,
            train,
            predict,
            ckpt_in,
            model=self.name,
            iteration=iteration,
            schema=self.schema,
            scratch_dir=scratch,
        )
        return matrix, str(ckpt_out)

    def save_checkpoint(self, ckpt, path: Path) -> None:
        shutil.copyfile(str(ckpt), path)

    def load_checkpoint(self, path: Path):
        return str(path)


def _empty_corpus(schema, split: SplitTag = SplitTag.HA) -> Corpus:
    return Corpus(split=split, documents=(), schema=schema)


def _save_checkpoint(adapter, ckpt, path: Path) -> None:
    if hasattr(adapter, "save_checkpoint"):
        adapter.save_checkpoint(ckpt, path)
    else:
        path.write_text(json.dumps(ckpt, sort_keys=True))


def _load_checkpoint(adapter, path: Path):
    if hasattr(adapter, "load_checkpoint"):
        return adapter.load_checkpoint(path)
    return json.loads(path.read_text())


class LoopRunner:
    """Drives the loop; granular steps double as the annotation service's API."""

    def __init__(
        self,
        cfg: LoopConfig,
        ha: Corpus,
        ds: Corpus,
        dev: Corpus,
        pool: ModelPool,
        adapters: Sequence[CommitteeAdapter],
        manager: AnnotationManager,
        run_dir: str | Path | None = None,
    ):
        names = [a.name for a in adapters]
        if tuple(names) != pool.models:
            raise LoopError(f"adapters {names} do not match model pool {list(pool.models)}")
        self.cfg = cfg
        self.ha = ha
        self.ds = ds
        self.dev = dev
        self.model_pool = pool
        self.adapters = list(adapters)
        self.manager = manager
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self.state: IterationState | None = None
        self._pending_batch: SampleBatch | None = None
        self._scores: dict[EntityPairKey, float] | None = None
        self._ds_pairs = list(enumerate_corpus_pairs(ds))
        self._dcfg = DisagreementConfig(schema=ds.schema, delta=cfg.delta)
        if 0 < cfg.budget < cfg.sampler.k:
            import warnings

            warnings.warn("budget smaller than sample size k; one partial iteration at most")

    # -- scoring --

    def _rescore(self, matrices: Mapping[str, PredictionMatrix]) -> tuple[float, dict]:
        from .sampler import candidate_pairs

        ordered = [matrices[a.name] for a in self.adapters]
        candidates = candidate_pairs(ordered, self.model_pool, self.cfg.sampler.long_tail)
        scores: dict[EntityPairKey, float] = {}
        products_all: list[float] = []
        products_cand: list[float] = []
        for chunk, crit, prods in scored_chunks(
            ordered, self._ds_pairs, self._dcfg, self.cfg.criterion
        ):
            for pair, s, q in zip(chunk, crit, prods):
                products_all.append(float(q))
                if pair in candidates:
                    scores[pair] = float(s)
                    products_cand.append(float(q))
        chosen = products_cand if self.cfg.mean_over == "candidates" else products_all
        mean = mean_of_products(chosen) if chosen else 0.0
        return mean, scores

    def _dev_f1(self, matrix: PredictionMatrix) -> float:
        preds = matrix_predictions(matrix, self.model_pool.threshold(matrix.model))
        report = evaluate(preds, self.dev, slices={"long_tail": self.cfg.sampler.long_tail})
        return report.get("long_tail", "micro").f1

    # -- persistence --

    def _persist_iteration(self, state: IterationState, ckpts, matrices) -> None:
        if self.run_dir is None:
            return
        it = state.iteration
        for adapter in self.adapters:
            name = adapter.name
            mdir = self.run_dir / "matrices" / name
            cdir = self.run_dir / "ckpt" / name
            mdir.mkdir(parents=True, exist_ok=True)
            cdir.mkdir(parents=True, exist_ok=True)
            write_predictions(matrices[name], mdir / f"{it}.pred")
            _save_checkpoint(adapter, ckpts[name], cdir / str(it))
        self.checkpoint(state)

    def checkpoint(self, state: IterationState | None = None) -> Path:
        """Write state.json; matrices and checkpoints are already on disk."""
        if self.run_dir is None:
            raise LoopError("cannot checkpoint a run without a run directory")
        state = state or self.state
        if state is None:
            raise LoopError("no state to checkpoint")
        self.run_dir.mkdir(parents=True, exist_ok=True)
        payload = {
            "version": STATE_VERSION,
            "iteration": state.iteration,
            "mean_disagreement": state.mean_disagreement,
            "budget_used": state.budget_used,
            "mean_history": state.mean_history,
            "dev_f1_history": state.dev_f1_history,
            "best": {m: [it, f1] for m, (it, f1) in state.best.items()},
            "models": [a.name for a in self.adapters],
        }
        path = self.run_dir / "state.json"
        path.write_text(json.dumps(payload, sort_keys=True, indent=2))
        return path

    @classmethod
    def restore(
        cls,
        run_dir: str | Path,
        cfg: LoopConfig,
        ha: Corpus,
        ds: Corpus,
        dev: Corpus,
        pool: ModelPool,
        adapters: Sequence[CommitteeAdapter],
        lease_seconds: float = 300.0,
    ) -> "LoopRunner":
        """Rebuild a runner from a run directory written by the same version."""
        run_dir = Path(run_dir)
        state_path = run_dir / "state.json"
        try:
            payload = json.loads(state_path.read_text())
        except FileNotFoundError as exc:
            raise RestoreError(f"no checkpoint at {state_path}") from exc
        except (json.JSONDecodeError, OSError) as exc:
            raise RestoreError(f"unreadable checkpoint {state_path}: {exc}") from exc
        if not isinstance(payload, dict) or "version" not in payload:
            raise RestoreError(f"malformed checkpoint {state_path}")
        if payload["version"] != STATE_VERSION:
            raise MigrationError(
                f"checkpoint version {payload['version']} needs migration to {STATE_VERSION}"
            )
        from .annotation import AnnotationLog

        manager = AnnotationManager.restore(
            AnnotationLog(run_dir / "pool.log"), lease_seconds=lease_seconds
        )
        runner = cls(cfg, ha, ds, dev, pool, adapters, manager, run_dir=run_dir)
        try:
            it = int(payload["iteration"])
            matrices = {}
            ckpts = {}
            for adapter in runner.adapters:
                name = adapter.name
                matrices[name] = ingest_predictions(
                    run_dir / "matrices" / name / f"{it}.pred", name, it, ds.schema
                )
                ckpts[name] = _load_checkpoint(adapter, run_dir / "ckpt" / name / str(it))
            state = IterationState(
                iteration=it,
                mean_disagreement=float(payload["mean_disagreement"]),
                budget_used=int(payload["budget_used"]),
                checkpoints=ckpts,
                matrices=matrices,
                dev_f1_history={m: list(v) for m, v in payload["dev_f1_history"].items()},
                mean_history=[float(x) for x in payload["mean_history"]],
                best={m: (int(v[0]), float(v[1])) for m, v in payload["best"].items()},
            )
        except (KeyError, TypeError, ValueError, FileNotFoundError) as exc:
            raise RestoreError(f"checkpoint {run_dir} is incomplete: {exc}") from exc
        runner.state = state
        runner._restore_pending_batch(state)
        return runner

    def _restore_pending_batch(self, state: IterationState) -> None:
        events = list(self.manager.log.replay())
        batches = [e for e in events if e["event"] == "batch"]
        if not batches:
            return
        last = batches[-1]
        if last["iteration"] != state.iteration + 1:
            return
        items = tuple(
            SampleItem(
                key=EntityPairKey(i["title"], i["h_idx"], i["t_idx"]),
                score=i["score"],
                model_predictions={m: tuple(rs) for m, rs in i.get("predictions", {}).items()},
            )
            for i in last["items"]
        )
        self._pending_batch = SampleBatch(
            iteration=last["iteration"], items=items, shortfall=len(items) < self.cfg.sampler.k
        )

    # -- loop phases --

    def pretrain(self) -> IterationState:
        """Train every model on HA, predict the distant split, score it."""
        ckpts: dict[str, object] = {}
        matrices: dict[str, PredictionMatrix] = {}
        dev_f1: dict[str, list[float]] = {}
        for adapter in self.adapters:
            try:
                matrix, ckpt = adapter.update(None, self.ha, self.ds, 0)
                dev_matrix, _ = adapter.update(ckpt, _empty_corpus(self.ds.schema), self.dev, 0)
            except Exception as exc:
                raise LoopError(f"pretrain failed for model {adapter.name!r}: {exc}") from exc
            ckpts[adapter.name] = ckpt
            matrices[adapter.name] = matrix
            dev_f1[adapter.name] = [self._dev_f1(dev_matrix)]
        mean, scores = self._rescore(matrices)
        state = IterationState(
            iteration=0,
            mean_disagreement=mean,
            budget_used=self.manager.pool.budget_used,
            checkpoints=ckpts,
            matrices=matrices,
            dev_f1_history=dev_f1,
            mean_history=[mean],
            best={name: (0, dev_f1[name][0]) for name in matrices},
            best_matrices=dict(matrices) if self.run_dir is None else {},
        )
        self._scores = scores
        self._persist_iteration(state, ckpts, matrices)
        self.state = state
        return state

    def sample_next_batch(self, state: IterationState | None = None) -> SampleBatch:
        """Select the next annotation batch (idempotent until advanced)."""
        state = state or self.state
        if state is None:
            raise LoopError("pretrain or restore before sampling")
        if self._pending_batch is not None:
            return self._pending_batch
        remaining = self.cfg.budget - state.budget_used
        if remaining <= 0:
            raise LoopError("annotation budget exhausted")
        k_eff = min(self.cfg.sampler.k, remaining)
        annotated = self.manager.pool.annotated_pairs()
        if self.cfg.sampling == "random":
            batch = self._random_batch(state, k_eff, annotated)
        else:
            if self._scores is None:
                _, self._scores = self._rescore(state.matrices)
            batch = select_top_k(
                self._scores.keys(),
                self._scores,
                self.cfg.sampler,
                annotated,
                iteration=state.iteration + 1,
                k=k_eff,
            )
        batch = attach_predictions(
            batch, [state.matrices[a.name] for a in self.adapters], self.model_pool
        )
        if batch.items:
            self.manager.enqueue_batch(batch)
            self._pending_batch = batch
        return batch

    def _random_batch(self, state, k_eff: int, annotated) -> SampleBatch:
        fresh = sorted(p for p in self._ds_pairs if p not in annotated)
        rng = np.random.default_rng(
            np.random.SeedSequence(self.cfg.random_seed, spawn_key=(state.iteration,))
        )
        take = min(k_eff, len(fresh))
        chosen = sorted(rng.choice(len(fresh), size=take, replace=False).tolist())
        items = tuple(SampleItem(key=fresh[i], score=0.0) for i in chosen)
        return SampleBatch(iteration=state.iteration + 1, items=items, shortfall=take < k_eff)

    def advance(self, state: IterationState | None = None) -> IterationState:
        """Finetune, re-predict, and rescore once the batch is fully annotated."""
        state = state or self.state
        if state is None:
            raise LoopError("pretrain or restore before advancing")
        if self._pending_batch is None:
            raise LoopError("no sampled batch to advance past")
        pending = self.manager.queue.pending_keys()
        if pending:
            raise IncompleteAnnotationError(pending)

        train = training_augment(self.manager.pool, self.ha, self.ds)
        it = state.iteration + 1
        ckpts: dict[str, object] = {}
        matrices: dict[str, PredictionMatrix] = {}
        for adapter in self.adapters:
            try:
                matrix, ckpt = adapter.update(state.checkpoints[adapter.name], train, self.ds, it)
                dev_matrix, _ = adapter.update(ckpt, _empty_corpus(self.ds.schema), self.dev, it)
            except Exception as exc:
                raise LoopError(
                    f"iteration {it} failed for model {adapter.name!r}: {exc}"
                ) from exc
            ckpts[adapter.name] = ckpt
            matrices[adapter.name] = matrix
            state.dev_f1_history[adapter.name].append(self._dev_f1(dev_matrix))

        mean, scores = self._rescore(matrices)
        best = dict(state.best)
        best_matrices = dict(state.best_matrices)
        for name in matrices:
            f1 = state.dev_f1_history[name][-1]
            if f1 > best[name][1]:
                best[name] = (it, f1)
                if self.run_dir is None:
                    best_matrices[name] = matrices[name]
        new_state = IterationState(
            iteration=it,
            mean_disagreement=mean,
            budget_used=self.manager.pool.budget_used,
            checkpoints=ckpts,
            matrices=matrices,
            dev_f1_history=state.dev_f1_history,
            mean_history=state.mean_history + [mean],
            best=best,
            best_matrices=best_matrices,
        )
        self._scores = scores
        self._pending_batch = None
        self._persist_iteration(new_state, ckpts, matrices)
        self.state = new_state
        return new_state

    def run(
        self,
        annotator: Callable[[SampleBatch], Mapping[EntityPairKey, frozenset[str]]],
        annotator_name: str = "batch",
    ) -> IterationState:
        """Batch-mode driver: loop until a stop condition fires."""
        state = self.state if self.state is not None else self.pretrain()
        while should_stop(state, self.cfg) is StopDecision.CONTINUE:
            batch = self.sample_next_batch(state)
            if not batch.items:
                break
            answers = annotator(batch)
            missing = [item.key for item in batch.items if item.key not in answers]
            if missing:
                raise IncompleteAnnotationError(missing)
            for item in batch.items:
                self.manager.submit(item.key, answers[item.key], annotator_name, self.ds.schema)
            state = self.advance(state)
        return state

    # -- aggregation --

    def _matrix_for(self, model: str, iteration: int, state: IterationState) -> PredictionMatrix:
        if self.run_dir is not None:
            path = self.run_dir / "matrices" / model / f"{iteration}.pred"
            return ingest_predictions(path, model, iteration, self.ds.schema)
        if self.cfg.aggregate_from == "final":
            return state.matrices[model]
        return state.best_matrices[model]

    def aggregate_output(self, state: IterationState | None = None) -> DenoisedDataset:
        """Merge per-model predictions into the denoised dataset."""
        state = state or self.state
        if state is None:
            raise LoopError("nothing to aggregate")
        if self.cfg.aggregate_from == "final":
            chosen = {a.name: state.iteration for a in self.adapters}
        else:
            chosen = best_iterations(state)
        matrices = [self._matrix_for(a.name, chosen[a.name], state) for a in self.adapters]
        return aggregate_labels(matrices, AggregationConfig(tau=self.cfg.tau))
