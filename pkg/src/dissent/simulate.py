"""Criterion-comparison simulations on synthetic worlds.

Each (seed, strategy) cell runs the full loop with a simulated perfect
annotator and reports the long-tail F1 trajectory on the dev split plus the
final aggregated dataset's quality against the hidden truth.  The random
baseline draws its batches uniformly from the whole unannotated pool, the
standard control for informed sample selection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .annotation import AnnotationLog, AnnotationManager
from .disagreement import CriterionKind
from .evaluation import evaluate
from .loop import LoopConfig, LoopRunner
from .predictions import ModelPool
from .sampler import SamplerConfig
from .synthetic import (
    PerfectAnnotator,
    SkillConfig,
    SyntheticAdapter,
    SyntheticWorld,
    WorldConfig,
    build_world,
)

RANDOM_STRATEGY = "random"


@dataclass(frozen=True)
class SimulationConfig:
    world: WorldConfig = field(default_factory=lambda: WorldConfig(seed=0))
    n_models: int = 3
    k: int = 25
    budget: int = 100
    criteria: tuple[CriterionKind, ...] = (CriterionKind.DOREMI_LOG,)
    include_random: bool = True
    skill: SkillConfig = field(default_factory=SkillConfig)
    mean_over: str = "all"
    tau: float = 0.7


@dataclass(frozen=True)
class StrategyOutcome:
    seed: int
    strategy: str
    mean_history: list[float]
    dev_f1_history: dict[str, list[float]]
    final_long_tail_f1: float
    final_full_f1: float


@dataclass(frozen=True)
class SimulationResult:
    outcomes: list[StrategyOutcome]

    def final_f1(self, strategy: str, seed: int) -> float:
        for outcome in self.outcomes:
            if outcome.strategy == strategy and outcome.seed == seed:
                return outcome.final_long_tail_f1
        raise KeyError((strategy, seed))

    def rows(self) -> list[dict]:
        out = []
        for outcome in self.outcomes:
            models = sorted(outcome.dev_f1_history)
            for it, mean in enumerate(outcome.mean_history):
                f1s = [outcome.dev_f1_history[m][it] for m in models]
                out.append(
                    {
                        "seed": outcome.seed,
                        "strategy": outcome.strategy,
                        "iteration": it,
                        "mean_disagreement": mean,
                        "dev_long_tail_f1_mean": sum(f1s) / len(f1s),
                        "dev_long_tail_f1_min": min(f1s),
                        "dev_long_tail_f1_max": max(f1s),
                        "final_long_tail_f1": outcome.final_long_tail_f1
                        if it == len(outcome.mean_history) - 1
                        else "",
                        "final_full_f1": outcome.final_full_f1
                        if it == len(outcome.mean_history) - 1
                        else "",
                    }
                )
        return out


def _make_world(cfg: SimulationConfig, seed: int) -> SyntheticWorld:
    return build_world(replace(cfg.world, seed=seed))


def run_strategy(
    cfg: SimulationConfig, world: SyntheticWorld, seed: int, strategy: str
) -> StrategyOutcome:
    names = tuple(f"m{i + 1}" for i in range(cfg.n_models))
    pool = ModelPool(models=names)
    adapters = [
        SyntheticAdapter(
            name,
            seed=seed * 10_000 + i,
            schema=world.schema,
            long_tail=world.long_tail,
            skill=cfg.skill,
        )
        for i, name in enumerate(names)
    ]
    loop_cfg = LoopConfig(
        budget=cfg.budget,
        sampler=SamplerConfig(k=cfg.k, long_tail=world.long_tail),
        criterion=CriterionKind(strategy) if strategy != RANDOM_STRATEGY else CriterionKind.DOREMI_LOG,
        mean_over=cfg.mean_over,
        tau=cfg.tau,
        sampling="random" if strategy == RANDOM_STRATEGY else "criterion",
        random_seed=seed,
    )
    runner = LoopRunner(
        loop_cfg,
        world.ha,
        world.ds,
        world.dev,
        pool,
        adapters,
        AnnotationManager(AnnotationLog(None)),
    )
    state = runner.run(PerfectAnnotator(world))
    dds = runner.aggregate_output(state)
    pred = {(pair, rel) for pair, rels in dds.labels.items() for rel in rels}
    report = evaluate(pred, world.ds, slices={"long_tail": world.long_tail})
    return StrategyOutcome(
        seed=seed,
        strategy=strategy,
        mean_history=list(state.mean_history),
        dev_f1_history={m: list(v) for m, v in state.dev_f1_history.items()},
        final_long_tail_f1=report.get("long_tail", "micro").f1,
        final_full_f1=report.get("full", "micro").f1,
    )


def simulate(cfg: SimulationConfig, seeds: Sequence[int]) -> SimulationResult:
    strategies = [c.value for c in cfg.criteria]
    if cfg.include_random:
        strategies.append(RANDOM_STRATEGY)
    outcomes = []
    for seed in seeds:
        world = _make_world(cfg, seed)
        for strategy in strategies:
            outcomes.append(run_strategy(cfg, world, seed, strategy))
    return SimulationResult(outcomes=outcomes)


def write_simulation_csv(result: SimulationResult, path: str | Path) -> None:
    rows = result.rows()
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
