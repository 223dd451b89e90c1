import json

import pytest

from dissent.annotation import AnnotationLog, AnnotationManager
from dissent.loop import (
    IncompleteAnnotationError,
    IterationState,
    LoopConfig,
    LoopError,
    LoopRunner,
    MigrationError,
    RestoreError,
    StopDecision,
    best_iterations,
    should_stop,
)
from dissent.predictions import ModelPool
from dissent.sampler import SamplerConfig
from dissent.synthetic import (
    PerfectAnnotator,
    SkillConfig,
    SyntheticAdapter,
    WorldConfig,
    build_world,
)

SMALL_WORLD = WorldConfig(seed=3, n_ha_docs=20, n_ds_docs=40, n_dev_docs=15)


def make_runner(
    world,
    *,
    n_models=2,
    budget=20,
    k=10,
    run_dir=None,
    log_path=None,
    skill=None,
    sampling="criterion",
    epsilon=0.0,
    aggregate_from="best",
):
    import warnings

    names = tuple(f"m{i}" for i in range(n_models))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # two models is fine for tests
        pool = ModelPool(models=names)
    adapters = [
        SyntheticAdapter(
            n, seed=500 + i, schema=world.schema, long_tail=world.long_tail, skill=skill
        )
        for i, n in enumerate(names)
    ]
    if run_dir is not None:
        log = AnnotationLog(run_dir / "pool.log")
        run_dir.mkdir(parents=True, exist_ok=True)
    else:
        log = AnnotationLog(log_path)
    cfg = LoopConfig(
        budget=budget,
        sampler=SamplerConfig(k=k, long_tail=world.long_tail),
        epsilon=epsilon,
        mean_over="all",
        sampling=sampling,
        aggregate_from=aggregate_from,
    )
    return LoopRunner(
        cfg, world.ha, world.ds, world.dev, pool, adapters, AnnotationManager(log), run_dir=run_dir
    )


@pytest.fixture
def world():
    return build_world(SMALL_WORLD)


class TestShouldStop:
    def _state(self, mean, used):
        return IterationState(
            iteration=0, mean_disagreement=mean, budget_used=used, checkpoints={},
            matrices={}, dev_f1_history={}, mean_history=[mean], best={},
        )

    def _cfg(self, epsilon=0.0, budget=400, k=100):
        return LoopConfig(
            budget=budget,
            sampler=SamplerConfig(k=k, long_tail=frozenset({"x"})),
            epsilon=epsilon,
        )

    def test_zero_mean_hits_epsilon_boundary(self):
        assert should_stop(self._state(0.0, 0), self._cfg()) is StopDecision.STOP_EPSILON

    def test_budget_exhausted(self):
        assert should_stop(self._state(0.5, 400), self._cfg()) is StopDecision.STOP_BUDGET

    def test_continue(self):
        assert should_stop(self._state(0.5, 100), self._cfg()) is StopDecision.CONTINUE

    def test_epsilon_one_stops_immediately_for_any_mean(self):
        for mean in (0.0, 0.3, 1.0):
            assert (
                should_stop(self._state(mean, 0), self._cfg(epsilon=1.0))
                is StopDecision.STOP_EPSILON
            )

    def test_epsilon_beats_budget(self):
        assert should_stop(self._state(0.0, 400), self._cfg()) is StopDecision.STOP_EPSILON


class TestPretrain:
    def test_synthetic_pretrain_state(self, world, tmp_path):
        runner = make_runner(world, log_path=tmp_path / "p.log")
        state = runner.pretrain()
        assert state.iteration == 0
        assert state.budget_used == 0
        assert 0.0 < state.mean_disagreement < 1.0
        assert state.mean_history == [state.mean_disagreement]
        for history in state.dev_f1_history.values():
            assert len(history) == 1

    def test_perfect_oracle_zero_mean(self, world, tmp_path):
        perfect = SkillConfig(
            flip_rate=0.0,
            long_tail_flip_rate=0.0,
            negative_flip_rate=0.0,
            confidence_mean=1.0,
            confidence_spread=0.0,
        )
        runner = make_runner(world, skill=perfect, log_path=tmp_path / "p.log")
        state = runner.pretrain()
        assert state.mean_disagreement == 0.0
        assert should_stop(state, runner.cfg) is StopDecision.STOP_EPSILON

    def test_five_model_pool_five_checkpoints(self, world, tmp_path):
        runner = make_runner(world, n_models=5, log_path=tmp_path / "p.log")
        state = runner.pretrain()
        assert len(state.checkpoints) == 5
        assert len(state.matrices) == 5


class TestIteration:
    def test_one_iteration_counters(self, world, tmp_path):
        runner = make_runner(world, log_path=tmp_path / "p.log")
        state = runner.pretrain()
        batch = runner.sample_next_batch(state)
        assert batch.items
        annotator = PerfectAnnotator(world)
        answers = annotator(batch)
        for item in batch.items:
            runner.manager.submit(item.key, answers[item.key], "oracle", world.ds.schema)
        state = runner.advance(state)
        assert state.iteration == 1
        assert len(state.mean_history) == 2
        for history in state.dev_f1_history.values():
            assert len(history) == 2
        assert state.budget_used == len(batch.items)

    def test_advance_without_annotations_lists_pending(self, world, tmp_path):
        runner = make_runner(world, log_path=tmp_path / "p.log")
        state = runner.pretrain()
        batch = runner.sample_next_batch(state)
        with pytest.raises(IncompleteAnnotationError) as err:
            runner.advance(state)
        assert len(err.value.pending) == len(batch.items)

    def test_advance_without_batch_fails(self, world, tmp_path):
        runner = make_runner(world, log_path=tmp_path / "p.log")
        state = runner.pretrain()
        with pytest.raises(LoopError, match="no sampled batch"):
            runner.advance(state)

    def test_budget_two_k_runs_exactly_two_iterations(self, world, tmp_path):
        runner = make_runner(world, budget=20, k=10, log_path=tmp_path / "p.log")
        state = runner.run(PerfectAnnotator(world))
        assert state.iteration == 2
        assert state.budget_used == 20
        assert should_stop(state, runner.cfg) is StopDecision.STOP_BUDGET

    def test_budget_never_exceeded_with_ragged_k(self, world, tmp_path):
        runner = make_runner(world, budget=25, k=10, log_path=tmp_path / "p.log")
        state = runner.run(PerfectAnnotator(world))
        assert state.budget_used <= 25
        assert state.iteration == 3  # 10 + 10 + 5

    def test_no_pair_annotated_twice(self, world, tmp_path):
        runner = make_runner(world, budget=30, k=10, log_path=tmp_path / "p.log")
        runner.run(PerfectAnnotator(world))
        pairs = [r.pair for r in runner.manager.pool.records]
        assert len(pairs) == len(set(pairs))

    def test_mean_decreases_with_annotation(self, world, tmp_path):
        runner = make_runner(world, budget=20, k=10, log_path=tmp_path / "p.log")
        state = runner.run(PerfectAnnotator(world))
        assert state.mean_history[-1] < state.mean_history[0]


class TestBestIterations:
    def _state_with(self, histories):
        return IterationState(
            iteration=0, mean_disagreement=1.0, budget_used=0, checkpoints={}, matrices={},
            dev_f1_history=histories, mean_history=[1.0], best={},
        )

    def test_simple_argmax(self):
        assert best_iterations(self._state_with({"m": [0.1, 0.3, 0.2]})) == {"m": 1}

    def test_tie_takes_earliest(self):
        assert best_iterations(self._state_with({"m": [0.2, 0.2]})) == {"m": 0}

    def test_five_model_fixture_matches_scan(self):
        import numpy as np

        rng = np.random.default_rng(31)
        histories = {f"m{i}": [float(x) for x in rng.random(6)] for i in range(5)}
        got = best_iterations(self._state_with(histories))
        for model, history in histories.items():
            expected = max(range(len(history)), key=lambda i: (history[i], -i))
            assert got[model] == expected

    def test_empty_history_errors(self):
        with pytest.raises(LoopError):
            best_iterations(self._state_with({"m": []}))


class TestCheckpointRestore:
    def test_roundtrip_identity(self, world, tmp_path):
        run_dir = tmp_path / "run"
        runner = make_runner(world, run_dir=run_dir)
        state = runner.pretrain()
        restored = LoopRunner.restore(
            run_dir, runner.cfg, world.ha, world.ds, world.dev,
            runner.model_pool, runner.adapters,
        )
        assert restored.state.iteration == state.iteration
        assert restored.state.mean_disagreement == state.mean_disagreement
        assert restored.state.mean_history == state.mean_history
        assert restored.state.dev_f1_history == state.dev_f1_history
        assert restored.state.best == state.best
        assert restored.state.checkpoints == state.checkpoints
        assert restored.state.matrices == state.matrices

    def test_corrupted_state_refuses(self, world, tmp_path):
        run_dir = tmp_path / "run"
        runner = make_runner(world, run_dir=run_dir)
        runner.pretrain()
        (run_dir / "state.json").write_text("{ half a json")
        with pytest.raises(RestoreError):
            LoopRunner.restore(
                run_dir, runner.cfg, world.ha, world.ds, world.dev,
                runner.model_pool, runner.adapters,
            )

    def test_version_mismatch_is_migration_error(self, world, tmp_path):
        run_dir = tmp_path / "run"
        runner = make_runner(world, run_dir=run_dir)
        runner.pretrain()
        payload = json.loads((run_dir / "state.json").read_text())
        payload["version"] = 99
        (run_dir / "state.json").write_text(json.dumps(payload))
        with pytest.raises(MigrationError):
            LoopRunner.restore(
                run_dir, runner.cfg, world.ha, world.ds, world.dev,
                runner.model_pool, runner.adapters,
            )

    def test_missing_checkpoint_dir(self, world, tmp_path):
        with pytest.raises(RestoreError):
            runner = make_runner(world, run_dir=tmp_path / "made")
            LoopRunner.restore(
                tmp_path / "never_written", runner.cfg, world.ha, world.ds, world.dev,
                runner.model_pool, runner.adapters,
            )

    def _dds_bytes(self, runner, state, tmp_path, tag):
        from dissent.aggregate import write_dds

        dds = runner.aggregate_output(state)
        out = tmp_path / f"dds_{tag}.json"
        write_dds(dds, runner.ds, out)
        return out.read_bytes()

    def test_interrupted_run_matches_uninterrupted(self, world, tmp_path):
        annotator = PerfectAnnotator(world)

        straight = make_runner(world, budget=20, k=10, run_dir=tmp_path / "a")
        final_a = straight.run(annotator)
        bytes_a = self._dds_bytes(straight, final_a, tmp_path, "a")

        # same setup, but stop after the first iteration and resume fresh
        interrupted = make_runner(world, budget=20, k=10, run_dir=tmp_path / "b")
        state = interrupted.pretrain()
        batch = interrupted.sample_next_batch(state)
        answers = annotator(batch)
        for item in batch.items:
            interrupted.manager.submit(item.key, answers[item.key], "oracle", world.ds.schema)
        interrupted.advance(state)

        resumed = LoopRunner.restore(
            tmp_path / "b", interrupted.cfg, world.ha, world.ds, world.dev,
            interrupted.model_pool, interrupted.adapters,
        )
        final_b = resumed.run(annotator)
        bytes_b = self._dds_bytes(resumed, final_b, tmp_path, "b")

        assert final_b.mean_history == final_a.mean_history
        assert final_b.dev_f1_history == final_a.dev_f1_history
        assert bytes_a == bytes_b

    def test_restore_mid_batch_preserves_pending(self, world, tmp_path):
        run_dir = tmp_path / "run"
        runner = make_runner(world, budget=20, k=10, run_dir=run_dir)
        state = runner.pretrain()
        batch = runner.sample_next_batch(state)
        answers = PerfectAnnotator(world)(batch)
        half = list(batch.items)[:5]
        for item in half:
            runner.manager.submit(item.key, answers[item.key], "oracle", world.ds.schema)

        resumed = LoopRunner.restore(
            run_dir, runner.cfg, world.ha, world.ds, world.dev,
            runner.model_pool, runner.adapters,
        )
        assert resumed.manager.pool.budget_used == 5
        pending = resumed.manager.queue.pending_keys()
        assert len(pending) == 5
        resumed_batch = resumed.sample_next_batch(resumed.state)
        assert resumed_batch.keys() == batch.keys()  # same batch, not a new sample


class TestDeterminism:
    def test_two_identical_runs_bit_identical_history(self, world, tmp_path):
        runs = []
        for tag in ("x", "y"):
            runner = make_runner(world, budget=20, k=10, log_path=tmp_path / f"{tag}.log")
            state = runner.run(PerfectAnnotator(world))
            runs.append((state.mean_history, state.dev_f1_history))
        assert runs[0] == runs[1]

    def test_random_sampling_deterministic(self, world, tmp_path):
        batches = []
        for tag in ("x", "y"):
            runner = make_runner(
                world, budget=10, k=10, sampling="random", log_path=tmp_path / f"{tag}.log"
            )
            state = runner.pretrain()
            batches.append(runner.sample_next_batch(state).keys())
        assert batches[0] == batches[1]


class TestAggregateFrom:
    def test_final_uses_last_iteration(self, world, tmp_path):
        runner = make_runner(
            world, budget=10, k=10, log_path=tmp_path / "p.log", aggregate_from="final"
        )
        state = runner.run(PerfectAnnotator(world))
        dds = runner.aggregate_output(state)
        assert dds.num_labels() > 0

    def test_best_loads_per_model_best(self, world, tmp_path):
        run_dir = tmp_path / "run"
        runner = make_runner(world, budget=20, k=10, run_dir=run_dir)
        state = runner.run(PerfectAnnotator(world))
        chosen = best_iterations(state)
        dds = runner.aggregate_output(state)
        assert dds.num_labels() > 0
        for model, it in chosen.items():
            assert (run_dir / "matrices" / model / f"{it}.pred").exists()
