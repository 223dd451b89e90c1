"""Command-line entry points for every pipeline stage.

Utility commands (ingest, stats, score, sample, aggregate, merge, evaluate)
are stateless and flag-driven; run-scoped commands (loop, iterate,
annotate-import, serve) work against a manifest plus a run directory.
Environment: DOREMI_PORT overrides the serve port, DOREMI_DATA_ROOT is the
base directory run paths resolve under.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .aggregate import AggregationConfig, aggregate_labels, hybrid_merge, load_dds, write_dds, write_provenance
from .annotation import AnnotationLog, AnnotationManager, load_annotation_file
from .corpus import RelationSchema, SplitTag, load_corpus, long_tail_set, relation_frequencies
from .disagreement import CriterionKind, DisagreementConfig, dump_scores, score_pairs
from .evaluation import (
    build_ign_index,
    evaluate,
    matrix_predictions,
    report_rows,
    write_report_csv,
)
from .loop import LoopConfig, LoopRunner, StopDecision, should_stop
from .manifest import RunManifest
from .predictions import ingest_predictions, ModelAdapterSpec, ModelPool
from .sampler import SamplerConfig, attach_predictions, candidate_pairs, select_top_k, write_batch_file
from .synthetic import PerfectAnnotator, SkillConfig, SyntheticAdapter, SyntheticWorld


class CliError(Exception):
    pass


def _data_root() -> Path:
    return Path(os.environ.get("DOREMI_DATA_ROOT", "."))


def _resolve(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else _data_root() / p


def _split(tag: str) -> SplitTag:
    return SplitTag(tag)


def _load_schema(path: str) -> RelationSchema:
    return RelationSchema.from_file(_resolve(path))


def _parse_prediction_args(args, schema, iteration=0):
    """--predictions name=path [name=path ...] -> ordered matrices."""
    matrices = []
    for spec in args:
        if "=" not in spec:
            raise CliError(f"--predictions expects name=path, got {spec!r}")
        name, path = spec.split("=", 1)
        matrices.append(ingest_predictions(_resolve(path), name, iteration, schema))
    if not matrices:
        raise CliError("at least one --predictions entry required")
    return matrices


def _long_tail_from(args, schema) -> frozenset[str]:
    if args.long_tail_file:
        rels = json.loads(_resolve(args.long_tail_file).read_text())
        return frozenset(rels)
    if args.ha:
        ha = load_corpus(_resolve(args.ha), SplitTag.HA, schema)
        return frozenset(long_tail_set(relation_frequencies(ha), args.long_tail_threshold))
    raise CliError("need --long-tail-file or --ha to derive the long-tail set")


def cmd_ingest(args) -> int:
    schema = _load_schema(args.schema)
    corpus = load_corpus(_resolve(args.corpus), _split(args.split), schema)
    print(
        f"ok: {len(corpus)} documents, {corpus.num_label_instances()} label instances, "
        f"split={corpus.split.value}"
    )
    if args.out:
        from .corpus import write_corpus

        write_corpus(corpus, _resolve(args.out))
        print(f"normalized copy written to {args.out}")
    return 0


def cmd_stats(args) -> int:
    schema = _load_schema(args.schema)
    corpus = load_corpus(_resolve(args.corpus), _split(args.split), schema)
    freq = relation_frequencies(corpus)
    tail = long_tail_set(freq, args.long_tail_threshold)
    for rel in schema.relations:
        marker = " (long tail)" if rel in tail else ""
        print(f"{rel}\t{freq.counts[rel]}{marker}")
    print(
        f"total {freq.total()} instances; {len(tail)} of {len(schema)} relations below "
        f"{args.long_tail_threshold}"
    )
    if args.csv:
        import csv as _csv

        with _resolve(args.csv).open("w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["relation", "count", "long_tail"])
            for rel in schema.relations:
                writer.writerow([rel, freq.counts[rel], rel in tail])
    return 0


def cmd_score(args) -> int:
    schema = _load_schema(args.schema)
    corpus = load_corpus(_resolve(args.corpus), SplitTag.DS, schema)
    matrices = _parse_prediction_args(args.predictions, schema)
    cfg = DisagreementConfig(schema=schema, delta=args.delta)
    criterion = CriterionKind(args.criterion)
    from .corpus import enumerate_corpus_pairs

    pairs = enumerate_corpus_pairs(corpus)
    n = dump_scores(score_pairs(criterion, matrices, pairs, cfg), criterion, _resolve(args.out))
    print(f"scored {n} pairs with {criterion.value} -> {args.out}")
    return 0


def cmd_sample(args) -> int:
    schema = _load_schema(args.schema)
    corpus = load_corpus(_resolve(args.corpus), SplitTag.DS, schema)
    matrices = _parse_prediction_args(args.predictions, schema)
    long_tail = _long_tail_from(args, schema)
    pool = ModelPool(models=tuple(m.model for m in matrices))
    scores = {}
    with _resolve(args.scores).open() as fh:
        from .corpus import EntityPairKey

        for line in fh:
            rec = json.loads(line)
            scores[EntityPairKey(rec["title"], rec["h_idx"], rec["t_idx"])] = rec["score"]
    candidates = candidate_pairs(matrices, pool, long_tail)
    missing = [c for c in candidates if c not in scores]
    if missing:
        raise CliError(f"{len(missing)} candidates missing from the score dump")
    annotated = set()
    if args.annotated:
        annotated = set(load_annotation_file(_resolve(args.annotated)))
    cfg = SamplerConfig(k=args.k, long_tail=long_tail)
    batch = select_top_k(candidates, scores, cfg, annotated, iteration=args.iteration)
    batch = attach_predictions(batch, matrices, pool)
    write_batch_file(batch, corpus, _resolve(args.out))
    print(f"sampled {len(batch.items)} pairs (shortfall={batch.shortfall}) -> {args.out}")
    return 0


def cmd_aggregate(args) -> int:
    schema = _load_schema(args.schema)
    corpus = load_corpus(_resolve(args.corpus), SplitTag.DS, schema)
    matrices = _parse_prediction_args(args.predictions, schema)
    dds = aggregate_labels(matrices, AggregationConfig(tau=args.tau))
    write_dds(dds, corpus, _resolve(args.out))
    if args.provenance:
        write_provenance(dds, _resolve(args.provenance))
    print(f"retained {dds.num_labels()} labels at tau={args.tau} -> {args.out}")
    return 0


def cmd_merge(args) -> int:
    schema = _load_schema(args.schema)
    corpus = load_corpus(_resolve(args.corpus), SplitTag.DS, schema)
    long_tail = _long_tail_from(args, schema)
    mine = load_dds(_resolve(args.dds), corpus)
    other = load_dds(_resolve(args.other), corpus)
    merged = hybrid_merge(mine, other, long_tail)
    write_dds(merged, corpus, _resolve(args.out))
    print(f"hybrid dataset holds {merged.num_labels()} labels -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    schema = _load_schema(args.schema)
    gold = load_corpus(_resolve(args.gold), _split(args.gold_split), schema)
    if args.pred_format == "labels":
        pred_corpus = load_corpus(_resolve(args.pred), SplitTag.DS, schema)
        from .corpus import EntityPairKey

        pred = {
            (EntityPairKey(d.doc_id, l.head_idx, l.tail_idx), l.relation)
            for d in pred_corpus.documents
            for l in d.gold_labels
        }
    else:
        matrix = ingest_predictions(_resolve(args.pred), "pred", 0, schema)
        pred = matrix_predictions(matrix, args.threshold)

    ign = None
    slices = {}
    if args.train:
        train = load_corpus(_resolve(args.train), SplitTag.HA, schema)
        ign = build_ign_index(train, args.ign_mode)
        tail = long_tail_set(relation_frequencies(train), args.long_tail_threshold)
        if tail:
            slices["long_tail"] = frozenset(tail)
        extreme = long_tail_set(relation_frequencies(train), args.extreme_threshold)
        if extreme:
            slices["extreme_long_tail"] = frozenset(extreme)
    report = evaluate(pred, gold, ign=ign, slices=slices)
    for row in report_rows(report):
        print(
            f"{row['slice']:>18} {row['averaging']:>5}  "
            f"P={row['precision']:.4f} R={row['recall']:.4f} F1={row['f1']:.4f}  "
            f"ignP={row['ign_precision']:.4f} ignF1={row['ign_f1']:.4f}"
        )
    if args.csv:
        write_report_csv(report, _resolve(args.csv))
    return 0


def _build_world_from_manifest(config: dict) -> SyntheticWorld | None:
    from .synthetic import WorldConfig, build_world

    if "synthetic_world" not in config:
        return None
    return build_world(WorldConfig(**config["synthetic_world"]))


def _runner_pieces_from_manifest(manifest: RunManifest, run_dir: Path):
    """Corpora, pool, adapters, configs out of one manifest."""
    config = manifest.config
    world = _build_world_from_manifest(config)
    if world is not None:
        schema = world.schema
        ha, ds, dev = world.ha, world.ds, world.dev
        long_tail = world.long_tail
    else:
        schema = RelationSchema.from_file(_resolve(config["schema"]))
        corpora = config["corpora"]
        ha = load_corpus(_resolve(corpora["ha"]), SplitTag.HA, schema)
        ds = load_corpus(_resolve(corpora["ds"]), SplitTag.DS, schema)
        dev = load_corpus(_resolve(corpora["dev"]), SplitTag.DEV, schema)
        threshold = config.get("long_tail_threshold", 100)
        long_tail = frozenset(long_tail_set(relation_frequencies(ha), threshold))

    adapters = []
    names = []
    thresholds = {}
    for model in config["models"]:
        name = model["name"]
        names.append(name)
        if "decision_threshold" in model:
            thresholds[name] = model["decision_threshold"]
        if model.get("kind", "subprocess") == "synthetic":
            skill = SkillConfig(**model.get("skill", {}))
            adapters.append(
                SyntheticAdapter(
                    name,
                    seed=model.get("seed", 0),
                    schema=schema,
                    long_tail=long_tail,
                    skill=skill,
                )
            )
        else:
            from .loop import SubprocessCommitteeAdapter

            spec = ModelAdapterSpec(
                command=tuple(model["command"]),
                workdir=model.get("workdir"),
                timeout=model.get("timeout", 3600.0),
            )
            adapters.append(
                SubprocessCommitteeAdapter(name, spec, schema, scratch_root=run_dir / "scratch")
            )
    pool = ModelPool(models=tuple(names), decision_thresholds=thresholds)

    loop_raw = dict(config.get("loop", {}))
    k = loop_raw.pop("k", 100)
    cfg = LoopConfig(
        budget=loop_raw.pop("budget", 400),
        sampler=SamplerConfig(k=k, long_tail=long_tail),
        criterion=CriterionKind(loop_raw.pop("criterion", "doremi_log")),
        **loop_raw,
    )
    return world, (ha, ds, dev), pool, adapters, cfg


def _apply_overrides(manifest: RunManifest, args) -> RunManifest:
    """Flag overrides win over the manifest's loop block."""
    overrides = {}
    for flag in ("budget", "k", "epsilon", "criterion", "tau", "mean_over"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    if not overrides:
        return manifest
    config = dict(manifest.config)
    config["loop"] = {**config.get("loop", {}), **overrides}
    return RunManifest(run_id=manifest.run_id, created=manifest.created, config=config)


def _open_runner(args, require_state: bool):
    run_dir = _resolve(args.run_dir)
    snapshot = run_dir / "manifest.json"
    if snapshot.exists():
        # an existing run's snapshot is authoritative; overrides only shape new runs
        manifest = RunManifest.load(snapshot)
    else:
        manifest = _apply_overrides(RunManifest.load(_resolve(args.manifest)), args)
    world, (ha, ds, dev), pool, adapters, cfg = _runner_pieces_from_manifest(manifest, run_dir)
    if (run_dir / "state.json").exists():
        runner = LoopRunner.restore(run_dir, cfg, ha, ds, dev, pool, adapters)
    elif require_state:
        raise CliError(f"no loop checkpoint in {run_dir}; run `loop` or `iterate` first")
    else:
        run_dir.mkdir(parents=True, exist_ok=True)
        manager = AnnotationManager(AnnotationLog(run_dir / "pool.log"))
        runner = LoopRunner(cfg, ha, ds, dev, pool, adapters, manager, run_dir=run_dir)
    manifest.save(run_dir / "manifest.json")
    return manifest, world, runner


def _make_annotator(args, world):
    if args.annotator == "oracle":
        if world is None:
            raise CliError("--annotator oracle needs a synthetic_world manifest")
        return PerfectAnnotator(world)
    if not args.annotations:
        raise CliError("--annotator file needs --annotations")
    table = load_annotation_file(_resolve(args.annotations))

    def from_file(batch):
        return {item.key: table[item.key] for item in batch.items if item.key in table}

    return from_file


def _finish_run(runner, out_dir: Path) -> None:
    dds = runner.aggregate_output(runner.state)
    write_dds(dds, runner.ds, out_dir / "dds.json")
    write_provenance(dds, out_dir / "provenance.jsonl")
    print(
        f"run complete: iteration {runner.state.iteration}, "
        f"budget {runner.state.budget_used}/{runner.cfg.budget}, "
        f"{dds.num_labels()} labels -> {out_dir / 'dds.json'}"
    )


def cmd_loop(args) -> int:
    manifest, world, runner = _open_runner(args, require_state=False)
    if runner.state is None:
        runner.pretrain()
        print(f"pretrain done: mean disagreement {runner.state.mean_disagreement:.6g}")
    if args.mode == "serve":
        return _serve(runner, manifest, args)
    annotator = _make_annotator(args, world)
    state = runner.run(annotator)
    decision = should_stop(state, runner.cfg)
    print(f"stopped: {decision.value} after iteration {state.iteration}")
    _finish_run(runner, runner.run_dir)
    return 0


def cmd_iterate(args) -> int:
    """One loop step: pretrain if fresh, then sample/annotate/advance once."""
    _, world, runner = _open_runner(args, require_state=False)
    if runner.state is None:
        state = runner.pretrain()
        print(f"pretrain done: mean disagreement {state.mean_disagreement:.6g}")
    state = runner.state
    if should_stop(state, runner.cfg) is not StopDecision.CONTINUE:
        print("stop condition already satisfied; nothing to do")
        return 0
    batch = runner.sample_next_batch(state)
    if not batch.items and len(runner.manager.queue) == 0:
        print("no fresh candidates left; nothing to iterate")
        return 0
    if args.annotator:
        annotator = _make_annotator(args, world)
        answers = annotator(batch)
        for pair in list(runner.manager.queue.pending_keys()):
            if pair in answers:
                runner.manager.submit(pair, answers[pair], "cli", runner.ds.schema)
    pending = runner.manager.queue.pending_keys()
    if pending:
        print(f"{len(pending)} pairs awaiting annotation; run annotate-import, then iterate again")
        return 1
    state = runner.advance(state)
    print(
        f"iteration {state.iteration} done: mean {state.mean_disagreement:.6g}, "
        f"budget {state.budget_used}/{runner.cfg.budget}"
    )
    return 0


def cmd_annotate_import(args) -> int:
    _, _, runner = _open_runner(args, require_state=True)
    if (
        len(runner.manager.queue) == 0
        and should_stop(runner.state, runner.cfg) is StopDecision.CONTINUE
    ):
        runner.sample_next_batch(runner.state)
    table = load_annotation_file(_resolve(args.annotations))
    submitted = 0
    for pair in list(runner.manager.queue.pending_keys()):
        if pair in table:
            runner.manager.submit(pair, table[pair], args.annotator_name, runner.ds.schema)
            submitted += 1
    remaining = len(runner.manager.queue)
    print(f"imported {submitted} annotations; {remaining} still pending")
    return 0


def _serve(runner, manifest, args) -> int:
    import uvicorn

    from .api import ServiceState, make_app

    service = ServiceState(runner, run_id=manifest.run_id, token=args.token)
    app = make_app(service, ui_dir=args.ui_dir)
    port = int(os.environ.get("DOREMI_PORT", args.port))
    uvicorn.run(app, host=args.host, port=port)
    return 0


def cmd_serve(args) -> int:
    manifest, _, runner = _open_runner(args, require_state=True)
    return _serve(runner, manifest, args)


def cmd_simulate(args) -> int:
    from .simulate import SimulationConfig, simulate, write_simulation_csv
    from .synthetic import WorldConfig

    criteria = tuple(CriterionKind(c) for c in args.criteria)
    cfg = SimulationConfig(
        world=WorldConfig(seed=0, n_ds_docs=args.docs),
        n_models=args.models,
        k=args.k,
        budget=args.budget,
        criteria=criteria,
        include_random=not args.no_random,
    )
    seeds = list(range(args.seeds))
    result = simulate(cfg, seeds)
    write_simulation_csv(result, _resolve(args.out))
    strategies = [c.value for c in criteria] + ([] if args.no_random else ["random"])
    print(f"{'strategy':>12}  mean final long-tail F1 over {len(seeds)} seeds")
    for strategy in strategies:
        values = [result.final_f1(strategy, s) for s in seeds]
        print(f"{strategy:>12}  {sum(values) / len(values):.4f}")
    print(f"trajectories -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dissent",
        description="Disagreement-driven denoising for document-level relation extraction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p, annotator=False, overrides=False):
        p.add_argument("--manifest", required=True, help="run manifest JSON")
        p.add_argument("--run-dir", required=True, help="run directory (under DOREMI_DATA_ROOT)")
        if annotator:
            p.add_argument("--annotator", choices=["file", "oracle"], default="file")
            p.add_argument("--annotations", help="offline annotation JSONL")
        if overrides:
            p.add_argument("--budget", type=int, help="override the manifest's annotation budget")
            p.add_argument("--k", type=int, help="override the sample size")
            p.add_argument("--epsilon", type=float, help="override the stopping threshold")
            p.add_argument("--criterion", choices=[c.value for c in CriterionKind])
            p.add_argument("--tau", type=float, help="override the aggregation threshold")
            p.add_argument("--mean-over", dest="mean_over", choices=["candidates", "all"])

    p = sub.add_parser("ingest", help="validate a DocRED-format corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--split", choices=[s.value for s in SplitTag], default="ha")
    p.add_argument("--out", help="write a normalized copy here")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("stats", help="relation frequencies and the long-tail set")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--split", choices=[s.value for s in SplitTag], default="ha")
    p.add_argument("--long-tail-threshold", type=int, default=100)
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("score", help="disagreement scores for every pair of a corpus")
    p.add_argument("--schema", required=True)
    p.add_argument("--corpus", required=True, help="distant split to score")
    p.add_argument("--predictions", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--criterion", choices=[c.value for c in CriterionKind], default="doremi_log")
    p.add_argument("--delta", type=float, default=1e-12)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("sample", help="select the top-k batch for annotation")
    p.add_argument("--schema", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--scores", required=True, help="score dump from `score`")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--ha", help="human-annotated split, for the long-tail set")
    p.add_argument("--long-tail-file", help="explicit JSON list of long-tail relations")
    p.add_argument("--long-tail-threshold", type=int, default=100)
    p.add_argument("--annotated", help="annotation export; already-labeled pairs are excluded")
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("annotate-import", help="feed offline annotations into a run's queue")
    add_run_flags(p)
    p.add_argument("--annotations", required=True)
    p.add_argument("--annotator-name", default="offline")
    p.set_defaults(fn=cmd_annotate_import)

    p = sub.add_parser("iterate", help="advance a run by exactly one iteration")
    add_run_flags(p, overrides=True)
    p.add_argument("--annotator", choices=["file", "oracle"], default=None)
    p.add_argument("--annotations", help="offline annotation JSONL")
    p.set_defaults(fn=cmd_iterate)

    p = sub.add_parser("loop", help="run the full iterative pipeline")
    add_run_flags(p, annotator=True, overrides=True)
    p.add_argument("--mode", choices=["batch", "serve"], default="batch")
    p.add_argument("--port", type=int, default=8753)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--token")
    p.add_argument("--ui-dir")
    p.set_defaults(fn=cmd_loop)

    p = sub.add_parser("aggregate", help="build the denoised dataset from prediction files")
    p.add_argument("--schema", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--out", required=True)
    p.add_argument("--provenance")
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("merge", help="hybrid merge: our long tail + another denoiser's rest")
    p.add_argument("--schema", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--dds", required=True, help="long-tail source dataset")
    p.add_argument("--other", required=True, help="frequent-relation source dataset")
    p.add_argument("--ha")
    p.add_argument("--long-tail-file")
    p.add_argument("--long-tail-threshold", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("evaluate", help="score predictions against a gold corpus")
    p.add_argument("--schema", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-format", choices=["labels", "scores"], default="labels")
    p.add_argument("--threshold", type=float, default=0.5, help="for --pred-format scores")
    p.add_argument("--gold", required=True)
    p.add_argument("--gold-split", choices=[s.value for s in SplitTag], default="dev")
    p.add_argument("--train", help="training split for ign metrics and slices")
    p.add_argument("--ign-mode", choices=["pair", "fact"], default="pair")
    p.add_argument("--long-tail-threshold", type=int, default=100)
    p.add_argument("--extreme-threshold", type=int, default=100)
    p.add_argument("--csv")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("serve", help="serve the annotation API from an existing checkpoint")
    add_run_flags(p)
    p.add_argument("--port", type=int, default=8753)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--token")
    p.add_argument("--ui-dir")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("simulate", help="compare selection criteria on a synthetic world")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--models", type=int, default=3)
    p.add_argument("--docs", type=int, default=200)
    p.add_argument("--k", type=int, default=25)
    p.add_argument("--budget", type=int, default=100)
    p.add_argument(
        "--criteria",
        nargs="+",
        choices=[c.value for c in CriterionKind],
        default=["doremi_log"],
    )
    p.add_argument("--no-random", action="store_true")
    p.add_argument("--out", default="simulation.csv")
    p.set_defaults(fn=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # structured diagnostics, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
