import json

import pytest

from dissent.cli import main
from dissent.corpus import SplitTag, load_corpus, write_corpus
from dissent.manifest import RunManifest
from dissent.predictions import write_predictions
from dissent.synthetic import WorldConfig, build_world

from conftest import build_corpus, build_doc, build_matrix, raw_doc, write_corpus_file


@pytest.fixture
def schema_file(tmp_path):
    path = tmp_path / "schema.json"
    path.write_text(json.dumps(["r1", "r2", "r3", "rare1", "rare2"]))
    return path


def write_matrix(tmp_path, name, entries):
    path = tmp_path / f"{name}.jsonl"
    write_predictions(build_matrix(name, entries), path)
    return path


class TestUtilityCommands:
    def test_ingest_ok(self, tmp_path, schema_file, capsys):
        corpus = write_corpus_file(tmp_path, [raw_doc("a", labels=[(0, 1, "r1")])])
        code = main(["ingest", "--corpus", str(corpus), "--schema", str(schema_file)])
        assert code == 0
        assert "1 documents, 1 label instances" in capsys.readouterr().out

    def test_ingest_invalid_exits_nonzero(self, tmp_path, schema_file, capsys):
        bad = raw_doc("a")
        bad["vertexSet"][0][0]["pos"] = [2, 2]
        corpus = write_corpus_file(tmp_path, [bad])
        code = main(["ingest", "--corpus", str(corpus), "--schema", str(schema_file)])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_stats_reports_long_tail(self, tmp_path, schema_file, capsys):
        docs = [raw_doc("a", labels=[(0, 1, "r1"), (0, 1, "r2")])]
        corpus = write_corpus_file(tmp_path, docs)
        code = main(
            ["stats", "--corpus", str(corpus), "--schema", str(schema_file),
             "--long-tail-threshold", "1"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "3 of 5 relations below 1" in out

    def test_score_then_sample(self, tmp_path, schema_file, capsys):
        ds = write_corpus_file(tmp_path, [raw_doc("a", 3), raw_doc("b", 2)], "ds.json")
        m1 = write_matrix(
            tmp_path, "m1",
            {("a", 0, 1): {"rare1": 0.9}, ("a", 1, 2): {"r1": 0.8}, ("b", 0, 1): {"rare2": 0.6}},
        )
        m2 = write_matrix(tmp_path, "m2", {("a", 0, 1): {"rare1": 0.2}})
        scores = tmp_path / "scores.jsonl"
        code = main(
            ["score", "--schema", str(schema_file), "--corpus", str(ds),
             "--predictions", f"m1={m1}", f"m2={m2}", "--out", str(scores)]
        )
        assert code == 0
        assert len(scores.read_text().splitlines()) == 8  # 6 + 2 pairs

        lt_file = tmp_path / "lt.json"
        lt_file.write_text(json.dumps(["rare1", "rare2"]))
        batch = tmp_path / "batch.jsonl"
        code = main(
            ["sample", "--schema", str(schema_file), "--corpus", str(ds),
             "--predictions", f"m1={m1}", f"m2={m2}", "--scores", str(scores),
             "--k", "2", "--long-tail-file", str(lt_file), "--out", str(batch)]
        )
        assert code == 0
        records = [json.loads(l) for l in batch.read_text().splitlines()]
        assert len(records) == 2
        assert {r["title"] for r in records} == {"a", "b"}

    def test_sample_k2_on_three_candidates(self, tmp_path, schema_file):
        ds = write_corpus_file(tmp_path, [raw_doc("a", 4)], "ds.json")
        m1 = write_matrix(
            tmp_path, "m1",
            {("a", 0, 1): {"rare1": 0.9}, ("a", 0, 2): {"rare1": 0.7}, ("a", 0, 3): {"rare1": 0.8}},
        )
        m2 = write_matrix(tmp_path, "m2", {})
        scores = tmp_path / "scores.jsonl"
        main(["score", "--schema", str(schema_file), "--corpus", str(ds),
              "--predictions", f"m1={m1}", f"m2={m2}", "--out", str(scores)])
        lt_file = tmp_path / "lt.json"
        lt_file.write_text(json.dumps(["rare1"]))
        batch = tmp_path / "batch.jsonl"
        code = main(
            ["sample", "--schema", str(schema_file), "--corpus", str(ds),
             "--predictions", f"m1={m1}", f"m2={m2}", "--scores", str(scores),
             "--k", "2", "--long-tail-file", str(lt_file), "--out", str(batch)]
        )
        assert code == 0
        assert len(batch.read_text().splitlines()) == 2

    def test_aggregate_and_merge(self, tmp_path, schema_file, capsys):
        ds = write_corpus_file(tmp_path, [raw_doc("a", 3)], "ds.json")
        m1 = write_matrix(tmp_path, "m1", {("a", 0, 1): {"rare1": 0.95, "r1": 0.2}})
        m2 = write_matrix(tmp_path, "m2", {("a", 1, 2): {"r2": 0.8}})
        dds = tmp_path / "dds.json"
        code = main(
            ["aggregate", "--schema", str(schema_file), "--corpus", str(ds),
             "--predictions", f"m1={m1}", f"m2={m2}", "--tau", "0.7", "--out", str(dds),
             "--provenance", str(tmp_path / "prov.jsonl")]
        )
        assert code == 0
        assert "retained 2 labels" in capsys.readouterr().out

        other = tmp_path / "other.json"
        other_matrix = write_matrix(tmp_path, "u", {("a", 0, 2): {"r3": 0.99, "rare2": 0.9}})
        main(["aggregate", "--schema", str(schema_file), "--corpus", str(ds),
              "--predictions", f"u={other_matrix}", "--out", str(other)])
        lt_file = tmp_path / "lt.json"
        lt_file.write_text(json.dumps(["rare1", "rare2"]))
        merged = tmp_path / "merged.json"
        code = main(
            ["merge", "--schema", str(schema_file), "--corpus", str(ds), "--dds", str(dds),
             "--other", str(other), "--long-tail-file", str(lt_file), "--out", str(merged)]
        )
        assert code == 0
        out = json.loads(merged.read_text())
        labels = {(l["h"], l["t"], l["r"]) for d in out for l in d["labels"]}
        assert labels == {(0, 1, "rare1"), (0, 2, "r3")}

    def test_evaluate_prints_report(self, tmp_path, schema_file, capsys):
        gold = write_corpus_file(tmp_path, [raw_doc("a", 3, labels=[(0, 1, "r1")])], "gold.json")
        pred = write_corpus_file(tmp_path, [raw_doc("a", 3, labels=[(0, 1, "r1")])], "pred.json")
        train = write_corpus_file(tmp_path, [raw_doc("t", 2, labels=[(0, 1, "r1")])], "train.json")
        code = main(
            ["evaluate", "--schema", str(schema_file), "--pred", str(pred),
             "--gold", str(gold), "--train", str(train)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "P=1.0000 R=1.0000 F1=1.0000" in out


def synthetic_manifest(tmp_path, budget=10, k=5, n_models=2, run_id="cli-test"):
    manifest = RunManifest.new(
        {
            "synthetic_world": {
                "seed": 6, "n_ha_docs": 20, "n_ds_docs": 40, "n_dev_docs": 15,
            },
            "models": [
                {"name": f"m{i}", "kind": "synthetic", "seed": 900 + i}
                for i in range(n_models)
            ],
            "loop": {"budget": budget, "k": k, "mean_over": "all"},
        },
        run_id=run_id,
    )
    path = tmp_path / "manifest.json"
    manifest.save(path)
    return path


class TestLoopCommand:
    def test_batch_loop_with_oracle(self, tmp_path, capsys):
        manifest = synthetic_manifest(tmp_path)
        run_dir = tmp_path / "run"
        code = main(
            ["loop", "--manifest", str(manifest), "--run-dir", str(run_dir),
             "--annotator", "oracle"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "stopped: stop_budget after iteration 2" in out
        assert (run_dir / "dds.json").exists()
        assert (run_dir / "provenance.jsonl").exists()
        assert (run_dir / "manifest.json").exists()
        state = json.loads((run_dir / "state.json").read_text())
        assert state["iteration"] == 2 and state["budget_used"] == 10

    def test_loop_with_annotation_file(self, tmp_path, capsys):
        # pre-compute oracle answers for every DS pair, then run file-driven
        world = build_world(WorldConfig(seed=6, n_ha_docs=20, n_ds_docs=40, n_dev_docs=15))
        ann_path = tmp_path / "answers.jsonl"
        with ann_path.open("w") as fh:
            for pair, labels in world.truth.items():
                fh.write(json.dumps({
                    "title": pair.doc_id, "h_idx": pair.head_idx, "t_idx": pair.tail_idx,
                    "labels": sorted(labels), "annotator": "file", "iteration": 0,
                }) + "\n")
            # pairs without truth labels are N/A
            from dissent.corpus import enumerate_corpus_pairs

            for pair in enumerate_corpus_pairs(world.ds):
                if pair not in world.truth:
                    fh.write(json.dumps({
                        "title": pair.doc_id, "h_idx": pair.head_idx, "t_idx": pair.tail_idx,
                        "labels": [], "annotator": "file", "iteration": 0,
                    }) + "\n")
        manifest = synthetic_manifest(tmp_path, run_id="file-run")
        run_dir = tmp_path / "run_file"
        code = main(
            ["loop", "--manifest", str(manifest), "--run-dir", str(run_dir),
             "--annotator", "file", "--annotations", str(ann_path)]
        )
        assert code == 0
        assert (run_dir / "dds.json").exists()

    def test_iterate_advances_one_step_per_call(self, tmp_path, capsys):
        manifest = synthetic_manifest(tmp_path)
        run_dir = tmp_path / "run"
        argv = ["iterate", "--manifest", str(manifest), "--run-dir", str(run_dir),
                "--annotator", "oracle"]
        assert main(argv) == 0  # pretrain + iteration 1
        assert json.loads((run_dir / "state.json").read_text())["iteration"] == 1
        assert main(argv) == 0  # iteration 2 exhausts the budget
        assert json.loads((run_dir / "state.json").read_text())["iteration"] == 2
        assert main(argv) == 0
        assert "stop condition already satisfied" in capsys.readouterr().out

    def test_offline_iterate_and_annotate_import(self, tmp_path, capsys):
        manifest = synthetic_manifest(tmp_path, budget=5, k=5)
        run_dir = tmp_path / "run"
        base = ["--manifest", str(manifest), "--run-dir", str(run_dir)]
        # without an annotator, iterate stops at the pending batch
        assert main(["iterate", *base]) == 1
        assert "5 pairs awaiting annotation" in capsys.readouterr().out

        # answer everything offline from the hidden truth
        world = build_world(WorldConfig(seed=6, n_ha_docs=20, n_ds_docs=40, n_dev_docs=15))
        from dissent.corpus import enumerate_corpus_pairs

        ann_path = tmp_path / "answers.jsonl"
        with ann_path.open("w") as fh:
            for pair in enumerate_corpus_pairs(world.ds):
                fh.write(json.dumps({
                    "title": pair.doc_id, "h_idx": pair.head_idx, "t_idx": pair.tail_idx,
                    "labels": sorted(world.truth_labels(pair)), "annotator": "offline",
                    "iteration": 1,
                }) + "\n")
        assert main(["annotate-import", *base, "--annotations", str(ann_path)]) == 0
        assert "imported 5 annotations; 0 still pending" in capsys.readouterr().out

        assert main(["iterate", *base]) == 0
        out = capsys.readouterr().out
        assert "iteration 1 done" in out
        assert json.loads((run_dir / "state.json").read_text())["budget_used"] == 5

    def test_budget_and_k_flags_override_manifest(self, tmp_path, capsys):
        # manifest says budget 10 / k 5; flags force four iterations of 5
        manifest = synthetic_manifest(tmp_path, budget=10, k=5, run_id="override")
        run_dir = tmp_path / "run"
        code = main(
            ["loop", "--manifest", str(manifest), "--run-dir", str(run_dir),
             "--annotator", "oracle", "--budget", "20", "--k", "5"]
        )
        assert code == 0
        assert "stopped: stop_budget after iteration 4" in capsys.readouterr().out
        state = json.loads((run_dir / "state.json").read_text())
        assert state["iteration"] == 4 and state["budget_used"] == 20
        # the run snapshot keeps the effective (overridden) config
        snapshot = json.loads((run_dir / "manifest.json").read_text())
        assert snapshot["config"]["loop"]["budget"] == 20

    def test_simulate_smoke(self, tmp_path, capsys):
        out = tmp_path / "sim.csv"
        code = main(
            ["simulate", "--seeds", "1", "--docs", "40", "--k", "5", "--budget", "10",
             "--out", str(out)]
        )
        assert code == 0
        assert out.exists()
        printed = capsys.readouterr().out
        assert "doremi_log" in printed and "random" in printed
