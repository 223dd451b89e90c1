import pytest

from dissent.annotation import (
    AnnotationError,
    AnnotationLog,
    AnnotationManager,
    AnnotationPool,
    AnnotationRecord,
    export_annotations,
    load_annotation_file,
    round_stats,
    training_augment,
)
from dissent.corpus import EntityPairKey, SplitTag
from dissent.sampler import SampleBatch, SampleItem

from conftest import build_corpus, build_doc


def key(doc, h=0, t=1):
    return EntityPairKey(doc, h, t)


def batch_of(*keys, iteration=1):
    items = tuple(SampleItem(key=k, score=-float(i)) for i, k in enumerate(keys))
    return SampleBatch(iteration=iteration, items=items)


def record(k, labels, iteration=1, annotator="ann"):
    return AnnotationRecord(
        pair=k, labels=frozenset(labels), annotator=annotator, iteration=iteration,
        timestamp="2026-01-01T00:00:00+00:00",
    )


@pytest.fixture
def manager(tmp_path):
    return AnnotationManager(AnnotationLog(tmp_path / "pool.log"))


class TestQueue:
    def test_empty_batch_changes_nothing(self, manager):
        manager.enqueue_batch(SampleBatch(iteration=1, items=()))
        assert len(manager.queue) == 0

    def test_batch_of_three_queues_three(self, manager):
        manager.enqueue_batch(batch_of(key("a"), key("b"), key("c")))
        assert len(manager.queue) == 3

    def test_enqueue_then_submit_all(self, manager, schema):
        manager.enqueue_batch(batch_of(key("a"), key("b"), key("c")))
        for k in (key("a"), key("b"), key("c")):
            manager.submit(k, {"r1"}, "ann", schema)
        assert len(manager.queue) == 0
        assert manager.pool.budget_used == 3

    def test_duplicate_pair_rejected_by_name(self, manager, schema):
        manager.enqueue_batch(batch_of(key("a")))
        manager.submit(key("a"), {"r1"}, "ann", schema)
        with pytest.raises(AnnotationError, match="'a', 0, 1"):
            manager.enqueue_batch(batch_of(key("a"), iteration=2))

    def test_lease_serves_descending_score_and_expires(self, tmp_path, schema):
        now = [1000.0]
        mgr = AnnotationManager(
            AnnotationLog(tmp_path / "p.log"), lease_seconds=60, clock=lambda: now[0]
        )
        mgr.enqueue_batch(batch_of(key("hi"), key("lo")))
        first = mgr.queue.lease_next()
        assert first.key == key("hi")  # score 0 > score -1
        second = mgr.queue.lease_next()
        assert second.key == key("lo")
        assert mgr.queue.lease_next() is None  # both leased
        now[0] += 61  # leases lapse; items served again, one at a time
        assert mgr.queue.lease_next().key == key("hi")

    def test_submit_unqueued_pair_fails(self, manager, schema):
        with pytest.raises(AnnotationError, match="not pending"):
            manager.submit(key("ghost"), {"r1"}, "ann", schema)

    def test_unknown_relation_fails(self, manager, schema):
        manager.enqueue_batch(batch_of(key("a")))
        with pytest.raises(AnnotationError, match="unknown"):
            manager.submit(key("a"), {"bogus"}, "ann", schema)

    def test_double_submit_rejected(self, manager, schema):
        manager.enqueue_batch(batch_of(key("a")))
        manager.submit(key("a"), {"r1"}, "ann", schema)
        with pytest.raises(AnnotationError):
            manager.submit(key("a"), {"r2"}, "ann", schema)

    def test_na_is_empty_label_set(self, manager, schema):
        manager.enqueue_batch(batch_of(key("a")))
        rec = manager.submit(key("a"), set(), "ann", schema)
        assert rec.is_na

    def test_multi_label_stored(self, manager, schema):
        manager.enqueue_batch(batch_of(key("a")))
        rec = manager.submit(key("a"), {"r1", "r2"}, "ann", schema)
        assert rec.labels == {"r1", "r2"}


class TestEventSourcing:
    def test_replay_reconstructs_state(self, tmp_path, schema):
        log = AnnotationLog(tmp_path / "pool.log")
        mgr = AnnotationManager(log)
        mgr.enqueue_batch(batch_of(key("a"), key("b"), key("c")))
        mgr.submit(key("a"), {"r1"}, "alice", schema)
        mgr.submit(key("b"), set(), "bob", schema)

        again = AnnotationManager.restore(AnnotationLog(tmp_path / "pool.log"))
        assert again.pool.budget_used == 2
        assert again.pool.records == mgr.pool.records
        assert again.queue.pending_keys() == [key("c")]

    def test_budget_used_equals_record_count(self, manager, schema):
        manager.enqueue_batch(batch_of(key("a"), key("b")))
        manager.submit(key("a"), {"r1"}, "x", schema)
        assert manager.pool.budget_used == len(manager.pool.records) == 1


class TestTrainingAugment:
    def test_empty_pool_is_identity(self, schema):
        ha = build_corpus([build_doc("h1", 2, [(0, 1, "r1")])], schema, SplitTag.HA)
        ds = build_corpus([build_doc("d1", 2)], schema, SplitTag.DS)
        merged = training_augment(AnnotationPool(), ha, ds)
        assert merged.documents == ha.documents
        assert merged.negative_pairs == ()

    def test_two_labels_one_pair_adds_two_instances(self, schema):
        ha = build_corpus([build_doc("h1", 2, [(0, 1, "r1")])], schema, SplitTag.HA)
        ds = build_corpus([build_doc("d1", 3)], schema, SplitTag.DS)
        pool = AnnotationPool()
        pool.add(record(key("d1"), {"r2", "r3"}))
        merged = training_augment(pool, ha, ds)
        assert merged.num_label_instances() == 3
        added = merged.get("d1")
        assert added is not None
        assert {(l.head_idx, l.tail_idx, l.relation) for l in added.gold_labels} == {
            (0, 1, "r2"),
            (0, 1, "r3"),
        }

    def test_na_becomes_negative_pair(self, schema):
        ha = build_corpus([], schema, SplitTag.HA)
        ds = build_corpus([build_doc("d1", 2)], schema, SplitTag.DS)
        pool = AnnotationPool()
        pool.add(record(key("d1"), set()))
        merged = training_augment(pool, ha, ds)
        assert merged.negative_pairs == (key("d1"),)
        assert len(merged.documents) == 0

    def test_fixture_pool_matches_expectation(self, schema):
        ha = build_corpus([build_doc("h1", 2, [(0, 1, "r1")])], schema, SplitTag.HA)
        ds = build_corpus(
            [build_doc("d1", 3), build_doc("d2", 2)], schema, SplitTag.DS
        )
        pool = AnnotationPool()
        pool.add(record(key("d1", 0, 1), {"rare1"}))
        pool.add(record(key("d1", 2, 0), {"r1", "rare2"}, iteration=2))
        pool.add(record(key("d2", 1, 0), set(), iteration=2))
        merged = training_augment(pool, ha, ds)
        assert merged.num_label_instances() == 1 + 3
        assert merged.get("d2") is None  # only N/A there
        assert merged.negative_pairs == (key("d2", 1, 0),)
        doc = merged.get("d1")
        assert [l.relation for l in doc.gold_labels] == ["rare1", "r1", "rare2"]

    def test_unknown_document_fails(self, schema):
        ha = build_corpus([], schema)
        ds = build_corpus([], schema, SplitTag.DS)
        pool = AnnotationPool()
        pool.add(record(key("ghost"), {"r1"}))
        with pytest.raises(AnnotationError, match="ghost"):
            training_augment(pool, ha, ds)


LT = frozenset({"rare1", "rare2"})


class TestRoundStats:
    def test_three_record_fixture(self):
        pool = AnnotationPool()
        pool.add(record(key("a"), {"rare1"}))
        pool.add(record(key("b"), {"r1"}))
        pool.add(record(key("c"), set()))
        stats = round_stats(pool, LT)
        assert stats.totals == {"long_tail": 1, "frequent": 1, "na": 1}
        assert stats.per_iteration[1] == {"long_tail": 1, "frequent": 1, "na": 1}

    def test_mixed_labels_count_as_long_tail(self):
        pool = AnnotationPool()
        pool.add(record(key("a"), {"r1", "rare1"}))
        stats = round_stats(pool, LT)
        assert stats.totals["long_tail"] == 1
        assert stats.totals["frequent"] == 0

    def test_categories_partition_batch(self):
        pool = AnnotationPool()
        for i, labels in enumerate([{"rare1"}, {"r1"}, set(), {"r2", "rare2"}, {"r3"}]):
            pool.add(record(key(f"d{i}"), labels))
        stats = round_stats(pool, LT)
        assert stats.total_annotations() == 5

    def _quota_pool(self, per_iteration):
        """Build a pool whose per-iteration category counts match a table."""
        pool = AnnotationPool()
        n = 0
        for iteration, (lt, freq, na) in enumerate(per_iteration, start=1):
            for _ in range(lt):
                pool.add(record(key(f"p{n}"), {"rare1"}, iteration=iteration))
                n += 1
            for _ in range(freq):
                pool.add(record(key(f"p{n}"), {"r1"}, iteration=iteration))
                n += 1
            for _ in range(na):
                pool.add(record(key(f"p{n}"), set(), iteration=iteration))
                n += 1
        return pool

    def test_four_round_run_totals_docred_scale(self):
        # per-iteration counts from a representative four-round DocRED run
        pool = self._quota_pool([(34, 42, 24), (39, 43, 18), (49, 36, 15), (60, 14, 26)])
        stats = round_stats(pool, LT)
        assert stats.totals == {"long_tail": 182, "frequent": 135, "na": 83}
        assert stats.total_annotations() == 400
        for it, (lt, freq, na) in zip(
            range(1, 5), [(34, 42, 24), (39, 43, 18), (49, 36, 15), (60, 14, 26)]
        ):
            assert stats.per_iteration[it] == {"long_tail": lt, "frequent": freq, "na": na}

    def test_four_round_run_totals_redocred_scale(self):
        pool = self._quota_pool([(172, 122, 6), (178, 99, 23), (183, 84, 33), (206, 50, 44)])
        stats = round_stats(pool, LT)
        assert stats.totals == {"long_tail": 739, "frequent": 355, "na": 106}
        assert stats.total_annotations() == 1200


class TestOfflineInterchange:
    def test_export_load_roundtrip(self, tmp_path):
        pool = AnnotationPool()
        pool.add(record(key("a"), {"r1", "r2"}))
        pool.add(record(key("b"), set(), iteration=2))
        path = tmp_path / "ann.jsonl"
        export_annotations(pool, path)
        table = load_annotation_file(path)
        assert table[key("a")] == {"r1", "r2"}
        assert table[key("b")] == frozenset()

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"title": "a", "h_idx": 0, "t_idx": 1, "labels": []}\n{"nope": 1}\n')
        with pytest.raises(AnnotationError, match="line 2"):
            load_annotation_file(path)
