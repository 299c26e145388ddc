import itertools

import numpy as np
import pytest
from scipy.stats import chi2

from ltrlab.core import Qrels, ScoredList
from ltrlab.distill_data import (
    SamplingConfig,
    WorldConfig,
    build_hard_negative_groups,
    build_teacher_dataset,
    generate_world,
    subsample_depth,
)


def small_world(**overrides):
    defaults = dict(
        num_queries=20,
        docs_per_query=30,
        feature_dim=4,
        first_stage_noise={"clean": 0.0, "noisy": 3.0},
        teacher_noise=0.0,
        seed=5,
    )
    defaults.update(overrides)
    return generate_world(WorldConfig(**defaults))


class TestGenerateWorld:
    def test_zero_noise_retriever_matches_true_relevance(self):
        world = small_world()
        run = world.first_stage_run("clean")
        for qid in world.query_ids:
            docs = world.doc_ids(qid)
            by_rel = sorted(docs, key=lambda d: -world.true_relevance(qid, d))
            assert list(run[qid].docs) == by_rel

    def test_zero_noise_teacher_matches_true_relevance(self):
        world = small_world()
        for qid in world.query_ids[:5]:
            docs = world.doc_ids(qid)[:10]
            ranked = world.teacher(qid, docs)
            by_rel = sorted(docs, key=lambda d: -world.true_relevance(qid, d))
            assert list(ranked) == by_rel

    def test_qrels_single_positive_is_true_best(self):
        world = small_world()
        qrels = world.qrels()
        for qid in world.query_ids:
            positives = qrels.positives(qid)
            assert len(positives) == 1
            best = max(world.doc_ids(qid), key=lambda d: world.true_relevance(qid, d))
            assert positives[0] == best

    def test_lower_noise_retriever_has_higher_recall(self):
        # Monte-Carlo over 1000 queries: probability that the true best doc
        # survives into the top 100 of a 200-doc pool.
        world = generate_world(
            WorldConfig(
                num_queries=1000,
                docs_per_query=200,
                feature_dim=2,
                first_stage_noise={"good": 0.1, "bad": 2.0},
                seed=13,
            )
        )
        qrels = world.qrels()

        def recall_at(run, k):
            hits = 0
            for qid in world.query_ids:
                top = set(run[qid].docs[:k])
                hits += qrels.positives(qid)[0] in top
            return hits / len(world.query_ids)

        good = recall_at(world.first_stage_run("good"), 100)
        bad = recall_at(world.first_stage_run("bad"), 100)
        assert good > bad

    def test_deterministic_under_seed(self):
        w1, w2 = small_world(seed=99), small_world(seed=99)
        qid = w1.query_ids[3]
        assert np.array_equal(
            w1.features_for(qid, w1.doc_ids(qid)), w2.features_for(qid, w2.doc_ids(qid))
        )
        assert w1.first_stage_run("noisy")[qid].entries == w2.first_stage_run("noisy")[qid].entries

    def test_saturated_feature_map(self):
        flat = small_world(feature_map="product")
        sat = small_world(feature_map="saturated")
        qid = flat.query_ids[0]
        docs = flat.doc_ids(qid)
        assert np.allclose(
            sat.features_for(qid, docs), np.tanh(flat.features_for(qid, docs))
        )

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            WorldConfig(num_queries=0)
        with pytest.raises(ValueError):
            WorldConfig(first_stage_noise={"x": -1.0})
        with pytest.raises(ValueError):
            WorldConfig(feature_map="mystery")


class TestHardNegativeGroups:
    def _run_and_qrels(self, n_queries=10, depth=20):
        entries = {}
        qrels = {}
        for qi in range(n_queries):
            qid = f"q{qi:02d}"
            entries[qid] = ScoredList(
                qid, tuple((f"{qid}_d{j:02d}", float(depth - j)) for j in range(depth))
            )
            qrels[qid] = {f"{qid}_d00": 1}
        return entries, Qrels(qrels)

    def test_group_shape(self):
        run, qrels = self._run_and_qrels()
        cfg = SamplingConfig(pool_depth=20, num_negatives=7, seed=1)
        groups = build_hard_negative_groups(run, qrels, cfg)
        assert len(groups) == 10
        for g in groups:
            assert len(g.members) == 8

    def test_empty_qrels_yields_nothing(self):
        run, _ = self._run_and_qrels()
        groups = build_hard_negative_groups(run, Qrels(), SamplingConfig(pool_depth=20))
        assert groups == []

    def test_no_judged_positive_in_negatives(self):
        run, qrels = self._run_and_qrels()
        cfg = SamplingConfig(pool_depth=20, num_negatives=7, seed=3)
        for g in build_hard_negative_groups(run, qrels, cfg):
            assert qrels.grade(g.query, g.positive) > 0
            for doc in g.negatives:
                assert qrels.grade(g.query, doc) == 0

    def test_deterministic_with_seed(self):
        run, qrels = self._run_and_qrels()
        cfg = SamplingConfig(pool_depth=20, num_negatives=7, seed=11)
        assert build_hard_negative_groups(run, qrels, cfg) == build_hard_negative_groups(
            run, qrels, cfg
        )
        other = build_hard_negative_groups(run, qrels, SamplingConfig(20, 7, seed=12))
        assert other != build_hard_negative_groups(run, qrels, cfg)

    def test_shallow_queries_skipped_with_warning(self, caplog):
        run, qrels = self._run_and_qrels(depth=20)
        qid = "q00"
        run[qid] = ScoredList(qid, run[qid].entries[:5])
        with caplog.at_level("WARNING"):
            groups = build_hard_negative_groups(run, qrels, SamplingConfig(pool_depth=20))
        assert len(groups) == 9
        assert any("q00" in r.message for r in caplog.records)

    def test_sampling_uniform_over_subsets(self):
        # 10^4 independent draws of 2 negatives from 6 eligible docs; the 15
        # possible subsets should be uniform (chi-square, not rejected at 0.01).
        n_draws = 10_000
        run = {}
        qrels = {}
        for qi in range(n_draws):
            qid = f"s{qi:05d}"
            run[qid] = ScoredList(
                qid, tuple((f"{qid}_d{j}", float(7 - j)) for j in range(7))
            )
            qrels[qid] = {f"{qid}_d0": 1}
        cfg = SamplingConfig(pool_depth=7, num_negatives=2, seed=17)
        groups = build_hard_negative_groups(run, Qrels(qrels), cfg)
        assert len(groups) == n_draws
        counts = {}
        for g in groups:
            key = tuple(sorted(doc.rsplit("_d", 1)[1] for doc in g.negatives))
            counts[key] = counts.get(key, 0) + 1
        subsets = list(itertools.combinations("123456", 2))
        assert set(counts) <= set(subsets)
        expected = n_draws / len(subsets)
        stat = sum((counts.get(s, 0) - expected) ** 2 / expected for s in subsets)
        assert stat < chi2.ppf(0.99, df=len(subsets) - 1)


class TestTeacherDataset:
    def test_depth_100_yields_n_100(self):
        world = generate_world(
            WorldConfig(
                num_queries=5,
                docs_per_query=120,
                feature_dim=4,
                first_stage_noise={"r": 1.0},
                seed=2,
            )
        )
        run = world.first_stage_run("r")
        ds = build_teacher_dataset(run, world.teacher, world.features_for, depth=100)
        assert all(len(rec) == 100 for rec in ds)
        assert all(rec.source_depth == 100 for rec in ds)

    def test_depth_one_is_first_stage_top(self):
        world = small_world()
        run = world.first_stage_run("noisy")
        ds = build_teacher_dataset(run, world.teacher, world.features_for, depth=1)
        for rec in ds:
            assert rec.docs == (run[rec.query].docs[0],)

    def test_zero_noise_teacher_orders_by_relevance(self):
        world = small_world()
        run = world.first_stage_run("noisy")
        ds = build_teacher_dataset(run, world.teacher, world.features_for, depth=10)
        for rec in ds:
            rels = [world.true_relevance(rec.query, d) for d in rec.docs]
            assert rels == sorted(rels, reverse=True)

    def test_features_align_with_docs(self):
        world = small_world()
        run = world.first_stage_run("clean")
        ds = build_teacher_dataset(run, world.teacher, world.features_for, depth=5)
        rec = ds[0]
        for i, doc in enumerate(rec.docs):
            assert np.array_equal(rec.features[i], world.pair_features(rec.query, doc))

    def test_non_permutation_teacher_is_hard_error(self):
        world = small_world()
        run = world.first_stage_run("clean")

        def broken_teacher(qid, docs):
            return tuple(docs[:-1]) + (docs[-2],)

        with pytest.raises(ValueError, match="non-permutation.*q"):
            build_teacher_dataset(run, broken_teacher, world.features_for, depth=5)

    def test_shallow_run_rejected(self):
        world = small_world()
        run = world.first_stage_run("clean")
        with pytest.raises(ValueError, match="depth"):
            build_teacher_dataset(run, world.teacher, world.features_for, depth=1000)


class TestSubsampleDepth:
    def _dataset(self, fs_order_by_teacher=(3, 1, 4, 2, 5)):
        world = small_world()
        qid = world.query_ids[0]
        docs = tuple(f"{qid}_p{r:04d}" for r in range(len(fs_order_by_teacher)))
        from ltrlab.core import DistillRecord

        return [
            DistillRecord(
                query=qid,
                docs=docs,
                features=np.zeros((len(docs), 2)),
                first_stage_ranks=fs_order_by_teacher,
                source_depth=max(fs_order_by_teacher),
            )
        ]

    def test_filter_on_first_stage_keep_teacher_order(self):
        ds = subsample_depth(self._dataset(), 2)
        rec = ds[0]
        assert rec.first_stage_ranks == (1, 2)
        assert rec.source_depth == 2
        # Teacher order preserved: fs-rank-1 doc had teacher position 2,
        # fs-rank-2 doc had position 4, so rank-1 doc stays first.
        assert rec.docs == (self._dataset()[0].docs[1], self._dataset()[0].docs[3])

    def test_depth_not_below_original_rejected(self):
        with pytest.raises(ValueError):
            subsample_depth(self._dataset(), 5)
        with pytest.raises(ValueError):
            subsample_depth(self._dataset(), 9)

    def test_composition_equals_direct(self):
        world = generate_world(
            WorldConfig(
                num_queries=8,
                docs_per_query=60,
                feature_dim=3,
                first_stage_noise={"r": 1.5},
                teacher_noise=0.5,
                seed=21,
            )
        )
        run = world.first_stage_run("r")
        full = build_teacher_dataset(run, world.teacher, world.features_for, depth=50)
        via_50_25 = subsample_depth(subsample_depth(full, 40), 25)
        direct = subsample_depth(full, 25)
        for a, b in zip(via_50_25, direct):
            assert a.docs == b.docs
            assert a.first_stage_ranks == b.first_stage_ranks
            assert np.array_equal(a.features, b.features)

    def test_random_permutations_property(self):
        # On random teacher permutations, subsampling keeps exactly the docs
        # with fs rank <= depth, in their original relative order.
        from ltrlab.core import DistillRecord

        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(2, 30))
            depth = int(rng.integers(1, n))
            perm = rng.permutation(n) + 1
            rec = DistillRecord(
                "q",
                tuple(f"d{i}" for i in range(n)),
                np.zeros((n, 1)),
                tuple(int(r) for r in perm),
                source_depth=n,
            )
            sub = subsample_depth([rec], depth)[0]
            kept = [i for i in range(n) if perm[i] <= depth]
            assert sub.docs == tuple(f"d{i}" for i in kept)
            assert len(sub) == depth
