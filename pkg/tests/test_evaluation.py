import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ttest_rel

from ltrlab.core import Qrels, ScoredList
from ltrlab.evaluation import (
    EvalConfig,
    geometric_mean,
    holm_bonferroni,
    micro_average,
    ndcg_at_k,
    paired_t_test,
    pool_collections,
    significance_report,
)

from _oracles import ndcg_bruteforce


def ranking(*docs, query="q"):
    n = len(docs)
    return ScoredList(query, tuple((d, float(n - i)) for i, d in enumerate(docs)))


class TestNdcg:
    def test_ideal_ordering_is_one(self):
        qrels = Qrels({"q": {"a": 3, "b": 2, "c": 1}})
        assert ndcg_at_k(ranking("a", "b", "c"), qrels, 10) == pytest.approx(1.0)

    def test_all_zero_grades(self):
        qrels = Qrels({"q": {"a": 0}})
        assert ndcg_at_k(ranking("a", "b"), qrels, 10) == 0.0

    def test_no_judgments_at_all(self):
        assert ndcg_at_k(ranking("a"), Qrels(), 10) == 0.0

    def test_hand_computed_example(self):
        qrels = Qrels({"q": {"dA": 0, "dB": 2, "dC": 1}})
        got = ndcg_at_k(ranking("dA", "dB", "dC"), qrels, 3)
        dcg = 3.0 / math.log2(3) + 0.5
        idcg = 3.0 + 1.0 / math.log2(3)
        assert dcg == pytest.approx(2.3928, abs=1e-4)
        assert idcg == pytest.approx(3.6309, abs=1e-4)
        assert got == pytest.approx(dcg / idcg)
        assert got == pytest.approx(0.6590, abs=5e-5)

    def test_ideal_includes_docs_missing_from_ranking(self):
        # The judged doc "z" never appears in the ranking but still raises
        # the ideal, lowering the score below 1.
        qrels = Qrels({"q": {"a": 1, "z": 3}})
        assert ndcg_at_k(ranking("a", "b"), qrels, 10) < 1.0

    def test_in_unit_interval_and_matches_bruteforce(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n_judged = int(rng.integers(1, 6))
            n_ranked = int(rng.integers(1, 7))
            k = int(rng.integers(1, 7))
            universe = [f"d{i}" for i in range(8)]
            judged_docs = list(rng.choice(universe, size=n_judged, replace=False))
            grades = {d: int(rng.integers(0, 4)) for d in judged_docs}
            ranked_docs = list(rng.choice(universe, size=n_ranked, replace=False))
            qrels = Qrels({"q": grades})
            got = ndcg_at_k(ranking(*ranked_docs), qrels, k)
            expected = ndcg_bruteforce(
                [grades.get(d, 0) for d in ranked_docs], list(grades.values()), k
            )
            assert 0.0 <= got <= 1.0
            assert got == pytest.approx(expected, abs=1e-12)


class TestAverages:
    def test_micro_average_singleton(self):
        assert micro_average({"c": {"q1": 0.4}}) == {"c": 0.4}

    def test_micro_average_mean(self):
        assert micro_average({"c": [0.2, 0.4]})["c"] == pytest.approx(0.3)

    def test_micro_average_permutation_invariant(self):
        a = micro_average({"c": [0.1, 0.5, 0.9]})["c"]
        b = micro_average({"c": [0.9, 0.1, 0.5]})["c"]
        assert a == b

    def test_micro_average_empty_collection(self):
        with pytest.raises(ValueError):
            micro_average({"c": []})

    def test_geometric_mean_singleton(self):
        assert geometric_mean([0.7]) == pytest.approx(0.7)

    def test_geometric_mean_pair(self):
        assert geometric_mean([0.25, 1.0]) == pytest.approx(0.5)

    def test_geometric_mean_floors_zero(self, caplog):
        with caplog.at_level("WARNING"):
            value = geometric_mean([0.0, 1.0])
        assert value == pytest.approx(math.sqrt(1e-4))
        assert any("flooring" in r.message for r in caplog.records)

    def test_geometric_mean_empty(self):
        with pytest.raises(ValueError):
            geometric_mean([])


class TestPairedTTest:
    def test_identical_vectors(self):
        assert paired_t_test([0.1, 0.2, 0.3], [0.1, 0.2, 0.3]) == (0.0, 1.0)

    def test_antisymmetry(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=12), rng.normal(size=12)
        t1, p1 = paired_t_test(a, b)
        t2, p2 = paired_t_test(b, a)
        assert t1 == pytest.approx(-t2)
        assert p1 == pytest.approx(p2)

    def test_hand_computed_diffs(self):
        t, p = paired_t_test([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5)
        assert t == pytest.approx(4.2426, abs=5e-5)
        assert p == pytest.approx(0.0132, abs=5e-5)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 40))
            a = rng.normal(size=n)
            b = a + rng.normal(size=n) * rng.uniform(0.01, 2.0) + rng.normal() * 0.3
            t, p = paired_t_test(a, b)
            t_ref, p_ref = ttest_rel(a, b)
            assert t == pytest.approx(float(t_ref), abs=1e-10)
            assert abs(p - float(p_ref)) < 1e-6

    def test_zero_variance_nonzero_mean(self, caplog):
        with caplog.at_level("WARNING"):
            t, p = paired_t_test([1.0, 1.0], [0.0, 0.0])
        assert p == 0.0 and t == math.inf

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0])

    def test_too_short(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0], [2.0])


class TestHolmBonferroni:
    def test_single_p(self):
        assert holm_bonferroni([0.01], 0.05) == [True]

    def test_worked_example_exactly_one_rejection(self):
        decisions = holm_bonferroni([0.01, 0.04, 0.03], 0.05)
        assert decisions == [True, False, False]

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            holm_bonferroni([1.5], 0.05)

    def test_monotone_in_holm_order(self):
        # Once one sorted hypothesis is retained, all larger ps are retained.
        rng = np.random.default_rng(9)
        for _ in range(200):
            ps = rng.uniform(size=int(rng.integers(1, 12)))
            decisions = holm_bonferroni(ps, 0.05)
            by_p = [d for _, d in sorted(zip(ps, decisions))]
            if False in by_p:
                first = by_p.index(False)
                assert not any(by_p[first:])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=12))
    def test_bracketed_by_bonferroni_and_uncorrected(self, ps):
        alpha = 0.05
        holm = holm_bonferroni(ps, alpha)
        bonferroni = [p <= alpha / len(ps) for p in ps]
        uncorrected = [p <= alpha for p in ps]
        for h, b, u in zip(holm, bonferroni, uncorrected):
            assert not b or h  # Bonferroni rejection implies Holm rejection
            assert not h or u  # Holm rejection implies uncorrected rejection

    def test_lowering_a_p_never_unrejects_others(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            ps = list(rng.uniform(size=6))
            before = holm_bonferroni(ps, 0.05)
            i = int(rng.integers(0, 6))
            ps_lower = list(ps)
            ps_lower[i] = ps_lower[i] * 0.1
            after = holm_bonferroni(ps_lower, 0.05)
            for j in range(6):
                if j != i and before[j]:
                    assert after[j]


class TestSignificanceReport:
    def test_identical_runs_no_rejections(self):
        scores = {"q1": 0.5, "q2": 0.6, "q3": 0.7}
        report = significance_report(
            {"base": scores, "same": dict(scores)}, baseline="base"
        )
        assert len(report.comparisons) == 1
        comp = report.comparisons[0]
        assert comp.p_value == 1.0 and not comp.reject

    def test_clear_improvement_rejected(self):
        rng = np.random.default_rng(2)
        base = {f"q{i}": float(v) for i, v in enumerate(rng.uniform(0.2, 0.4, size=50))}
        better = {q: v + 0.3 + rng.normal() * 0.01 for q, v in base.items()}
        report = significance_report({"base": base, "better": better}, "base")
        assert report.comparisons[0].reject

    def test_text_and_jsonl_forms(self):
        scores = {"q1": 0.5, "q2": 0.6}
        report = significance_report({"base": scores, "other": dict(scores)}, "base")
        assert "other" in report.to_text()
        assert '"system":"other"' in report.to_jsonl()

    def test_missing_baseline(self):
        with pytest.raises(ValueError):
            significance_report({"a": {"q": 1.0}}, baseline="nope")

    def test_pool_collections(self):
        pooled = pool_collections({"c1": {"q": 0.1}, "c2": {"q": 0.2}})
        assert pooled == {"c1:q": 0.1, "c2:q": 0.2}


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(k=0)
    with pytest.raises(ValueError):
        EvalConfig(significance_level=1.0)
