import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catscene.metrics import (
    balanced_accuracy,
    bucketed_ba,
    compute_report,
    confusion,
    overall_accuracy,
)


def oracle_oa(preds, labels):
    return sum(1 for p, l in zip(preds, labels) if p == l) / len(preds)


def oracle_per_class(preds, labels, cls):
    hits = [p == l for p, l in zip(preds, labels) if l == cls]
    return sum(hits) / len(hits)


class TestOverallAccuracy:
    def test_perfect(self):
        assert overall_accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_three_of_four(self):
        assert overall_accuracy([0, 1, 2, 3], [0, 1, 2, 0]) == 0.75

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(1)
        preds = rng.integers(0, 5, size=10000)
        labels = rng.integers(0, 5, size=10000)
        assert overall_accuracy(preds, labels) == oracle_oa(preds.tolist(), labels.tolist())

    def test_errors(self):
        with pytest.raises(ValueError):
            overall_accuracy([], [])
        with pytest.raises(ValueError):
            overall_accuracy([0], [0, 1])


class TestBalancedAccuracy:
    def test_two_class_recalls(self):
        # class 0 recall 1.0 (2/2), class 1 recall 0.5 (1/2)
        assert balanced_accuracy([0, 0, 1, 0], [0, 0, 1, 1], [0, 1]) == 0.75

    def test_all_correct(self):
        assert balanced_accuracy([0, 1, 1], [0, 1, 1], [0, 1]) == 1.0

    def test_skewed_fixture_against_tally_oracle(self):
        rng = np.random.default_rng(2)
        labels = np.array([0] * 90 + [1] * 9 + [2] * 1)
        preds = rng.integers(0, 3, size=100)
        preds[labels == 0] = 0  # class 0 always right: OA dominated by it
        ba = balanced_accuracy(preds, labels, [0, 1, 2])
        expect = np.mean([oracle_per_class(preds, labels, c) for c in range(3)])
        assert ba == pytest.approx(expect, abs=1e-12)
        assert overall_accuracy(preds, labels) != ba

    def test_zero_support_class_errors(self):
        with pytest.raises(ValueError, match="class 2"):
            balanced_accuracy([0, 1], [0, 1], [0, 1, 2])
        # skip flag excludes the class instead
        assert balanced_accuracy([0, 1], [0, 1], [0, 1, 2], skip_empty=True) == 1.0

    def test_oa_equals_ba_on_balanced_data(self):
        rng = np.random.default_rng(3)
        labels = np.repeat(np.arange(4), 25)
        preds = rng.integers(0, 4, size=100)
        oa = overall_accuracy(preds, labels)
        ba = balanced_accuracy(preds, labels, range(4))
        assert abs(oa - ba) < 1e-12


class TestBucketedBa:
    def test_single_bucket_equals_global(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 3, size=60)
        preds = rng.integers(0, 3, size=60)
        out = bucketed_ba(preds, labels, {0: "few", 1: "few", 2: "few"})
        assert out["few"] == pytest.approx(balanced_accuracy(preds, labels, range(3)))

    def test_empty_bucket_absent_not_zero(self):
        out = bucketed_ba([0, 1], [0, 1], {0: "few", 1: "few", 2: "many"})
        assert out["many"] is None
        assert out["few"] == 1.0

    def test_matches_restriction_oracle(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 6, size=500)
        preds = rng.integers(0, 6, size=500)
        assignment = {0: "few", 1: "few", 2: "med", 3: "med", 4: "many", 5: "many"}
        out = bucketed_ba(preds, labels, assignment)
        for name in ("few", "med", "many"):
            classes = [c for c, b in assignment.items() if b == name]
            expect = np.mean([oracle_per_class(preds.tolist(), labels.tolist(), c) for c in classes])
            assert out[name] == pytest.approx(expect, abs=1e-12)

    def test_global_ba_is_not_bucket_partition(self):
        # BA over all classes is the plain mean of per-class recalls,
        # independent of how buckets group them.
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 4, size=200)
        preds = rng.integers(0, 4, size=200)
        ba = balanced_accuracy(preds, labels, range(4))
        expect = np.mean([oracle_per_class(preds.tolist(), labels.tolist(), c) for c in range(4)])
        assert ba == pytest.approx(expect, abs=1e-12)


class TestConfusion:
    def test_perfect_is_diagonal(self):
        mat = confusion([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert (mat == np.diag([1, 2, 1])).all()

    def test_single_offdiagonal(self):
        mat = confusion([5], [2], 6)
        assert mat[2, 5] == 1 and mat.sum() == 1

    def test_row_sums_are_class_counts(self):
        rng = np.random.default_rng(7)
        labels = rng.integers(0, 8, size=1000)
        preds = rng.integers(0, 8, size=1000)
        mat = confusion(preds, labels, 8)
        counts = [int((labels == c).sum()) for c in range(8)]
        assert mat.sum(axis=1).tolist() == counts

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            confusion([3], [0], 3)


class TestReport:
    def test_report_consistency(self):
        rng = np.random.default_rng(8)
        labels = rng.integers(0, 5, size=300)
        preds = rng.integers(0, 5, size=300)
        rep = compute_report(preds, labels, 5, {c: "few" for c in range(5)})
        assert rep.oa == pytest.approx(np.trace(rep.confusion) / rep.n_total)
        assert rep.bucketed["few"] == pytest.approx(rep.ba)
        assert "OA" in rep.format_table()

    @settings(max_examples=40, deadline=None)
    @given(data=st.data())
    def test_permutation_invariance(self, data):
        n = data.draw(st.integers(2, 80))
        labels = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
        preds = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
        perm = np.random.default_rng(0).permutation(n)
        oa1 = overall_accuracy(preds, labels)
        oa2 = overall_accuracy(np.array(preds)[perm], np.array(labels)[perm])
        assert oa1 == oa2
        present = sorted(set(labels))
        ba1 = balanced_accuracy(preds, labels, present)
        ba2 = balanced_accuracy(np.array(preds)[perm], np.array(labels)[perm], present)
        assert ba1 == pytest.approx(ba2, abs=1e-12)
