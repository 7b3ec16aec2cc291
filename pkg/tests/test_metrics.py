import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_ca, brute_mae, w2_monte_carlo
from uva.data import LabeledImage
from uva.errors import InvalidArgumentError
from uva.metrics import (PAPER_GROUPS, aging_accuracy_by_group, cumulative_accuracy, evaluate,
                         feature_stats, frechet_gaussian_distance, mae)
from uva.networks import ArchitectureConfig, init_params

reals = st.floats(-200, 200, allow_nan=False)


class TestMAE:
    def test_examples(self):
        assert mae([1, 2, 3], [1, 2, 3]) == 0.0
        assert mae([30, 40], [28, 44]) == 3.0

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            mae([], [])
        with pytest.raises(InvalidArgumentError):
            mae([1, 2], [1])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(reals, reals), min_size=1, max_size=50))
    def test_matches_brute_force(self, pairs):
        p, t = zip(*pairs)
        assert mae(p, t) == brute_mae(p, t)
        assert mae(p, t) >= 0


class TestCA:
    def test_examples(self):
        assert cumulative_accuracy([1, 2, 5], [0, 0, 0], 3) == pytest.approx(200 / 3)
        assert cumulative_accuracy([1, 2, 5], [1, 2, 5], 0) == 0.0
        assert cumulative_accuracy([3], [0], 3) == 0.0

    def test_negative_n(self):
        with pytest.raises(InvalidArgumentError):
            cumulative_accuracy([1], [1], -1)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100)), min_size=1, max_size=50),
           st.integers(0, 20))
    def test_range_and_monotone(self, pairs, n):
        p, t = zip(*pairs)
        a, b = cumulative_accuracy(p, t, n), cumulative_accuracy(p, t, n + 1)
        assert 0 <= a <= b <= 100
        assert a == brute_ca(p, t, n)


class TestFrechet:
    def test_examples(self):
        assert frechet_gaussian_distance(([0.0], [1.0]), ([0.0], [1.0])) == 0.0
        assert frechet_gaussian_distance(([0.0], [1.0]), ([2.0], [1.0])) == 4.0
        assert frechet_gaussian_distance(([0.0, 1.0], [1.0, 4.0]), ([0.0, 0.0], [4.0, 1.0])) == 3.0

    def test_errors(self):
        with pytest.raises(InvalidArgumentError):
            frechet_gaussian_distance(([0, 0], [1, 1]), ([0], [1]))
        with pytest.raises(InvalidArgumentError):
            frechet_gaussian_distance(([0], [-1]), ([0], [1]))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(reals, st.floats(0, 50), reals, st.floats(0, 50)), min_size=1, max_size=5))
    def test_properties(self, rows):
        m1, v1, m2, v2 = (np.array(c) for c in zip(*rows))
        d = frechet_gaussian_distance((m1, v1), (m2, v2))
        assert d >= 0
        assert d == frechet_gaussian_distance((m2, v2), (m1, v1))
        assert frechet_gaussian_distance((m1, v1), (m1, v1)) == 0

    def test_monte_carlo_w2(self, rng):
        for _ in range(5):
            m1, m2 = rng.uniform(-3, 3, 2)
            s1, s2 = rng.uniform(0.5, 2, 2)
            est = w2_monte_carlo(m1, s1, m2, s2, 10**6, rng)
            d = frechet_gaussian_distance(([m1], [s1**2]), ([m2], [s2**2]))
            assert abs(est - d) <= 0.02 * d


class TestFeatures:
    @pytest.fixture(scope="class")
    def model(self):
        return init_params(ArchitectureConfig(16, 4, 8, 4), 0)

    def test_duplicates_have_zero_variance(self, model):
        img = np.random.default_rng(0).random((3, 16, 16), dtype=np.float32)
        _, v = feature_stats(model, np.stack([img] * 10))
        assert np.all(v < 1e-10)

    def test_permutation_invariant(self, model):
        imgs = np.random.default_rng(1).random((6, 3, 16, 16), dtype=np.float32)
        m1, v1 = feature_stats(model, imgs)
        m2, v2 = feature_stats(model, imgs[::-1].copy())
        assert np.allclose(m1, m2) and np.allclose(v1, v2)

    def test_needs_two(self, model):
        with pytest.raises(InvalidArgumentError):
            feature_stats(model, np.zeros((1, 3, 16, 16), np.float32))


class TestGroups:
    @pytest.fixture(scope="class")
    def setup(self):
        model = init_params(ArchitectureConfig(16, 4, 8, 4), 0)
        rng = np.random.default_rng(0)
        test = [LabeledImage(rng.random((3, 16, 16), dtype=np.float32), float(a))
                for a in (10, 20, 30.7, 35, 45, 60, 70)]
        return model, test

    def test_rows(self, setup):
        model, test = setup
        inp, rows = aging_accuracy_by_group(model, test)
        assert [r.name for r in rows] == ["AG1", "AG2", "AG3"]
        assert [r.target_age for r in rows] == [35.5, 45.5, 60.0]
        assert inp.real_count == 3
        assert [r.real_count for r in rows] == [1, 1, 2]
        assert rows[2].real_mean_age == 65.0

    def test_empty_input_group(self, setup):
        model, test = setup
        with pytest.raises(InvalidArgumentError):
            aging_accuracy_by_group(model, [t for t in test if t.age > 31])

    def test_report_fields(self, setup):
        model, test = setup
        rep = evaluate(model, test, ca_ns=(3, 5))
        assert set(rep) == {"mae", "ca", "fid_lite", "aging_accuracy", "config"}
        assert set(rep["ca"]) == {"3", "5"}
        assert np.isfinite(rep["fid_lite"]) and rep["fid_lite"] >= 0
        assert len(rep["aging_accuracy"]["groups"]) == len(PAPER_GROUPS) - 1
