import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drflm.data import (ClientDataset, Dataset, NoiseSpec, Sample, choose_affected_clients,
                        clean_threshold_risk, gen_1d_example, gen_classification_clients,
                        gen_two_client_threshold, gen_regression_clients, inject_noise, largest_remainder,
                        load_csv_dataset, partition_by_label, partition_with_ratios, split_clients,
                        split_train_val_test, write_csv_dataset)
from drflm.errors import InvalidInputError


def rows(d: Dataset):
    return sorted(tuple(np.r_[x, y]) for x, y in zip(d.X, d.y))


def toy(n=100, d=2, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, d)), rng.normal(size=n))


class TestDataset:
    def test_shape_checks(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.zeros((3, 2)), np.zeros(2))
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[np.nan]]), np.zeros(1))

    def test_samples_round_trip(self):
        d = Dataset.from_samples([Sample(np.array([1.0, 2.0]), 0.0), Sample(np.array([3.0, 4.0]), 1.0)])
        assert len(d) == 2 and d.dim == 2
        assert d[1].y == 1.0
        assert [s.y for s in d] == [0.0, 1.0]


class TestSplits:
    def test_8_1_1(self):
        tr, va, te = split_train_val_test(toy(100), np.random.default_rng(0))
        assert (len(tr), len(va), len(te)) == (80, 10, 10)

    def test_disjoint_union(self):
        d = toy(57)
        parts = split_train_val_test(d, np.random.default_rng(1))
        pooled = parts[0].concat(parts[1]).concat(parts[2])
        assert rows(pooled) == rows(d)

    def test_deterministic(self):
        a = split_train_val_test(toy(30), np.random.default_rng(5))
        b = split_train_val_test(toy(30), np.random.default_rng(5))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.X, y.X)

    def test_too_few(self):
        with pytest.raises(InvalidInputError):
            split_train_val_test(toy(9), np.random.default_rng(0))

    @given(st.integers(0, 500), st.lists(st.floats(0.1, 10), min_size=1, max_size=6))
    def test_largest_remainder_sum(self, total, ratios):
        sizes = largest_remainder(total, ratios)
        assert sum(sizes) == total
        exact = total * np.array(ratios) / sum(ratios)
        assert np.all(np.abs(np.array(sizes) - exact) < 1.0)

    def test_split_clients_keeps_data(self):
        clients = partition_with_ratios(toy(100), [1, 1], np.random.default_rng(0))
        out = split_clients(clients, np.random.default_rng(1))
        for c, o in zip(clients, out):
            assert rows(o.all()) == rows(c.all())
            assert (len(o.train), len(o.validation), len(o.test)) == (40, 5, 5)


class TestTwoClientThreshold:
    def test_flip_fraction_and_balance(self):
        c1, c2 = gen_two_client_threshold(100_000, 0.8, 0.5, 2, np.random.default_rng(0))
        x1 = c2.train.X[:, 0]
        inside = (x1 >= -1.5) & (x1 <= -1.0)
        flipped = c2.train.y != np.where(x1 > 0, 1.0, -1.0)
        assert abs(flipped[inside].mean() - 0.8) < 0.01
        assert not np.any(flipped[~inside])
        for c in (c1, c2):
            assert abs((c.train.X[:, 0] > 0).mean() - 0.5) < 0.01

    def test_client1_clean(self):
        c1, _ = gen_two_client_threshold(5000, 0.8, 0.5, 3, np.random.default_rng(1))
        np.testing.assert_array_equal(c1.train.y, np.sign(c1.train.X[:, 0]))

    def test_support(self):
        c1, c2 = gen_two_client_threshold(2000, 0.8, 0.5, 3, np.random.default_rng(2))
        for c in (c1, c2):
            X = c.train.X
            assert np.all(np.abs(np.abs(X[:, 0]) - 1.5) <= 0.5)
            assert np.all((X[:, 1:] >= -2) & (X[:, 1:] <= -1))

    @pytest.mark.parametrize("p1,p2", [(0.5, 0.5), (1.0, 0.5), (0.8, 0.0), (0.8, 1.0), (0.3, 0.5)])
    def test_bad_params(self, p1, p2):
        with pytest.raises(InvalidInputError):
            gen_two_client_threshold(10, p1, p2, 1, np.random.default_rng(0))

    def test_noiseless_override(self):
        _, c2 = gen_two_client_threshold(1000, 0.0, 0.5, 1, np.random.default_rng(0))
        np.testing.assert_array_equal(c2.train.y, np.sign(c2.train.X[:, 0]))

    def test_1d_example(self):
        c = gen_1d_example(100_000, 0.8, np.random.default_rng(3))
        x, y = c.train.X[:, 0], c.train.y
        assert not np.any((x > -1) & (x < 1))
        flipped = y != np.where(x > 0, 1.0, -1.0)
        assert abs(flipped[x < 0].mean() - 0.8) < 0.01
        assert not np.any(flipped[x > 0])
        clean = gen_1d_example(1000, 0.0, np.random.default_rng(3))
        np.testing.assert_array_equal(clean.train.y, np.where(clean.train.X[:, 0] > 0, 1.0, -1.0))

    def test_population_risk(self):
        assert clean_threshold_risk(0.0) == 0.0
        assert clean_threshold_risk(-1.5) == 0.25
        assert clean_threshold_risk(-3.0) == 0.5
        assert clean_threshold_risk(1.25) == 0.125

    def test_risk_monte_carlo(self):
        c1, _ = gen_two_client_threshold(200_000, 0.8, 0.5, 1, np.random.default_rng(4))
        for b in (-1.7, -1.2, 0.3, 1.4):
            pred = np.where(c1.train.X[:, 0] > b, 1.0, -1.0)
            assert abs(np.mean(pred != c1.train.y) - clean_threshold_risk(b)) < 0.005


class TestGenerators:
    def test_regression_shapes_and_truth(self):
        cl = gen_regression_clients(3, 100, 3, np.random.default_rng(0), label_noise=0.0, shared_coef=0.5)
        assert len(cl) == 3
        for c in cl:
            w = np.array(c.provenance["w_star"])
            np.testing.assert_allclose(c.train.X @ w, c.train.y, atol=1e-12)
            assert (len(c.train), len(c.validation), len(c.test)) == (80, 10, 10)

    def test_regression_shared_needs_3d(self):
        with pytest.raises(InvalidInputError):
            gen_regression_clients(3, 100, 2, np.random.default_rng(0), shared_coef=0.5)

    def test_classification_labels(self):
        cl = gen_classification_clients(3, 200, 10, np.random.default_rng(0))
        for c in cl:
            assert set(np.unique(c.all().y)) <= {0.0, 1.0}

    def test_deterministic(self):
        a = gen_regression_clients(2, 50, 2, np.random.default_rng(4))
        b = gen_regression_clients(2, 50, 2, np.random.default_rng(4))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.train.X, y.train.X)


class TestCsv:
    def test_two_rows(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("a,b,label\n1,2,0\n3,4,1\n")
        d = load_csv_dataset(p, "label")
        np.testing.assert_array_equal(d.X, [[1, 2], [3, 4]])
        np.testing.assert_array_equal(d.y, [0, 1])

    def test_label_not_last(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("label,a,b\n1,2,3\n")
        d = load_csv_dataset(p, "label")
        np.testing.assert_array_equal(d.X, [[2, 3]])

    def test_bad_cell(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("x,label\nabc,0\n")
        with pytest.raises(InvalidInputError, match="row 1 column x"):
            load_csv_dataset(p, "label")

    def test_missing_label(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("x,y\n1,0\n")
        with pytest.raises(InvalidInputError, match="label"):
            load_csv_dataset(p, "label")

    def test_empty(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("")
        with pytest.raises(InvalidInputError, match="empty"):
            load_csv_dataset(p, "label")

    def test_round_trip(self, tmp_path):
        d = toy(100, 4, seed=9)
        p = tmp_path / "rt.csv"
        write_csv_dataset(p, d)
        back = load_csv_dataset(p, "label")
        np.testing.assert_array_equal(back.X, d.X)
        np.testing.assert_array_equal(back.y, d.y)


class TestPartitions:
    labelled = Dataset(np.arange(12, dtype=float).reshape(-1, 1), np.array([0, 1, 2] * 4, dtype=float))

    def test_by_label_single(self):
        cl = partition_by_label(self.labelled, [[0], [1], [2]])
        assert len(cl) == 3
        for i, c in enumerate(cl):
            assert set(c.train.y) == {float(i)}
            assert len(c.train) == 4

    def test_by_label_union(self):
        cl = partition_by_label(self.labelled, [[0, 1], [2]])
        assert rows(cl[0].train.concat(cl[1].train)) == rows(self.labelled)

    def test_by_label_counts(self):
        rng = np.random.default_rng(0)
        y = rng.integers(0, 4, size=500).astype(float)
        d = Dataset(rng.normal(size=(500, 2)), y)
        cl = partition_by_label(d, [[0], [1, 2], [3]])
        assert [len(c.train) for c in cl] == [np.sum(y == 0), np.sum((y == 1) | (y == 2)), np.sum(y == 3)]

    def test_by_label_errors(self):
        with pytest.raises(InvalidInputError):
            partition_by_label(self.labelled, [[0], [0, 1]])
        with pytest.raises(InvalidInputError):
            partition_by_label(self.labelled, [[0], [7]])

    def test_ratios_721(self):
        cl = partition_with_ratios(toy(100), [7, 2, 1], np.random.default_rng(0))
        assert [len(c.train) for c in cl] == [70, 20, 10]

    def test_ratios_rounding(self):
        cl = partition_with_ratios(toy(11), [1, 1], np.random.default_rng(0))
        assert [len(c.train) for c in cl] == [6, 5]

    def test_ratios_union(self):
        d = toy(37)
        cl = partition_with_ratios(d, [3, 1, 1], np.random.default_rng(2))
        pooled = cl[0].train.concat(cl[1].train).concat(cl[2].train)
        assert rows(pooled) == rows(d)

    def test_ratios_errors(self):
        with pytest.raises(InvalidInputError):
            partition_with_ratios(toy(2), [1, 1, 1], np.random.default_rng(0))
        with pytest.raises(InvalidInputError):
            partition_with_ratios(toy(20), [1, 0], np.random.default_rng(0))


def _client(n=100, labels="reg", seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    y = rng.normal(size=n) if labels == "reg" else np.where(rng.random(n) < 0.5, -1.0, 1.0)
    tr, va, te = split_train_val_test(Dataset(X, y), rng)
    return ClientDataset(0, tr, va, te, {})


class TestNoise:
    def test_zero_probability(self):
        c = _client()
        out = inject_noise(c, NoiseSpec("gaussian_label", 2.0, 0.0, {0}), np.random.default_rng(0))
        np.testing.assert_array_equal(out.train.y, c.train.y)

    def test_flip_all(self):
        c = _client(labels="pm")
        out = inject_noise(c, NoiseSpec("label_flip", 1.0, 1.0, {0}), np.random.default_rng(0))
        np.testing.assert_array_equal(out.train.y, -c.train.y)

    def test_flip_needs_pm1(self):
        with pytest.raises(InvalidInputError):
            inject_noise(_client(), NoiseSpec("label_flip", 1.0, 0.5, {0}), np.random.default_rng(0))

    def test_gaussian_moments(self):
        c = _client(n=125_000)
        out = inject_noise(c, NoiseSpec("gaussian_label", 2.0, 0.3, {0}), np.random.default_rng(1))
        diff = out.train.y - c.train.y
        hit = diff != 0
        assert abs(hit.mean() - 0.3) < 0.01
        assert abs(diff[hit].std() - 2.0) < 0.05

    def test_unaffected_and_splits_untouched(self):
        c = _client()
        spec = NoiseSpec("gaussian_label", 3.0, 1.0, {0})
        out = inject_noise(c, spec, np.random.default_rng(0))
        np.testing.assert_array_equal(out.train.X, c.train.X)
        np.testing.assert_array_equal(out.validation.y, c.validation.y)
        np.testing.assert_array_equal(out.test.y, c.test.y)
        other = inject_noise(c, NoiseSpec("gaussian_label", 3.0, 1.0, {5}), np.random.default_rng(0))
        assert other is c

    def test_provenance(self):
        out = inject_noise(_client(), NoiseSpec("gaussian_label", 1.0, 0.5, {0}), np.random.default_rng(0))
        rec = out.provenance["noise"][0]
        assert rec["kind"] == "gaussian_label" and rec["n_perturbed"] > 0

    def test_spec_validation(self):
        with pytest.raises(InvalidInputError):
            NoiseSpec("gaussian_label", -1.0)
        with pytest.raises(InvalidInputError):
            NoiseSpec("gaussian_label", 1.0, 1.5)
        with pytest.raises(InvalidInputError):
            NoiseSpec("region_flip", 0.5)
        with pytest.raises(InvalidInputError):
            NoiseSpec("shuffle", 0.5)

    def test_affected_choice(self):
        rng = np.random.default_rng(0)
        assert len(choose_affected_clients(3, 0.5, rng)) == 2
        assert len(choose_affected_clients(10, 0.5, rng)) == 5
        assert len(choose_affected_clients(3, 0.01, rng)) == 1
        assert choose_affected_clients(3, 0.0, rng) == frozenset()
        a = choose_affected_clients(8, 0.5, np.random.default_rng(3))
        assert a == choose_affected_clients(8, 0.5, np.random.default_rng(3))
