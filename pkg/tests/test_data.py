import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vflsim.data import (SyntheticSpec, VerticalDataset, batches, class_mean_accuracy, generate_synthetic,
                         generate_synthetic_with_params, load_tabular, vertical_split)
from vflsim.errors import InputError, ParseError
from vflsim.rng import stream


class TestSynthetic:
    def test_deterministic(self):
        spec = SyntheticSpec(n=500, seed=3)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert a.digest() == b.digest()
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.party_features, b.party_features))

    def test_seed_changes_data(self):
        assert generate_synthetic(SyntheticSpec(n=200, seed=1)).digest() != \
            generate_synthetic(SyntheticSpec(n=200, seed=2)).digest()

    def test_uninformative_party_is_noise(self):
        spec = SyntheticSpec(n=3000, n_classes=4, dims=(4, 4), informativeness=(1.0, 0.0),
                             coarse_parties=(), confound=0.0, seed=0)
        ds, params = generate_synthetic_with_params(spec)
        assert not params.class_means[1].any()
        x2 = ds.party_features[1]
        means = np.array([x2[ds.labels == c].mean(axis=0) for c in range(4)])
        # class-conditional means of pure noise agree up to sampling error
        assert np.abs(means - x2.mean(axis=0)).max() < 0.15

    def test_standalone_reference_above_chance(self):
        spec = SyntheticSpec(n=4000, n_classes=10, dims=(8, 8), informativeness=(0.7, 0.7), class_separation=4.0,
                             coarse_parties=(), confound=0.0, seed=0)
        ds, params = generate_synthetic_with_params(spec)
        acc = class_mean_accuracy(ds, params, party=1)
        # independent nearest-mean rule straight from the generator means
        x = ds.party_features[0][ds.test_idx]
        mu = params.class_means[0]
        pred = ((x[:, None, :] - mu[None]) ** 2).sum(-1).argmin(1)
        assert acc == pytest.approx(float((pred == ds.labels[ds.test_idx]).mean()))
        assert acc > 0.1 + 0.2

    def test_default_dataset_layout(self):
        ds = generate_synthetic(SyntheticSpec(n=400))
        assert ds.dims == (8, 16)  # party 2 also observes the confounder
        assert ds.n_classes == 10 and ds.n_samples == 400
        assert np.bincount(ds.labels).tolist() == [40] * 10

    def test_coarse_party_means_shared_by_class_pairs(self):
        ds, params = generate_synthetic_with_params(SyntheticSpec(n=200, seed=1))
        mu = params.class_means[1]
        np.testing.assert_array_equal(mu[0], mu[1])
        assert not np.array_equal(mu[0], mu[2])

    @pytest.mark.parametrize("kwargs", [dict(n=5, n_classes=10), dict(dims=(8, 0)), dict(informativeness=(1.0, 1.5)),
                                        dict(dims=(8,), informativeness=(1.0, 1.0)), dict(coarse_parties=(3,))])
    def test_degenerate_specs(self, kwargs):
        with pytest.raises(InputError):
            generate_synthetic(SyntheticSpec(**kwargs))

    def test_split_disjoint_and_complete(self):
        ds = generate_synthetic(SyntheticSpec(n=500))
        assert not np.intersect1d(ds.train_idx, ds.test_idx).size
        assert np.array_equal(np.sort(np.concatenate([ds.train_idx, ds.test_idx])), np.arange(500))

    def test_immutable(self):
        ds = generate_synthetic(SyntheticSpec(n=100))
        with pytest.raises(ValueError):
            ds.party_features[0][0, 0] = 1.0


class TestVerticalSplit:
    def test_single_party(self):
        m = np.arange(6.0).reshape(2, 3)
        [out] = vertical_split(m, [3])
        np.testing.assert_array_equal(out, m)

    def test_two_blocks(self):
        a, b = vertical_split([[1, 2, 3, 4]], [2, 4])
        np.testing.assert_array_equal(a, [[1, 2]])
        np.testing.assert_array_equal(b, [[3, 4]])

    @given(st.integers(1, 8), st.data())
    @settings(max_examples=40, deadline=None)
    def test_round_trip(self, d, data):
        cuts = sorted(data.draw(st.sets(st.integers(1, d - 1), max_size=d - 1))) if d > 1 else []
        m = stream(d, "split").standard_normal((3, d))
        np.testing.assert_array_equal(np.hstack(vertical_split(m, cuts + [d])), m)

    @pytest.mark.parametrize("bounds", [[2, 2, 4], [3, 2], [2], []])
    def test_bad_boundaries(self, bounds):
        with pytest.raises(InputError):
            vertical_split(np.zeros((1, 4)), bounds)


class TestTabular:
    def write(self, path, text):
        path.write_text(text)
        return path

    def test_deterministic_split_and_label_excluded(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "a,b,label,c\n1,2,0,3\n4,5,1,6\n7,8,0,9\n1,1,1,1\n")
        a = load_tabular(p, "label", [1, 3], seed=4)
        b = load_tabular(p, "label", [1, 3], seed=4)
        assert np.array_equal(a.train_idx, b.train_idx) and len(a.test_idx) == 1
        assert a.dims == (1, 2)
        assert a.labels.tolist() == [0, 1, 0, 1]

    def test_standardized_on_train(self, tmp_path):
        rng = stream(0, "tab")
        rows = "\n".join(",".join(f"{v:.6f}" for v in r) + f",{i % 3}" for i, r in
                         enumerate(rng.normal(5, 3, size=(40, 3))))
        p = self.write(tmp_path / "t.csv", "x,y,z,label\n" + rows + "\n")
        ds = load_tabular(p, "label", [2, 3])
        x = np.hstack(ds.party_features)[ds.train_idx]
        assert np.abs(x.mean(axis=0)).max() < 1e-9
        np.testing.assert_allclose(x.std(axis=0), 1.0)

    def test_non_numeric_cell_location(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "a,label\n1,0\nfoo,1\n")
        with pytest.raises(ParseError, match=r"row 3, col 1"):
            load_tabular(p, "label", [1])

    def test_missing_cell(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "a,b,label\n1,,0\n")
        with pytest.raises(ParseError, match=r"row 2, col 2"):
            load_tabular(p, "label", [2])

    def test_missing_label_column(self, tmp_path):
        p = self.write(tmp_path / "t.csv", "a,b\n1,2\n")
        with pytest.raises(ParseError):
            load_tabular(p, "label", [2])


class TestBatches:
    def test_big_batch_single(self, small_ds):
        out = list(batches(small_ds, "train", 10_000, 0, 0))
        assert len(out) == 1 and sorted(out[0].indices) == sorted(small_ds.train_idx)

    def test_same_seed_epoch_same_order(self, small_ds):
        a = [b.indices.tolist() for b in batches(small_ds, "train", 32, 3, 2)]
        b = [b.indices.tolist() for b in batches(small_ds, "train", 32, 3, 2)]
        c = [b.indices.tolist() for b in batches(small_ds, "train", 32, 3, 1)]
        assert a == b and a != c

    @given(st.integers(1, 70), st.integers(0, 5))
    @settings(max_examples=30, deadline=None)
    def test_epoch_covers_split_once_and_rows_aligned(self, small_ds, size, epoch):
        seen = []
        for b in batches(small_ds, "test", size, 1, epoch):
            seen += b.indices.tolist()
            for k, x in enumerate(b.parties):
                np.testing.assert_array_equal(x, small_ds.party_features[k][b.indices])
            np.testing.assert_array_equal(b.labels, small_ds.labels[b.indices])
        assert sorted(seen) == sorted(small_ds.test_idx.tolist())

    def test_short_final_batch_kept(self, small_ds):
        sizes = [len(b.labels) for b in batches(small_ds, "train", 32, 0, 0)]
        n = len(small_ds.train_idx)
        assert sum(sizes) == n and sizes[-1] == (n % 32 or 32)

    def test_invalid_size(self, small_ds):
        with pytest.raises(InputError):
            next(batches(small_ds, "train", 0, 0, 0))


def test_only_restricts_parties(three_party_ds):
    sub = three_party_ds.only([2])
    assert sub.n_parties == 1 and sub.party_features[0] is three_party_ds.party_features[1]
    assert isinstance(sub, VerticalDataset)
