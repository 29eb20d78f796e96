import numpy as np
import pytest
from hypothesis import given, strategies as st

from contrastive_sne.evaltheory import knn_classify
from contrastive_sne.numkit import RngState
from contrastive_sne.simdata import (CropBox, GmmSpec, LabeledDataset, PairBatch, augment_gaussian_noise,
                                     augment_mixup, augment_resample, gmm_sample, iou, mean_shift,
                                     polygon_means, read_dataset_csv, sample_crop_box, sample_crop_pair,
                                     write_dataset_csv)


@pytest.fixture
def pentagon():
    return GmmSpec(polygon_means(5, 1.0), 0.1)


class TestTypes:
    def test_gmm_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            GmmSpec(np.zeros((2, 2)), 0.0)

    def test_dataset_label_range(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 2)), np.array([0, -1]))

    def test_pairbatch_weights_default(self):
        pb = PairBatch(np.zeros((3, 2)), np.ones((3, 2)))
        np.testing.assert_array_equal(pb.weights, np.ones(3))

    def test_pairbatch_shape_mismatch(self):
        with pytest.raises(ValueError):
            PairBatch(np.zeros((3, 2)), np.zeros((2, 2)))

    def test_cropbox_outside_unit_square(self):
        with pytest.raises(ValueError):
            CropBox(0.5, 0.5, 1.2, 0.9)

    def test_polygon_means(self):
        M = polygon_means(5, 2.0, d=4)
        np.testing.assert_allclose(np.linalg.norm(M, axis=1), 2.0)
        assert np.all(M[:, 2:] == 0)


class TestGmmSample:
    def test_tiny_sigma(self, rng):
        spec = GmmSpec(polygon_means(4), 1e-9)
        ds = gmm_sample(spec, 100, rng)
        assert np.max(np.linalg.norm(ds.X - spec.means[ds.labels], axis=1)) < 1e-6

    def test_mean_of_single_component(self, rng):
        ds = gmm_sample(GmmSpec(np.zeros((1, 3)), 1.0), 10000, rng)
        np.testing.assert_allclose(ds.X.mean(axis=0), 0.0, atol=0.05)

    def test_pentagon_setting(self, rng, pentagon):
        ds = gmm_sample(pentagon, 250, rng)
        assert ds.X.shape == (250, 2)
        assert set(ds.labels.tolist()) <= set(range(5))
        assert np.all(np.linalg.norm(ds.X - pentagon.means[ds.labels], axis=1) < 0.5)

    def test_deterministic(self, pentagon):
        a = gmm_sample(pentagon, 50, RngState(9))
        b = gmm_sample(pentagon, 50, RngState(9))
        np.testing.assert_array_equal(a.X, b.X)


class TestAugmentations:
    def test_resample_tiny_sigma(self, rng):
        spec = GmmSpec(polygon_means(3), 1e-9)
        ds = gmm_sample(spec, 30, rng)
        pb = augment_resample(spec, ds, rng)
        np.testing.assert_allclose(pb.views, spec.means[ds.labels], atol=1e-7)

    def test_resample_label_out_of_range(self, rng, pentagon):
        ds = LabeledDataset(np.zeros((2, 2)), np.array([0, 7]))
        with pytest.raises(ValueError):
            augment_resample(pentagon, ds, rng)

    def test_resample_views_keep_labels(self, rng, pentagon):
        ds = gmm_sample(pentagon, 250, rng)
        pb = augment_resample(pentagon, ds, rng)
        _, acc = knn_classify(ds.X, ds.labels, pb.views, k=5, query_y=ds.labels, metric="euclidean")
        assert acc > 0.99

    def test_resample_moments(self, rng):
        spec = GmmSpec(np.array([[1.0, -2.0], [3.0, 0.0]]), 0.3)
        ds = LabeledDataset(np.zeros((10000, 2)), np.zeros(10000, dtype=int))
        v = augment_resample(spec, ds, rng).views
        np.testing.assert_allclose(v.mean(axis=0), [1.0, -2.0], atol=4 * 0.3 / 100)
        np.testing.assert_allclose(v.var(axis=0), 0.09, rtol=0.05)

    def test_noise_tiny(self, rng, pentagon):
        ds = gmm_sample(pentagon, 40, rng)
        np.testing.assert_allclose(augment_gaussian_noise(ds, 1e-12, rng).views, ds.X, atol=1e-9)

    def test_noise_second_moment(self, rng):
        ds = LabeledDataset(np.zeros((10000, 3)), np.zeros(10000, dtype=int))
        pb = augment_gaussian_noise(ds, 0.2, rng)
        msq = np.mean(np.sum((pb.views - pb.anchors) ** 2, axis=1))
        assert abs(msq - 3 * 0.04) < 0.05 * 3 * 0.04

    def test_noise_rejects_zero(self, rng, pentagon):
        with pytest.raises(ValueError):
            augment_gaussian_noise(gmm_sample(pentagon, 5, rng), 0.0, rng)

    def test_mixup_tiny_lambda(self, rng, pentagon):
        ds = gmm_sample(pentagon, 40, rng)
        np.testing.assert_allclose(augment_mixup(ds, 1e-9, rng).views, ds.X, atol=1e-8)

    def test_mixup_midpoints(self, rng, pentagon):
        ds = gmm_sample(pentagon, 12, rng)
        pb = augment_mixup(ds, 0.5, rng)
        for i, v in enumerate(pb.views):
            mids = [(ds.X[i] + ds.X[j]) / 2 for j in range(len(ds)) if j != i]
            assert min(np.linalg.norm(v - m) for m in mids) < 1e-12
            assert np.linalg.norm(v - ds.X[i]) > 0

    def test_mixup_stays_near_subspace(self, rng):
        direction = np.zeros(10)
        direction[0] = 1.0
        means = np.outer(np.arange(5.0), direction)
        ds = gmm_sample(GmmSpec(means, 0.01), 2000, rng)
        pb = augment_mixup(ds, ("beta", 1.0, 1.0), rng)
        delta = pb.views - pb.anchors
        ortho = np.linalg.norm(delta - np.outer(delta @ direction, direction), axis=1)
        assert np.mean(ortho < 10 * 0.01) > 0.99

    def test_mixup_bad_lambda(self, rng, pentagon):
        with pytest.raises(ValueError):
            augment_mixup(gmm_sample(pentagon, 5, rng), 1.5, rng)

    @given(st.integers(2, 30), st.integers(0, 2**31))
    def test_shapes_preserved(self, n, seed):
        r = RngState(seed)
        spec = GmmSpec(polygon_means(3), 0.1)
        ds = gmm_sample(spec, n, r)
        for pb in (augment_resample(spec, ds, r), augment_gaussian_noise(ds, 0.1, r), augment_mixup(ds, 0.3, r)):
            assert pb.anchors.shape == pb.views.shape == ds.X.shape
            np.testing.assert_array_equal(pb.weights, np.ones(n))


class TestMeanShift:
    def test_zero(self, rng, pentagon):
        ds = gmm_sample(pentagon, 20, rng)
        np.testing.assert_array_equal(mean_shift(ds, [0, 0]).X, ds.X)

    def test_shift_and_inverse(self, rng, pentagon):
        ds = gmm_sample(pentagon, 20, rng)
        sh = mean_shift(ds, [1, 1])
        np.testing.assert_array_equal(sh.X, ds.X + 1)
        np.testing.assert_array_equal(sh.labels, ds.labels)
        back = mean_shift(sh, [-1.0, -1.0])
        np.testing.assert_allclose(back.X, ds.X, atol=1e-15)

    def test_integer_shift_exact_inverse(self, rng):
        ds = LabeledDataset(np.arange(6.0).reshape(3, 2), np.zeros(3, dtype=int))
        np.testing.assert_array_equal(mean_shift(mean_shift(ds, [2, 3]), [-2, -3]).X, ds.X)

    def test_length_mismatch(self, rng, pentagon):
        with pytest.raises(ValueError):
            mean_shift(gmm_sample(pentagon, 5, rng), [1, 1, 1])

    def test_commutes_with_noise_in_distribution(self):
        base = LabeledDataset(np.zeros((10000, 2)), np.zeros(10000, dtype=int))
        a = augment_gaussian_noise(mean_shift(base, [1, 1]), 0.3, RngState(1)).views
        b = mean_shift(LabeledDataset(augment_gaussian_noise(base, 0.3, RngState(2)).views, base.labels), [1, 1]).X
        np.testing.assert_allclose(a.mean(axis=0), b.mean(axis=0), atol=0.02)
        np.testing.assert_allclose(a.var(axis=0), b.var(axis=0), rtol=0.06)


class TestCrops:
    def test_full_scale(self, rng):
        a, b = sample_crop_pair(rng, scale=(1.0, 1.0), ratio=(1.0, 1.0))
        for box in (a, b):
            assert (box.x0, box.y0, box.x1, box.y1) == (0.0, 0.0, 1.0, 1.0)

    def test_area_range(self, rng):
        areas = np.array([sample_crop_box(rng).area for _ in range(1000)])
        assert np.all((areas >= 0.2 - 1e-12) & (areas <= 1.0 + 1e-12))

    def test_iou_symmetric_about_half(self, rng):
        vals = np.array([iou(*sample_crop_pair(rng)) for _ in range(1000)])
        assert 0.4 <= vals.mean() <= 0.6
        assert abs(np.median(vals) - 0.5) < 0.1

    def test_bad_scale(self, rng):
        with pytest.raises(ValueError):
            sample_crop_box(rng, scale=(0.0, 0.5))


def raster_iou(a, b, res=2000):
    c = (np.arange(res) + 0.5) / res
    inx = lambda box: (c >= box.x0) & (c < box.x1)  # noqa: E731
    iny = lambda box: (c >= box.y0) & (c < box.y1)  # noqa: E731
    ma = np.outer(iny(a), inx(a))
    mb = np.outer(iny(b), inx(b))
    return (ma & mb).sum() / (ma | mb).sum()


class TestIou:
    def test_identical(self):
        box = CropBox(0.1, 0.2, 0.7, 0.9)
        assert iou(box, box) == 1.0

    def test_disjoint(self):
        assert iou(CropBox(0, 0, 0.3, 0.3), CropBox(0.5, 0.5, 1, 1)) == 0.0

    def test_known_value(self):
        a, b = CropBox(0, 0, 0.4, 0.4), CropBox(0.2, 0.2, 0.6, 0.6)
        assert abs(iou(a, b) - 1 / 7) < 1e-12
        assert abs(raster_iou(a, b) - 1 / 7) < 1e-3

    # dyadic coordinates keep areas exact, so "1 iff identical" is testable
    lo, hi = st.integers(0, 28).map(lambda k: k / 64), st.integers(36, 64).map(lambda k: k / 64)
    boxes = st.tuples(lo, lo, hi, hi).map(lambda t: CropBox(*t))

    @given(boxes, boxes)
    def test_properties(self, a, b):
        v = iou(a, b)
        assert 0 <= v <= 1
        assert v == iou(b, a)
        if (a.x0, a.y0, a.x1, a.y1) != (b.x0, b.y0, b.x1, b.y1):
            assert v < 1


class TestCsv:
    def test_round_trip(self, rng, tmp_path, pentagon):
        ds = gmm_sample(pentagon, 30, rng)
        write_dataset_csv(tmp_path / "d.csv", ds)
        back = read_dataset_csv(tmp_path / "d.csv")
        np.testing.assert_allclose(back.X, ds.X, rtol=1e-12)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,label"

    def test_bad_header(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_dataset_csv(tmp_path / "d.csv")
