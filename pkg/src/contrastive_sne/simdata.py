"""Gaussian-mixture data, positive-pair augmentations and synthetic crops."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numkit import RngState


@dataclass
class GmmSpec:
    """Equal-weight mixture of isotropic Gaussians N(mu_c, sigma^2 I)."""

    means: np.ndarray  # (m, d)
    sigma: float

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if self.means.shape[0] < 1 or self.means.shape[1] < 1:
            raise ValueError("a mixture needs at least one component in at least one dimension")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def m(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass
class LabeledDataset:
    X: np.ndarray  # (n, d)
    labels: np.ndarray  # (n,) ints

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X.shape[0] < 1 or self.labels.shape != (self.X.shape[0],):
            raise ValueError("dataset needs n >= 1 points and one label per point")
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class PairBatch:
    anchors: np.ndarray
    views: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.anchors.shape != self.views.shape:
            raise ValueError("anchors and views must have the same shape")
        if self.weights is None:
            self.weights = np.ones(self.anchors.shape[0])
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.anchors.shape[0],) or np.any(~np.isfinite(self.weights)) \
                or np.any(self.weights < 0):
            raise ValueError("weights must be finite, non-negative, one per pair")


@dataclass(frozen=True)
class CropBox:
    """Axis-aligned rectangle inside the unit square."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError("crop box must have positive area")
        tol = 1e-12
        if self.x0 < -tol or self.y0 < -tol or self.x1 > 1 + tol or self.y1 > 1 + tol:
            raise ValueError("crop box must lie in the unit square")

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


def polygon_means(m: int, radius: float = 1.0, d: int = 2) -> np.ndarray:
    """Vertices of a regular m-gon in the first two coordinates of R^d."""
    angles = 2 * np.pi * np.arange(m) / m
    means = np.zeros((m, d))
    means[:, 0] = radius * np.cos(angles)
    if d > 1:
        means[:, 1] = radius * np.sin(angles)
    return means


def gmm_sample(spec: GmmSpec, n: int, rng: RngState) -> LabeledDataset:
    if n < 1:
        raise ValueError("n must be at least 1")
    labels = rng.gen.integers(0, spec.m, size=n)
    X = spec.means[labels] + spec.sigma * rng.gen.standard_normal((n, spec.d))
    return LabeledDataset(X, labels)


def augment_resample(spec: GmmSpec, dataset: LabeledDataset, rng: RngState) -> PairBatch:
    """Fresh draw from each anchor's own component as its positive view."""
    if np.any(dataset.labels >= spec.m):
        raise ValueError("dataset label outside the mixture's component range")
    views = spec.means[dataset.labels] + spec.sigma * rng.gen.standard_normal(dataset.X.shape)
    return PairBatch(dataset.X, views)


def augment_gaussian_noise(dataset: LabeledDataset, sigma_noise: float, rng: RngState) -> PairBatch:
    if not sigma_noise > 0:
        raise ValueError("noise scale must be positive")
    return PairBatch(dataset.X, dataset.X + sigma_noise * rng.gen.standard_normal(dataset.X.shape))


def draw_lambdas(lam, size: int, rng: RngState) -> np.ndarray:
    """Mixing weights: a fixed float, or ``("beta", a, b)``."""
    if isinstance(lam, (tuple, list)):
        kind, a, b = lam
        if kind != "beta":
            raise ValueError(f"unknown lambda distribution {kind!r}")
        return rng.gen.beta(a, b, size=size)
    lam = float(lam)
    if not 0 < lam < 1:
        raise ValueError("fixed lambda must lie in (0, 1)")
    return np.full(size, lam)


def augment_mixup(dataset: LabeledDataset, lam=("beta", 1.0, 1.0), rng: RngState = None) -> PairBatch:
    """``view_i = x_i + lambda_i (x_j - x_i)`` with ``j != i`` uniform over the batch."""
    X = dataset.X
    n = X.shape[0]
    if n < 2:
        raise ValueError("mixup needs at least two points")
    lambdas = draw_lambdas(lam, n, rng)
    # uniform over the n-1 other indices
    partners = rng.gen.integers(0, n - 1, size=n)
    partners += partners >= np.arange(n)
    views = X + lambdas[:, None] * (X[partners] - X)
    return PairBatch(X, views)


def mean_shift(dataset: LabeledDataset, delta) -> LabeledDataset:
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.shape[0] != dataset.X.shape[1]:
        raise ValueError(f"shift has length {delta.shape[0]}, data has dimension {dataset.X.shape[1]}")
    return LabeledDataset(dataset.X + delta, dataset.labels.copy())


def sample_crop_box(rng: RngState, scale=(0.2, 1.0), ratio=(3 / 4, 4 / 3), max_tries: int = 100) -> CropBox:
    """Random-resized-crop style box: area fraction uniform in ``scale``,
    log-uniform aspect ratio, placed uniformly in the unit square."""
    s_min, s_max = scale
    if not 0 < s_min <= s_max <= 1:
        raise ValueError("scale range must satisfy 0 < s_min <= s_max <= 1")
    log_r = np.log(ratio)
    for _ in range(max_tries):
        area = rng.gen.uniform(s_min, s_max)
        r = np.exp(rng.gen.uniform(*log_r))
        w, h = np.sqrt(area * r), np.sqrt(area / r)
        if w <= 1 and h <= 1:
            break
    else:
        # no aspect ratio fits: fall back to a square of the same area
        w = h = np.sqrt(area)
    x0 = rng.gen.uniform(0, 1 - w)
    y0 = rng.gen.uniform(0, 1 - h)
    return CropBox(x0, y0, min(x0 + w, 1.0), min(y0 + h, 1.0))


def sample_crop_pair(rng: RngState, scale=(0.2, 1.0), ratio=(3 / 4, 4 / 3)) -> tuple[CropBox, CropBox]:
    return sample_crop_box(rng, scale, ratio), sample_crop_box(rng, scale, ratio)


def iou(a: CropBox, b: CropBox) -> float:
    iw = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    ih = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# --------------------------------------------------------------------------
# CSV interchange: header x0,...,x{d-1},label
# --------------------------------------------------------------------------


def write_dataset_csv(path, dataset: LabeledDataset) -> None:
    d = dataset.X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(d)] + ["label"])
        for row, lab in zip(dataset.X, dataset.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_dataset_csv(path) -> LabeledDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    header = rows[0]
    if header[-1] != "label" or header[:-1] != [f"x{j}" for j in range(len(header) - 1)]:
        raise ValueError(f"{path}: expected header x0,...,x{{d-1}},label")
    X = np.array([[float(v) for v in r[:-1]] for r in rows[1:]])
    labels = np.array([int(r[-1]) for r in rows[1:]])
    return LabeledDataset(X, labels)
