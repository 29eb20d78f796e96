"""Input-space P and feature-space Q similarity matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .numkit import RngState
from .simdata import draw_lambdas

KINDS = ("conditional", "joint", "unnormalized")
SIM_KINDS = ("cosine", "neg_sq_euclidean", "inner_product")


@dataclass
class SimMatrix:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if self.kind not in KINDS:
            raise ValueError(f"unknown similarity kind {self.kind!r}")
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("similarity matrix must be square")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("similarity entries must be finite and non-negative")
        if np.any(np.diag(v) != 0):
            raise ValueError("similarity matrix must have a zero diagonal")
        if self.kind == "conditional" and not np.allclose(v.sum(axis=1), 1.0, rtol=0, atol=1e-10):
            raise ValueError("conditional similarity rows must sum to 1")
        if self.kind == "joint" and abs(v.sum() - 1.0) > 1e-10:
            raise ValueError("joint similarity entries must sum to 1")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.shape[0]


def sq_dists(Z: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, exact zeros on the diagonal."""
    diff = Z[:, None, :] - Z[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def row_normalize(Z: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cosine similarity is undefined for a zero vector")
    return Z / norms


def pairwise_sim(Z: np.ndarray, sim_kind: str) -> np.ndarray:
    if sim_kind == "cosine":
        U = row_normalize(Z)
        return U @ U.T
    if sim_kind == "inner_product":
        return Z @ Z.T
    if sim_kind == "neg_sq_euclidean":
        return -sq_dists(Z)
    raise ValueError(f"unknown sim_kind {sim_kind!r}")


def masked_softmax_rows(S: np.ndarray) -> np.ndarray:
    """Row softmax excluding the diagonal (diagonal of the result is 0)."""
    S = S.copy()
    np.fill_diagonal(S, -np.inf)
    S -= S.max(axis=1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=1, keepdims=True)


def p_sne_conditional(X: np.ndarray, bandwidths=1.0) -> SimMatrix:
    """``P_{j|i}`` proportional to ``exp(-|x_i - x_j|^2 / (2 h_i^2))`` over ``j != i``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    h = np.broadcast_to(np.asarray(bandwidths, dtype=float), (n,))
    if np.any(h <= 0):
        raise ValueError("bandwidths must be positive")
    logits = -sq_dists(X) / (2 * h[:, None] ** 2)
    return SimMatrix(masked_softmax_rows(logits), "conditional")


def p_positive_pairs(n: int) -> SimMatrix:
    """Sparse augmentation similarity on the 2n interleaved points.

    Point ``2i`` is anchor i and ``2i+1`` its view (0-based). Each positive
    entry holds ``1/(2n)`` so every row sums to ``1/(2n)`` and the whole matrix
    to 1; the kind is therefore ``unnormalized``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    P = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    P[2 * idx, 2 * idx + 1] = 1.0 / (2 * n)
    P[2 * idx + 1, 2 * idx] = 1.0 / (2 * n)
    return SimMatrix(P, "unnormalized")


def p_weighted_pairs(ious, tau_w: float) -> np.ndarray:
    """Pair weights proportional to ``exp(iou / tau_w)``, rescaled to mean 1."""
    ious = np.asarray(ious, dtype=float)
    if not tau_w > 0:
        raise ValueError("tau_w must be positive")
    if np.any((ious < 0) | (ious > 1)):
        raise ValueError("IoU values must lie in [0, 1]")
    w = np.exp((ious - ious.max()) / tau_w)
    return w / w.mean()


def gaussian_density(sigma: float):
    """Isotropic N(0, sigma^2 I) density, vectorized over the last axis."""

    def phi(u):
        u = np.atleast_2d(u)
        d = u.shape[-1]
        return np.exp(-0.5 * np.sum(u * u, axis=-1) / sigma**2) / (2 * np.pi * sigma**2) ** (d / 2)

    return phi


def p_noise_induced(X: np.ndarray, phi) -> SimMatrix:
    """``values_ij = phi(x_i - x_j)``; ``phi`` maps a (k, d) array to k densities."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    diff = (X[:, None, :] - X[None, :, :]).reshape(-1, d)
    V = np.asarray(phi(diff), dtype=float).reshape(n, n)
    np.fill_diagonal(V, 0.0)
    return SimMatrix(V, "unnormalized")


def mixup_kde(X: np.ndarray, points: np.ndarray, lam, M: int, h: float | None, rng: RngState):
    """Gaussian-kernel estimate of the density of ``lambda (x_a - x_b)``.

    Draws M pairs ``a != b`` uniformly from the rows of X. Returns the estimates
    at ``points`` (k x d), their Monte Carlo standard errors and the bandwidth.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if M < 100:
        raise ValueError("need at least 100 Monte Carlo draws")
    if n < 2:
        raise ValueError("need at least two points")
    a = rng.gen.integers(0, n, size=M)
    b = rng.gen.integers(0, n - 1, size=M)
    b += b >= a
    lambdas = draw_lambdas(lam, M, rng)
    draws = lambdas[:, None] * (X[a] - X[b])
    if h is None:
        spread = float(np.mean(np.std(draws, axis=0)))
        h = max(spread, 1e-12) * M ** (-1.0 / (d + 4))
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    points = np.atleast_2d(points)
    k2 = ((points[:, None, :] - draws[None, :, :]) ** 2).sum(axis=-1)
    kern = np.exp(-0.5 * k2 / h**2) / (2 * np.pi * h**2) ** (d / 2)
    return kern.mean(axis=1), kern.std(axis=1, ddof=1) / np.sqrt(M), h


def p_mixup_induced(X: np.ndarray, lam=("beta", 1.0, 1.0), M: int = 2000, h: float | None = None,
                    rng: RngState = None) -> SimMatrix:
    """Mixup-induced similarity: estimated density of ``lambda (x_1 - x_2)``
    evaluated at every pairwise difference, symmetrized."""
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    diffs = (X[:, None, :] - X[None, :, :]).reshape(-1, d)
    est, _, _ = mixup_kde(X, diffs, lam, M, h, rng)
    V = est.reshape(n, n)
    V = (V + V.T) / 2
    np.fill_diagonal(V, 0.0)
    return SimMatrix(V, "unnormalized")


def q_gaussian_conditional(Z: np.ndarray, sim_kind: str = "cosine", tau: float = 1.0) -> SimMatrix:
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < 2:
        raise ValueError("need at least two points")
    if not tau > 0:
        raise ValueError("tau must be positive")
    return SimMatrix(masked_softmax_rows(pairwise_sim(Z, sim_kind) / tau), "conditional")


def t_kernel(D: np.ndarray, t_df: float, tau: float) -> np.ndarray:
    """Student-t weight ``(1 + D / (tau t_df))^(-(t_df+1)/2)`` of squared distances D."""
    return (1.0 + D / (tau * t_df)) ** (-(t_df + 1) / 2)


def q_t_joint(Z: np.ndarray, t_df: float = 1.0, tau: float = 1.0) -> SimMatrix:
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < 2:
        raise ValueError("need at least two points")
    if not (t_df > 0 and tau > 0):
        raise ValueError("t_df and tau must be positive")
    W = t_kernel(sq_dists(Z), t_df, tau)
    np.fill_diagonal(W, 0.0)
    return SimMatrix(W / W.sum(), "joint")


def write_simmatrix_csv(path, P: SimMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"kind={P.kind}"])
        for row in P.values:
            w.writerow([repr(float(v)) for v in row])


def read_simmatrix_csv(path) -> SimMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or not rows[0][0].startswith("kind="):
        raise ValueError(f"{path}: missing kind=<...> header")
    return SimMatrix(np.array([[float(v) for v in r] for r in rows[1:]]), rows[0][0][5:])
