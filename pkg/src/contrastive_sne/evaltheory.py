"""Evaluation protocols and brute-force numerical oracles.

The oracles enumerate permutations exhaustively or sum densities on a grid, so
they stay independent of the optimization code they check.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .losses import infonce, interleave, kl_match
from .numkit import RngState
from .similarity import p_positive_pairs, q_gaussian_conditional, sq_dists, t_kernel

# --------------------------------------------------------------------------
# classifiers on frozen features
# --------------------------------------------------------------------------


def knn_classify(ref_Z, ref_y, query_Z, k: int = 15, weighting: str = "cosine_weighted",
                 query_y=None, metric: str = "cosine", temperature: float = 0.07):
    """k-nearest-neighbor vote.

    Neighbors are the ``k`` most cosine-similar (``metric="cosine"``) or closest
    (``metric="euclidean"``) references; ties go to the lower reference index.
    ``cosine_weighted`` votes with ``exp(cos / temperature)``. Tied class scores
    resolve to the lowest class index. Returns ``(predictions, accuracy)``,
    accuracy being ``None`` without ``query_y``.
    """
    ref_Z, query_Z = np.atleast_2d(ref_Z).astype(float), np.atleast_2d(query_Z).astype(float)
    ref_y = np.asarray(ref_y, dtype=np.int64)
    if ref_Z.shape[0] == 0:
        raise ValueError("empty reference set")
    if not 1 <= k <= ref_Z.shape[0]:
        raise ValueError("k must lie between 1 and the reference size")
    if weighting not in ("uniform", "cosine_weighted"):
        raise ValueError(f"unknown weighting {weighting!r}")
    ref_u = ref_Z / np.maximum(np.linalg.norm(ref_Z, axis=1, keepdims=True), 1e-300)
    q_u = query_Z / np.maximum(np.linalg.norm(query_Z, axis=1, keepdims=True), 1e-300)
    cos = q_u @ ref_u.T
    if metric == "cosine":
        order = np.argsort(-cos, axis=1, kind="stable")
    elif metric == "euclidean":
        d2 = ((query_Z[:, None, :] - ref_Z[None, :, :]) ** 2).sum(axis=-1)
        order = np.argsort(d2, axis=1, kind="stable")
    else:
        raise ValueError(f"unknown metric {metric!r}")
    nbrs = order[:, :k]
    n_cls = int(ref_y.max()) + 1
    scores = np.zeros((query_Z.shape[0], n_cls))
    rows = np.arange(query_Z.shape[0])[:, None]
    w = np.ones(nbrs.shape) if weighting == "uniform" else np.exp(cos[rows, nbrs] / temperature)
    np.add.at(scores, (np.broadcast_to(rows, nbrs.shape), ref_y[nbrs]), w)
    pred = np.argmax(scores, axis=1)
    acc = None if query_y is None else float(np.mean(pred == np.asarray(query_y)))
    return pred, acc


def linear_probe(train_Z, train_y, test_Z, test_y, epochs: int = 500, lr: float = 0.1,
                 standardize: bool = True) -> float:
    """Multinomial logistic regression on frozen features, full-batch gradient
    descent from zero weights. Features are standardized with training
    statistics. Returns test accuracy."""
    train_Z, test_Z = np.atleast_2d(train_Z).astype(float), np.atleast_2d(test_Z).astype(float)
    train_y, test_y = np.asarray(train_y, dtype=np.int64), np.asarray(test_y, dtype=np.int64)
    n_cls = int(max(train_y.max(), test_y.max())) + 1
    if len(np.unique(train_y)) < 2:
        raise ValueError("a probe needs at least two classes")
    if standardize:
        mu = train_Z.mean(axis=0)
        sd = np.maximum(train_Z.std(axis=0), 1e-12)
        train_Z, test_Z = (train_Z - mu) / sd, (test_Z - mu) / sd
    n, d = train_Z.shape
    W, b = np.zeros((d, n_cls)), np.zeros(n_cls)
    Y = np.eye(n_cls)[train_y]
    for _ in range(epochs):
        logits = train_Z @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        prob = np.exp(logits)
        prob /= prob.sum(axis=1, keepdims=True)
        g = (prob - Y) / n
        W -= lr * train_Z.T @ g
        b -= lr * g.sum(axis=0)
    pred = np.argmax(test_Z @ W + b, axis=1)
    return float(np.mean(pred == test_y))


# --------------------------------------------------------------------------
# feature-map diagnostics
# --------------------------------------------------------------------------


def lipschitz_estimate(embed_fn, X, pair_count: int = 10000, rng: RngState | None = None):
    """Monte Carlo ``E |f(x) - f(x')| / |x - x'|`` over random distinct pairs.

    Returns ``(estimate, standard_error)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 2 or np.all(X == X[0]):
        raise ValueError("need at least two distinct points")
    rng = rng or RngState(0)
    i = rng.gen.integers(0, n, size=pair_count)
    j = rng.gen.integers(0, n, size=pair_count)
    same = np.all(X[i] == X[j], axis=1)
    while np.any(same):
        j[same] = rng.gen.integers(0, n, size=int(same.sum()))
        same = np.all(X[i] == X[j], axis=1)
    F = np.atleast_2d(np.asarray(embed_fn(X), dtype=float))
    ratios = np.linalg.norm(F[i] - F[j], axis=1) / np.linalg.norm(X[i] - X[j], axis=1)
    return float(ratios.mean()), float(ratios.std(ddof=1) / math.sqrt(pair_count))


def class_means(Z, labels) -> np.ndarray:
    Z, labels = np.asarray(Z, dtype=float), np.asarray(labels)
    m = int(labels.max()) + 1
    out = []
    for c in range(m):
        sel = labels == c
        if not np.any(sel):
            raise ValueError(f"class {c} has no points")
        out.append(Z[sel].mean(axis=0))
    return np.array(out)


def _cyclic_equal(seq, ref) -> bool:
    n = len(ref)
    return any(list(seq[r:]) + list(seq[:r]) == list(ref) for r in range(n))


def order_cycle_check(Z, labels, expected_order, geometry: str = "sphere") -> str:
    """Compare the angular order of 2-D class means with ``expected_order``,
    cyclically and up to reflection: ``match``, ``reverse_match`` or ``mismatch``."""
    means = class_means(Z, labels)
    if means.shape[1] != 2:
        raise ValueError("order check needs 2-D features")
    if means.shape[0] < 3:
        raise ValueError("order check needs at least three classes")
    center = np.zeros(2) if geometry == "sphere" else means.mean(axis=0)
    rel = means - center
    if np.any(np.linalg.norm(rel, axis=1) < 1e-12):
        raise ValueError("a class mean sits at the center; its angle is undefined")
    if np.min(sq_dists(means) + np.eye(len(means))) < 1e-24:
        raise ValueError("two class means coincide")
    theta = np.arctan2(rel[:, 1], rel[:, 0])
    seq = list(np.argsort(theta, kind="stable"))
    expected = [int(c) for c in expected_order]
    if _cyclic_equal(seq, expected):
        return "match"
    if _cyclic_equal(seq[::-1], expected):
        return "reverse_match"
    return "mismatch"


def class_cosine_heatmap(Z, labels) -> np.ndarray:
    """Mean cosine between features of class a and class b (self-pairs included)."""
    Z = np.asarray(Z, dtype=float)
    labels = np.asarray(labels)
    U = Z / np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), 1e-300)
    mean_u = class_means(U, labels)
    H = mean_u @ mean_u.T
    H = (H + H.T) / 2
    return np.clip(H, -1.0, 1.0)


# --------------------------------------------------------------------------
# theorem oracles
# --------------------------------------------------------------------------


def _argmin_set(values: np.ndarray, rtol: float = 1e-9) -> set:
    lo = values.min()
    tol = rtol * max(1.0, abs(lo))
    return set(np.flatnonzero(values <= lo + tol).tolist())


@dataclass
class PermutationVerdict:
    identical: bool
    argmin_c1: list
    argmin_frob: list
    argmin_frob_unsquared: list = field(default_factory=list)
    identity_spread: float = 0.0
    n_permutations: int = 0


def theorem1_oracle(X, Z) -> PermutationVerdict:
    """Enumerate all assignments of features to points and compare the
    minimizers of ``C1 = sum q_pi / p`` and of ``|Pbar - Q^pi|_F^2``.

    Similarities are negative distances, ``p_ij = -|x_i - x_j|`` and
    ``q_ij = -|z_i - z_j|``, and ``pbar_ij = -1/p_ij``. ``identity_spread`` is
    the range over permutations of ``|Pbar - Q^pi|^2 - 2 C1``, which the algebra
    says is constant.
    """
    X, Z = np.atleast_2d(X).astype(float), np.atleast_2d(Z).astype(float)
    n = X.shape[0]
    if Z.shape[0] != n:
        raise ValueError("X and Z must have the same number of rows")
    if not 2 <= n <= 6:
        raise ValueError("exhaustive enumeration supports 2 <= n <= 6")
    p = -np.sqrt(sq_dists(X))
    off = ~np.eye(n, dtype=bool)
    if np.any(p[off] >= 0):
        raise ValueError("input points must be pairwise distinct")
    q = -np.sqrt(sq_dists(Z))
    perms = np.array(list(itertools.permutations(range(n))))
    Qpi = q[perms[:, :, None], perms[:, None, :]]
    inv_p = np.where(off, 1.0 / np.where(off, p, 1.0), 0.0)
    c1 = np.sum(Qpi * inv_p, axis=(1, 2))
    frob_sq = np.sum(np.where(off, (-inv_p - Qpi) ** 2, 0.0), axis=(1, 2))
    frob = np.sqrt(frob_sq)
    resid = frob_sq - 2 * c1
    a1, a2, a3 = _argmin_set(c1), _argmin_set(frob_sq), _argmin_set(frob)
    return PermutationVerdict(a1 == a2 == a3, sorted(a1), sorted(a2), sorted(a3),
                              float(resid.max() - resid.min()), len(perms))


def rearrangement_oracle(x, y) -> PermutationVerdict:
    """Check by enumeration that the identity pairing minimizes both
    ``sum y_pi(i) / x_i`` and ``sum (x_i - y_pi(i))^2``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("x and y must be equal-length 1-D sequences")
    for v in (x, y):
        if np.any(v <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("sequences must be positive and strictly ascending")
        if abs(np.sum(v * v) - 1) > 1e-9:
            raise ValueError("sequences must have unit sum of squares")
    perms = np.array(list(itertools.permutations(range(len(x)))))
    ratio = np.sum(y[perms] / x, axis=1)
    sqerr = np.sum((x - y[perms]) ** 2, axis=1)
    a1, a2 = _argmin_set(ratio), _argmin_set(sqerr)
    identity = 0  # itertools yields the identity first
    return PermutationVerdict(identity in a1 and identity in a2, sorted(a1), sorted(a2),
                              n_permutations=len(perms))


def equivalence_residual(A, V) -> float:
    """``KL(P~ || Q~) - InfoNCE - log(1/(2n))`` at temperature 1, cosine similarity."""
    n = A.shape[0]
    kl = kl_match(p_positive_pairs(n), q_gaussian_conditional(interleave(A, V), "cosine", 1.0))
    return kl - infonce(A, V, 1.0, "cosine") - math.log(1.0 / (2 * n))


def equivalence_check(n: int, rng: RngState, d_z: int = 8) -> float:
    if n < 2:
        raise ValueError("n must be at least 2")
    A = rng.gen.standard_normal((n, d_z))
    V = rng.gen.standard_normal((n, d_z))
    return abs(equivalence_residual(A, V))


def grid_density_problem(cells: int, rng: RngState, bandwidth: float = 0.1):
    """Strictly positive marginal ``p`` and positive-pair conditional ``p(x'|x)``
    on a uniform grid over [0, 1]."""
    grid = (np.arange(cells) + 0.5) / cells
    centers = rng.gen.uniform(0.2, 0.8, size=2)
    dens = 0.05 + sum(np.exp(-0.5 * ((grid - c) / 0.1) ** 2) for c in centers)
    p = dens / dens.sum()
    K = np.exp(-0.5 * ((grid[:, None] - grid[None, :]) / bandwidth) ** 2)
    return grid, p, K / K.sum(axis=1, keepdims=True)


def ce_decomposition_terms(p, p_cond, F, t_df: float = 1.0, tau: float = 1.0):
    """Discrete ``E_x H(p(.|x), q_f(.|x))``, alignment ``L_a`` and uniformity ``L_u``."""
    p, p_cond = np.asarray(p, dtype=float), np.asarray(p_cond, dtype=float)
    if np.any(p <= 0) or np.any(p_cond <= 0):
        raise ValueError("densities must be strictly positive on every cell")
    F = np.asarray(F, dtype=float).reshape(len(p), -1)
    w = t_kernel(sq_dists(F), t_df, tau)
    unnorm = p[None, :] * w
    q_cond = unnorm / unnorm.sum(axis=1, keepdims=True)
    cross_entropy = float(np.sum(p[:, None] * p_cond * -np.log(q_cond)))
    l_align = float(np.sum(p[:, None] * p_cond * -np.log(w)))
    l_uniform = float(np.sum(p * np.log(w @ p)))
    return cross_entropy, l_align, l_uniform


def ce_decomposition_check(p, p_cond, features, t_df: float = 1.0, tau: float = 1.0):
    """Residuals ``E H - (L_a + L_u)`` for each feature assignment, and their spread."""
    residuals = []
    for F in features:
        ce, la, lu = ce_decomposition_terms(p, p_cond, F, t_df, tau)
        residuals.append(ce - (la + lu))
    residuals = np.array(residuals)
    return residuals, float(residuals.max() - residuals.min())


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    name: str = "model"
    knn_accuracy: float | None = None
    probe_accuracy: float | None = None
    ood_probe_accuracy: float | None = None
    alignment: float | None = None
    min_angle: float | None = None
    simplex_deviation: float | None = None
    lipschitz: float | None = None
    lipschitz_se: float | None = None
    order_check: str | None = None
    heatmap: np.ndarray | None = None

    def __post_init__(self):
        for key in ("knn_accuracy", "probe_accuracy", "ood_probe_accuracy"):
            v = getattr(self, key)
            if v is not None and not 0 <= v <= 1:
                raise ValueError(f"{key} must lie in [0, 1]")

    def items(self):
        for key in ("knn_accuracy", "probe_accuracy", "ood_probe_accuracy", "alignment", "min_angle",
                    "simplex_deviation", "lipschitz", "lipschitz_se", "order_check"):
            v = getattr(self, key)
            if v is not None:
                yield key, v


def write_eval_reports(path, reports: list[EvalReport]) -> None:
    """INI-style text: one ``[name]`` section per model, one ``key = value`` per metric."""
    cp = configparser.ConfigParser()
    for r in reports:
        cp[r.name] = {k: (repr(float(v)) if not isinstance(v, str) else v) for k, v in r.items()}
    with open(path, "w") as fh:
        cp.write(fh)


def read_eval_reports(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser()
    cp.read(path)
    return {s: dict(cp[s]) for s in cp.sections()}


def write_heatmap_csv(path, H: np.ndarray) -> None:
    m = H.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class"] + [f"c{j}" for j in range(m)])
        for i, row in enumerate(H):
            w.writerow([f"c{i}"] + [repr(float(v)) for v in row])
