"""Contrastive / neighbor-embedding objectives and their analytic gradients.

Pair-based losses take ``anchors`` and ``views`` (both n x d_z). Internally the
2n features are interleaved: row ``2i`` is anchor i and row ``2i+1`` its view,
which is the indexing used by :func:`similarity.p_positive_pairs`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .similarity import (SIM_KINDS, SimMatrix, masked_softmax_rows, p_positive_pairs, sq_dists,
                         t_kernel)

LOSS_KINDS = ("sne_kl", "infonce", "infonce_weighted", "infonce_unnormalized", "t_simclr")


@dataclass
class LossSpec:
    kind: str = "infonce"
    tau: float = 0.5
    t_df: float = 5.0
    sim_kind: str = "cosine"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.sim_kind not in SIM_KINDS:
            raise ValueError(f"unknown sim_kind {self.sim_kind!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.t_df > 0:
            raise ValueError("t_df must be positive")


def interleave(A: np.ndarray, V: np.ndarray) -> np.ndarray:
    A, V = np.asarray(A, dtype=float), np.asarray(V, dtype=float)
    if A.shape != V.shape:
        raise ValueError("anchors and views must have the same shape")
    Z = np.empty((2 * A.shape[0], A.shape[1]))
    Z[0::2], Z[1::2] = A, V
    return Z


def deinterleave(G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return G[0::2].copy(), G[1::2].copy()


# --------------------------------------------------------------------------
# building blocks: logits S(Z) and distances D(Z) with their backward maps
# --------------------------------------------------------------------------


def _sim_logits(Z: np.ndarray, sim_kind: str, tau: float):
    """Return ``S = sim(Z)/tau`` and a map from dL/dS (zero diagonal) to dL/dZ."""
    if sim_kind == "cosine":
        norms = np.linalg.norm(Z, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("cosine similarity is undefined for a zero vector")
        U = Z / norms

        def back(G):
            dU = (G + G.T) @ U / tau
            return (dU - np.sum(dU * U, axis=1, keepdims=True) * U) / norms

        return U @ U.T / tau, back
    if sim_kind == "inner_product":
        return Z @ Z.T / tau, lambda G: (G + G.T) @ Z / tau
    if sim_kind == "neg_sq_euclidean":
        def back(G):
            H = G + G.T
            return -(2.0 / tau) * (H.sum(axis=1, keepdims=True) * Z - H @ Z)

        return -sq_dists(Z) / tau, back
    raise ValueError(f"unknown sim_kind {sim_kind!r}")


def _dist_back(C: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """dL/dZ given C = dL/dD for D_jk = |z_j - z_k|^2 (ordered pairs)."""
    H = C + C.T
    return 2.0 * (H.sum(axis=1, keepdims=True) * Z - H @ Z)


def _logsumexp_rows(S: np.ndarray) -> np.ndarray:
    Sm = S.copy()
    np.fill_diagonal(Sm, -np.inf)
    mx = Sm.max(axis=1)
    return mx + np.log(np.exp(Sm - mx[:, None]).sum(axis=1))


# --------------------------------------------------------------------------
# KL matching
# --------------------------------------------------------------------------


def kl_match(P, Q) -> float:
    """``sum_ij P_ij log(P_ij / Q_ij)`` with ``0 log(0/q) = 0``."""
    P = P.values if isinstance(P, SimMatrix) else np.asarray(P, dtype=float)
    Q = Q.values if isinstance(Q, SimMatrix) else np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError("P and Q must have the same shape")
    mask = P > 0
    if np.any(Q[mask] <= 0):
        raise ValueError("Q vanishes where P is positive; KL is infinite")
    return float(np.sum(P[mask] * (np.log(P[mask]) - np.log(Q[mask]))))


def kl_gaussian_and_grad(P, Z: np.ndarray, sim_kind: str = "cosine", tau: float = 1.0, grad: bool = True):
    """KL(P || Q) with Q the conditional softmax of ``sim(Z)/tau``; gradient w.r.t. Z."""
    P = P.values if isinstance(P, SimMatrix) else np.asarray(P, dtype=float)
    S, back = _sim_logits(Z, sim_kind, tau)
    Q = masked_softmax_rows(S)
    value = kl_match(P, Q)
    if not grad:
        return value, None
    G = Q * P.sum(axis=1, keepdims=True) - P
    np.fill_diagonal(G, 0.0)
    return value, back(G)


def kl_t_and_grad(P, Z: np.ndarray, t_df: float = 1.0, tau: float = 1.0, grad: bool = True):
    """KL(P || Q) with Q the joint Student-t similarity of Z; gradient w.r.t. Z."""
    P = P.values if isinstance(P, SimMatrix) else np.asarray(P, dtype=float)
    D = sq_dists(Z)
    W = t_kernel(D, t_df, tau)
    np.fill_diagonal(W, 0.0)
    Q = W / W.sum()
    value = kl_match(P, Q)
    if not grad:
        return value, None
    C = (t_df + 1) / 2 / (tau * t_df + D) * (P - P.sum() * Q)
    np.fill_diagonal(C, 0.0)
    return value, _dist_back(C, Z)


# --------------------------------------------------------------------------
# InfoNCE family
# --------------------------------------------------------------------------


def _infonce(A, V, weights, tau, sim_kind, grad):
    Z = interleave(A, V)
    N = Z.shape[0]
    if N < 4:
        raise ValueError("InfoNCE needs at least two pairs")
    if not tau > 0:
        raise ValueError("tau must be positive")
    w = np.ones(N // 2) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (N // 2,) or np.any(w < 0):
        raise ValueError("weights must be non-negative, one per pair")
    w2 = np.repeat(w, 2)
    S, back = _sim_logits(Z, sim_kind, tau)
    lse = _logsumexp_rows(S)
    rows = np.arange(N)
    partner = rows ^ 1
    per_row = lse - S[rows, partner]
    value = float(np.sum(w2 * per_row) / N)
    if not grad:
        return value, None
    Sm = S.copy()
    np.fill_diagonal(Sm, -np.inf)
    G = np.exp(Sm - lse[:, None])
    G[rows, partner] -= 1.0
    G *= (w2 / N)[:, None]
    return value, back(G)


def infonce(A, V, tau: float = 0.5, sim_kind: str = "cosine") -> float:
    """Symmetric InfoNCE; each feature contrasts against the other 2n-1 features."""
    return _infonce(A, V, None, tau, sim_kind, False)[0]


def infonce_weighted(A, V, weights, tau: float = 0.5, sim_kind: str = "cosine") -> float:
    return _infonce(A, V, weights, tau, sim_kind, False)[0]


def infonce_unnormalized(A, V, tau: float = 0.5) -> float:
    """InfoNCE on raw inner products (no projection onto the sphere)."""
    return _infonce(A, V, None, tau, "inner_product", False)[0]


# --------------------------------------------------------------------------
# t-SimCLR
# --------------------------------------------------------------------------


def _t_simclr(A, V, t_df, tau, grad):
    Z = interleave(A, V)
    N = Z.shape[0]
    n = N // 2
    if n < 2:
        raise ValueError("t-SimCLR needs at least two pairs")
    if not (t_df > 0 and tau > 0):
        raise ValueError("t_df and tau must be positive")
    D = sq_dists(Z)
    W = t_kernel(D, t_df, tau)
    np.fill_diagonal(W, 0.0)
    total = W.sum()
    half = (t_df + 1) / 2
    d_pos = D[0::2, 1::2].diagonal()
    align = float(half * np.mean(np.log1p(d_pos / (tau * t_df))))
    uniform = float(np.log(total))
    if not grad:
        return align, uniform, None
    C = -half * (W / total) / (tau * t_df + D)
    idx = np.arange(n)
    C[2 * idx, 2 * idx + 1] += half / (tau * t_df + d_pos) / n
    np.fill_diagonal(C, 0.0)
    return align, uniform, _dist_back(C, Z)


def t_simclr_align_uniform(A, V, t_df: float = 5.0, tau: float = 1.0) -> tuple[float, float]:
    align, uniform, _ = _t_simclr(A, V, t_df, tau, False)
    return align, uniform


def t_simclr_loss(A, V, t_df: float = 5.0, tau: float = 1.0) -> float:
    align, uniform, _ = _t_simclr(A, V, t_df, tau, False)
    return align + uniform


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------


def loss_and_grad(spec: LossSpec, A, V, aux: dict | None = None, grad: bool = True):
    """Value of ``spec`` and, if ``grad``, its gradients w.r.t. anchors and views.

    ``aux`` carries ``weights`` (infonce_weighted) or ``P`` (sne_kl; defaults
    to the sparse positive-pair matrix).
    """
    aux = aux or {}
    A, V = np.asarray(A, dtype=float), np.asarray(V, dtype=float)
    if spec.kind == "t_simclr":
        align, uniform, G = _t_simclr(A, V, spec.t_df, spec.tau, grad)
        value = align + uniform
    elif spec.kind == "sne_kl":
        P = aux.get("P")
        if P is None:
            P = p_positive_pairs(A.shape[0])
        value, G = kl_gaussian_and_grad(P, interleave(A, V), spec.sim_kind, spec.tau, grad)
    elif spec.kind == "infonce_weighted":
        if "weights" not in aux:
            raise ValueError("infonce_weighted needs aux['weights']")
        value, G = _infonce(A, V, aux["weights"], spec.tau, spec.sim_kind, grad)
    elif spec.kind == "infonce_unnormalized":
        value, G = _infonce(A, V, None, spec.tau, "inner_product", grad)
    else:
        value, G = _infonce(A, V, None, spec.tau, spec.sim_kind, grad)
    if not grad:
        return value, None, None
    gA, gV = deinterleave(G)
    return value, gA, gV


def loss_value(spec: LossSpec, A, V, aux: dict | None = None) -> float:
    return loss_and_grad(spec, A, V, aux, grad=False)[0]


def loss_grad(spec: LossSpec, A, V, aux: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    _, gA, gV = loss_and_grad(spec, A, V, aux)
    return gA, gV
