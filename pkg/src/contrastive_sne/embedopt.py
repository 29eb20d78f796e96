"""Direct (nonparametric) embedding optimization and maximal-separation references."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import kl_gaussian_and_grad, kl_t_and_grad
from .numkit import RngState
from .similarity import SimMatrix


@dataclass
class QSpec:
    """How the feature-space similarity is built from Z."""

    kind: str = "gaussian"  # "gaussian" (conditional softmax) or "t" (joint Student-t)
    sim_kind: str = "cosine"
    tau: float = 1.0
    t_df: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "t"):
            raise ValueError(f"unknown Q construction {self.kind!r}")

    def loss_and_grad(self, P, Z):
        if self.kind == "gaussian":
            return kl_gaussian_and_grad(P, Z, self.sim_kind, self.tau)
        return kl_t_and_grad(P, Z, self.t_df, self.tau)


def project_sphere(Z: np.ndarray) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot project a zero row onto the sphere")
    return Z / norms


def optimize_embedding(P: SimMatrix, d_z: int, q: QSpec | None = None, constraint: str = "sphere",
                       steps: int = 1000, lr: float = 0.1, momentum: float = 0.0,
                       rng: RngState | None = None, init: np.ndarray | None = None):
    """Gradient descent on ``KL(P || Q(Z))`` directly over the feature matrix.

    Rows start i.i.d. N(0, 1e-2 I). Under ``constraint="sphere"`` every step is
    followed by renormalization of the rows. Returns ``(Z, loss_history)``,
    where ``loss_history[t]`` is the loss before step t.
    """
    q = q or QSpec()
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if constraint not in ("sphere", "euclidean"):
        raise ValueError(f"unknown constraint {constraint!r}")
    n = P.n
    if init is None:
        rng = rng or RngState(0)
        Z = 0.1 * rng.gen.standard_normal((n, d_z))
    else:
        Z = np.array(init, dtype=float)
    if constraint == "sphere":
        Z = project_sphere(Z)
    velocity = np.zeros_like(Z)
    history = []
    for step in range(steps):
        try:
            value, grad = q.loss_and_grad(P, Z)
        except ValueError as exc:  # Q underflowed to zero on the support of P
            raise FloatingPointError(f"embedding optimization diverged at step {step} ({exc})") from exc
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise FloatingPointError(f"embedding optimization diverged at step {step} (loss={value})")
        history.append(value)
        velocity = momentum * velocity - lr * grad
        Z = Z + velocity
        if constraint == "sphere":
            Z = project_sphere(Z)
    return Z, np.array(history)


def tammes_closed_form(n: int, d_z: int) -> np.ndarray:
    """Maximally separated unit vectors for the two closed-form families:
    a regular n-gon when ``d_z == 2``, a regular (n-1)-simplex when ``n <= d_z + 1``."""
    if n < 2 or d_z < 1:
        raise ValueError("need n >= 2 points in d_z >= 1 dimensions")
    if d_z == 2:
        angles = 2 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(angles), np.sin(angles)])
    if n > d_z + 1:
        raise ValueError(f"no closed form for {n} points on the sphere in R^{d_z}")
    centered = np.eye(n) - 1.0 / n
    # orthonormal coordinates of the centered standard basis in its (n-1)-dim span
    _, _, vt = np.linalg.svd(centered)
    coords = centered @ vt[: n - 1].T
    Z = np.zeros((n, d_z))
    Z[:, : n - 1] = coords
    return project_sphere(Z)


def uniformity_score(Z: np.ndarray) -> tuple[float, float]:
    """(minimum pairwise angle in degrees, max |cos + 1/(n-1)| over pairs)."""
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    if not np.allclose(np.linalg.norm(Z, axis=1), 1.0, atol=1e-9):
        raise ValueError("uniformity_score expects unit-norm rows")
    C = np.clip(Z @ Z.T, -1.0, 1.0)
    iu = np.triu_indices(n, 1)
    cos = C[iu]
    min_angle = float(np.degrees(np.arccos(cos.max())))
    deviation = float(np.max(np.abs(cos + 1.0 / (n - 1))))
    return min_angle, deviation


def angular_gaps(Z2: np.ndarray) -> np.ndarray:
    """Angles (degrees) between circularly adjacent directions of 2-D rows."""
    Z2 = np.asarray(Z2, dtype=float)
    if Z2.ndim != 2 or Z2.shape[1] != 2:
        raise ValueError("angular_gaps expects 2-D points")
    theta = np.sort(np.mod(np.arctan2(Z2[:, 1], Z2[:, 0]), 2 * np.pi))
    gaps = np.diff(np.concatenate([theta, [theta[0] + 2 * np.pi]]))
    return np.degrees(gaps)
