"""Named oracle suites run by ``csne verify``.

Each suite returns a list of :class:`CheckRow`; a suite passes when every row
passes. Tolerances are the ones the checks are designed around: round-off
for identities, a loose 1e-5 for finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedopt import QSpec, optimize_embedding, tammes_closed_form
from .evaltheory import (ce_decomposition_check, class_means, equivalence_check, grid_density_problem,
                         rearrangement_oracle, theorem1_oracle)
from .losses import LOSS_KINDS, LossSpec, kl_gaussian_and_grad, kl_t_and_grad, loss_and_grad
from .numkit import RngState, finite_diff_grad, relative_error
from .similarity import SIM_KINDS, p_positive_pairs, p_sne_conditional, p_weighted_pairs

SUITES = ("equivalence", "theorem1", "rearrangement", "ce_decomposition", "gradients", "tammes")


@dataclass
class CheckRow:
    case: str
    value: float
    tolerance: float
    passed: bool


def _le(case, value, tol):
    return CheckRow(case, float(value), tol, bool(value < tol))


def equivalence(trials: int = 10, seed: int = 0) -> list[CheckRow]:
    rng = RngState(seed)
    return [_le(f"n={n} trial={t}", equivalence_check(n, rng), 1e-10)
            for n in (2, 8, 64) for t in range(trials)]


def theorem1(trials: int = 100, seed: int = 0) -> list[CheckRow]:
    """Random point sets in R^2 and random features in R^2, n cycling through 3, 4, 5."""
    rng = RngState(seed)
    rows = []
    for t in range(trials):
        n = (3, 4, 5)[t % 3]
        X = rng.gen.standard_normal((n, 2))
        Z = rng.gen.standard_normal((n, 2))
        v = theorem1_oracle(X, Z)
        rows.append(CheckRow(f"trial={t} n={n} argmin", float(not v.identical), 0.5, v.identical))
        rows.append(_le(f"trial={t} n={n} identity_spread", v.identity_spread, 1e-9))
    return rows


def _ascending_unit(m, rng):
    while True:
        v = np.sort(rng.gen.uniform(0.05, 1.0, size=m))
        if np.all(np.diff(v) > 1e-6):
            return v / np.linalg.norm(v)


def rearrangement(trials: int = 50, seed: int = 0) -> list[CheckRow]:
    rng = RngState(seed)
    rows = []
    for t in range(trials):
        m = (3, 4)[t % 2]
        v = rearrangement_oracle(_ascending_unit(m, rng), _ascending_unit(m, rng))
        rows.append(CheckRow(f"trial={t} m={m}", float(not v.identical), 0.5, v.identical))
    return rows


def ce_decomposition(trials: int = 3, seed: int = 0, cells: int = 32, assignments: int = 5,
                     t_df: float = 1.0, tau: float = 1.0) -> list[CheckRow]:
    rng = RngState(seed)
    rows = []
    for t in range(trials):
        _, p, p_cond = grid_density_problem(cells, rng)
        feats = [rng.gen.standard_normal((cells, 2)) for _ in range(assignments)]
        _, spread = ce_decomposition_check(p, p_cond, feats, t_df, tau)
        rows.append(_le(f"trial={t} cells={cells}", spread, 1e-8))
    return rows


def _gradient_specs():
    specs = []
    for kind in LOSS_KINDS:
        if kind == "t_simclr":
            specs += [LossSpec(kind, tau=tau, t_df=t_df) for tau, t_df in ((1.0, 1.0), (0.5, 5.0))]
        elif kind == "infonce_unnormalized":
            specs.append(LossSpec(kind, tau=0.5, sim_kind="inner_product"))
        else:
            specs += [LossSpec(kind, tau=0.5, sim_kind=s) for s in SIM_KINDS]
    return specs


def gradients(trials: int = 5, seed: int = 0, n: int = 4, d_z: int = 3) -> list[CheckRow]:
    """Central differences (step 1e-4) against the analytic gradients."""
    rng = RngState(seed)
    rows = []
    for spec in _gradient_specs():
        for t in range(trials):
            A = rng.gen.standard_normal((n, d_z))
            V = rng.gen.standard_normal((n, d_z))
            aux = {}
            if spec.kind == "infonce_weighted":
                aux["weights"] = p_weighted_pairs(rng.gen.uniform(0, 1, n), 0.5)
            point = np.concatenate([A, V])
            _, gA, gV = loss_and_grad(spec, A, V, aux)
            num = finite_diff_grad(lambda x: loss_and_grad(spec, x[:n], x[n:], aux, grad=False)[0], point)
            label = f"{spec.kind}/{spec.sim_kind if spec.kind != 't_simclr' else f't_df={spec.t_df}'} trial={t}"
            rows.append(_le(label, relative_error(np.concatenate([gA, gV]), num), 1e-5))
    for t in range(trials):
        X = rng.gen.standard_normal((2 * n, 3))
        P = p_sne_conditional(X, 1.0)
        Z = rng.gen.standard_normal((2 * n, d_z))
        for name, fn in (("kl_gaussian", lambda z: kl_gaussian_and_grad(P, z, "cosine", 0.5)),
                         ("kl_t", lambda z: kl_t_and_grad(P, z, 1.0, 1.0))):
            g = fn(Z)[1]
            num = finite_diff_grad(lambda z: fn(z)[0], Z)
            rows.append(_le(f"{name} trial={t}", relative_error(g, num), 1e-5))
    return rows


def tammes(seed: int = 0, taus=(0.2, 0.5, 1.0)) -> list[CheckRow]:
    """Closed forms to 1e-12, then n=4 aligned pairs optimized on the sphere in R^3."""
    rows = []
    poly = tammes_closed_form(5, 2)
    adj = np.sum(poly * np.roll(poly, -1, axis=0), axis=1)
    rows.append(_le("closed_form polygon n=5", np.max(np.abs(adj - math.cos(2 * math.pi / 5))), 1e-12))
    for n, d_z in ((3, 2), (4, 3), (5, 4), (4, 7)):
        S = tammes_closed_form(n, d_z)
        C = S @ S.T
        off = C[~np.eye(n, dtype=bool)]
        err = max(np.max(np.abs(off + 1.0 / (n - 1))), np.max(np.abs(np.diag(C) - 1)))
        rows.append(_le(f"closed_form simplex n={n} d_z={d_z}", err, 1e-12))
    P = p_positive_pairs(4)
    for i, tau in enumerate(taus):
        Z, _ = optimize_embedding(P, 3, QSpec("gaussian", "cosine", tau), "sphere", steps=3000, lr=1.0,
                                  momentum=0.5, rng=RngState(seed, (i,)))
        M = class_means(Z, np.repeat(np.arange(4), 2))
        M = M / np.linalg.norm(M, axis=1, keepdims=True)
        C = M @ M.T
        dev = np.max(np.abs(C[~np.eye(4, dtype=bool)] + 1.0 / 3.0))
        rows.append(_le(f"optimized n=4 d_z=3 tau={tau}", dev, 1e-2))
    return rows


def run_suite(name: str, trials: int | None = None, seed: int = 0) -> list[CheckRow]:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
    fn = globals()[name]
    if name == "tammes":
        return fn(seed=seed)
    return fn(seed=seed) if trials is None else fn(trials=int(trials), seed=seed)
