"""Encoder training loops for the SimCLR-style objectives on generated data."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import simdata
from .losses import LossSpec, loss_and_grad
from .numkit import (BatchNormState, MlpParams, OptimizerState, RngState, init_mlp, load_state,
                     mlp_backward, mlp_forward, optimizer_step, save_state)
from .similarity import p_weighted_pairs
from .simdata import GmmSpec, LabeledDataset

AUGMENTS = ("resample", "gaussian_noise", "mixup")
NORMALIZERS = ("sphere", "batchnorm", "none")


class ConfigError(ValueError):
    """Invalid training configuration, detected before any compute."""


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"loss became non-finite ({value}) in epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    loss: LossSpec = field(default_factory=LossSpec)
    d_z: int = 2
    hidden: tuple = (64, 64)
    activation: str = "relu"
    epochs: int = 200
    batch_size: int = 64
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    augment: str = "resample"
    noise_sigma: float = 0.1
    mixup_lambda: object = ("beta", 1.0, 1.0)
    tau_w: float = 1.0  # crop-IoU weighting strength, used by infonce_weighted
    normalize_output: str = "sphere"
    bn_momentum: float = 0.1
    bn_affine: bool = False  # trainable gamma/beta would reopen the blow-up direction
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.d_z < 1:
            raise ConfigError("d_z must be at least 1")
        if self.augment not in AUGMENTS:
            raise ConfigError(f"augment must be one of {AUGMENTS}")
        if self.normalize_output not in NORMALIZERS:
            raise ConfigError(f"normalize_output must be one of {NORMALIZERS}")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ConfigError("optimizer must be adam or sgd-momentum")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.loss.kind == "t_simclr" and self.normalize_output != "batchnorm":
            raise ConfigError("t_simclr requires normalize_output = batchnorm; "
                              "without it the loss has no minimizer at finite scale")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        if isinstance(self.mixup_lambda, tuple):
            d["mixup_lambda"] = list(self.mixup_lambda)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss"] = LossSpec(**d["loss"])
        d["hidden"] = tuple(d["hidden"])
        if isinstance(d.get("mixup_lambda"), list):
            d["mixup_lambda"] = tuple(d["mixup_lambda"])
        return cls(**d)


@dataclass
class TrainReport:
    config: TrainConfig
    params: MlpParams
    bn: BatchNormState | None
    opt: OptimizerState
    rng: RngState
    losses: list = field(default_factory=list)
    align: list = field(default_factory=list)
    uniform: list = field(default_factory=list)
    wall_clock: float = 0.0
    extra: dict = field(default_factory=dict)


def augment_pairs(cfg: TrainConfig, batch: LabeledDataset, gmm: GmmSpec | None, rng: RngState):
    if cfg.augment == "resample":
        return simdata.augment_resample(gmm, batch, rng)
    if cfg.augment == "gaussian_noise":
        return simdata.augment_gaussian_noise(batch, cfg.noise_sigma, rng)
    return simdata.augment_mixup(batch, cfg.mixup_lambda, rng)


def _normalize(H: np.ndarray, mode: str):
    """Post-process encoder outputs; returns features and the backward map."""
    if mode != "sphere":
        return H, lambda g: g
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    Z = H / norms
    return Z, lambda g: (g - np.sum(g * Z, axis=1, keepdims=True) * Z) / norms


def _trainable(report_or_params, bn, cfg):
    arrays = report_or_params.arrays()
    if bn is not None and cfg.bn_affine:
        arrays += bn.arrays()
    return arrays


def embed_features(params: MlpParams, bn: BatchNormState | None, normalize_output: str, X) -> np.ndarray:
    """Encoder features with batch norm (if any) in eval mode."""
    if bn is not None:
        bn = bn.copy()
        bn.mode = "eval"
    H, _ = mlp_forward(params, bn, np.asarray(X, dtype=float))
    return _normalize(H, normalize_output)[0]


def embed(report: TrainReport, X) -> np.ndarray:
    return embed_features(report.params, report.bn, report.config.normalize_output, X)


def alignment_metric(Za: np.ndarray, Zv: np.ndarray) -> float:
    """Mean cosine between positive-pair features."""
    num = np.sum(Za * Zv, axis=1)
    den = np.linalg.norm(Za, axis=1) * np.linalg.norm(Zv, axis=1)
    return float(np.mean(num / np.maximum(den, 1e-300)))


def uniformity_metric(Z: np.ndarray, t: float = 2.0) -> float:
    """``log mean_{i<j} exp(-t |u_i - u_j|^2)`` on the sphere-projected features."""
    U = Z / np.maximum(np.linalg.norm(Z, axis=1, keepdims=True), 1e-300)
    iu = np.triu_indices(U.shape[0], 1)
    d2 = np.maximum(2.0 - 2.0 * (U @ U.T)[iu], 0.0)
    m = (-t * d2).max()
    return float(m + np.log(np.mean(np.exp(-t * d2 - m))))


def train_encoder(data, cfg: TrainConfig, rng: RngState | None = None, n: int | None = None,
                  gmm: GmmSpec | None = None) -> TrainReport:
    """Train an encoder with ``cfg`` on ``data``.

    ``data`` is a :class:`LabeledDataset` or a :class:`GmmSpec` (then ``n``
    points are sampled). The resample augmentation needs the mixture, passed
    as ``data`` or ``gmm``.
    """
    cfg.validate()
    rng = rng or RngState(cfg.seed)
    init_rng, data_rng, step_rng, eval_rng = rng.split(4)
    if isinstance(data, GmmSpec):
        gmm = data
        if n is None:
            raise ConfigError("sampling from a mixture needs n")
        data = simdata.gmm_sample(gmm, n, data_rng)
    if cfg.augment == "resample" and gmm is None:
        raise ConfigError("the resample augmentation needs the generating mixture")
    X, labels = data.X, data.labels
    n_pts = X.shape[0]
    if n_pts < 2:
        raise ConfigError("need at least two training points")

    params = init_mlp(X.shape[1], list(cfg.hidden), cfg.d_z, init_rng, cfg.activation)
    bn = BatchNormState.create(cfg.d_z, cfg.bn_momentum) if cfg.normalize_output == "batchnorm" else None
    opt = OptimizerState(cfg.optimizer, cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    report = TrainReport(cfg, params, bn, opt, rng)
    eval_views = augment_pairs(cfg, data, gmm, eval_rng).views

    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        perm = step_rng.gen.permutation(n_pts)
        batches = [perm[i:i + cfg.batch_size] for i in range(0, n_pts, cfg.batch_size)]
        batches = [b for b in batches if len(b) >= 2]
        total = 0.0
        for idx in batches:
            b = len(idx)
            pair = augment_pairs(cfg, LabeledDataset(X[idx], labels[idx]), gmm, step_rng)
            aux = {}
            if cfg.loss.kind == "infonce_weighted":
                ious = [simdata.iou(*simdata.sample_crop_pair(step_rng)) for _ in range(b)]
                aux["weights"] = p_weighted_pairs(ious, cfg.tau_w)
            H, cache = mlp_forward(params, bn, np.vstack([pair.anchors, pair.views]))
            Z, back = _normalize(H, cfg.normalize_output)
            value, gA, gV = loss_and_grad(cfg.loss, Z[:b], Z[b:], aux)
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, value)
            grads, _ = mlp_backward(params, bn, cache, back(np.vstack([gA, gV])))
            optimizer_step(opt, _trainable(params, bn, cfg), grads.arrays(include_bn=bn is not None and cfg.bn_affine))
            total += value * b
        report.losses.append(total / sum(len(b) for b in batches))
        Za = embed(report, X)
        report.align.append(alignment_metric(Za, embed(report, eval_views)))
        report.uniform.append(uniformity_metric(Za))
    report.wall_clock = time.perf_counter() - start
    return report


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def save_checkpoint(report: TrainReport, path) -> None:
    """Write the model, optimizer and RNG state. Wall-clock time is left out
    so that identical runs produce identical files."""
    meta = {
        "config": report.config.to_dict(),
        "losses": report.losses,
        "align": report.align,
        "uniform": report.uniform,
        "extra": report.extra,
    }
    save_state(path, report.params, report.bn, report.opt, report.rng, meta)


def load_checkpoint(path) -> TrainReport:
    params, bn, opt, rng, meta = load_state(path)
    return TrainReport(TrainConfig.from_dict(meta["config"]), params, bn, opt, rng,
                       list(meta["losses"]), list(meta["align"]), list(meta["uniform"]),
                       extra=dict(meta.get("extra", {})))


def write_training_log(path, report: TrainReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "align_metric", "uniform_metric"])
        for e, (l, a, u) in enumerate(zip(report.losses, report.align, report.uniform), start=1):
            w.writerow([e, repr(float(l)), repr(float(a)), repr(float(u))])
