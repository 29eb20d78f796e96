"""Experiment configuration: flat YAML files plus command-line overrides.

A configuration is one mapping of the keys in :data:`DEFAULTS`. Values come
from the defaults, then the preset or ``--config`` file, then ``--key value``
flags (parsed as YAML scalars or lists, so ``--shift [1,1]`` works). Unknown
keys are rejected.
"""

from __future__ import annotations

from importlib import resources

import numpy as np
import yaml

from .losses import LossSpec
from .numkit import RngState
from .simdata import GmmSpec, LabeledDataset, gmm_sample, polygon_means
from .trainer import ConfigError, TrainConfig

DEFAULTS = {
    # data
    "seed": 0,
    "n": 250,
    "n_test": 250,
    "d": 2,
    "m": 5,
    "sigma": 0.1,
    "means": "polygon",  # polygon: regular m-gon in the first two axes; line: mu_i = i on the first axis
    "radius": 1.0,
    # model and training
    "loss": "infonce",
    "tau": 0.5,
    "t_df": 5.0,
    "sim_kind": "cosine",
    "d_z": 2,
    "hidden": [64, 64],
    "activation": "relu",
    "epochs": 200,
    "batch_size": 64,
    "optimizer": "adam",
    "lr": 0.001,
    "momentum": 0.9,
    "weight_decay": 0.0,
    "augment": "resample",
    "noise_sigma": 0.1,
    "mixup_lambda": ["beta", 1.0, 1.0],
    "tau_w": 1.0,
    "normalize_output": "sphere",
    "bn_momentum": 0.1,
    "bn_affine": False,
    # evaluation
    "k": 15,
    "knn_metric": "auto",  # auto: cosine for d_z >= 2, euclidean for d_z = 1
    "shift": None,
    "probe_epochs": 500,
    "probe_lr": 0.1,
    "lipschitz_pairs": 10000,
    "expected_order": None,
    # sweeps and verification
    "grid": None,
    "trials": None,
}

PRESETS = ("fig3a", "fig3b", "fig3c", "fig3d", "fig3e", "order-d1m4", "sweep-tdf-dz", "sweep-tau-w")

_TRAIN_KEYS = ("d_z", "hidden", "activation", "epochs", "batch_size", "optimizer", "lr", "momentum",
               "weight_decay", "augment", "noise_sigma", "mixup_lambda", "tau_w", "normalize_output",
               "bn_momentum", "bn_affine", "seed")


class UsageError(Exception):
    """Malformed invocation: unknown key, missing file, missing output path."""


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise UsageError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files(__package__).joinpath("presets", f"{name}.yaml").read_text()


def _merge(cfg: dict, updates: dict, origin: str) -> None:
    for key, value in updates.items():
        if key not in DEFAULTS:
            raise UsageError(f"{origin}: unknown key {key!r}")
        cfg[key] = value


def parse_overrides(tokens: list[str]) -> dict:
    """``["--tau", "0.1", "--hidden", "[32]"]`` to ``{"tau": 0.1, "hidden": [32]}``."""
    out = {}
    it = iter(tokens)
    for tok in it:
        if not tok.startswith("--"):
            raise UsageError(f"expected --key, got {tok!r}")
        key = tok[2:].replace("-", "_")
        try:
            raw = next(it)
        except StopIteration:
            raise UsageError(f"missing value for {tok}") from None
        try:
            out[key] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise UsageError(f"cannot parse value for {tok}: {exc}") from None
    return out


def load_config(preset: str | None = None, path=None, overrides: dict | None = None) -> dict:
    cfg = dict(DEFAULTS)
    sources = []
    if preset is not None:
        sources.append((f"preset {preset}", preset_text(preset)))
    if path is not None:
        try:
            with open(path) as fh:
                sources.append((str(path), fh.read()))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for origin, text in sources:
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{origin}: invalid YAML ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{origin}: expected a mapping of keys to values")
        _merge(cfg, data, origin)
    _merge(cfg, overrides or {}, "command line")
    return cfg


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------


def gmm_spec(cfg: dict) -> GmmSpec:
    m, d = int(cfg["m"]), int(cfg["d"])
    if cfg["means"] == "polygon":
        if d < 2:
            raise ConfigError("polygon means need d >= 2")
        means = polygon_means(m, float(cfg["radius"]), d)
    elif cfg["means"] == "line":
        means = np.zeros((m, d))
        means[:, 0] = np.arange(1, m + 1)
    else:
        raise ConfigError(f"means must be polygon or line, got {cfg['means']!r}")
    try:
        return GmmSpec(means, float(cfg["sigma"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_config(cfg: dict) -> TrainConfig:
    try:
        loss = LossSpec(cfg["loss"], float(cfg["tau"]), float(cfg["t_df"]), cfg["sim_kind"])
        kwargs = {k: cfg[k] for k in _TRAIN_KEYS}
        kwargs["hidden"] = tuple(int(h) for h in cfg["hidden"])
        if isinstance(kwargs["mixup_lambda"], list):
            kwargs["mixup_lambda"] = tuple(kwargs["mixup_lambda"])
        return TrainConfig(loss=loss, **kwargs).validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


# Fixed child streams of the experiment seed: 0 model init, 1 training data,
# 2 minibatch order and augmentations, 3 held-out views, 4 test data,
# 5 evaluation sampling.


def streams(seed: int) -> list[RngState]:
    return RngState(int(seed)).split(6)


def train_data(cfg: dict) -> LabeledDataset:
    return gmm_sample(gmm_spec(cfg), int(cfg["n"]), streams(cfg["seed"])[1])


def test_data(cfg: dict) -> LabeledDataset:
    return gmm_sample(gmm_spec(cfg), int(cfg["n_test"]), streams(cfg["seed"])[4])
