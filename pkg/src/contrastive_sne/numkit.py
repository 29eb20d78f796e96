"""Dense numerics shared by every other module.

Matrices are plain ``float64`` numpy arrays. Randomness always flows through an
explicit :class:`RngState` (numpy's PCG64: 128-bit state, 64-bit outputs, seeded
via ``SeedSequence``), so a seed fully determines every experiment.

The encoder is a small MLP with hand-written backpropagation and an optional
batch-norm layer applied to its output.
"""

from __future__ import annotations

import io
import json
import zipfile
import zlib
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    """Raised for unreadable, truncated or incompatible checkpoint files."""


# --------------------------------------------------------------------------
# Random numbers
# --------------------------------------------------------------------------


class RngState:
    """Seeded PCG64 stream with deterministic splitting.

    ``split(k)`` derives ``k`` child streams from the seed and a spawn key, so
    the children depend only on the seed and on how many splits happened
    before, never on how many numbers were drawn.
    """

    def __init__(self, seed: int, spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        self.n_splits = 0
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.gen = np.random.Generator(np.random.PCG64(seq))

    def split(self, k: int) -> list["RngState"]:
        children = [RngState(self.seed, self.spawn_key + (self.n_splits + i,)) for i in range(k)]
        self.n_splits += k
        return children

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "spawn_key": list(self.spawn_key),
            "n_splits": self.n_splits,
            "bit_generator": self.gen.bit_generator.state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RngState":
        rng = cls(d["seed"], tuple(d["spawn_key"]))
        rng.n_splits = int(d["n_splits"])
        rng.gen.bit_generator.state = d["bit_generator"]
        return rng


# --------------------------------------------------------------------------
# MLP encoder
# --------------------------------------------------------------------------


@dataclass
class Layer:
    W: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    activation: str = "identity"


@dataclass
class MlpParams:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an MLP needs at least one layer")
        for i, layer in enumerate(self.layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if layer.W.ndim != 2 or layer.b.shape != (layer.W.shape[1],):
                raise ValueError(f"layer {i}: weight/bias shapes do not match")
            if i and self.layers[i - 1].W.shape[1] != layer.W.shape[0]:
                raise ValueError(f"layer {i}: input width does not chain with layer {i - 1}")

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    @classmethod
    def create(cls, dim: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        if not 0 < momentum <= 1:
            raise ValueError("batch-norm momentum must lie in (0, 1]")
        if eps <= 0:
            raise ValueError("batch-norm epsilon must be positive")
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), momentum, eps)

    def arrays(self) -> list[np.ndarray]:
        return [self.gamma, self.beta]

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.gamma.copy(), self.beta.copy(), self.running_mean.copy(),
                              self.running_var.copy(), self.momentum, self.eps, self.mode)


@dataclass
class MlpGrads:
    layers: list[tuple[np.ndarray, np.ndarray]]
    bn: tuple[np.ndarray, np.ndarray] | None = None

    def arrays(self, include_bn: bool = False) -> list[np.ndarray]:
        out = []
        for dW, db in self.layers:
            out += [dW, db]
        if include_bn and self.bn is not None:
            out += list(self.bn)
        return out


def init_mlp(input_dim: int, hidden: list[int] | tuple[int, ...], output_dim: int, rng: RngState,
             activation: str = "relu") -> MlpParams:
    """Glorot-uniform weights, zero biases, identity activation on the output layer."""
    widths = [input_dim, *hidden, output_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.gen.uniform(-bound, bound, size=(fan_in, fan_out))
        act = "identity" if i == len(widths) - 2 else activation
        layers.append(Layer(W, np.zeros(fan_out), act))
    return MlpParams(layers)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a, g):
    if name == "relu":
        return g * (z > 0)
    if name == "tanh":
        return g * (1.0 - a * a)
    return g


def _fingerprint(params: MlpParams, bn: BatchNormState | None) -> tuple:
    arrays = params.arrays() + (bn.arrays() if bn is not None else [])
    return tuple((a.shape, zlib.crc32(np.ascontiguousarray(a).tobytes())) for a in arrays)


def mlp_forward(params: MlpParams, bn: BatchNormState | None, batch: np.ndarray):
    """Run the encoder on ``batch`` (b x d). Returns ``(output, cache)``.

    With ``bn`` in train mode the output is normalized with batch statistics
    and the running statistics are updated in place.
    """
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != params.input_dim:
        raise ValueError(f"expected a batch with {params.input_dim} columns, got shape {batch.shape}")
    if batch.shape[0] < 1:
        raise ValueError("empty batch")
    zs, acts = [], [batch]
    a = batch
    for layer in params.layers:
        z = a @ layer.W + layer.b
        a = _act(layer.activation, z)
        zs.append(z)
        acts.append(a)
    cache = {"zs": zs, "acts": acts, "bn": None}
    out = a
    if bn is not None:
        if bn.mode == "train":
            b = out.shape[0]
            if b < 2:
                raise ValueError("batch norm in train mode needs at least 2 samples")
            mu = out.mean(axis=0)
            var = out.var(axis=0)
            inv_std = 1.0 / np.sqrt(var + bn.eps)
            xhat = (out - mu) * inv_std
            m = bn.momentum
            bn.running_mean[:] = (1 - m) * bn.running_mean + m * mu
            bn.running_var[:] = (1 - m) * bn.running_var + m * var * b / (b - 1)
        else:
            inv_std = 1.0 / np.sqrt(bn.running_var + bn.eps)
            xhat = (out - bn.running_mean) * inv_std
        cache["bn"] = {"xhat": xhat, "inv_std": inv_std, "mode": bn.mode}
        out = bn.gamma * xhat + bn.beta
    cache["fingerprint"] = _fingerprint(params, bn)
    cache["shape"] = (batch.shape[0], out.shape[1])
    return out, cache


def mlp_backward(params: MlpParams, bn: BatchNormState | None, cache: dict, grad_output: np.ndarray):
    """Gradients of ``sum(grad_output * output)`` w.r.t. parameters and input."""
    if cache.get("fingerprint") != _fingerprint(params, bn) or (cache["bn"] is None) != (bn is None):
        raise ValueError("stale or mismatched forward cache")
    g = np.asarray(grad_output, dtype=float)
    if g.shape != cache["shape"]:
        raise ValueError(f"grad_output shape {g.shape} does not match output shape {cache['shape']}")
    bn_grads = None
    if bn is not None:
        c = cache["bn"]
        xhat = c["xhat"]
        bn_grads = ((g * xhat).sum(axis=0), g.sum(axis=0))
        dxhat = g * bn.gamma
        if c["mode"] == "train":
            b = g.shape[0]
            g = c["inv_std"] / b * (b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            g = dxhat * c["inv_std"]
    layer_grads = []
    for i in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[i]
        dz = _act_grad(layer.activation, cache["zs"][i], cache["acts"][i + 1], g)
        layer_grads.append((cache["acts"][i].T @ dz, dz.sum(axis=0)))
        g = dz @ layer.W.T
    layer_grads.reverse()
    return MlpGrads(layer_grads, bn_grads), g


# --------------------------------------------------------------------------
# Optimizers
# --------------------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    buffers: list[list[np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("sgd-momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")


def optimizer_step(opt: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """One update of every array in ``params``, in place. Returns ``params``."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes do not match")
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise FloatingPointError("non-finite gradient")
    if not opt.buffers:
        n_buf = 1 if opt.kind == "sgd-momentum" else 2
        opt.buffers = [[np.zeros_like(p) for p in params] for _ in range(n_buf)]
    elif any(b.shape != p.shape for b, p in zip(opt.buffers[0], params)) or len(opt.buffers[0]) != len(params):
        raise ValueError("optimizer buffers do not match the parameters")
    opt.step_count += 1
    t = opt.step_count
    for i, (p, g) in enumerate(zip(params, grads)):
        if opt.weight_decay:
            g = g + opt.weight_decay * p
        if opt.kind == "sgd-momentum":
            v = opt.buffers[0][i]
            v *= opt.momentum
            v += g
            p -= opt.lr * v
        else:
            m, v = opt.buffers[0][i], opt.buffers[1][i]
            m *= opt.beta1
            m += (1 - opt.beta1) * g
            v *= opt.beta2
            v += (1 - opt.beta2) * g * g
            mhat = m / (1 - opt.beta1 ** t)
            vhat = v / (1 - opt.beta2 ** t)
            p -= opt.lr * mhat / (np.sqrt(vhat) + opt.eps)
    return params


# --------------------------------------------------------------------------
# Testing oracles
# --------------------------------------------------------------------------


def finite_diff_grad(fn, point: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar ``fn`` at ``point``."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=float)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)
        flat[i] = orig - step
        fm = fn(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(a, b) -> float:
    """``|a - b| / max(|a|, |b|)`` in the Frobenius norm; 0 when both vanish."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


# --------------------------------------------------------------------------
# Checkpoint format
# --------------------------------------------------------------------------
#
# A checkpoint is a zip archive of .npy members plus ``meta.json``:
#   meta.json            version, activations, batch-norm and optimizer scalars,
#                        RNG state and caller-supplied metadata
#   layer{i}.W/.b.npy    encoder parameters
#   bn.{gamma,beta,running_mean,running_var}.npy
#   opt.buf{k}.{i}.npy   optimizer moment buffers
# Members are written in a fixed order with a fixed timestamp, so identical
# state gives identical bytes.

_ZIP_TIME = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def save_state(path, params: MlpParams, bn: BatchNormState | None, opt: OptimizerState | None,
               rng: RngState | None, meta: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "activations": [l.activation for l in params.layers],
        "bn": None if bn is None else {"momentum": bn.momentum, "eps": bn.eps, "mode": bn.mode},
        "opt": None if opt is None else {
            "kind": opt.kind, "lr": opt.lr, "momentum": opt.momentum, "beta1": opt.beta1,
            "beta2": opt.beta2, "eps": opt.eps, "weight_decay": opt.weight_decay,
            "step_count": opt.step_count, "n_buffers": len(opt.buffers),
            "n_arrays": len(opt.buffers[0]) if opt.buffers else 0,
        },
        "rng": None if rng is None else rng.to_dict(),
        "meta": meta or {},
    }
    members = [("meta.json", json.dumps(header, sort_keys=True).encode())]
    for i, layer in enumerate(params.layers):
        members += [(f"layer{i}.W.npy", _npy_bytes(layer.W)), (f"layer{i}.b.npy", _npy_bytes(layer.b))]
    if bn is not None:
        for name in ("gamma", "beta", "running_mean", "running_var"):
            members.append((f"bn.{name}.npy", _npy_bytes(getattr(bn, name))))
    if opt is not None:
        for k, bufs in enumerate(opt.buffers):
            members += [(f"opt.buf{k}.{i}.npy", _npy_bytes(a)) for i, a in enumerate(bufs)]
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in members:
            zf.writestr(zipfile.ZipInfo(name, date_time=_ZIP_TIME), data)


def load_state(path):
    """Inverse of :func:`save_state`: ``(params, bn, opt, rng, meta)``."""
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("meta.json"))
            version = header.get("version")
            if version != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")

            def arr(name):
                return np.lib.format.read_array(io.BytesIO(zf.read(name)), allow_pickle=False)

            layers = [Layer(arr(f"layer{i}.W.npy"), arr(f"layer{i}.b.npy"), act)
                      for i, act in enumerate(header["activations"])]
            bn = None
            if header["bn"] is not None:
                bn = BatchNormState(arr("bn.gamma.npy"), arr("bn.beta.npy"), arr("bn.running_mean.npy"),
                                    arr("bn.running_var.npy"), **header["bn"])
            opt = None
            if header["opt"] is not None:
                o = dict(header["opt"])
                n_buf, n_arr = o.pop("n_buffers"), o.pop("n_arrays")
                opt = OptimizerState(**o)
                opt.buffers = [[arr(f"opt.buf{k}.{i}.npy") for i in range(n_arr)] for k in range(n_buf)]
            rng = None if header["rng"] is None else RngState.from_dict(header["rng"])
    except CheckpointError:
        raise
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError, OSError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return MlpParams(layers), bn, opt, rng, header["meta"]
