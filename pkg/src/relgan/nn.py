"""Dense generator/critic networks with batch norm, spectral norm and packing."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tape, Tensor, as_tensor, broadcast_add_row

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "identity")
CHECKPOINT_MAGIC = "relgan-checkpoint"
CHECKPOINT_VERSION = 1


class DegenerateLayerError(ValueError):
    """Spectral normalization of an all-zero weight matrix."""


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    # running <- momentum * running + (1 - momentum) * batch
    momentum: float = 0.9
    eps: float = 1e-5
    training: bool = True

    @classmethod
    def create(cls, features: int, **kw) -> "BatchNorm":
        return cls(np.ones(features), np.zeros(features), np.zeros(features), np.ones(features), **kw)


@dataclass
class DenseLayer:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray
    activation: str = "identity"
    alpha: float = 0.2
    spectral_norm: bool = False
    u: np.ndarray | None = None
    v: np.ndarray | None = None
    batch_norm: BatchNorm | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be [out, in] and bias [out]")

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


def power_iteration(layer: DenseLayer, iterations: int = 1) -> float:
    """Advance the layer's (u, v) pair and return the top singular value estimate."""
    w = layer.weight
    if not np.any(w):
        raise DegenerateLayerError("spectral norm of a zero weight matrix")
    if layer.u is None:
        raise ValueError("layer has no power-iteration vector; run init_params first")
    u = layer.u
    v = layer.v if layer.v is not None else _unit(w.T @ u)
    for _ in range(iterations):
        v = _unit(w.T @ u)
        u = _unit(w @ v)
    sigma = float(u @ w @ v)
    if sigma <= 0:
        raise DegenerateLayerError("power iteration collapsed to sigma <= 0")
    layer.u, layer.v = u, v
    return sigma


def spectral_normalize(layer: DenseLayer, iterations: int = 1) -> np.ndarray:
    """One (or more) power-iteration steps, then the weight divided by sigma."""
    return layer.weight / power_iteration(layer, iterations)


class Network:
    """A stack of dense layers mapping [m, input_dim] -> [m, output_dim]."""

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_features != nxt.in_features:
                raise ValueError(f"layer dims do not chain: {prev.out_features} -> {nxt.in_features}")
        self.layers = list(layers)
        self.training = True

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_features

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_features

    def train(self, mode: bool = True) -> "Network":
        self.training = mode
        for layer in self.layers:
            if layer.batch_norm is not None:
                layer.batch_norm.training = mode
        return self

    def eval(self) -> "Network":
        return self.train(False)

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays by name (views, updated in place by optimizers)."""
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"{i}.weight"] = layer.weight
            params[f"{i}.bias"] = layer.bias
            if layer.batch_norm is not None:
                params[f"{i}.bn.gamma"] = layer.batch_norm.gamma
                params[f"{i}.bn.beta"] = layer.batch_norm.beta
        return params

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus buffers (running stats, power-iteration vectors)."""
        st = dict(self.parameters())
        for i, layer in enumerate(self.layers):
            if layer.batch_norm is not None:
                st[f"{i}.bn.running_mean"] = layer.batch_norm.running_mean
                st[f"{i}.bn.running_var"] = layer.batch_norm.running_var
            if layer.u is not None:
                st[f"{i}.sn.u"] = layer.u
            if layer.v is not None:
                st[f"{i}.sn.v"] = layer.v
        return {k: v.copy() for k, v in st.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            layer.weight[...] = state[f"{i}.weight"]
            layer.bias[...] = state[f"{i}.bias"]
            bn = layer.batch_norm
            if bn is not None:
                for name in ("gamma", "beta", "running_mean", "running_var"):
                    getattr(bn, name)[...] = state[f"{i}.bn.{name}"]
            if f"{i}.sn.u" in state:
                layer.u = np.array(state[f"{i}.sn.u"])
            if f"{i}.sn.v" in state:
                layer.v = np.array(state[f"{i}.sn.v"])

    def bind(self, tape: Tape, *, requires_grad: bool = True) -> dict[str, Tensor]:
        """Record the parameters on ``tape`` as leaves (or constants)."""
        make = tape.leaf if requires_grad else tape.const
        return {name: make(arr) for name, arr in self.parameters().items()}

    def power_iteration(self, iterations: int = 1) -> None:
        for layer in self.layers:
            if layer.spectral_norm:
                power_iteration(layer, iterations)

    def __call__(self, x, params: Mapping[str, Tensor] | None = None) -> Tensor:
        return forward(self, x, params)


def _batch_norm(h: Tensor, bn: BatchNorm, gamma, beta) -> Tensor:
    if bn.training:
        if h.shape[0] < 2:
            raise ValueError("batch norm in train mode needs at least 2 samples")
        mu = h.mean(axis=0)
        centered = h - mu
        var = centered.square().mean(axis=0)
        out = centered / (var + bn.eps).sqrt()
        bn.running_mean[...] = bn.momentum * bn.running_mean + (1 - bn.momentum) * mu.data
        bn.running_var[...] = bn.momentum * bn.running_var + (1 - bn.momentum) * var.data
    else:
        out = (h - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
    return out * gamma + beta


def _activate(h: Tensor, layer: DenseLayer) -> Tensor:
    if layer.activation == "relu":
        return h.relu()
    if layer.activation == "leaky_relu":
        return h.leaky_relu(layer.alpha)
    if layer.activation == "tanh":
        return h.tanh()
    return h


def _effective_weight(layer: DenseLayer, w: Tensor) -> Tensor:
    if not layer.spectral_norm:
        return w
    if layer.u is None or layer.v is None:
        power_iteration(layer)
    # sigma = u^T W v with u, v held constant; gradient flows through W only.
    sigma = (Tensor(layer.u.reshape(-1, 1)) * (w @ Tensor(layer.v.reshape(-1, 1)))).sum()
    return w / sigma


def forward(net: Network, batch, params: Mapping[str, Tensor] | None = None) -> Tensor:
    """Run ``batch`` [m, input_dim] through ``net``.

    Without ``params`` the raw parameter arrays enter as constants.
    """
    x = as_tensor(batch)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"expected input [m, {net.input_dim}], got {x.shape}")
    for i, layer in enumerate(net.layers):
        if params is None:
            w, b = Tensor(layer.weight), Tensor(layer.bias)
        else:
            w, b = params[f"{i}.weight"], params[f"{i}.bias"]
        h = broadcast_add_row(x @ _effective_weight(layer, w).T, b)
        if layer.batch_norm is not None:
            bn = layer.batch_norm
            if params is None:
                gamma, beta = Tensor(bn.gamma), Tensor(bn.beta)
            else:
                gamma, beta = params[f"{i}.bn.gamma"], params[f"{i}.bn.beta"]
            h = _batch_norm(h, bn, gamma, beta)
        x = _activate(h, layer)
    return x


def build_mlp(dims: Sequence[int], activation: str = "relu", *, out_activation: str = "identity",
              alpha: float = 0.2, spectral_norm: bool = False, batch_norm: bool = False,
              seed: int = 0) -> Network:
    """Dense net with ``dims[0]`` inputs; batch norm goes on hidden layers only."""
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        layers.append(DenseLayer(
            np.zeros((d_out, d_in)), np.zeros(d_out),
            activation=out_activation if last else activation, alpha=alpha,
            spectral_norm=spectral_norm,
            batch_norm=None if (last or not batch_norm) else BatchNorm.create(d_out)))
    return init_params(Network(layers), seed)


def init_params(net: Network, seed: int, warm_start: int = 50) -> Network:
    """Xavier-normal weights, zero biases; spectral-norm vectors warm-started."""
    rng = np.random.Generator(np.random.PCG64(seed))
    for layer in net.layers:
        fan_out, fan_in = layer.weight.shape
        layer.weight[...] = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=layer.weight.shape)
        layer.bias[...] = 0.0
        if layer.spectral_norm:
            layer.u = _unit(rng.standard_normal(fan_out))
            layer.v = None
            power_iteration(layer, warm_start)
    return net


def default_generator(latent_dim: int = 8, hidden: Sequence[int] = (64, 64), *, batch_norm: bool = False,
                      seed: int = 0) -> Network:
    return build_mlp([latent_dim, *hidden, 2], "relu", batch_norm=batch_norm, seed=seed)


def default_critic(input_dim: int = 2, hidden: Sequence[int] = (64, 64), *, spectral_norm: bool = False,
                   pack: int = 1, seed: int = 0) -> Network:
    return build_mlp([input_dim * pack, *hidden, 1], "leaky_relu", alpha=0.2,
                     spectral_norm=spectral_norm, seed=seed)


def pack(batch, k: int):
    """Concatenate consecutive groups of ``k`` rows feature-wise: [m, d] -> [m/k, k*d]."""
    m, d = batch.shape
    if k < 1 or m % k:
        raise ValueError(f"pack size {k} does not divide batch size {m}")
    if k == 1:
        return batch
    return batch.reshape(m // k, k * d)


def unpack(batch, k: int):
    m, kd = batch.shape
    if kd % k:
        raise ValueError(f"pack size {k} does not divide feature dim {kd}")
    return batch.reshape(m * k, kd // k)


# -- checkpoints --------------------------------------------------------------
# Text format, one array per line:
#   relgan-checkpoint,1
#   <name>,<d1>x<d2>...,v1,v2,...      (row-major, values printed with repr)

def save_checkpoint(path, nets: Mapping[str, Network]) -> None:
    lines = [f"{CHECKPOINT_MAGIC},{CHECKPOINT_VERSION}"]
    for prefix, net in nets.items():
        for name, arr in net.state().items():
            shape = "x".join(str(s) for s in arr.shape)
            values = ",".join(repr(float(v)) for v in arr.ravel())
            lines.append(f"{prefix}.{name},{shape},{values}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint(path) -> dict[str, np.ndarray]:
    rows = Path(path).read_text().splitlines()
    if not rows or rows[0] != f"{CHECKPOINT_MAGIC},{CHECKPOINT_VERSION}":
        raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    out = {}
    for row in rows[1:]:
        if not row:
            continue
        name, shape, *values = row.split(",")
        dims = tuple(int(s) for s in shape.split("x")) if shape else ()
        out[name] = np.array([float(v) for v in values]).reshape(dims)
    return out


def load_checkpoint(path, nets: Mapping[str, Network]) -> None:
    arrays = read_checkpoint(path)
    for prefix, net in nets.items():
        net.load_state({k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + ".")})
