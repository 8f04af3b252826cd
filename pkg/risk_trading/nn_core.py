"""
Function-approximator core.

Sequence networks made of stacked LSTM layers, a ReLU dense stack and a linear
output layer, with hand-written reverse-mode gradients (backpropagation through
time), an Adam optimizer and soft target-network updates. Everything runs in
float64 on numpy arrays.

A network's parameters live in one flat vector; per-layer weights are views into
it, so optimizers, soft updates and checkpoints all work on a single array.

Layout of the flat vector, in order:
    lstm{l}.W  (in + units, 4 * units)   gates ordered [input, forget, cell, output]
    lstm{l}.b  (4 * units,)
    dense{k}.W (in, units), dense{k}.b (units,)
    dense{k}.gain, dense{k}.shift        only when layer_norm is on
    out.W      (in, output_dim), out.b (output_dim,)
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from .models import (
    WINDOW_LENGTH,
    InvalidParameterError,
    NumericFaultError,
    ShapeError,
)


logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5


class FinalActivation(Enum):
    NONE = "none"
    RELU = "relu"
    SOFTMAX_PER_GROUP = "softmax_per_group"


class Mode(Enum):
    TRAIN = "train"
    EVAL = "eval"


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of one network.

    seq_len > 0 means the input is a batch of sequences (batch, seq_len, input_dim)
    consumed by the recurrent layers; seq_len == 0 means plain (batch, input_dim)
    rows and no recurrent layers.
    """
    input_dim: int
    recurrent_layers: tuple[int, ...] = ()
    dense_layers: tuple[int, ...] = ()
    output_dim: int = 1
    seq_len: int = WINDOW_LENGTH
    activation: str = "relu"
    dropout_rate: float = 0.0
    final_activation: FinalActivation = FinalActivation.NONE
    group_size: Optional[int] = None
    layer_norm: bool = False

    def validate(self) -> None:
        if self.input_dim < 1:
            raise InvalidParameterError(f"input_dim must be positive, got {self.input_dim}")
        if self.output_dim < 1:
            raise InvalidParameterError(f"output_dim must be positive, got {self.output_dim}")
        for units in self.recurrent_layers + self.dense_layers:
            if units < 1:
                raise InvalidParameterError(f"layer units must be positive, got {units}")
        if self.seq_len < 0:
            raise InvalidParameterError(f"seq_len must be non-negative, got {self.seq_len}")
        if self.seq_len > 0 and not self.recurrent_layers:
            raise InvalidParameterError("sequence input needs at least one recurrent layer")
        if self.seq_len == 0 and self.recurrent_layers:
            raise InvalidParameterError("recurrent layers need sequence input (seq_len > 0)")
        if self.activation != "relu":
            raise InvalidParameterError(f"unsupported activation: {self.activation}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.final_activation is FinalActivation.SOFTMAX_PER_GROUP:
            if not self.group_size or self.group_size < 1:
                raise InvalidParameterError("softmax_per_group needs a positive group_size")
            if self.output_dim % self.group_size:
                raise InvalidParameterError(
                    f"output_dim {self.output_dim} is not a multiple of group_size {self.group_size}"
                )

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "recurrent_layers": list(self.recurrent_layers),
            "dense_layers": list(self.dense_layers),
            "output_dim": self.output_dim,
            "seq_len": self.seq_len,
            "activation": self.activation,
            "dropout_rate": self.dropout_rate,
            "final_activation": self.final_activation.value,
            "group_size": self.group_size,
            "layer_norm": self.layer_norm,
        }

    @staticmethod
    def from_dict(data: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_dim=int(data["input_dim"]),
            recurrent_layers=tuple(int(u) for u in data.get("recurrent_layers", [])),
            dense_layers=tuple(int(u) for u in data.get("dense_layers", [])),
            output_dim=int(data["output_dim"]),
            seq_len=int(data.get("seq_len", WINDOW_LENGTH)),
            activation=data.get("activation", "relu"),
            dropout_rate=float(data.get("dropout_rate", 0.0)),
            final_activation=FinalActivation(data.get("final_activation", "none")),
            group_size=data.get("group_size"),
            layer_norm=bool(data.get("layer_norm", False)),
        )


@lru_cache(maxsize=None)
def parameter_layout(spec: NetworkSpec) -> tuple[tuple[str, tuple[int, ...], int], ...]:
    """(name, shape, offset) for every parameter block of the spec."""
    blocks: list[tuple[str, tuple[int, ...]]] = []
    width = spec.input_dim
    for l, units in enumerate(spec.recurrent_layers):
        blocks.append((f"lstm{l}.W", (width + units, 4 * units)))
        blocks.append((f"lstm{l}.b", (4 * units,)))
        width = units
    for k, units in enumerate(spec.dense_layers):
        blocks.append((f"dense{k}.W", (width, units)))
        blocks.append((f"dense{k}.b", (units,)))
        if spec.layer_norm:
            blocks.append((f"dense{k}.gain", (units,)))
            blocks.append((f"dense{k}.shift", (units,)))
        width = units
    blocks.append(("out.W", (width, spec.output_dim)))
    blocks.append(("out.b", (spec.output_dim,)))

    layout = []
    offset = 0
    for name, shape in blocks:
        layout.append((name, shape, offset))
        offset += int(np.prod(shape))
    return tuple(layout)


def parameter_count(spec: NetworkSpec) -> int:
    name, shape, offset = parameter_layout(spec)[-1]
    return offset + int(np.prod(shape))


def parameter_views(spec: NetworkSpec, flat: np.ndarray) -> dict[str, np.ndarray]:
    views = {}
    for name, shape, offset in parameter_layout(spec):
        size = int(np.prod(shape))
        views[name] = flat[offset:offset + size].reshape(shape)
    return views


@dataclass
class _LstmCache:
    xh: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray


@dataclass
class _DenseCache:
    inputs: np.ndarray
    pre: np.ndarray
    xhat: Optional[np.ndarray]
    scale: Optional[np.ndarray]
    mask: Optional[np.ndarray]


@dataclass
class _ForwardCache:
    batch: np.ndarray
    lstm: list[_LstmCache]
    dense: list[_DenseCache]
    out_inputs: np.ndarray
    out_pre: np.ndarray
    output: np.ndarray


@dataclass
class Network:
    spec: NetworkSpec
    params: np.ndarray
    mode: Mode = Mode.TRAIN
    _cache: Optional[_ForwardCache] = field(default=None, repr=False, compare=False)

    @property
    def n_params(self) -> int:
        return int(self.params.shape[0])

    def views(self) -> dict[str, np.ndarray]:
        return parameter_views(self.spec, self.params)

    def train(self) -> "Network":
        self.mode = Mode.TRAIN
        return self

    def eval(self) -> "Network":
        self.mode = Mode.EVAL
        return self

    def copy(self) -> "Network":
        return Network(spec=self.spec, params=self.params.copy(), mode=self.mode)


@dataclass
class OptimizerState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def build_network(spec: NetworkSpec, seed: int) -> Network:
    """Build a network with weights uniform in ±1/sqrt(fan_in) of each block."""
    spec.validate()
    rng = np.random.default_rng(seed)
    params = np.zeros(parameter_count(spec), dtype=np.float64)
    views = parameter_views(spec, params)
    fan_in = spec.input_dim
    for name, shape, _ in parameter_layout(spec):
        block = views[name]
        if name.endswith(".W"):
            fan_in = shape[0]
        if name.endswith(".gain"):
            block[...] = 1.0
        elif name.endswith(".shift"):
            block[...] = 0.0
        else:
            bound = 1.0 / np.sqrt(fan_in)
            block[...] = rng.uniform(-bound, bound, size=shape)
    return Network(spec=spec, params=params)


def _check_input(spec: NetworkSpec, x: np.ndarray) -> None:
    if spec.seq_len:
        expected = (spec.seq_len, spec.input_dim)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ShapeError(f"expected input of shape (batch, {expected[0]}, {expected[1]}), got {x.shape}")
    elif x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ShapeError(f"expected input of shape (batch, {spec.input_dim}), got {x.shape}")


def _lstm_forward(W: np.ndarray, b: np.ndarray, seq: np.ndarray) -> tuple[np.ndarray, _LstmCache]:
    batch, steps, _ = seq.shape
    units = b.shape[0] // 4
    h = np.zeros((batch, units))
    c = np.zeros((batch, units))
    caches = {name: [] for name in ("xh", "i", "f", "g", "o", "c", "c_prev", "tanh_c")}
    outputs = np.empty((batch, steps, units))
    for t in range(steps):
        xh = np.concatenate([seq[:, t, :], h], axis=1)
        z = xh @ W + b
        i = _sigmoid(z[:, :units])
        f = _sigmoid(z[:, units:2 * units])
        g = np.tanh(z[:, 2 * units:3 * units])
        o = _sigmoid(z[:, 3 * units:])
        c_prev = c
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        h = o * tanh_c
        outputs[:, t, :] = h
        for name, value in (("xh", xh), ("i", i), ("f", f), ("g", g), ("o", o),
                            ("c", c), ("c_prev", c_prev), ("tanh_c", tanh_c)):
            caches[name].append(value)
    cache = _LstmCache(**{name: np.stack(values) for name, values in caches.items()})
    return outputs, cache


def _lstm_backward(
    W: np.ndarray,
    cache: _LstmCache,
    dh_seq: np.ndarray,
    gW: np.ndarray,
    gb: np.ndarray,
) -> np.ndarray:
    steps, batch, units = cache.c.shape
    in_dim = W.shape[0] - units
    dh_next = np.zeros((batch, units))
    dc_next = np.zeros((batch, units))
    dx = np.zeros((batch, steps, in_dim))
    for t in reversed(range(steps)):
        i, f, g, o = cache.i[t], cache.f[t], cache.g[t], cache.o[t]
        tanh_c = cache.tanh_c[t]
        dh = dh_seq[:, t, :] + dh_next
        do = dh * tanh_c
        dc = dc_next + dh * o * (1.0 - tanh_c ** 2)
        di = dc * g
        dg = dc * i
        df = dc * cache.c_prev[t]
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g ** 2), do * o * (1.0 - o)],
            axis=1,
        )
        gW += cache.xh[t].T @ dz
        gb += dz.sum(axis=0)
        dxh = dz @ W.T
        dx[:, t, :] = dxh[:, :in_dim]
        dh_next = dxh[:, in_dim:]
    return dx


def _softmax_groups(z: np.ndarray, group_size: int) -> np.ndarray:
    grouped = z.reshape(z.shape[0], -1, group_size)
    shifted = grouped - grouped.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).reshape(z.shape)


def forward(net: Network, batch, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Run the network on a batch and keep the activations for a later backward pass.

    In train mode with a positive dropout rate a fresh inverted-dropout mask is drawn
    from `rng` after every dense layer.
    """
    spec = net.spec
    x = np.asarray(batch, dtype=np.float64)
    _check_input(spec, x)
    use_dropout = net.mode is Mode.TRAIN and spec.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise InvalidParameterError("train-mode dropout needs a random stream")

    p = net.views()
    lstm_caches = []
    hidden = x
    for l in range(len(spec.recurrent_layers)):
        hidden, cache = _lstm_forward(p[f"lstm{l}.W"], p[f"lstm{l}.b"], hidden)
        lstm_caches.append(cache)
    if spec.recurrent_layers:
        hidden = hidden[:, -1, :]

    dense_caches = []
    keep = 1.0 - spec.dropout_rate
    for k in range(len(spec.dense_layers)):
        inputs = hidden
        pre = inputs @ p[f"dense{k}.W"] + p[f"dense{k}.b"]
        xhat = scale = None
        if spec.layer_norm:
            mu = pre.mean(axis=1, keepdims=True)
            scale = np.sqrt(pre.var(axis=1, keepdims=True) + LAYER_NORM_EPS)
            xhat = (pre - mu) / scale
            pre = p[f"dense{k}.gain"] * xhat + p[f"dense{k}.shift"]
        hidden = np.maximum(pre, 0.0)
        mask = None
        if use_dropout:
            mask = (rng.random(hidden.shape) < keep) / keep
            hidden = hidden * mask
        dense_caches.append(_DenseCache(inputs=inputs, pre=pre, xhat=xhat, scale=scale, mask=mask))

    out_pre = hidden @ p["out.W"] + p["out.b"]
    if spec.final_activation is FinalActivation.SOFTMAX_PER_GROUP:
        output = _softmax_groups(out_pre, spec.group_size)
    elif spec.final_activation is FinalActivation.RELU:
        output = np.maximum(out_pre, 0.0)
    else:
        output = out_pre

    net._cache = _ForwardCache(
        batch=x,
        lstm=lstm_caches,
        dense=dense_caches,
        out_inputs=hidden,
        out_pre=out_pre,
        output=output,
    )
    return output


def evaluate(net: Network, batch) -> np.ndarray:
    """Forward pass in eval mode, leaving the network's mode unchanged."""
    mode = net.mode
    net.mode = Mode.EVAL
    try:
        return forward(net, batch)
    finally:
        net.mode = mode


def backward(net: Network, adjoint) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of <adjoint, output> w.r.t. the flat parameters and the input batch."""
    cache = net._cache
    if cache is None:
        raise ShapeError("backward called without a prior forward pass")
    d = np.asarray(adjoint, dtype=np.float64)
    if d.shape != cache.output.shape:
        raise ShapeError(f"adjoint shape {d.shape} does not match output shape {cache.output.shape}")

    spec = net.spec
    p = net.views()
    grad = np.zeros_like(net.params)
    gp = parameter_views(spec, grad)

    if spec.final_activation is FinalActivation.SOFTMAX_PER_GROUP:
        probs = cache.output.reshape(d.shape[0], -1, spec.group_size)
        dg = d.reshape(probs.shape)
        d = (probs * (dg - (dg * probs).sum(axis=-1, keepdims=True))).reshape(d.shape)
    elif spec.final_activation is FinalActivation.RELU:
        d = d * (cache.out_pre > 0.0)

    gp["out.W"][...] = cache.out_inputs.T @ d
    gp["out.b"][...] = d.sum(axis=0)
    d = d @ p["out.W"].T

    for k in reversed(range(len(spec.dense_layers))):
        layer = cache.dense[k]
        if layer.mask is not None:
            d = d * layer.mask
        d = d * (layer.pre > 0.0)
        if spec.layer_norm:
            gp[f"dense{k}.gain"][...] = (d * layer.xhat).sum(axis=0)
            gp[f"dense{k}.shift"][...] = d.sum(axis=0)
            dxhat = d * p[f"dense{k}.gain"]
            d = (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - layer.xhat * (dxhat * layer.xhat).mean(axis=1, keepdims=True)
            ) / layer.scale
        gp[f"dense{k}.W"][...] = layer.inputs.T @ d
        gp[f"dense{k}.b"][...] = d.sum(axis=0)
        d = d @ p[f"dense{k}.W"].T

    if spec.recurrent_layers:
        steps = spec.seq_len
        top = spec.recurrent_layers[-1]
        dh_seq = np.zeros((d.shape[0], steps, top))
        dh_seq[:, -1, :] = d
        for l in reversed(range(len(spec.recurrent_layers))):
            dh_seq = _lstm_backward(
                p[f"lstm{l}.W"], cache.lstm[l], dh_seq, gp[f"lstm{l}.W"], gp[f"lstm{l}.b"]
            )
        d = dh_seq
    return grad, d


def gradients(net: Network, batch, loss_adjoint) -> np.ndarray:
    """Parameter gradient of the loss whose derivative w.r.t. the outputs is `loss_adjoint`.

    Reuses the activations of the last forward pass when it ran on this batch. In
    train mode with dropout the dropout masks of that pass are required.
    """
    x = np.asarray(batch, dtype=np.float64)
    cache = net._cache
    if cache is None or cache.batch.shape != x.shape or not np.array_equal(cache.batch, x):
        if net.mode is Mode.TRAIN and net.spec.dropout_rate > 0.0:
            raise ShapeError("dropout masks absent: run forward on this batch before gradients")
        forward(net, x)
    grad, _ = backward(net, loss_adjoint)
    return grad


def init_optimizer(
    net: Network,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptimizerState:
    if learning_rate <= 0.0:
        raise InvalidParameterError(f"learning_rate must be positive, got {learning_rate}")
    return OptimizerState(
        first_moment=np.zeros_like(net.params),
        second_moment=np.zeros_like(net.params),
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params: np.ndarray, grads: np.ndarray, opt: OptimizerState) -> tuple[np.ndarray, OptimizerState]:
    """One bias-corrected Adam update. Returns new parameters and optimizer state."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != opt.first_moment.shape:
        raise ShapeError(
            f"parameter {params.shape}, gradient {grads.shape} and moment "
            f"{opt.first_moment.shape} shapes differ"
        )
    if not np.all(np.isfinite(grads)):
        bad = int(np.count_nonzero(~np.isfinite(grads)))
        raise NumericFaultError(f"{bad} non-finite gradient entries; step rejected")

    step = opt.step_count + 1
    m = opt.beta1 * opt.first_moment + (1.0 - opt.beta1) * grads
    v = opt.beta2 * opt.second_moment + (1.0 - opt.beta2) * grads * grads
    m_hat = m / (1.0 - opt.beta1 ** step)
    v_hat = v / (1.0 - opt.beta2 ** step)
    updated = params - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.epsilon)
    return updated, replace(opt, first_moment=m, second_moment=v, step_count=step)


def apply_gradients(net: Network, grads: np.ndarray, opt: OptimizerState) -> OptimizerState:
    """Adam-update the network in place."""
    updated, opt = adam_step(net.params, grads, opt)
    net.params[...] = updated
    return opt


def soft_update(target: Network, online: Network, tau: float) -> Network:
    """θ̄ ← τ·θ̄ + (1 − τ)·θ, in place on the target."""
    if target.spec != online.spec:
        raise ShapeError("soft_update needs networks with identical specs")
    if not 0.0 <= tau <= 1.0:
        raise InvalidParameterError(f"tau must be in [0, 1], got {tau}")
    target.params[...] = tau * target.params + (1.0 - tau) * online.params
    return target
