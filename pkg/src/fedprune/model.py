"""Small fully-connected classifier with hand-written backprop.

Layer ``i`` computes ``z_i = h_{i-1} @ W_i + b_i`` with ``W_i`` of shape
``(fan_in, fan_out)``, so a column of ``W_i`` holds the incoming weights of
one output unit. Consecutive prunable weight matrices are registered as
feed-forward pairs: dropping column ``j`` of ``W_i`` kills unit ``j`` and
with it row ``j`` of ``W_{i+1}``.

The classifier head is excluded from pruning unless ``prune_head`` is set:
removing one of its columns would delete a class logit.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .var_store import Role, VarStore


class Activation(enum.Enum):
    RELU = "relu"
    TANH = "tanh"


@dataclass(frozen=True)
class MlpConfig:
    widths: tuple[int, ...] = (32, 16, 16, 8, 4)
    activation: Activation = Activation.RELU
    prune_head: bool = False

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("an MLP needs input, at least one hidden layer and an output width")
        if any(w < 2 for w in self.widths):
            raise ValueError(f"all widths must be >= 2, got {self.widths}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1


def _act(z, kind):
    return np.maximum(z, 0.0) if kind is Activation.RELU else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind is Activation.RELU else 1.0 - a * a


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Mlp:
    def __init__(self, config: MlpConfig):
        self.config = config

    def weight_name(self, i: int) -> str:
        return f"W{i + 1}"

    def bias_name(self, i: int) -> str:
        return f"b{i + 1}"

    def init_store(self, rng: np.random.Generator) -> VarStore:
        """He-initialised weights, zero biases, consecutive prunable weights paired."""
        store = VarStore()
        widths = self.config.widths
        n_prunable = self.config.n_layers if self.config.prune_head else self.config.n_layers - 1
        for i in range(self.config.n_layers):
            fan_in, fan_out = widths[i], widths[i + 1]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            if i >= n_prunable:
                store.register_var(self.weight_name(i), (fan_in, fan_out), Role.EXCLUDED, None, w)
            else:
                groups = []
                if i > 0:
                    groups.append(f"ff{i}")
                if i < n_prunable - 1:
                    groups.append(f"ff{i + 1}")
                store.register_var(self.weight_name(i), (fan_in, fan_out), Role.PRUNABLE, tuple(groups), w)
            store.register_var(self.bias_name(i), (fan_out,), Role.EXCLUDED, None, np.zeros(fan_out))
        return store

    def logits(self, params: Mapping[str, np.ndarray], x: np.ndarray) -> np.ndarray:
        h = x
        last = self.config.n_layers - 1
        for i in range(self.config.n_layers):
            z = h @ params[self.weight_name(i)] + params[self.bias_name(i)]
            h = z if i == last else _act(z, self.config.activation)
        return h

    def forward_backward(self, params: Mapping[str, np.ndarray], x: np.ndarray, y: np.ndarray):
        """Mean cross-entropy over the batch and its exact gradients."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        if x.ndim != 2 or len(x) == 0 or x.shape[1] != self.config.widths[0]:
            raise ValueError(f"batch of shape {x.shape} does not fit input width {self.config.widths[0]}")
        if y.shape != (len(x),):
            raise ValueError("labels must be a vector matching the batch")
        kind = self.config.activation
        n_layers = self.config.n_layers
        inputs, pre, post = [], [], []
        h = x
        for i in range(n_layers):
            inputs.append(h)
            z = h @ params[self.weight_name(i)] + params[self.bias_name(i)]
            pre.append(z)
            h = z if i == n_layers - 1 else _act(z, kind)
            post.append(h)

        logp = log_softmax(h)
        batch = len(x)
        loss = -float(logp[np.arange(batch), y].mean())

        dz = np.exp(logp)
        dz[np.arange(batch), y] -= 1.0
        dz /= batch
        grads = {}
        for i in reversed(range(n_layers)):
            grads[self.weight_name(i)] = inputs[i].T @ dz
            grads[self.bias_name(i)] = dz.sum(axis=0)
            if i:
                dh = dz @ params[self.weight_name(i)].T
                dz = dh * _act_grad(pre[i - 1], post[i - 1], kind)
        return loss, {k: grads[k] for k in self.param_names()}

    def param_names(self) -> list[str]:
        names = []
        for i in range(self.config.n_layers):
            names += [self.weight_name(i), self.bias_name(i)]
        return names

    def predict(self, params, x) -> np.ndarray:
        return self.logits(params, x).argmax(axis=1)

    def accuracy(self, params, x, y) -> float:
        return float((self.predict(params, x) == np.asarray(y)).mean())

    def loss(self, params, x, y) -> float:
        logp = log_softmax(self.logits(params, x))
        return -float(logp[np.arange(len(x)), np.asarray(y)].mean())

