"""Per-slice importance scores and the delta-magnitude momentum they use.

Three signals are supported:

``WEIGHT``
    norm of the current server weights in each slice.
``GRAD_MOMENTUM``
    norm of an exponential moving average of ``|aggregated delta|``, kept
    per element by the server.
``WEIGHT_TIMES_GRAD``
    norm of ``|w| * ema`` taken elementwise before aggregation.

The "gradient" is the server-side averaged client delta; per-client
gradients never leave the devices.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .masks import Pattern, slice_elements
from .var_store import VarStore


class Method(enum.Enum):
    WEIGHT = "weight"
    GRAD_MOMENTUM = "grad_momentum"
    WEIGHT_TIMES_GRAD = "weight_times_grad"

    @property
    def needs_momentum(self) -> bool:
        return self is not Method.WEIGHT


class Norm(enum.Enum):
    L1 = "l1"
    L2 = "l2"


def slice_norm(values, norm: Norm) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("norm of an empty slice")
    if norm is Norm.L1:
        return float(np.abs(v).sum())
    return float(np.sqrt(np.square(v).sum()))


def _slice_norms(flat: np.ndarray, table, norm: Norm) -> np.ndarray:
    # Equal-length slices reduce in one shot; odd half splits fall back to a loop.
    lengths = {len(e) for e in table}
    if len(lengths) == 1:
        block = np.abs(flat[np.stack(table)])
        if norm is Norm.L1:
            return block.sum(axis=1)
        return np.sqrt(np.square(block).sum(axis=1))
    return np.array([slice_norm(flat[e], norm) for e in table])


@dataclass
class MomentumState:
    beta: float = 0.9
    ema: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"momentum decay {self.beta} outside (0, 1)")

    @property
    def initialized(self) -> bool:
        return bool(self.ema)

    def copy(self) -> MomentumState:
        return MomentumState(self.beta, {k: v.copy() for k, v in self.ema.items()})


def update_momentum(state: MomentumState, aggregated_delta: Mapping[str, np.ndarray], beta: float | None = None) -> MomentumState:
    """Fold one full-shape aggregated delta into the moving average.

    The first call seeds ``ema = |delta|``; later calls apply
    ``ema <- beta * ema + (1 - beta) * |delta|``. Pruned positions carry a
    zero delta and so decay toward 0.
    """
    beta = state.beta if beta is None else beta
    if not 0.0 < beta < 1.0:
        raise ValueError(f"momentum decay {beta} outside (0, 1)")
    if not state.initialized:
        return MomentumState(beta, {k: np.abs(np.asarray(v, dtype=np.float64)) for k, v in aggregated_delta.items()})
    ema = {}
    for name, prev in state.ema.items():
        ema[name] = beta * prev + (1.0 - beta) * np.abs(aggregated_delta[name])
    return MomentumState(beta, ema)


@dataclass
class ImportanceTable(Mapping):
    """Per-slice scores keyed by variable name."""

    scores: dict[str, np.ndarray]
    method: Method
    norm: Norm
    pattern: Pattern
    round_computed: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.scores[name]

    def __iter__(self):
        return iter(self.scores)

    def __len__(self) -> int:
        return len(self.scores)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["var", "slice", "score", "method", "norm", "round"])
            for name, sc in self.scores.items():
                for i, s in enumerate(sc):
                    w.writerow([name, i, repr(float(s)), self.method.value, self.norm.value, self.round_computed])


def compute_scores(
    store: VarStore,
    pattern: Pattern,
    method: Method = Method.WEIGHT,
    norm: Norm = Norm.L1,
    momentum: MomentumState | None = None,
    round_: int = 0,
) -> ImportanceTable:
    if method.needs_momentum and (momentum is None or not momentum.initialized):
        raise ValueError(f"{method.value} scoring needs an initialised momentum state")
    scores = {}
    for spec in store.prunable():
        table = slice_elements(spec, pattern)
        w = store[spec.name].reshape(-1)
        if method is Method.WEIGHT:
            signal = w
        elif method is Method.GRAD_MOMENTUM:
            signal = momentum.ema[spec.name].reshape(-1)
        else:
            signal = np.abs(w) * momentum.ema[spec.name].reshape(-1)
        scores[spec.name] = _slice_norms(signal, table, norm)
    return ImportanceTable(scores, method, norm, pattern, round_)
