"""Sparsity schedules, the round phase machine and per-layer allocation."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Products like 0.29 * 100 land a hair below the integer they denote.
_QUANT_EPS = 1e-9


class Schedule(enum.Enum):
    CONSTANT = "constant"
    STEP = "step"


class Allocation(enum.Enum):
    UNIFIED = "unified"
    ADAPTIVE_VERBATIM = "adaptive_verbatim"
    ADAPTIVE_BUDGET = "adaptive_budget"


class Phase(enum.Enum):
    PRUNING = "pruning"
    REFINING = "refining"
    FINE_TUNING = "fine_tuning"


@dataclass(frozen=True)
class SparsityPlan:
    target_sparsity: float = 0.0
    delta_r: int = 10
    ramp_steps: int = 5
    r_finetune: int = 200
    r_end: int = 300
    schedule: Schedule = Schedule.CONSTANT
    allocation: Allocation = Allocation.UNIFIED
    d_min: float = 0.05
    mask_refinement: bool = True

    def __post_init__(self):
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ValueError(f"target_sparsity must lie in [0, 1), got {self.target_sparsity}")
        if self.delta_r < 1:
            raise ValueError("delta_r must be positive")
        if self.ramp_steps < 1:
            raise ValueError("ramp_steps must be positive")
        if self.r_end != 0:
            if self.r_finetune < 1:
                raise ValueError("r_finetune must be positive")
            if self.r_end <= self.r_finetune:
                raise ValueError(f"r_end ({self.r_end}) must exceed r_finetune ({self.r_finetune})")
            if self.schedule is Schedule.STEP and self.ramp_steps * self.delta_r >= self.r_finetune:
                raise ValueError("step ramp does not reach the target before fine-tuning starts")
        if not 0.0 <= self.d_min <= 1.0:
            raise ValueError("d_min must lie in [0, 1]")

    def is_refresh(self, round_: int) -> bool:
        return round_ % self.delta_r == 0


def current_sparsity(round_: int, plan: SparsityPlan) -> float:
    """Sparsity in force for masks generated at (or carried into) ``round_``."""
    if round_ < 0:
        raise ValueError("negative round")
    if round_ >= plan.r_finetune:
        raise ValueError(f"round {round_} is in the fine-tuning phase; sparsity is frozen")
    if plan.schedule is Schedule.CONSTANT:
        return plan.target_sparsity
    j = round_ // plan.delta_r
    if j >= plan.ramp_steps:
        return plan.target_sparsity
    return plan.target_sparsity * (j / plan.ramp_steps)


def phase_of(round_: int, plan: SparsityPlan) -> Phase:
    if not 0 <= round_ <= plan.r_end:
        raise ValueError(f"round {round_} outside [0, {plan.r_end}]")
    if round_ >= plan.r_finetune:
        return Phase.FINE_TUNING
    if current_sparsity(round_, plan) < plan.target_sparsity:
        return Phase.PRUNING
    return Phase.REFINING


def quantize_slice_count(sparsity: float, n_slices: int) -> int:
    """Number of slices to prune: ``floor(sparsity * n_slices)`` clamped to range."""
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity {sparsity} outside [0, 1]")
    k = math.floor(sparsity * n_slices + _QUANT_EPS)
    return min(max(k, 0), n_slices)


@dataclass(frozen=True)
class LayerStat:
    name: str
    mean_magnitude: float
    param_count: int


def allocate_per_layer(
    target_sparsity: float,
    layers: Sequence[LayerStat],
    mode: Allocation = Allocation.UNIFIED,
    d_min: float = 0.05,
) -> dict[str, float]:
    """Per-layer densities (1 - sparsity) for a global target.

    ``UNIFIED`` gives every layer ``1 - S``. ``ADAPTIVE_VERBATIM`` applies the
    magnitude-proportional rule ``(1 - S) * m_i / sum(m)`` literally, so
    densities *sum* to ``1 - S``. ``ADAPTIVE_BUDGET`` scales densities with
    ``m_i``, clips them to ``[d_min, 1]`` and solves for the scale at which
    the parameter-weighted mean density is exactly ``1 - S``.
    """
    if not layers:
        raise ValueError("no layers to allocate")
    if not 0.0 <= target_sparsity < 1.0:
        raise ValueError(f"target sparsity {target_sparsity} outside [0, 1)")
    density = 1.0 - target_sparsity
    names = [layer.name for layer in layers]
    if mode is Allocation.UNIFIED:
        return dict.fromkeys(names, density)

    mags = np.array([layer.mean_magnitude for layer in layers], dtype=np.float64)
    if np.any(mags < 0) or not np.all(np.isfinite(mags)):
        raise ValueError("layer magnitudes must be finite and nonnegative")
    if mags.sum() == 0:
        raise ValueError("adaptive allocation needs at least one nonzero layer magnitude")

    if mode is Allocation.ADAPTIVE_VERBATIM:
        return dict(zip(names, (density * mags / mags.sum()).tolist()))

    counts = np.array([layer.param_count for layer in layers], dtype=np.float64)
    return dict(zip(names, _budget_densities(mags, counts, density, d_min).tolist()))


def _budget_densities(mags, counts, density, d_min):
    """Solve ``sum(p_i * clip(c * m_i, d_min, 1)) = density * sum(p_i)`` for ``c``.

    The left side is continuous, piecewise linear and nondecreasing in ``c``;
    its breakpoints are ``d_min / m_i`` and ``1 / m_i``. Locate the segment
    holding the root and solve the linear piece exactly.
    """
    if density < d_min:
        raise ValueError(f"density {density} is below the per-layer floor {d_min}")
    budget = density * counts.sum()
    pos = mags > 0

    def filled(c):
        d = np.full_like(mags, d_min)
        d[pos] = np.clip(c * mags[pos], d_min, 1.0)
        return d

    def total(c):
        return float(counts @ filled(c))

    if total(0.0) >= budget:
        return filled(0.0)
    breaks = np.unique(np.concatenate([d_min / mags[pos], 1.0 / mags[pos]]))
    lo = 0.0
    for hi in breaks:
        if total(hi) >= budget:
            break
        lo = hi
    else:
        # every magnitude-bearing layer is saturated at 1
        return filled(breaks[-1])
    # classify at the segment midpoint so layers sitting on a breakpoint
    # are not mistaken for free ones by rounding
    d_mid = filled(0.5 * (lo + hi))
    free = pos & (d_mid > d_min) & (d_mid < 1.0)
    fixed = float(counts[~free] @ d_mid[~free]) if np.any(~free) else 0.0
    c = (budget - fixed) / float(counts[free] @ mags[free])
    d = filled(c)
    return d
