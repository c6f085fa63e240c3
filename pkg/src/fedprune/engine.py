"""Round orchestration for federated pruning.

A run moves through three phases. While the sparsity ramps toward its
target (pruning) and while it sits at the target (refining), the server
keeps the full model; every ``delta_r`` rounds it rescores slices and
rebuilds the masks, then ships only the kept slices. Clients train that
reduced model and return reduced deltas, which the server expands (zeros
at masked positions) and averages, so masked server weights never move.
At ``r_finetune`` the server drops the pruned slices for good, together
with rows of paired matrices that became dead, and plain federated
averaging continues on the reduced model until ``r_end``.
"""
from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .importance import ImportanceTable, Method, MomentumState, Norm, compute_scores, update_momentum
from .masks import (
    MaskSet,
    PackedModel,
    Pattern,
    expand,
    full_masks,
    generate_mask,
    induced_rows,
    payload_nbytes,
    shrink,
    shrink_values,
    zero_param_ratio,
)
from .model import Mlp
from .rng import derive_rng
from .schedule import (
    Allocation,
    LayerStat,
    Phase,
    SparsityPlan,
    allocate_per_layer,
    current_sparsity,
    phase_of,
)
from .var_store import VarStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Client:
    client_id: int
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True)
class TrainHyper:
    clients_per_round: int = 8
    local_steps: int = 4
    batch_size: int = 16
    client_lr: float = 0.1
    server_lr: float = 1.0
    threads: int = 1


@dataclass(frozen=True)
class PruningSetup:
    plan: SparsityPlan
    pattern: Pattern = Pattern.WHOLE_COLUMN
    method: Method = Method.WEIGHT
    norm: Norm = Norm.L1
    momentum_beta: float = 0.9


@dataclass
class ClientUpdate:
    client_id: int
    n_k: int
    packed_delta: PackedModel
    local_loss: float


@dataclass(frozen=True)
class RoundStats:
    train_loss: float
    bytes_down: int
    bytes_up: int
    clients: tuple[int, ...]


@dataclass
class RoundState:
    round: int
    store: VarStore
    masks: MaskSet
    momentum: MomentumState
    seed: int
    sparsity: float = 0.0
    phase: Phase = Phase.PRUNING
    reduced: PackedModel | None = None
    scores: ImportanceTable | None = None
    masks_frozen: bool = False
    stats: RoundStats | None = None

    def eval_params(self) -> dict[str, np.ndarray]:
        """Full-shape view of the model clients actually train."""
        if self.reduced is not None:
            return expand(self.reduced)
        return expand(shrink(self.store, self.masks))


LocalTrainer = Callable[[Client, PackedModel, np.random.Generator], ClientUpdate]


def initial_state(store: VarStore, setup: PruningSetup, seed: int) -> RoundState:
    return RoundState(
        round=0,
        store=store.copy(),
        masks=full_masks(store, setup.pattern),
        momentum=MomentumState(setup.momentum_beta),
        seed=seed,
    )


# -- client side -----------------------------------------------------------------


def client_local_update(
    model: Mlp,
    client: Client,
    reduced: PackedModel,
    steps: int,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> ClientUpdate:
    """Run ``steps`` minibatch SGD steps on the packed parameters only.

    The packed buffers are the trainable state; a zero-filled full-shape
    view is rebuilt each step just to evaluate the network. Minibatches are
    drawn without replacement from the shard, or the whole shard is used
    when it is no larger than ``batch_size``.
    """
    n = len(client)
    if n == 0:
        raise ValueError(f"client {client.client_id} has an empty shard")
    if steps < 1:
        raise ValueError("local steps must be >= 1")
    params = {k: v.copy() for k, v in reduced.values.items()}
    losses = []
    seen = 0
    for _ in range(steps):
        idx = np.arange(n) if batch_size >= n else rng.choice(n, size=batch_size, replace=False)
        dense = expand(PackedModel(reduced.layout, params))
        loss, grads = model.forward_backward(dense, client.x[idx], client.y[idx])
        g = shrink_values(grads, reduced.layout)
        params = {k: params[k] - lr * g[k] for k in params}
        losses.append(loss)
        seen += len(idx)
    delta = reduced - PackedModel(reduced.layout, params)
    return ClientUpdate(client.client_id, seen, delta, float(np.mean(losses)))


def mlp_trainer(model: Mlp, hyper: TrainHyper) -> LocalTrainer:
    def train(client, reduced, rng):
        return client_local_update(model, client, reduced, hyper.local_steps, hyper.client_lr, hyper.batch_size, rng)

    return train


# -- server side -----------------------------------------------------------------


def select_clients(seed: int, round_: int, pool: Sequence[Client], k: int, stream: str = "select") -> list[Client]:
    if k > len(pool):
        raise ValueError(f"cannot select {k} clients from a pool of {len(pool)}")
    if k < 1:
        raise ValueError("must select at least one client")
    rng = derive_rng(seed, stream, round_)
    picked = rng.choice(len(pool), size=k, replace=False)
    return sorted((pool[i] for i in picked), key=lambda c: c.client_id)


def _run_clients(selected, packed, trainer, seed, round_, threads, stream="client"):
    def one(client):
        return trainer(client, packed, derive_rng(seed, stream, round_, client.client_id))

    if threads > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            updates = list(pool.map(one, selected))
    else:
        updates = [one(c) for c in selected]
    for u in updates:
        if not u.packed_delta.same_layout(packed):
            raise ValueError(f"client {u.client_id} returned a delta with a mismatched layout")
    return updates


def _weights(updates: Sequence[ClientUpdate]) -> list[tuple[float, ClientUpdate]]:
    if not updates:
        raise ValueError("no client updates to aggregate")
    total = sum(u.n_k for u in updates)
    if total <= 0:
        raise ValueError("aggregation needs a positive total example count")
    ordered = sorted(updates, key=lambda u: u.client_id)
    return [(u.n_k / total, u) for u in ordered]


def aggregate(updates: Sequence[ClientUpdate], masks: MaskSet | None = None) -> dict[str, np.ndarray]:
    """Example-weighted mean of expanded client deltas, summed in client order."""
    out = None
    for weight, u in _weights(updates):
        full = expand(u.packed_delta, masks)
        if out is None:
            out = {k: weight * v for k, v in full.items()}
        else:
            for k, v in full.items():
                out[k] = out[k] + weight * v
    return out


def aggregate_packed(updates: Sequence[ClientUpdate]) -> PackedModel:
    """Example-weighted mean of packed deltas that share one layout."""
    weighted = _weights(updates)
    layout = weighted[0][1].packed_delta
    values = None
    for weight, u in weighted:
        if not u.packed_delta.same_layout(layout):
            raise ValueError("packed deltas have different layouts")
        if values is None:
            values = {k: weight * v for k, v in u.packed_delta.values.items()}
        else:
            for k, v in u.packed_delta.values.items():
                values[k] = values[k] + weight * v
    return PackedModel(layout.layout, values)


def layer_sparsities(store: VarStore, sparsity: float, plan: SparsityPlan) -> float | dict[str, float]:
    if plan.allocation is Allocation.UNIFIED:
        return sparsity
    stats = [LayerStat(s.name, float(np.abs(store[s.name]).mean()), s.param_count) for s in store.prunable()]
    densities = allocate_per_layer(sparsity, stats, plan.allocation, plan.d_min)
    return {k: min(max(1.0 - d, 0.0), 1.0) for k, d in densities.items()}


def _probe_momentum(state, clients, hyper, setup, trainer):
    """Seed the delta momentum from one dense, discarded client round."""
    dense = shrink(state.store, full_masks(state.store, setup.pattern))
    selected = select_clients(state.seed, state.round, clients, hyper.clients_per_round, "probe")
    updates = _run_clients(selected, dense, trainer, state.seed, state.round, hyper.threads, "probe-client")
    delta = aggregate(updates)
    return update_momentum(MomentumState(setup.momentum_beta), delta), payload_nbytes(dense)


def run_round(
    state: RoundState,
    clients: Sequence[Client],
    hyper: TrainHyper,
    setup: PruningSetup,
    trainer: LocalTrainer,
) -> RoundState:
    """One pruning/refining round; returns the next state."""
    plan = setup.plan
    r = state.round
    if state.reduced is not None or r >= plan.r_finetune:
        raise ValueError(f"round {r} belongs to the fine-tuning phase")

    masks, sparsity, momentum, scores = state.masks, state.sparsity, state.momentum, state.scores
    frozen = state.masks_frozen
    probe_bytes = 0
    if plan.is_refresh(r) and not frozen:
        sparsity = current_sparsity(r, plan)
        if setup.method.needs_momentum and not momentum.initialized:
            momentum, probe_bytes = _probe_momentum(state, clients, hyper, setup, trainer)
        scores = compute_scores(state.store, setup.pattern, setup.method, setup.norm, momentum, r)
        masks = generate_mask(scores, layer_sparsities(state.store, sparsity, plan), setup.pattern, state.store)
        frozen = not plan.mask_refinement and sparsity >= plan.target_sparsity
    phase = Phase.PRUNING if sparsity < plan.target_sparsity else Phase.REFINING

    packed = shrink(state.store, masks)
    selected = select_clients(state.seed, r, clients, hyper.clients_per_round)
    updates = _run_clients(selected, packed, trainer, state.seed, r, hyper.threads)
    delta = aggregate(updates, masks)

    store = state.store.with_values({k: state.store[k] - hyper.server_lr * delta[k] for k in state.store})
    store.step = state.store.step + 1
    momentum = update_momentum(momentum, delta)

    stats = RoundStats(
        train_loss=_mean_loss(updates),
        bytes_down=payload_nbytes(packed) + probe_bytes,
        bytes_up=payload_nbytes(updates[0].packed_delta) + probe_bytes,
        clients=tuple(c.client_id for c in selected),
    )
    return replace(
        state,
        round=r + 1,
        store=store,
        masks=masks,
        momentum=momentum,
        sparsity=sparsity,
        phase=phase,
        scores=scores,
        masks_frozen=frozen,
        stats=stats,
    )


def _mean_loss(updates):
    return float(sum(w * u.local_loss for w, u in _weights(updates)))


def enter_finetune(state: RoundState, setup: PruningSetup) -> RoundState:
    """Physically reduce the server model with the final masks.

    Pruned slices are discarded; for whole-column pairs the dead rows of the
    downstream matrix go too. ``state.store`` becomes the zero-filled view
    of the reduced model.
    """
    if state.reduced is not None:
        raise ValueError("already in the fine-tuning phase")
    if state.round != setup.plan.r_finetune:
        raise ValueError(f"fine-tuning starts at round {setup.plan.r_finetune}, not {state.round}")
    dead = induced_rows(state.masks, state.store) if setup.pattern is Pattern.WHOLE_COLUMN else {}
    reduced = shrink(state.store, state.masks, dead_rows=dead)
    store = state.store.with_values(expand(reduced))
    return replace(state, store=store, reduced=reduced, phase=Phase.FINE_TUNING, masks_frozen=True)


def run_finetune_round(
    state: RoundState,
    clients: Sequence[Client],
    hyper: TrainHyper,
    trainer: LocalTrainer,
) -> RoundState:
    """Standard federated averaging on the reduced model."""
    if state.reduced is None:
        raise ValueError("fine-tuning round before enter_finetune")
    r = state.round
    packed = state.reduced
    selected = select_clients(state.seed, r, clients, hyper.clients_per_round)
    updates = _run_clients(selected, packed, trainer, state.seed, r, hyper.threads)
    avg = aggregate_packed(updates)
    reduced = packed.with_values({k: packed.values[k] - hyper.server_lr * avg.values[k] for k in packed.values})
    store = state.store.with_values(expand(reduced))
    store.step = state.store.step + 1
    stats = RoundStats(
        train_loss=_mean_loss(updates),
        bytes_down=payload_nbytes(packed),
        bytes_up=payload_nbytes(updates[0].packed_delta),
        clients=tuple(c.client_id for c in selected),
    )
    return replace(state, round=r + 1, store=store, reduced=reduced, stats=stats)


# -- whole runs ------------------------------------------------------------------


def make_clients(x: np.ndarray, y: np.ndarray, shards: Sequence[np.ndarray]) -> list[Client]:
    return [Client(i, x[idx], y[idx]) for i, idx in enumerate(shards)]


def resolve_threads(requested: int | None = None) -> int:
    """Worker count: the explicit request, else ``FEDPRUNE_THREADS``, else 1.

    ``FEDPRUNE_THREADS`` also caps an explicit request.
    """
    cap = os.environ.get("FEDPRUNE_THREADS")
    n = requested if requested else (int(cap) if cap else 1)
    if cap:
        n = min(n, int(cap))
    return max(n, 1)


@dataclass
class RunResult:
    records: list  # list[RoundRecord]
    final: PackedModel
    state: RoundState


def run_experiment(config, trainer_factory=None, progress: Callable[[int], None] | None = None) -> RunResult:
    """Execute rounds ``0 .. r_end - 1`` for a validated ``RunConfig``.

    Returns one record per round plus the initial evaluation (record 0) and
    the final reduced model.
    """
    from .config import build_run
    from .metrics import RoundRecord

    run = build_run(config)
    plan = run.setup.plan
    trainer = (trainer_factory or partial(mlp_trainer, run.model))(run.hyper)
    state = initial_state(run.store, run.setup, config.seed)
    test = run.task.test

    def evaluate(params):
        return run.model.accuracy(params, test.x, test.y) if len(test) else float("nan")

    init_params = state.eval_params()
    records = [
        RoundRecord(
            round=0,
            phase=phase_of(0, plan),
            sparsity=0.0,
            zero_param_ratio=0.0,
            bytes_down=0,
            bytes_up=0,
            train_loss=run.model.loss(init_params, run.task.train.x, run.task.train.y),
            eval_accuracy=evaluate(init_params),
            wall_time=0.0 if config.record_wall_time else None,
        )
    ]
    for r in range(plan.r_end):
        t0 = time.perf_counter()
        if r < plan.r_finetune:
            state = run_round(state, run.clients, run.hyper, run.setup, trainer)
        else:
            if state.reduced is None:
                state = enter_finetune(state, run.setup)
            state = run_finetune_round(state, run.clients, run.hyper, trainer)
        elapsed = time.perf_counter() - t0
        records.append(
            RoundRecord(
                round=r + 1,
                phase=state.phase,
                sparsity=state.sparsity,
                zero_param_ratio=zero_param_ratio(state.store, state.masks, with_propagation=True),
                bytes_down=state.stats.bytes_down,
                bytes_up=state.stats.bytes_up,
                train_loss=state.stats.train_loss,
                eval_accuracy=evaluate(state.eval_params()),
                wall_time=elapsed if config.record_wall_time else None,
            )
        )
        if progress is not None:
            progress(r + 1)
    final = state.reduced
    if final is None:
        dead = induced_rows(state.masks, state.store) if run.setup.pattern is Pattern.WHOLE_COLUMN else {}
        final = shrink(state.store, state.masks, dead_rows=dead)
    return RunResult(records, final, state)
