"""Seeded synthetic classification data and client partitioning."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .rng import derive_rng
from .var_store import Role, VarStore, load_checkpoint, save_checkpoint


class Generator(enum.Enum):
    GAUSSIAN_CLUSTERS = "gaussian_clusters"
    TEACHER_MLP = "teacher_mlp"


class Partition(enum.Enum):
    IID = "iid"
    DIRICHLET = "dirichlet"


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    n_examples: int = 4000
    n_eval: int = 1000
    n_classes: int = 4
    input_dim: int = 32
    generator: Generator = Generator.GAUSSIAN_CLUSTERS
    noise: float = 1.0
    partition: Partition = Partition.DIRICHLET
    alpha: float = 1.0
    n_clients: int = 16

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if self.n_classes > self.n_examples:
            raise ValueError(f"n_classes ({self.n_classes}) exceeds n_examples ({self.n_examples})")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.n_eval < 0 or self.noise < 0:
            raise ValueError("n_eval and noise must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("Dirichlet concentration must be positive")
        if not 1 <= self.n_clients <= self.n_examples:
            raise ValueError(f"cannot split {self.n_examples} examples over {self.n_clients} clients")


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> Dataset:
        return Dataset(self.x[idx], self.y[idx])


@dataclass(frozen=True)
class SyntheticTask:
    train: Dataset
    test: Dataset


def _balanced_labels(rng, n, n_classes):
    return rng.permutation(np.arange(n) % n_classes)


def gen_synthetic(spec: SynthSpec) -> SyntheticTask:
    """Draw a train and a held-out split from one seeded generator.

    ``GAUSSIAN_CLUSTERS`` places class means uniformly on a sphere of
    radius 3 and adds isotropic noise of standard deviation ``spec.noise``.
    ``TEACHER_MLP`` labels standard-normal inputs by the argmax of a frozen
    random two-layer network.
    """
    rng = derive_rng(spec.seed, "data")
    n = spec.n_examples + spec.n_eval
    if spec.generator is Generator.GAUSSIAN_CLUSTERS:
        means = rng.normal(size=(spec.n_classes, spec.input_dim))
        means *= 3.0 / np.linalg.norm(means, axis=1, keepdims=True)
        y = np.concatenate([
            _balanced_labels(rng, spec.n_examples, spec.n_classes),
            _balanced_labels(rng, spec.n_eval, spec.n_classes),
        ])
        x = means[y] + spec.noise * rng.normal(size=(n, spec.input_dim))
    else:
        hidden = 32
        w1 = rng.normal(0, np.sqrt(2.0 / spec.input_dim), size=(spec.input_dim, hidden))
        w2 = rng.normal(0, np.sqrt(2.0 / hidden), size=(hidden, spec.n_classes))
        x = rng.normal(size=(n, spec.input_dim))
        y = (np.maximum(x @ w1, 0.0) @ w2).argmax(axis=1)
    y = y.astype(np.int64)
    train = Dataset(x[: spec.n_examples], y[: spec.n_examples])
    test = Dataset(x[spec.n_examples :], y[spec.n_examples :])
    return SyntheticTask(train, test)


def dirichlet_proportions(rng: np.random.Generator, alpha: float, n_classes: int, n_clients: int) -> np.ndarray:
    """Per-client class mixtures, one Dirichlet(alpha) draw per client."""
    return rng.dirichlet(np.full(n_classes, alpha), size=n_clients)


def partition_clients(dataset: Dataset, spec: SynthSpec) -> list[np.ndarray]:
    """Split example indices into ``spec.n_clients`` disjoint, nonempty shards.

    IID shuffles and deals round-robin. The Dirichlet split gives every
    client an (almost) equal share; each slot is filled by drawing a class
    from the client's mixture, restricted to classes that still have
    unassigned examples.
    """
    n = len(dataset)
    k = spec.n_clients
    if not 1 <= k <= n:
        raise ValueError(f"cannot split {n} examples over {k} clients")
    rng = derive_rng(spec.seed, "partition")
    if spec.partition is Partition.IID:
        perm = rng.permutation(n)
        shards = [np.sort(perm[i::k]) for i in range(k)]
    else:
        n_classes = int(dataset.y.max()) + 1
        pools = [list(rng.permutation(np.flatnonzero(dataset.y == c))) for c in range(n_classes)]
        remaining = np.array([len(p) for p in pools], dtype=np.float64)
        mix = dirichlet_proportions(rng, spec.alpha, n_classes, k)
        sizes = np.full(k, n // k)
        sizes[: n % k] += 1
        shards = []
        for client in range(k):
            picked = []
            for _ in range(sizes[client]):
                p = mix[client] * (remaining > 0)
                if p.sum() <= 0:
                    # mixture only covers exhausted classes
                    p = (remaining > 0).astype(np.float64)
                c = rng.choice(n_classes, p=p / p.sum())
                picked.append(pools[c].pop())
                remaining[c] -= 1
            shards.append(np.sort(np.array(picked, dtype=np.int64)))
    return _repair_empty(shards)


def _repair_empty(shards: list[np.ndarray]) -> list[np.ndarray]:
    shards = list(shards)
    for i, s in enumerate(shards):
        if len(s) == 0:
            donor = max(range(len(shards)), key=lambda j: len(shards[j]))
            if len(shards[donor]) < 2:
                raise ValueError("impossible partition: not enough examples")
            shards[i] = shards[donor][-1:]
            shards[donor] = shards[donor][:-1]
    return shards


def save_dataset(dataset: Dataset, path) -> None:
    """Cache a dataset in the checkpoint container (float32 features)."""
    store = VarStore()
    store.register_var("x", dataset.x.shape, Role.EXCLUDED, value=dataset.x)
    store.register_var("y", dataset.y.shape, Role.EXCLUDED, value=dataset.y.astype(np.float64))
    save_checkpoint(store, path)


def load_dataset(path) -> Dataset:
    store = load_checkpoint(path)
    return Dataset(store["x"], store["y"].astype(np.int64))
