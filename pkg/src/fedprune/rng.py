"""Seed derivation.

A single integer seed drives a run. Each consumer (data generation,
partitioning, client selection, initialisation, local training) draws from
its own stream, derived by hashing the component name so that adding a new
consumer never shifts the draws of an existing one.
"""
import hashlib

import numpy as np


def component_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, component: str, *path: int) -> np.random.Generator:
    """Generator for ``component`` at integer coordinates ``path``.

    ``derive_rng(7, "client", 3, 12)`` is the stream for client 12 in round 3
    of a run seeded with 7. Identical arguments always give identical streams.
    """
    entropy = [int(seed), component_key(component), *(int(p) for p in path)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
