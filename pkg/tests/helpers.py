import numpy as np

from fedprune.var_store import Role, VarStore


def make_store(shapes, rng=None, pairs=(), excluded=()):
    """Store with prunable matrices ``shapes`` (name -> shape) and 1-D extras.

    ``pairs`` is a list of (upstream, downstream); ``excluded`` maps names to
    lengths of 1-D variables appended at the end.
    """
    rng = rng or np.random.default_rng(0)
    groups = {}
    for i, (up, down) in enumerate(pairs):
        groups.setdefault(up, []).append(f"p{i}")
        groups.setdefault(down, []).append(f"p{i}")
    store = VarStore()
    for name, shape in shapes.items():
        store.register_var(name, shape, Role.PRUNABLE, tuple(groups.get(name, ())) or None, rng.normal(size=shape))
    for name, n in dict(excluded).items():
        store.register_var(name, (n,), Role.EXCLUDED, None, rng.normal(size=n))
    return store
