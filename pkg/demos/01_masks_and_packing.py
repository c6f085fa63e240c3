"""Slice masks, packing and the zero-parameter ratio on a two-layer pair.

Run: python demos/01_masks_and_packing.py
"""
import numpy as np

from fedprune import Pattern, VarStore, Role
from fedprune.masks import (
    enumerate_slices,
    expand,
    generate_mask,
    induced_rows,
    payload_nbytes,
    shrink,
    zero_param_ratio,
)

rng = np.random.default_rng(0)
store = VarStore()
store.register_var("W1", (6, 4), Role.PRUNABLE, "ff", rng.normal(size=(6, 4)))
store.register_var("b1", (4,), value=np.zeros(4))
store.register_var("W2", (4, 3), Role.PRUNABLE, "ff", rng.normal(size=(4, 3)))

# %% every pattern tiles the canonical 2-D view exactly once
for pattern in Pattern:
    slices = enumerate_slices(store.spec("W1"), pattern)
    print(f"{pattern.value:<13} {len(slices):2d} slices of length {len(slices[0].elements)}")

# %% prune half the columns of each matrix by a made-up score
scores = {"W1": np.array([3.0, 0.5, 2.0, 0.1]), "W2": np.array([1.0, 0.2, 4.0])}
masks = generate_mask(scores, 0.5, Pattern.WHOLE_COLUMN, store)
for name, m in masks.items():
    print(name, "keeps columns", m.kept_indices.tolist())

# %% the packed model is what a client receives
packed = shrink(store, masks)
print("packed params", packed.param_count, "of", store.param_count, "| wire bytes", payload_nbytes(packed))
back = expand(packed, masks)
print("expand(shrink(w)) zeros pruned columns:", not back["W1"][:, [1, 3]].any())

# %% dropping unit j of W1 silences row j of W2 as well
print("induced dead rows of W2:", induced_rows(masks, store)["W2"].tolist())
print(f"zero ratio nominal {zero_param_ratio(store, masks, False):.3f}, with propagation {zero_param_ratio(store, masks, True):.3f}")
