"""Bytes on the wire per client per round across sparsity levels.

Run: python demos/05_communication.py
"""
import numpy as np

from fedprune import Pattern, RunConfig
from fedprune.config import build_run
from fedprune.masks import encode_packed, full_masks, generate_mask, induced_rows, shrink, slice_count

run = build_run(RunConfig())
store = run.store
dense = len(encode_packed(shrink(store, full_masks(store, Pattern.WHOLE_COLUMN))))
rng = np.random.default_rng(0)
print(f"{'S':>4} {'phase 1-2':>10} {'fine-tune':>10} {'ratio':>6}")
for s in (0.0, 0.1, 0.3, 0.5, 0.7):
    scores = {spec.name: rng.random(slice_count(spec, Pattern.WHOLE_COLUMN)) for spec in store.prunable()}
    masks = generate_mask(scores, s, Pattern.WHOLE_COLUMN, store)
    refining = len(encode_packed(shrink(store, masks)))
    reduced = len(encode_packed(shrink(store, masks, dead_rows=induced_rows(masks, store))))
    print(f"{s:4.1f} {refining:10d} {reduced:10d} {refining / dense:6.3f}")
