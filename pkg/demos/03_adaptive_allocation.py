"""Per-layer densities under the three allocation modes.

Run: python demos/03_adaptive_allocation.py
"""
import numpy as np

from fedprune import Allocation
from fedprune.schedule import LayerStat, allocate_per_layer

layers = [LayerStat("W1", 0.30, 512), LayerStat("W2", 0.12, 256), LayerStat("W3", 0.05, 128)]
counts = np.array([l.param_count for l in layers])

for mode in Allocation:
    d = allocate_per_layer(0.5, layers, mode, d_min=0.05)
    dens = np.array([d[l.name] for l in layers])
    print(f"{mode.value:<18} densities {np.round(dens, 3).tolist()}  sum {dens.sum():.3f}  param-weighted mean {counts @ dens / counts.sum():.3f}")

# The verbatim rule makes densities sum to 1 - S, which at L layers is a far
# sparser model than requested; the budget mode keeps the global density at 1 - S.
