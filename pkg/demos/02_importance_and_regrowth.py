"""Why weight-based scores let pruned slices come back and gradient momentum does not.

One 2x2 matrix, one client whose local step is ``w <- w - 0.1 sign(w)``.
Column a starts smaller and is masked; training shrinks column b while a
stays frozen, so a weight-magnitude rescore swaps them. Under gradient
momentum the masked column only ever receives zero deltas.

Run: python demos/02_importance_and_regrowth.py
"""
import numpy as np

from fedprune import Method, Pattern, Role, SparsityPlan, VarStore
from fedprune.engine import Client, ClientUpdate, PruningSetup, TrainHyper, initial_state, run_round


def sign_descent(client, packed, rng):
    delta = packed.with_values({k: 0.1 * np.sign(v) for k, v in packed.values.items()})
    return ClientUpdate(client.client_id, 1, delta, 0.0)


for method in (Method.WEIGHT, Method.GRAD_MOMENTUM):
    store = VarStore()
    store.register_var("w", (2, 2), Role.PRUNABLE, value=[[0.8, 1.0], [0.8, 1.0]])
    plan = SparsityPlan(0.5, delta_r=5, r_finetune=20, r_end=30)
    setup = PruningSetup(plan, Pattern.WHOLE_COLUMN, method)
    state = initial_state(store, setup, seed=0)
    client = [Client(0, np.zeros((1, 1)), np.zeros(1, dtype=np.int64))]
    print(f"\n{method.value}")
    for r in range(15):
        state = run_round(state, client, TrainHyper(clients_per_round=1), setup, sign_descent)
        if plan.is_refresh(r):
            print(f"  round {r:2d} scores {np.round(state.scores['w'], 3).tolist()} keep {state.masks['w'].keep.tolist()}")
