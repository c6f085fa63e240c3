import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedprune.importance import (
    ImportanceTable,
    Method,
    MomentumState,
    Norm,
    compute_scores,
    slice_norm,
    update_momentum,
)
from fedprune.masks import Pattern, enumerate_slices

from helpers import make_store
from oracles import slice_keep_matrix


@pytest.mark.parametrize("norm, expected", [(Norm.L1, 7.0), (Norm.L2, 5.0)])
def test_slice_norm_examples(norm, expected):
    assert slice_norm([3.0, -4.0], norm) == expected


@pytest.mark.parametrize("norm", list(Norm))
def test_zero_slice_scores_zero(norm):
    assert slice_norm(np.zeros(5), norm) == 0.0


def test_weight_l1_column():
    store = make_store({"w": (2, 2)})
    store["w"] = np.array([[1.0, 0.5], [-2.0, 0.5]])
    table = compute_scores(store, Pattern.WHOLE_COLUMN, Method.WEIGHT, Norm.L1)
    assert table["w"].tolist() == [3.0, 1.0]


def test_only_prunable_scored(rng):
    store = make_store({"w": (3, 4)}, rng, excluded={"b": 4})
    table = compute_scores(store, Pattern.WHOLE_ROW)
    assert list(table) == ["w"]


@pytest.mark.parametrize("pattern", list(Pattern))
@pytest.mark.parametrize("norm", list(Norm))
@pytest.mark.parametrize("shape", [(4, 6), (5, 3), (2, 3, 4)])
def test_scores_match_direct_slices(pattern, norm, shape, rng):
    store = make_store({"w": shape}, rng)
    w2 = store["w"].reshape(-1, shape[-1])
    rows, cols = w2.shape
    n = len(enumerate_slices(store.spec("w"), pattern))
    got = compute_scores(store, pattern, Method.WEIGHT, norm)["w"]
    for i in range(n):
        keep = np.ones(n, bool)
        keep[i] = False
        sel = w2[~slice_keep_matrix(rows, cols, pattern.value, keep)]
        ref = np.abs(sel).sum() if norm is Norm.L1 else np.sqrt((sel**2).sum())
        assert got[i] == pytest.approx(ref, rel=1e-12)


class TestMomentum:
    def test_first_call_seeds(self):
        state = update_momentum(MomentumState(0.9), {"w": np.array([-4.0])})
        assert state.ema["w"].tolist() == [4.0]

    def test_decay_step(self):
        state = MomentumState(0.9, {"w": np.array([4.0])})
        state = update_momentum(state, {"w": np.array([0.0])})
        assert state.ema["w"][0] == pytest.approx(3.6, abs=1e-12)

    def test_zero_fixed_point(self):
        state = MomentumState(0.9, {"w": np.zeros(3)})
        for _ in range(5):
            state = update_momentum(state, {"w": np.zeros(3)})
        assert not state.ema["w"].any()

    def test_does_not_mutate(self):
        state = MomentumState(0.5, {"w": np.array([2.0])})
        update_momentum(state, {"w": np.array([0.0])})
        assert state.ema["w"].tolist() == [2.0]

    @pytest.mark.parametrize("beta", [0.0, 1.0, -0.2])
    def test_bad_beta(self, beta):
        with pytest.raises(ValueError):
            MomentumState(beta)

    @given(
        beta=st.floats(0.01, 0.99),
        deltas=st.lists(st.floats(-10, 10), min_size=1, max_size=20),
    )
    @settings(max_examples=100, deadline=None)
    def test_ema_bounded_by_history(self, beta, deltas):
        state = MomentumState(beta)
        for d in deltas:
            state = update_momentum(state, {"w": np.array([d])})
        mags = np.abs(deltas)
        assert mags.min() - 1e-9 <= state.ema["w"][0] <= mags.max() + 1e-9


@pytest.mark.parametrize("method", [Method.GRAD_MOMENTUM, Method.WEIGHT_TIMES_GRAD])
def test_gradient_method_needs_momentum(method, rng):
    store = make_store({"w": (3, 3)}, rng)
    with pytest.raises(ValueError, match="momentum"):
        compute_scores(store, Pattern.WHOLE_COLUMN, method)
    with pytest.raises(ValueError):
        compute_scores(store, Pattern.WHOLE_COLUMN, method, momentum=MomentumState())


def test_gradient_methods_use_ema():
    store = make_store({"w": (2, 2)})
    store["w"] = np.array([[1.0, 2.0], [1.0, 2.0]])
    mom = MomentumState(0.9, {"w": np.array([[3.0, 0.5], [1.0, 0.5]])})
    gm = compute_scores(store, Pattern.WHOLE_COLUMN, Method.GRAD_MOMENTUM, Norm.L1, mom)["w"]
    wg = compute_scores(store, Pattern.WHOLE_COLUMN, Method.WEIGHT_TIMES_GRAD, Norm.L1, mom)["w"]
    assert gm.tolist() == [4.0, 1.0]
    assert wg.tolist() == [4.0, 2.0]


def test_csv_export(tmp_path):
    table = ImportanceTable({"w": np.array([0.5, 2.0])}, Method.WEIGHT, Norm.L2, Pattern.WHOLE_ROW, 30)
    path = tmp_path / "scores.csv"
    table.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["var", "slice", "score", "method", "norm", "round"]
    assert rows[1:] == [["w", "0", "0.5", "weight", "l2", "30"], ["w", "1", "2.0", "weight", "l2", "30"]]
