import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from fedprune.schedule import (
    Allocation,
    LayerStat,
    Phase,
    Schedule,
    SparsityPlan,
    allocate_per_layer,
    current_sparsity,
    phase_of,
    quantize_slice_count,
)

from oracles import floor_count


@pytest.mark.parametrize("s, n, k", [(0.5, 8, 4), (0.3, 10, 3), (0.3, 7, 2), (0.29, 100, 29), (0.0, 5, 0), (1.0, 5, 5)])
def test_quantize_examples(s, n, k):
    assert quantize_slice_count(s, n) == k


@given(st.integers(0, 1000).map(lambda i: i / 1000), st.integers(0, 500))
@settings(max_examples=300, deadline=None)
def test_quantize_matches_exact_floor(s, n):
    assert quantize_slice_count(s, n) == floor_count(s, n)


def test_quantize_out_of_range():
    with pytest.raises(ValueError):
        quantize_slice_count(1.2, 4)


class TestSchedules:
    def test_constant(self):
        plan = SparsityPlan(0.5)
        assert current_sparsity(0, plan) == 0.5
        assert current_sparsity(199, plan) == 0.5

    def test_step_example(self):
        plan = SparsityPlan(0.5, delta_r=10, ramp_steps=5, schedule=Schedule.STEP)
        assert current_sparsity(25, plan) == pytest.approx(0.2)
        assert current_sparsity(0, plan) == 0.0

    def test_step_saturates(self):
        plan = SparsityPlan(0.5, delta_r=10, ramp_steps=5, schedule=Schedule.STEP)
        assert [current_sparsity(r, plan) for r in (50, 90, 199)] == [0.5, 0.5, 0.5]

    def test_step_nondecreasing(self):
        plan = SparsityPlan(0.6, delta_r=7, ramp_steps=4, schedule=Schedule.STEP)
        seq = [current_sparsity(r, plan) for r in range(plan.r_finetune)]
        assert all(a <= b for a, b in zip(seq, seq[1:]))

    def test_frozen_in_finetune(self):
        with pytest.raises(ValueError):
            current_sparsity(200, SparsityPlan(0.5))

    def test_phases(self):
        const = SparsityPlan(0.5)
        step = SparsityPlan(0.5, schedule=Schedule.STEP)
        assert phase_of(0, const) is Phase.REFINING
        assert phase_of(35, step) is Phase.PRUNING
        assert phase_of(50, step) is Phase.REFINING
        assert phase_of(200, const) is Phase.FINE_TUNING
        assert phase_of(300, const) is Phase.FINE_TUNING

    def test_phase_of_dense_plan(self):
        assert phase_of(0, SparsityPlan(0.0)) is Phase.REFINING

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(target_sparsity=1.0),
            dict(target_sparsity=-0.1),
            dict(r_finetune=100, r_end=50),
            dict(r_finetune=100, r_end=100),
            dict(delta_r=0),
            dict(schedule=Schedule.STEP, delta_r=50, ramp_steps=4),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SparsityPlan(**kwargs)

    def test_empty_run_allowed(self):
        SparsityPlan(0.5, r_end=0)


class TestAllocation:
    layers = [LayerStat("a", 2.0, 100), LayerStat("b", 1.0, 100)]

    def test_unified(self):
        assert allocate_per_layer(0.4, self.layers) == {"a": 0.6, "b": 0.6}

    def test_verbatim(self):
        d = allocate_per_layer(0.4, self.layers, Allocation.ADAPTIVE_VERBATIM)
        assert d["a"] == pytest.approx(0.4)
        assert d["b"] == pytest.approx(0.2)

    def test_budget(self):
        d = allocate_per_layer(0.4, self.layers, Allocation.ADAPTIVE_BUDGET, d_min=0.05)
        assert d["a"] == pytest.approx(0.8)
        assert d["b"] == pytest.approx(0.4)

    def test_budget_clips_at_one(self):
        # c*10 saturates, the remainder lands on the small layer
        layers = [LayerStat("a", 10.0, 100), LayerStat("b", 1.0, 100)]
        d = allocate_per_layer(0.3, layers, Allocation.ADAPTIVE_BUDGET, d_min=0.05)
        assert d["a"] == 1.0
        assert d["b"] == pytest.approx(0.4)

    def test_budget_floor(self):
        layers = [LayerStat("a", 1.0, 100), LayerStat("b", 0.0, 100)]
        d = allocate_per_layer(0.5, layers, Allocation.ADAPTIVE_BUDGET, d_min=0.1)
        assert d["b"] == 0.1
        assert d["a"] == pytest.approx(0.9)

    def test_all_zero_magnitudes(self):
        with pytest.raises(ValueError):
            allocate_per_layer(0.5, [LayerStat("a", 0.0, 10)], Allocation.ADAPTIVE_BUDGET)

    @given(
        s=st.floats(0.0, 0.9),
        mags=st.lists(st.floats(0.01, 10.0), min_size=1, max_size=6),
        counts=st.lists(st.integers(1, 1000), min_size=6, max_size=6),
        d_min=st.floats(0.0, 0.1),
    )
    @settings(max_examples=300, deadline=None)
    def test_budget_properties(self, s, mags, counts, d_min):
        assume(1 - s >= d_min)
        layers = [LayerStat(f"l{i}", m, counts[i]) for i, m in enumerate(mags)]
        d = allocate_per_layer(s, layers, Allocation.ADAPTIVE_BUDGET, d_min)
        dens = np.array([d[l.name] for l in layers])
        p = np.array([l.param_count for l in layers], float)
        assert np.all(dens >= d_min - 1e-12) and np.all(dens <= 1 + 1e-12)
        assert abs(p @ dens / p.sum() - (1 - s)) <= 1e-6
        order = np.argsort(mags, kind="stable")
        assert np.all(np.diff(dens[order]) >= -1e-9)
