import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedprune.var_store import (
    Role,
    VarSpec,
    VarStore,
    canonical_2d_view,
    from_2d,
    load_checkpoint,
    save_checkpoint,
    to_2d,
)


class TestRegister:
    def test_param_count(self):
        store = VarStore()
        spec = store.register_var("w1", [4, 8], Role.PRUNABLE, "A")
        assert spec.param_count == 32
        assert spec.role is Role.PRUNABLE

    def test_vector_forced_excluded(self):
        store = VarStore()
        spec = store.register_var("bias", [8], Role.PRUNABLE)
        assert spec.role is Role.EXCLUDED

    def test_valid_pair(self):
        store = VarStore()
        store.register_var("w1", [4, 8], Role.PRUNABLE, "A")
        store.register_var("w2", [8, 4], Role.PRUNABLE, "A")
        (pair,) = store.pairs()
        assert (pair.upstream, pair.downstream) == ("w1", "w2")

    def test_mismatched_pair_rejected(self):
        store = VarStore()
        store.register_var("w1", [4, 8], Role.PRUNABLE, "A")
        with pytest.raises(ValueError, match="columns"):
            store.register_var("w2", [4, 4], Role.PRUNABLE, "A")

    def test_third_member_rejected(self):
        store = VarStore()
        store.register_var("w1", [4, 4], Role.PRUNABLE, "A")
        store.register_var("w2", [4, 4], Role.PRUNABLE, "A")
        with pytest.raises(ValueError, match="already links"):
            store.register_var("w3", [4, 4], Role.PRUNABLE, "A")

    def test_excluded_cannot_pair(self):
        store = VarStore()
        with pytest.raises(ValueError):
            store.register_var("w", [4, 4], Role.EXCLUDED, "A")

    @pytest.mark.parametrize("shape", [[0, 3], [], [2, -1]])
    def test_bad_shape(self, shape):
        with pytest.raises(ValueError):
            VarStore().register_var("w", shape)

    def test_duplicate_name(self):
        store = VarStore()
        store.register_var("w", [2, 2])
        with pytest.raises(ValueError, match="duplicate"):
            store.register_var("w", [2, 2])

    def test_order_is_registration_order(self):
        store = VarStore()
        for name in ["z", "a", "m", "b"]:
            store.register_var(name, [2, 2])
        assert list(store) == ["z", "a", "m", "b"]
        assert list(store) == list(store)

    def test_non_finite_rejected(self):
        store = VarStore()
        store.register_var("w", [2, 2])
        with pytest.raises(ValueError, match="non-finite"):
            store["w"] = np.array([[1.0, np.nan], [0.0, 0.0]])


class TestCanonicalView:
    @pytest.mark.parametrize(
        "shape, view",
        [((4, 8), (4, 8)), ((2, 3, 5), (6, 5)), ((2, 2, 2, 7), (8, 7))],
    )
    def test_examples(self, shape, view):
        assert canonical_2d_view(VarSpec("v", shape, Role.PRUNABLE)) == view

    def test_rank_one_rejected(self):
        with pytest.raises(ValueError):
            canonical_2d_view(VarSpec("b", (3,), Role.EXCLUDED))

    @given(st.lists(st.integers(1, 5), min_size=2, max_size=5))
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_exact(self, shape):
        spec = VarSpec("v", tuple(shape), Role.PRUNABLE)
        buf = np.random.default_rng(len(shape)).normal(size=shape)
        view = to_2d(spec, buf)
        assert view.shape[0] * view.shape[1] == spec.param_count
        back = from_2d(spec, view)
        assert np.array_equal(back, buf)
        # pure relabelling: row-major order unchanged
        assert np.array_equal(view.reshape(-1), buf.reshape(-1))


def test_checkpoint_roundtrip(tmp_path, rng):
    store = VarStore()
    store.register_var("w1", [3, 4], Role.PRUNABLE, "A", rng.normal(size=(3, 4)))
    store.register_var("b1", [4], value=rng.normal(size=4))
    store.register_var("w2", [4, 2], Role.PRUNABLE, "A", rng.normal(size=(4, 2)))
    store.register_var("k", [2, 2, 3], Role.EXCLUDED, value=rng.normal(size=(2, 2, 3)))
    store.step = 17
    path = tmp_path / "ck.fpck"
    save_checkpoint(store, path)
    data = path.read_bytes()
    assert data[:4] == b"FPCK"
    back = load_checkpoint(path)
    assert list(back) == list(store)
    assert back.step == 17
    assert back.pairs() == store.pairs()
    for name in store:
        assert back.spec(name) == store.spec(name)
        np.testing.assert_array_equal(back[name], store[name].astype(np.float32))
    # body is exactly the float32 buffers in order
    header_len = int.from_bytes(data[8:12], "little")
    assert len(data) - 12 - header_len == 4 * store.param_count
