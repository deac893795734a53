"""Reverse-mode differentiation: primitive correctness against central
finite differences, backward semantics, and checkpoint round-trips."""

import numpy as np
import pytest

from pavsgg import autodiff as ad
from pavsgg import checks
from pavsgg.autodiff import (
    ParamStore,
    ShapeError,
    Tape,
    Tensor,
    backward,
    finite_diff_check,
    load_checkpoint,
    save_checkpoint,
)


class TestPrimitiveValues:
    def test_matmul_hand_value(self):
        a = Tensor(np.arange(1, 7, dtype=float).reshape(2, 3))
        b = Tensor(np.arange(1, 7, dtype=float).reshape(3, 2))
        assert ad.matmul(a, b).data.tolist() == [[22.0, 28.0], [49.0, 64.0]]

    def test_softmax_of_zeros_is_uniform(self):
        out = ad.softmax(Tensor(np.zeros(3)), axis=-1)
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], atol=1e-15)

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(Tensor(np.zeros(()))).item() == 0.5

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = Tensor(rng.normal(0, 10, size=(rng.integers(1, 6), rng.integers(1, 8))))
            rows = ad.softmax(x, axis=-1).data.sum(axis=-1)
            np.testing.assert_allclose(rows, 1.0, atol=1e-12)

    def test_softmax_is_shift_stable(self):
        x = np.array([[1000.0, 1000.0, 999.0]])
        out = ad.softmax(Tensor(x), axis=-1).data
        assert np.all(np.isfinite(out))

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        p = Tensor(np.arange(6, dtype=float).reshape(2, 3), requires_grad=True)
        p.grad = np.zeros_like(p.data)
        with Tape():
            backward(ad.reduce_sum(p))
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_sigmoid_times_input_hand_gradient(self):
        w = Tensor(np.zeros(()), requires_grad=True)
        w.grad = np.zeros(())
        with Tape():
            backward(ad.mul(ad.sigmoid(w), 2.0))
        assert w.grad == pytest.approx(0.5, abs=1e-15)

    def test_non_scalar_loss_rejected(self):
        p = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            out = ad.scalar_mul(p, 2.0)
            with pytest.raises(ShapeError):
                backward(out)

    def test_unreached_parameters_get_zero(self):
        store = ParamStore()
        used = store.create("used", np.ones(2))
        unused = store.create("unused", np.ones(2))
        with Tape():
            backward(ad.reduce_sum(used))
        np.testing.assert_array_equal(used.grad, np.ones(2))
        np.testing.assert_array_equal(unused.grad, np.zeros(2))

    def test_gradient_accumulates_across_reuse(self):
        p = Tensor(np.array(3.0), requires_grad=True)
        p.grad = np.zeros(())
        with Tape():
            backward(ad.add(ad.mul(p, p), p))  # d/dp (p^2 + p) = 2p + 1
        assert p.grad == pytest.approx(7.0, abs=1e-12)

    def test_backward_is_deterministic(self):
        rng = np.random.default_rng(3)
        p = Tensor(rng.normal(size=(4, 4)), requires_grad=True)

        def run():
            p.grad = np.zeros_like(p.data)
            with Tape():
                h = ad.relu(ad.matmul(p, ad.transpose(p)))
                backward(ad.reduce_sum(ad.softmax(h, axis=-1)))
            return p.grad.tobytes()

        assert run() == run()


class TestFiniteDifferenceHarness:
    def test_quadratic_gradient(self):
        p = Tensor(np.array(3.0), requires_grad=True)
        err = finite_diff_check(lambda _: ad.mul(p, p), [p], h=1e-5)
        assert err < 1e-9
        assert p.grad == pytest.approx(6.0, abs=1e-9)

    def test_constant_function(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        err = finite_diff_check(lambda _: Tensor(np.zeros(())) + 0.0 * p, [p], h=1e-5)
        assert err == 0.0

    def test_every_primitive_gradchecks(self):
        results = checks.check_primitives()
        failing = {r.name: r.max_relative_error for r in results if not r.passed}
        assert not failing, f"primitive gradcheck failures: {failing}"

    def test_two_layer_mlp_gradchecks(self):
        result = checks.check_mlp()
        assert result.max_relative_error < 1e-5


class TestParamStoreAndCheckpoints:
    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.create("w", np.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            store.create("w", np.zeros(2))

    def test_checkpoint_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(11)
        store = ParamStore()
        store.create("w1", rng.normal(size=(3, 4)))
        store.create("b1", rng.normal(size=4))
        store.create("scalarish", rng.normal(size=(1,)))
        store.step = 17
        save_checkpoint(store, tmp_path / "ckpt")
        loaded = load_checkpoint(tmp_path / "ckpt")
        assert loaded.step == 17
        assert loaded.names() == store.names()
        for name in store.names():
            assert loaded[name].data.tobytes() == store[name].data.tobytes()

    def test_checkpoint_blob_size_validated(self, tmp_path):
        store = ParamStore()
        store.create("w", np.zeros((2, 2)))
        save_checkpoint(store, tmp_path / "ckpt")
        blob = (tmp_path / "ckpt.bin").read_bytes()
        (tmp_path / "ckpt.bin").write_bytes(blob + b"\x00" * 8)
        with pytest.raises(ValueError, match="blob size"):
            load_checkpoint(tmp_path / "ckpt")
