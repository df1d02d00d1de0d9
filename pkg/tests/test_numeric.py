import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from threadsel import numeric as nm
from threadsel.numeric import Adamax, Parameter, ShapeError, Tensor


def param(name, shape, rng, scale=1.0):
    return Parameter(name, rng.normal(0.0, scale, size=shape))


def check(closure, *params, tol=1e-6):
    r = nm.grad_check(closure, list(params), eps=1e-5, tolerance=tol)
    assert r.passed, (r.max_rel_error, r.worst)
    return r


class TestForwardValues:
    def test_softmax_uniform(self):
        assert nm.softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]

    def test_dot(self):
        assert nm.dot(Tensor([1.0, 2.0]), Tensor([3.0, 4.0])).item() == 11.0

    def test_dot_gradient(self):
        x = Parameter("x", [1.0, 2.0])
        nm.dot(x, Tensor([3.0, 4.0])).backward()
        assert x.grad.tolist() == [3.0, 4.0]

    def test_gelu_uses_erf(self):
        x = np.array([-1.0, 0.0, 0.5, 2.0])
        want = [0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x]
        np.testing.assert_allclose(nm.gelu(Tensor(x)).data, want, rtol=1e-15, atol=1e-15)

    def test_mean_and_sum(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert nm.mean(t, axis=1).data.tolist() == [1.0, 4.0]
        assert nm.sum(t).item() == 15.0

    def test_masked_softmax(self):
        y = nm.softmax(Tensor([[1.0, 5.0, 2.0]]), mask=np.array([[True, False, True]])).data
        assert y[0, 1] == 0.0
        np.testing.assert_allclose(y[0, [0, 2]], [1 / (1 + math.e), math.e / (1 + math.e)])

    def test_embedding(self):
        table = Tensor(np.arange(6.0).reshape(3, 2))
        assert nm.embedding(table, np.array([2, 0])).data.tolist() == [[4.0, 5.0], [0.0, 1.0]]

    def test_concat_transpose(self):
        a, b = Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2)))
        assert nm.concat([a, b]).shape == (2, 2)
        assert nm.transpose(Tensor(np.zeros((2, 3, 4))), (2, 0, 1)).shape == (4, 2, 3)


class TestShapeErrors:
    @pytest.mark.parametrize("op,a,b", [
        (nm.matmul, (2, 3), (4, 5)),
        (nm.add, (2, 3), (4, 3)),
        (nm.dot, (3,), (4,)),
        (nm.mul, (2, 2), (3, 3)),
    ])
    def test_names_op_and_shapes(self, op, a, b):
        with pytest.raises(ShapeError) as exc:
            op(Tensor(np.zeros(a)), Tensor(np.zeros(b)))
        msg = str(exc.value)
        assert op.__name__ in msg and str(a) in msg and str(b) in msg

    def test_concat_mismatch(self):
        with pytest.raises(ShapeError, match="concat"):
            nm.concat([Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3)))])

    def test_embedding_out_of_range(self):
        with pytest.raises(ShapeError, match="embedding"):
            nm.embedding(Tensor(np.zeros((3, 2))), np.array([3]))

    def test_backward_needs_scalar(self):
        with pytest.raises(ShapeError):
            Parameter("p", np.zeros(3)).backward()


class TestPrimitiveGradients:
    """Each primitive passes a finite-difference check in float64."""

    rng = np.random.default_rng(0)

    def test_matmul_2d_and_batched(self):
        a, b = param("a", (3, 4), self.rng), param("b", (4, 2), self.rng)
        check(lambda: nm.sum(nm.gelu(nm.matmul(a, b))), a, b)
        c, d = param("c", (2, 3, 3, 4), self.rng), param("d", (2, 3, 4, 5), self.rng)
        check(lambda: nm.sum(nm.gelu(nm.matmul(c, d))), c, d)

    def test_matmul_folded(self):
        a, w = param("a", (2, 3, 4), self.rng), param("w", (4, 5), self.rng)
        check(lambda: nm.sum(nm.gelu(a @ w)), a, w)

    def test_add_broadcast(self):
        a, b = param("a", (3, 4), self.rng), param("b", (4,), self.rng)
        check(lambda: nm.sum(nm.gelu(a + b)), a, b)

    def test_scale_mul_neg(self):
        a, b = param("a", (3,), self.rng), param("b", (3,), self.rng)
        check(lambda: nm.sum(nm.gelu(nm.scale(a, 1.7) * b - a)), a, b)

    def test_softmax(self):
        a = param("a", (3, 5), self.rng)
        w = self.rng.normal(size=(3, 5))
        check(lambda: nm.sum(nm.softmax(a) * Tensor(w)), a)
        check(lambda: nm.sum(nm.softmax(a, axis=0) * Tensor(w)), a)

    def test_masked_softmax(self):
        a = param("a", (2, 4), self.rng)
        w = self.rng.normal(size=(2, 4))
        mask = np.array([[True, True, False, True], [False, True, True, True]])
        r = check(lambda: nm.sum(nm.softmax(a, mask=mask) * Tensor(w)), a)
        assert r.n_checked == 8

    def test_log_softmax(self):
        a = param("a", (3, 4), self.rng)
        w = self.rng.normal(size=(3, 4))
        check(lambda: nm.sum(nm.log_softmax(a) * Tensor(w)), a)

    def test_layer_norm(self):
        a = param("a", (3, 6), self.rng)
        w = self.rng.normal(size=(3, 6))
        check(lambda: nm.sum(nm.layer_norm(a) * Tensor(w)), a)

    def test_gelu(self):
        a = param("a", (7,), self.rng, 2.0)
        check(lambda: nm.sum(nm.gelu(a)), a)

    def test_embedding_repeated_ids(self):
        table = param("t", (5, 3), self.rng)
        ids = np.array([[1, 1, 4], [0, 1, 2]])
        w = self.rng.normal(size=(2, 3, 3))
        check(lambda: nm.sum(nm.embedding(table, ids) * Tensor(w)), table)

    def test_mean_concat_transpose_reshape(self):
        a, b = param("a", (2, 3), self.rng), param("b", (2, 3), self.rng)
        w = self.rng.normal(size=(3, 4))
        check(lambda: nm.sum(nm.gelu(nm.reshape(nm.transpose(nm.concat([a, b], axis=0)), (4, 3))) @ Tensor(w)), a, b)
        check(lambda: nm.sum(nm.gelu(nm.mean(a, axis=0))), a)

    def test_dot_and_indexing(self):
        a, b = param("a", (4,), self.rng), param("b", (4,), self.rng)
        check(lambda: nm.gelu(nm.dot(a, b)), a, b)
        m = param("m", (3, 4), self.rng)
        check(lambda: nm.sum(nm.gelu(m[1]) + nm.gelu(m[np.array([0, 0, 2])])), m)

    def test_log(self):
        a = Parameter("a", self.rng.uniform(0.5, 2.0, size=4))
        check(lambda: nm.sum(nm.log(a)), a)


class TestInvariants:
    @settings(max_examples=100)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
                  elements=st.floats(-50, 50)))
    def test_softmax_rows_sum_to_one(self, x):
        y = nm.softmax(Tensor(x)).data
        assert np.all(y > 0)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-9)

    @settings(max_examples=100)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 16)),
                  elements=st.floats(-100, 100)))
    def test_layer_norm_moments(self, x):
        # rows with almost no spread are dominated by eps; skip them
        if np.any(x.std(axis=-1) < 1e-3):
            return
        y = nm.layer_norm(Tensor(x)).data
        np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-7)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-5)

    def test_no_grad_builds_no_graph(self):
        p = Parameter("p", np.ones(2))
        with nm.no_grad():
            out = nm.sum(p * p)
        assert not out.requires_grad

    def test_gradients_accumulate_until_zeroed(self):
        p = Parameter("p", np.array([1.0, 2.0]))
        for _ in range(2):
            nm.sum(p * p).backward()
        assert p.grad.tolist() == [4.0, 8.0]
        p.zero_grad()
        assert not p.grad.any()


class TestGradCheck:
    def test_quadratic(self):
        theta = Parameter("theta", [1.0, 2.0])
        r = nm.grad_check(lambda: nm.scale(nm.dot(theta, theta), 0.5), [theta], eps=1e-4)
        assert r.max_rel_error < 1e-8
        assert r.n_checked == 2

    def test_detects_corrupted_gradient(self):
        theta = Parameter("theta", [1.0, 2.0])

        def broken(x):
            out = nm.scale(nm.dot(x, x), 0.5)

            def backward(g):
                x._accumulate(g * x.data + 0.1)

            return nm._node(out.data, (x,), backward)

        r = nm.grad_check(lambda: broken(theta), [theta], eps=1e-4)
        assert r.max_rel_error > 1e-2
        assert not r.passed

    def test_non_finite_loss(self):
        theta = Parameter("theta", [-1.0])
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            nm.grad_check(lambda: nm.sum(nm.log(theta)), [theta])

    def test_sampling_count(self):
        p = Parameter("p", np.random.default_rng(1).normal(size=(30, 20)))
        r = nm.grad_check(lambda: nm.sum(nm.gelu(p)), {"p": p}, sample=200)
        assert r.n_checked == 200 and r.passed

    def test_eps_positive(self):
        with pytest.raises(ValueError):
            nm.grad_check(lambda: Tensor(0.0), [], eps=0.0)

    def test_relative_error_floor(self):
        assert nm.relative_error(0.0, 0.0) == 0.0
        assert nm.relative_error(1.0, 3.0) == 0.5


class TestAdamax:
    def test_single_step_by_hand(self):
        p = Parameter("p", [0.0])
        p.grad = np.array([1.0])
        opt = Adamax(lr=0.1)
        opt.step({"p": p})
        assert opt.t == 1
        assert opt.m["p"][0] == pytest.approx(0.1, abs=1e-15)
        assert opt.u["p"][0] == 1.0
        assert p.data[0] == pytest.approx(-0.1, abs=1e-8)

    def test_zero_gradient_is_no_op(self):
        p = Parameter("p", [0.3, -0.2])
        p.grad = np.zeros(2)
        Adamax(lr=0.1).step({"p": p})
        assert p.data.tolist() == [0.3, -0.2]

    def test_moves_against_gradient_sign(self):
        p = Parameter("p", [0.0, 0.0])
        opt = Adamax(lr=0.01)
        trail = []
        for _ in range(2):
            p.grad = np.array([2.0, -0.5])
            opt.step({"p": p})
            trail.append(p.data.copy())
        assert trail[0][0] < 0 < trail[0][1]
        assert trail[1][0] < trail[0][0] and trail[1][1] > trail[0][1]

    def test_u_non_negative_and_deterministic(self):
        rng = np.random.default_rng(5)
        grads = rng.normal(size=(5, 4))
        results = []
        for _ in range(2):
            p = Parameter("p", np.zeros(4))
            opt = Adamax(lr=0.05)
            for g in grads:
                p.grad = g.copy()
                opt.step({"p": p})
                assert np.all(opt.u["p"] >= 0)
            results.append(p.data.copy())
        assert np.array_equal(results[0], results[1])

    def test_defaults(self):
        opt = Adamax()
        assert (opt.lr, opt.beta1, opt.beta2, opt.eps) == (5e-5, 0.9, 0.999, 1e-8)
