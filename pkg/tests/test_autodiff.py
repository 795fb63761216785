import numpy as np
import pytest

from multifbsde.autodiff import EAGER, Tape, finite_difference_gradient
from multifbsde.errors import GraphConstructionError, ParameterDomainError


class TestRecord:
    def test_inner_product_value(self):
        tape = Tape()
        v = tape.constant([3.0, 4.0])
        out = tape.record("inner-product", (v, v))
        assert tape.value(out) == 25.0

    def test_relu_value(self):
        tape = Tape()
        c = tape.constant([-1.0, 2.0])
        out = tape.record("relu", (c,))
        assert np.array_equal(tape.value(out), [0.0, 2.0])

    def test_matvec_dimension_mismatch(self):
        tape = Tape()
        a = tape.constant(np.ones((2, 3)))
        x = tape.constant(np.ones(2))
        with pytest.raises(GraphConstructionError):
            tape.record("matrix-vector-product", (a, x))

    def test_unknown_op_rejected(self):
        tape = Tape()
        c = tape.constant(1.0)
        with pytest.raises(GraphConstructionError):
            tape.record("division", (c, c))

    def test_parent_out_of_range(self):
        tape = Tape()
        c = tape.constant(1.0)
        with pytest.raises(GraphConstructionError):
            tape.record("relu", (c + 5,))

    def test_affine_bias_shape_checked(self):
        tape = Tape()
        w = tape.constant(np.ones((3, 2)))
        b = tape.constant(np.ones(2))
        x = tape.constant(np.ones(2))
        with pytest.raises(GraphConstructionError):
            tape.affine(w, b, x)


class TestBackward:
    def test_square_gradient(self):
        tape = Tape()
        x = tape.parameter(3.0)
        loss = tape.square(x)
        grads = tape.backward(loss)
        assert grads[x] == 6.0

    def test_inactive_relu_gradient(self):
        tape = Tape()
        x = tape.parameter(-2.0)
        grads = tape.backward(tape.relu(x))
        assert grads[x] == 0.0

    def test_relu_and_abs_adjoint_at_zero(self):
        tape = Tape()
        x = tape.parameter(0.0)
        assert tape.backward(tape.relu(x))[x] == 0.0
        tape2 = Tape()
        x2 = tape2.parameter(0.0)
        assert tape2.backward(tape2.abs(x2))[x2] == 0.0

    def test_inner_product_bilinearity(self):
        tape = Tape()
        a = tape.parameter([1.0, 2.0])
        b = tape.parameter([5.0, -1.0])
        grads = tape.backward(tape.inner(a, b))
        assert np.array_equal(grads[a], [5.0, -1.0])
        assert np.array_equal(grads[b], [1.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        x = tape.parameter([1.0, 2.0])
        with pytest.raises(GraphConstructionError):
            tape.backward(tape.square(x))

    def test_unused_parameter_gets_zero_gradient(self):
        tape = Tape()
        used = tape.parameter(2.0)
        unused = tape.parameter(np.ones(3))
        grads = tape.backward(tape.square(used))
        assert np.array_equal(grads[unused], np.zeros(3))
        assert set(grads) == {used, unused}

    def test_adjoints_finite_after_backward(self):
        tape = Tape(retain_adjoints=True)
        x = tape.parameter([0.5, -0.25])
        h = tape.relu(tape.affine(tape.constant(np.eye(2)), tape.constant(np.zeros(2)), x))
        tape.backward(tape.scale(tape.sum(tape.square(h)), 0.5))
        for node in tape.nodes:
            assert node.adjoint is not None
            assert np.isfinite(node.adjoint).all()

    def test_linearity_of_gradients(self):
        # grad(a*L1 + L2) == a*grad(L1) + grad(L2), all on one shared tape
        rng = np.random.default_rng(0)
        tape = Tape()
        x = tape.parameter(rng.standard_normal(4))
        l1 = tape.sum(tape.square(x))
        l2 = tape.sum(tape.mul(x, tape.sin(x)))
        combined = tape.add(tape.scale(l1, 2.5), l2)
        g1 = tape.backward(l1)[x]
        g2 = tape.backward(l2)[x]
        gc = tape.backward(combined)[x]
        np.testing.assert_array_equal(gc, 2.5 * g1 + g2)

    def test_deterministic_gradients(self):
        def build():
            tape = Tape()
            x = tape.parameter([0.3, 0.7, -0.2])
            w = tape.constant(np.arange(9.0).reshape(3, 3) / 10.0)
            y = tape.relu(tape.matvec(w, x))
            return tape.backward(tape.sum(tape.square(y)))[x]

        assert np.array_equal(build(), build())


class TestPrimitiveGradients:
    """Every primitive against central differences on kink-free inputs."""

    @pytest.mark.parametrize("op,nin", [
        ("add", 2), ("subtract", 2), ("elementwise-multiply", 2),
        ("relu", 1), ("absolute-value", 1), ("square", 1),
        ("sin", 1), ("cos", 1), ("exp", 1),
    ])
    def test_elementwise_ops(self, op, nin):
        rng = np.random.default_rng(hash(op) % 2**32)
        vals = [rng.uniform(0.1, 1.0, size=4) * rng.choice([-1.0, 1.0], size=4)
                for _ in range(nin)]

        def f(theta):
            parts = np.split(theta, nin)
            tape = Tape()
            ids = [tape.parameter(p) for p in parts]
            out = tape.record(op, tuple(ids))
            return float(tape.value(tape.sum(tape.square(out))))

        theta = np.concatenate(vals)
        tape = Tape()
        ids = [tape.parameter(p) for p in vals]
        out = tape.record(op, tuple(ids))
        grads = tape.backward(tape.sum(tape.square(out)))
        got = np.concatenate([grads[i] for i in ids])
        want = finite_difference_gradient(f, theta, 1e-6)
        assert np.linalg.norm(got - want) <= 1e-5 * max(1.0, np.linalg.norm(want))

    @pytest.mark.parametrize("batched", [False, True])
    def test_linear_algebra_ops(self, batched):
        rng = np.random.default_rng(7)
        w = rng.standard_normal((3, 2))
        b = rng.standard_normal(3)
        x = rng.standard_normal((5, 2)) if batched else rng.standard_normal(2)
        sizes = [w.size, b.size, x.size]

        def f(theta):
            wv, bv, xv = np.split(theta, np.cumsum(sizes)[:-1])
            tape = Tape()
            out = tape.affine(tape.parameter(wv.reshape(3, 2)),
                              tape.parameter(bv), tape.parameter(xv.reshape(x.shape)))
            mv = tape.matvec(tape.constant(rng2), out)
            return float(tape.value(tape.sum(tape.square(mv))))

        rng2 = np.random.default_rng(8).standard_normal((2, 3))
        theta = np.concatenate([w.ravel(), b, x.ravel()])
        tape = Tape()
        wid, bid, xid = tape.parameter(w), tape.parameter(b), tape.parameter(x)
        out = tape.affine(wid, bid, xid)
        mv = tape.matvec(tape.constant(rng2), out)
        grads = tape.backward(tape.sum(tape.square(mv)))
        got = np.concatenate([grads[wid].ravel(), grads[bid], grads[xid].ravel()])
        want = finite_difference_gradient(f, theta, 1e-6)
        assert np.linalg.norm(got - want) <= 1e-5 * np.linalg.norm(want)


class TestFiniteDifferenceGradient:
    def test_quadratic(self):
        got = finite_difference_gradient(lambda t: t[0] ** 2, np.array([3.0]), 1e-4)
        assert abs(got[0] - 6.0) <= 1e-7

    def test_bilinear(self):
        got = finite_difference_gradient(lambda t: t[0] * t[1], np.array([2.0, 5.0]), 1e-5)
        np.testing.assert_allclose(got, [5.0, 2.0], atol=1e-6)

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ParameterDomainError):
            finite_difference_gradient(lambda t: t[0], np.array([1.0]), 0.0)

    def test_nonfinite_values_raise(self):
        with pytest.raises(FloatingPointError):
            finite_difference_gradient(lambda t: float("nan"), np.array([1.0]), 1e-4)


class TestEagerTwin:
    def test_matches_tape_bitwise(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal((4, 2))
        b = rng.standard_normal(4)
        x = rng.standard_normal((6, 2))

        tape = Tape()
        out = tape.scale(tape.sum(tape.square(tape.relu(
            tape.affine(tape.constant(w), tape.constant(b), tape.constant(x))))), 0.25)
        eager = EAGER.scale(EAGER.sum(EAGER.square(EAGER.relu(EAGER.affine(w, b, x)))), 0.25)
        assert float(tape.value(out)) == float(eager)
