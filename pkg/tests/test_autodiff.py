import numpy as np
import pytest

from dfdrnn import autodiff as ad
from dfdrnn import kernels
from dfdrnn._np_kernels import attention_backward as np_backward
from dfdrnn._np_kernels import attention_forward as np_forward

from conftest import random_csr

FD_TOL = 1e-4
FD_EPS = 1e-5


def rand(rng, rows, cols, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=(rows, cols))


class TestForwardValues:
    def test_leaky_relu_definition(self):
        out = ad.leaky_relu(ad.constant([[-1.0, 2.0]]), slope=0.01)
        assert np.allclose(out.value, [[-0.01, 2.0]])

    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(ad.constant([[0.0]])).value[0, 0] == 0.5

    def test_sigmoid_is_stable_at_extremes(self):
        out = ad.sigmoid(ad.constant([[-800.0, 800.0]]))
        assert np.all(np.isfinite(out.value))

    def test_masked_softmax_equal_logits(self):
        out = ad.masked_row_softmax(
            ad.constant([[5.0, 5.0, 5.0]]), np.array([[True, True, True]])
        )
        assert np.allclose(out.value, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-12)

    def test_masked_softmax_rows_sum_to_one_and_zero_elsewhere(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            scores = ad.constant(rand(rng, 6, 8, -30, 30))
            mask = rng.random((6, 8)) < 0.6
            out = ad.masked_row_softmax(scores, mask).value
            assert np.all(out[~mask] == 0.0)
            sums = out.sum(axis=1)
            nonempty = mask.any(axis=1)
            assert np.allclose(sums[nonempty], 1.0, atol=1e-9)
            assert np.all(sums[~nonempty] == 0.0)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))
        with pytest.raises(ValueError):
            ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 2))))

    def test_dropout_scales_kept_entries(self):
        rng = np.random.default_rng(0)
        x = ad.constant(np.ones((50, 40)))
        out = ad.dropout(x, 0.25, rng).value
        kept = out != 0.0
        assert np.allclose(out[kept], 1.0 / 0.75)
        assert abs(kept.mean() - 0.75) < 0.05

    def test_dropout_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            ad.dropout(ad.constant(np.ones((2, 2))), 1.0, np.random.default_rng(0))


class TestBackwardBasics:
    def test_quadratic_gradient_is_exact(self):
        w = ad.parameter(np.random.default_rng(0).normal(size=(4, 5)))
        loss = ad.sum_all(ad.hadamard(w, w))
        grads = ad.backward(loss)
        assert np.array_equal(grads[w], 2.0 * w.value)

    def test_sigmoid_grad_at_zero(self):
        w = ad.parameter([[0.0]])
        loss = ad.sigmoid(w)
        ad.backward(loss)
        assert w.grad[0, 0] == pytest.approx(0.25, abs=1e-15)

    def test_loss_must_be_scalar(self):
        w = ad.parameter(np.ones((2, 2)))
        with pytest.raises(ValueError):
            ad.backward(ad.hadamard(w, w))

    def test_backward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(1)
        w = ad.parameter(rand(rng, 6, 6))
        v = ad.parameter(rand(rng, 6, 6))

        def build():
            h = ad.leaky_relu(ad.matmul(w, v))
            return ad.sum_all(ad.hadamard(h, h))

        ad.backward(build())
        g1 = (w.grad.copy(), v.grad.copy())
        ad.backward(build())
        g2 = (w.grad.copy(), v.grad.copy())
        assert np.array_equal(g1[0], g2[0]) and np.array_equal(g1[1], g2[1])

    def test_tape_orders_parents_before_children(self):
        w = ad.parameter(np.ones((2, 2)))
        a = ad.matmul(w, w)
        b = ad.add(a, w)
        loss = ad.sum_all(ad.hadamard(b, a))
        tape = ad.build_tape(loss)
        pos = {id(node): i for i, node in enumerate(tape)}
        for node in tape:
            for parent in node.parents:
                assert pos[id(parent)] < pos[id(node)]


def frozen_functional(rng, shape):
    """Fixed linear functional <., C> with C drawn once (an FD probe must
    differentiate one function, not a freshly randomized one per call)."""
    c = ad.constant(rng.normal(size=shape))

    def apply(t):
        return ad.sum_all(ad.hadamard(t, c))

    return apply


class TestFiniteDifferences:
    """Every primitive's vjp against central differences on random inputs."""

    def test_linear_function_is_exact(self):
        rng = np.random.default_rng(0)
        w = ad.parameter(rand(rng, 3, 4))
        c = ad.constant(rand(rng, 3, 4))
        err = ad.finite_diff_check(lambda _: ad.sum_all(ad.hadamard(w, c)), [w], eps=FD_EPS)
        assert err < 1e-9

    @pytest.mark.parametrize("case", [
        "matmul", "add", "add_bias_row", "scale", "scalar_mul", "transpose",
        "leaky_relu", "sigmoid", "concat_cols", "slice_cols", "slice_rows",
        "stack_rows", "hadamard", "log", "neg", "clamp", "weighted_sum",
    ])
    def test_primitive_gradients(self, case):
        rng = np.random.default_rng(hash(case) % 2**32)
        a = ad.parameter(rand(rng, 4, 6))
        b = ad.parameter(rand(rng, 4, 6))
        if case == "matmul":
            w = ad.parameter(rand(rng, 6, 3))
            probe = frozen_functional(rng, (4, 3))
            f = lambda _: probe(ad.matmul(a, w))
            params = [a, w]
        elif case == "weighted_sum":
            w = ad.parameter(rand(rng, 4, 4))
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.weighted_sum(w, a))
            params = [w, a]
        elif case == "add":
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.add(a, b))
            params = [a, b]
        elif case == "add_bias_row":
            bias = ad.parameter(rand(rng, 1, 6))
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.add_bias_row(a, bias))
            params = [a, bias]
        elif case == "scale":
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.scale(a, -1.7))
            params = [a]
        elif case == "scalar_mul":
            s = ad.parameter([[0.8]])
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.scalar_mul(s, a))
            params = [s, a]
        elif case == "transpose":
            probe = frozen_functional(rng, (6, 4))
            f = lambda _: probe(ad.transpose(a))
            params = [a]
        elif case == "leaky_relu":
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.leaky_relu(a, 0.01))
            params = [a]
        elif case == "sigmoid":
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.sigmoid(a))
            params = [a]
        elif case == "concat_cols":
            probe = frozen_functional(rng, (4, 12))
            f = lambda _: probe(ad.concat_cols(a, b))
            params = [a, b]
        elif case == "slice_cols":
            probe = frozen_functional(rng, (4, 3))
            f = lambda _: probe(ad.slice_cols(a, 1, 4))
            params = [a]
        elif case == "slice_rows":
            probe = frozen_functional(rng, (2, 6))
            f = lambda _: probe(ad.slice_rows(a, 1, 3))
            params = [a]
        elif case == "stack_rows":
            probe = frozen_functional(rng, (8, 6))
            f = lambda _: probe(ad.stack_rows(a, b))
            params = [a, b]
        elif case == "hadamard":
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.hadamard(a, b))
            params = [a, b]
        elif case == "log":
            pos = ad.parameter(rand(rng, 4, 6, 0.5, 3.0))
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.log(pos))
            params = [pos]
        elif case == "neg":
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.neg(a))
            params = [a]
        elif case == "clamp":
            probe = frozen_functional(rng, (4, 6))
            f = lambda _: probe(ad.clamp(a, -1.0, 1.0))
            params = [a]
        assert ad.finite_diff_check(f, params, eps=FD_EPS) < FD_TOL

    def test_masked_softmax_gradients(self):
        rng = np.random.default_rng(42)
        scores = ad.parameter(rand(rng, 5, 7))
        mask = rng.random((5, 7)) < 0.6
        mask[1, :] = False  # an all-masked row must not break the vjp
        probe = frozen_functional(rng, (5, 7))
        f = lambda _: probe(ad.masked_row_softmax(scores, mask))
        assert ad.finite_diff_check(f, [scores], eps=FD_EPS) < FD_TOL

    def test_neighbor_attention_gradients(self):
        rng = np.random.default_rng(11)
        graph = random_csr(8, rng)
        q = ad.parameter(rand(rng, 8, 8))
        k = ad.parameter(rand(rng, 8, 8))
        v = ad.parameter(rand(rng, 8, 8))
        probe = frozen_functional(rng, (8, 8))
        f = lambda _: probe(ad.neighbor_attention(q, k, v, graph, 2))
        assert ad.finite_diff_check(f, [q, k, v], eps=FD_EPS) < FD_TOL

    def test_three_layer_random_composition(self):
        rng = np.random.default_rng(9)
        x = ad.constant(rand(rng, 5, 6))
        w1 = ad.parameter(rand(rng, 6, 6) * 0.5)
        b1 = ad.parameter(rand(rng, 1, 6) * 0.5)
        w2 = ad.parameter(rand(rng, 6, 4) * 0.5)
        w3 = ad.parameter(rand(rng, 4, 3) * 0.5)

        def f(_):
            h = ad.leaky_relu(ad.add_bias_row(ad.matmul(x, w1), b1))
            h = ad.sigmoid(ad.matmul(h, w2))
            h = ad.matmul(h, w3)
            return ad.sum_all(ad.hadamard(h, h))

        assert ad.finite_diff_check(f, [w1, b1, w2, w3], eps=FD_EPS) < FD_TOL

    def test_dropout_with_fixed_mask(self):
        rng = np.random.default_rng(13)
        w = ad.parameter(rand(rng, 5, 5))
        c = ad.constant(rand(rng, 5, 5))

        def f(_):
            drop_rng = np.random.default_rng(77)  # same mask every call
            h = ad.dropout(ad.matmul(w, c), 0.4, drop_rng)
            return ad.sum_all(ad.hadamard(h, h))

        assert ad.finite_diff_check(f, [w], eps=FD_EPS) < FD_TOL


class TestNeighborAttention:
    def dense_reference(self, q, k, v, graph, heads):
        """Independent route: dense primitives only (scores via matmul and
        transpose, masked row softmax, per-head weighted sums)."""
        n, dim = q.value.shape
        head_dim = dim // heads
        mask = np.zeros((n, n), dtype=bool)
        for i in range(graph.n_nodes):
            mask[i, graph.indices[graph.indptr[i]:graph.indptr[i + 1]]] = True
        outs = []
        for h in range(heads):
            lo, hi = h * head_dim, (h + 1) * head_dim
            qh = ad.slice_cols(q, lo, hi)
            kh = ad.slice_cols(k, lo, hi)
            vh = ad.slice_cols(v, lo, hi)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(head_dim))
            beta = ad.masked_row_softmax(scores, mask)
            outs.append(ad.weighted_sum(beta, vh))
        return ad.concat_cols(*outs)

    @pytest.mark.parametrize("backend", ["active", "numpy"])
    def test_matches_dense_primitive_route(self, backend):
        rng = np.random.default_rng(3)
        for trial in range(10):
            n = int(rng.integers(4, 12))
            heads = 2 if n % 2 == 0 else 1
            dim = 8
            graph = random_csr(n, rng)
            q = ad.parameter(rand(rng, n, dim))
            k = ad.parameter(rand(rng, n, dim))
            v = ad.parameter(rand(rng, n, dim))
            if backend == "numpy":
                out, _ = np_forward(q.value, k.value, v.value, graph, heads)
            else:
                out = ad.neighbor_attention(q, k, v, graph, heads).value
            ref = self.dense_reference(q, k, v, graph, heads).value
            assert np.allclose(out, ref, atol=1e-12)

    def test_backends_agree(self):
        rng = np.random.default_rng(5)
        n, dim, heads = 20, 8, 2
        graph = random_csr(n, rng)
        q, k, v = (np.ascontiguousarray(rand(rng, n, dim)) for _ in range(3))
        out_np, beta_np = np_forward(q, k, v, graph, heads)
        out_active, beta_active = kernels.attention_forward(q, k, v, graph, heads)
        assert np.allclose(out_np, out_active, atol=1e-12)
        assert np.allclose(beta_np, beta_active, atol=1e-12)
        g = np.ascontiguousarray(rand(rng, n, dim))
        grads_np = np_backward(q, k, v, graph, heads, beta_np, g)
        grads_active = kernels.attention_backward(q, k, v, graph, heads, beta_active, g)
        for a, b in zip(grads_np, grads_active):
            assert np.allclose(a, b, atol=1e-12)

    def test_empty_rows_yield_zero_rows(self):
        rng = np.random.default_rng(8)
        graph = random_csr(10, rng, max_degree=3)
        q = ad.constant(rand(rng, 10, 4))
        out = ad.neighbor_attention(q, q, q, graph, 2).value
        empty = np.diff(graph.indptr) == 0
        assert empty.any()  # the fixture produces some
        assert np.all(out[empty] == 0.0)

    def test_finite_inputs_never_produce_nan(self):
        rng = np.random.default_rng(21)
        graph = random_csr(12, rng)
        q = ad.constant(rand(rng, 12, 8, -50, 50))
        out = ad.neighbor_attention(q, q, q, graph, 2).value
        assert np.all(np.isfinite(out))
