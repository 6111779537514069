"""Numeric-core tests: op values against hand-derived oracles, gradients
against central finite differences, and the structural invariants."""

import math

import numpy as np
import pytest

from fptune.exceptions import DimensionError, GradCheckError
from fptune import tensor as T
from fptune.tensor import ParamStore, Tensor, grad_check, seeded_rng


def scalarize(t, weights):
    """Fixed random weights turn any op output into a scalar for grad checks."""
    flat = t if t.ndim == 1 else None
    if t.ndim == 0:
        return t
    if t.ndim == 2:
        rows = [T.take_row(t, i) for i in range(t.shape[0])]
        flat = T.stack_vec([T.dot(r, Tensor(w)) for r, w in zip(rows, weights)])
        return T.sum_all(flat)
    return T.dot(t, Tensor(weights))


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(T.matmul(a, b).data, b.data)

    def test_selector_row(self):
        out = T.matmul(Tensor([[1.0, 0.0]]), Tensor([[2.0], [5.0]]))
        np.testing.assert_array_equal(out.data, [[2.0]])

    def test_hand_product(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))

    def test_associativity_on_random_chains(self):
        rng = seeded_rng(7, "assoc")
        for _ in range(20):
            a, b, c = (rng.standard_normal((3, 3)) for _ in range(3))
            left = (Tensor(a).data @ b) @ c
            right = a @ (Tensor(b).data @ c)
            np.testing.assert_allclose(left, right, rtol=1e-9)


class TestSoftmax:
    def test_uniform_on_equal_logits(self):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_stability_limit(self):
        out = T.softmax(Tensor([1000.0, 0.0])).data
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)

    def test_closed_form(self):
        out = T.softmax(Tensor([math.log(1.0), math.log(3.0)])).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-15)

    def test_sums_to_one_and_shift_invariant(self):
        rng = seeded_rng(3, "softmax")
        for _ in range(50):
            x = rng.standard_normal(6) * 10
            p = T.softmax(Tensor(x)).data
            assert abs(p.sum() - 1.0) <= 1e-12
            shifted = T.softmax(Tensor(x + 123.456)).data
            assert np.max(np.abs(p - shifted)) < 1e-12


class TestCrossEntropy:
    def test_uniform_logits_five_classes(self):
        loss = T.cross_entropy(Tensor(np.zeros(5)), 2)
        assert loss.item() == pytest.approx(math.log(5.0), abs=1e-12)

    def test_confident_correct(self):
        loss = T.cross_entropy(Tensor([10.0, -10.0]), 0)
        assert loss.item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-9)

    def test_single_class(self):
        assert T.cross_entropy(Tensor([0.0]), 0).item() == 0.0

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor([0.0, 1.0]), 2)

    def test_nonnegative(self):
        rng = seeded_rng(4, "ce")
        for _ in range(50):
            logits = rng.standard_normal(4) * 5
            assert T.cross_entropy(Tensor(logits), int(rng.integers(4))).item() >= 0.0


class TestCosine:
    def test_identical_direction(self):
        assert T.cosine(Tensor([1.0, 0.0]), Tensor([1.0, 0.0])).item() == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert T.cosine(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == pytest.approx(0.0, abs=1e-15)

    def test_positive_scaling_invariance(self):
        assert T.cosine(Tensor([1.0, 2.0]), Tensor([2.0, 4.0])).item() == pytest.approx(1.0, abs=1e-12)

    def test_zero_vector_scores_zero(self):
        assert T.cosine(Tensor([0.0, 0.0]), Tensor([3.0, 4.0])).item() == 0.0

    def test_symmetric_and_scaled(self):
        rng = seeded_rng(5, "cos")
        for _ in range(50):
            u, v = rng.standard_normal(5), rng.standard_normal(5)
            c = float(rng.uniform(0.1, 10.0))
            assert T.cosine(Tensor(u), Tensor(v)).item() == T.cosine(Tensor(v), Tensor(u)).item()
            assert T.cosine(Tensor(u), Tensor(c * u)).item() == pytest.approx(1.0, abs=1e-12)
            assert -1.0 - 1e-12 <= T.cosine(Tensor(u), Tensor(v)).item() <= 1.0 + 1e-12


class TestGradCheck:
    def test_quadratic_exact(self):
        params = ParamStore()
        params.register("x", np.asarray(3.0))
        err = grad_check(lambda p: T.mul(p["x"], p["x"]), params, h=1e-5)
        assert err < 1e-8

    def test_softmax_then_ce(self):
        rng = seeded_rng(0, "gc")
        params = ParamStore()
        params.register("logits", rng.standard_normal(5))
        err = grad_check(lambda p: T.cross_entropy(p["logits"], 3), params, h=1e-5)
        assert err < 1e-6

    def test_constant_function_zero_error(self):
        params = ParamStore()
        params.register("x", np.asarray([1.0, 2.0]))
        err = grad_check(lambda p: Tensor(5.0), params, h=1e-5)
        assert err == 0.0

    def test_nonfinite_raises(self):
        params = ParamStore()
        params.register("x", np.asarray(0.0))
        with pytest.raises(GradCheckError):
            grad_check(lambda p: T.log(p["x"]), params)


def _random_params(rng, shapes):
    params = ParamStore()
    for name, shape in shapes.items():
        params.register(name, rng.standard_normal(shape))
    return params


class TestEveryOpGradient:
    """Each differentiable op passes grad_check on 10 seeded random inputs."""

    CASES = {
        "add": lambda p: T.sum_all(T.add(p["a"], p["b"])),
        "sub": lambda p: T.sum_all(T.sub(p["a"], p["b"])),
        "mul": lambda p: T.sum_all(T.mul(p["a"], p["b"])),
        "div": lambda p: T.sum_all(T.div(p["a"], T.add(T.mul(p["b"], p["b"]), Tensor(1.0)))),
        "matmul": lambda p: T.sum_all(T.matmul(p["a"], p["b"])),
        "matvec": lambda p: T.dot(T.matvec(p["a"], p["v"]), p["v"]),
        "dot": lambda p: T.dot(p["v"], p["w"]),
        "transpose": lambda p: T.sum_all(T.matmul(T.transpose(p["a"]), p["a"])),
        "tanh": lambda p: T.sum_all(T.tanh(p["a"])),
        "gelu": lambda p: T.sum_all(T.gelu(p["a"])),
        "exp": lambda p: T.sum_all(T.exp(p["a"])),
        "sqrt": lambda p: T.sum_all(T.sqrt(T.add(T.mul(p["a"], p["a"]), Tensor(0.5)))),
        "softmax": lambda p: T.dot(T.softmax(p["v"]), p["w"]),
        "softmax_rows": lambda p: T.sum_all(T.mul(T.softmax_rows(p["a"]), p["b"])),
        "logsumexp": lambda p: T.logsumexp(p["v"]),
        "layernorm": lambda p: T.sum_all(T.mul(T.layernorm_rows(p["a"]), p["b"])),
        "cross_entropy": lambda p: T.cross_entropy(p["v"], 1),
        "cosine": lambda p: T.cosine(p["v"], p["w"]),
        "mean_rows": lambda p: T.dot(T.mean_rows(p["a"]), p["w3"]),
        "embedding": lambda p: T.sum_all(T.embedding(p["a"], [0, 1, 1])),
        "structure": lambda p: T.sum_all(
            T.concat_rows([T.stack_rows([T.take_row(p["a"], 0), p["w3"]]), T.slice_cols(p["a"], 0, 3)])
        ),
        "slices": lambda p: T.sum_all(
            T.stack_vec([T.take_elem(p["a"], 1, 2), T.sum_all(T.slice_vec(p["v"], 1, 3))])
        ),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_gradients(self, name):
        fn = self.CASES[name]
        for trial in range(10):
            rng = seeded_rng(trial, f"opgrad/{name}")
            params = _random_params(
                rng, {"a": (2, 3), "b": (2, 3) if name != "matmul" else (3, 2), "v": 4, "w": 4, "w3": 3}
            )
            if name in ("matvec",):
                params = _random_params(rng, {"a": (4, 4), "v": 4})
            assert grad_check(fn, params, h=1e-5) < 1e-6


class TestBackwardMechanics:
    def test_gradient_accumulates_on_reuse(self):
        x = Tensor(2.0, requires_grad=True)
        y = T.add(T.mul(x, x), x)  # x^2 + x, dy/dx = 2x + 1 = 5
        y.backward()
        assert float(x.grad) == pytest.approx(5.0)

    def test_backward_requires_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(DimensionError):
            T.mul(x, x).backward()

    def test_ops_do_not_mutate_inputs(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        before = x.data.copy()
        T.softmax_rows(x)
        T.layernorm_rows(x)
        T.matmul(x, x)
        np.testing.assert_array_equal(x.data, before)


class TestParamStore:
    def test_iteration_sorted_by_name(self):
        params = ParamStore()
        params.register("z", np.zeros(1))
        params.register("a", np.zeros(1))
        params.register("m.1", np.zeros(1))
        assert params.names() == ["a", "m.1", "z"]

    def test_duplicate_registration_rejected(self):
        params = ParamStore()
        params.register("w", np.zeros(2))
        with pytest.raises(ValueError):
            params.register("w", np.zeros(2))

    def test_group_selects_prefix(self):
        params = ParamStore()
        for name in ("mlp.trunk.weight", "mlp.head.0.weight", "encoder.embedding", "mlpx"):
            params.register(name, np.zeros(1))
        assert params.group("mlp") == ["mlp.head.0.weight", "mlp.trunk.weight"]

    def test_snapshot_round_trip(self):
        params = ParamStore()
        t = params.register("w", np.arange(6.0).reshape(2, 3))
        snap = params.snapshot()
        t.data += 1.0
        params.load_snapshot(snap)
        np.testing.assert_array_equal(params["w"].data, np.arange(6.0).reshape(2, 3))


class TestSeededRng:
    def test_reproducible(self):
        a = seeded_rng(42, "x").standard_normal(5)
        b = seeded_rng(42, "x").standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_labels_give_independent_streams(self):
        a = seeded_rng(42, "x").standard_normal(5)
        b = seeded_rng(42, "y").standard_normal(5)
        assert not np.array_equal(a, b)
