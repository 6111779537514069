"""Multi-head feature embedding and pooling."""

import numpy as np
import pytest

from fptune.exceptions import DimensionError
from fptune.feature_prompt import MultiHeadMLP, pool
from fptune import tensor as T
from fptune.tensor import ParamStore, Tensor, grad_check, seeded_rng


def make_mlp(alpha=6, n_heads=3, d_model=8, d_hidden=5, seed=0):
    mlp = MultiHeadMLP(alpha=alpha, n_heads=n_heads, d_model=d_model, d_hidden=d_hidden)
    store = ParamStore()
    mlp.init_params(store, seeded_rng(seed, "mlp"))
    return mlp, store


class TestEmbed:
    def test_output_shape(self):
        mlp, store = make_mlp()
        rows = mlp.embed(np.ones(6), store)
        assert rows.shape == (3, 8)

    def test_zero_parameters_give_zero_rows(self):
        mlp, store = make_mlp()
        for _, t in store.items():
            t.data[...] = 0.0
        rows = mlp.embed(seeded_rng(1, "f").standard_normal(6), store)
        np.testing.assert_array_equal(rows.data, np.zeros((3, 8)))

    def test_tied_heads_produce_identical_rows(self):
        mlp, store = make_mlp()
        store["mlp.head.1.weight"].data = store["mlp.head.0.weight"].data.copy()
        store["mlp.head.1.bias"].data = store["mlp.head.0.bias"].data.copy()
        rows = mlp.embed(seeded_rng(2, "f").standard_normal(6), store).data
        np.testing.assert_array_equal(rows[0], rows[1])

    def test_width_mismatch(self):
        mlp, store = make_mlp()
        with pytest.raises(DimensionError):
            mlp.embed(np.ones(7), store)

    def test_deterministic(self):
        mlp, store = make_mlp()
        f = seeded_rng(3, "f").standard_normal(6)
        assert mlp.embed(f, store).data.tobytes() == mlp.embed(f, store).data.tobytes()

    def test_tanh_bounds(self):
        mlp, store = make_mlp()
        rng = seeded_rng(4, "f")
        for _ in range(20):
            rows = mlp.embed(rng.standard_normal(6) * 10, store).data
            assert np.all(rows > -1.0) and np.all(rows < 1.0)

    def test_gradient_of_squared_norm(self):
        for trial in range(5):
            mlp, store = make_mlp(seed=trial)
            f = seeded_rng(trial, "gcf").standard_normal(6)

            def loss(params):
                rows = mlp.embed(f, params)
                return T.sum_all(T.mul(rows, rows))

            assert grad_check(loss, store, h=1e-5) < 1e-5


class TestPool:
    def test_single_row_identity(self):
        row = np.asarray([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(pool(Tensor(row.reshape(1, 3))).data, row)

    def test_mean_of_two_rows(self):
        rows = Tensor([[1.0, 1.0], [3.0, 3.0]])
        np.testing.assert_array_equal(pool(rows).data, [2.0, 2.0])

    def test_mean_of_copies_is_the_row(self):
        row = seeded_rng(5, "r").standard_normal(4)
        rows = Tensor(np.stack([row] * 6))
        np.testing.assert_allclose(pool(rows).data, row, atol=1e-15)

    def test_pooled_embedding_invariant_under_head_permutation(self):
        mlp, store = make_mlp()
        f = seeded_rng(6, "f").standard_normal(6)
        before = pool(mlp.embed(f, store)).data.copy()
        for field in ("weight", "bias"):
            a = store[f"mlp.head.0.{field}"].data.copy()
            store[f"mlp.head.0.{field}"].data = store[f"mlp.head.2.{field}"].data.copy()
            store[f"mlp.head.2.{field}"].data = a
        after = pool(mlp.embed(f, store)).data
        np.testing.assert_allclose(after, before, atol=1e-15)
