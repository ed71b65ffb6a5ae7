import math

import numpy as np
import pytest

from symgpt import nn
from symgpt.nn import Tensor

from gradcheck import check_op

TOL = 1e-4


@pytest.fixture
def r():
    return np.random.default_rng(7)


class TestForward:
    def test_softmax_symmetric(self):
        np.testing.assert_array_equal(nn.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self, r):
        s = nn.softmax(Tensor(r.normal(scale=30, size=(20, 9)))).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_large_inputs_are_stable(self):
        s = nn.softmax(Tensor([1000.0, 1000.0, -1000.0])).data
        np.testing.assert_allclose(s, [0.5, 0.5, 0.0])

    def test_matmul_shape(self, r):
        assert nn.matmul(Tensor(r.normal(size=(2, 3))), Tensor(r.normal(size=(3, 4)))).shape == (2, 4)

    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(nn.ShapeError, match=r"\(2, 3\).*\(4, 4\)"):
            nn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 4))))

    def test_add_shape_error(self):
        with pytest.raises(nn.ShapeError, match=r"\(2, 3\).*\(4,\)"):
            nn.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))

    def test_cross_entropy_uniform(self):
        V = 13
        loss = nn.cross_entropy(Tensor(np.zeros((4, V))), np.array([0, 3, 5, 12]))
        assert loss.item() == pytest.approx(math.log(V), abs=1e-12)

    def test_cross_entropy_ignore_index(self, r):
        logits = r.normal(size=(2, 3, 6))
        targets = np.array([[1, 2, 0], [4, 0, 0]])
        full = nn.cross_entropy(Tensor(logits[:, :1]), targets[:, :1]).item()
        masked = nn.cross_entropy(Tensor(logits), np.where(np.arange(3) == 0, targets, 0), ignore_index=0).item()
        assert masked == pytest.approx(full, abs=1e-12)

    def test_layer_norm_statistics(self, r):
        x = r.normal(loc=3, scale=5, size=(16, 32))
        out = nn.layer_norm(Tensor(x), Tensor(np.ones(32)), Tensor(np.zeros(32))).data
        assert np.abs(out.mean(axis=-1)).max() < 1e-10
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-6)

    def test_max_routes_gradient_to_first_argmax(self):
        x = Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, 2.0]]), requires_grad=True)
        nn.backward(nn.max_(x, axis=1).sum())
        np.testing.assert_array_equal(x.grad, [[0, 1, 0], [1, 0, 0]])

    def test_masked_fill(self):
        out = nn.masked_fill(Tensor(np.arange(4.0)), np.array([True, False, True, False]), -np.inf)
        np.testing.assert_array_equal(out.data, [-np.inf, 1, -np.inf, 3])

    def test_no_grad_records_nothing(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with nn.no_grad():
            out = nn.mul(w, 2.0)
        assert not out.requires_grad and out._parents == ()


class TestBackward:
    def test_sum_gives_ones(self):
        W = Tensor(np.arange(9.0).reshape(3, 3), requires_grad=True)
        nn.backward(W.sum())
        np.testing.assert_array_equal(W.grad, np.ones((3, 3)))

    def test_disconnected_parameter_gets_zero_grad(self):
        a = Tensor(np.ones(2), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        nn.backward(a.sum(), [a, b])
        np.testing.assert_array_equal(b.grad, np.zeros(4))

    def test_rejects_non_scalar(self):
        with pytest.raises(ValueError):
            nn.backward(Tensor(np.ones(3), requires_grad=True) * 2.0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_rejects_non_finite(self):
        with pytest.raises(FloatingPointError):
            nn.backward(nn.log(Tensor(np.array(0.0), requires_grad=True)))

    def test_shared_subgraph_accumulates(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = x * x
        nn.backward((y + y).sum())
        np.testing.assert_allclose(x.grad, [8.0])

    def test_deep_graph_does_not_recurse(self):
        x = Tensor(np.array(1.0), requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        nn.backward(y)
        assert x.grad == 1.0


class TestGradients:
    """Analytic gradients against central differences (float64)."""

    def test_elementwise(self, r):
        x = r.normal(size=(3, 4))
        for op in (nn.tanh, nn.gelu, nn.exp):
            assert check_op(op, x) < TOL, op.__name__
        assert check_op(nn.relu, x + np.sign(x) * 0.1) < TOL
        assert check_op(nn.log, np.abs(x) + 0.5) < TOL

    def test_arithmetic_with_broadcasting(self, r):
        a, b = r.normal(size=(3, 4)), r.normal(size=(4,))
        assert check_op(nn.add, a, b) < TOL
        assert check_op(nn.sub, a, b) < TOL
        assert check_op(nn.mul, a, b) < TOL
        assert check_op(nn.div, a, np.abs(b) + 0.5) < TOL

    def test_matmul(self, r):
        assert check_op(nn.matmul, r.normal(size=(2, 3)), r.normal(size=(3, 4))) < TOL
        assert check_op(nn.matmul, r.normal(size=(2, 5, 3)), r.normal(size=(3, 4))) < TOL
        assert check_op(nn.matmul, r.normal(size=(2, 5, 3)), r.normal(size=(2, 3, 4))) < TOL

    def test_reductions_and_shapes(self, r):
        x = r.normal(size=(2, 3, 4))
        assert check_op(lambda t: nn.sum_(t, axis=1), x) < TOL
        assert check_op(lambda t: nn.mean(t, axis=-1, keepdims=True), x) < TOL
        assert check_op(lambda t: nn.reshape(t, (6, 4)), x) < TOL
        assert check_op(lambda t: nn.transpose(t, (2, 0, 1)), x) < TOL
        assert check_op(lambda t: nn.getitem(t, (slice(None), 1)), x) < TOL
        assert check_op(lambda t: nn.getitem(t, np.array([0, 0, 1])), x) < TOL
        assert check_op(lambda t: nn.max_(t, axis=1), x) < TOL

    def test_nn_ops(self, r):
        x = r.normal(size=(3, 5))
        assert check_op(lambda t: nn.softmax(t, axis=-1), x) < TOL
        assert check_op(nn.layer_norm, x, r.normal(size=5), r.normal(size=5)) < TOL
        mask = np.triu(np.ones((3, 5), dtype=bool), 1)
        assert check_op(lambda t: nn.masked_fill(t, mask, 0.0), x) < TOL
        ids = np.array([[0, 2], [2, 1]])
        assert check_op(lambda w: nn.embedding(w, ids), r.normal(size=(4, 3))) < TOL

    def test_cross_entropy(self, r):
        targets = np.array([[1, 0, 2], [3, 3, 0]])
        assert check_op(lambda t: nn.cross_entropy(t, targets, ignore_index=0), r.normal(size=(2, 3, 4))) < TOL

    def test_dropout_mask_is_fixed(self, r):
        x = r.normal(size=(4, 4))
        op = lambda t: nn.dropout(t, 0.3, np.random.default_rng(2))  # noqa: E731
        assert check_op(op, x) < TOL

    def test_layers(self, r):
        lin = nn.Linear(4, 3, r)
        ln = nn.LayerNorm(3)
        x = r.normal(size=(2, 4))

        def op(W, b, t):
            lin.weight, lin.bias = W, b
            return ln(lin(t))

        assert check_op(op, lin.weight.data.copy(), lin.bias.data.copy(), x) < TOL


class TestModules:
    def test_state_dict_round_trip(self, r):
        a, b = nn.Linear(3, 2, r), nn.Linear(3, 2, r)
        b.load_state_dict(a.state_dict())
        np.testing.assert_array_equal(a.weight.data, b.weight.data)

    def test_load_state_dict_checks_shapes(self, r):
        a = nn.Linear(3, 2, r)
        state = a.state_dict()
        state["weight"] = np.zeros((2, 2))
        with pytest.raises(ValueError):
            a.load_state_dict(state)
        with pytest.raises(KeyError):
            a.load_state_dict({})


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = nn.parameter(np.array([1.0, -2.0]))
        opt = nn.Adam({"p": p}, lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_size(self):
        p = nn.parameter(np.array(0.5))
        opt = nn.Adam({"p": p}, lr=0.1)
        p.grad = np.array(1.0)
        opt.step()
        assert p.data == pytest.approx(0.4, abs=1e-6)

    def test_quadratic_bowl(self):
        p = nn.parameter(np.array([1.5, -0.7, 0.3]))
        opt = nn.Adam({"p": p}, lr=0.05)
        # the default schedule: cosine decay to a tenth of the base rate
        for step in range(500):
            p.grad = 2 * p.data
            opt.step(nn.warmup_cosine(step, 500, 0.05, warmup=0))
        assert np.abs(p.data).max() < 1e-3

    def test_state_round_trip(self):
        p = nn.parameter(np.array([1.0]))
        opt = nn.Adam({"p": p}, lr=0.1)
        p.grad = np.array([0.5])
        opt.step()
        clone = nn.Adam({"p": nn.parameter(p.data.copy())}, lr=0.1)
        clone.load_state_dict(opt.state_dict())
        for o in (opt, clone):
            o.params["p"].grad = np.array([0.25])
            o.step()
        np.testing.assert_array_equal(opt.params["p"].data, clone.params["p"].data)

    def test_schedule(self):
        assert nn.warmup_cosine(0, 100, 1.0, 10) == pytest.approx(0.1)
        assert nn.warmup_cosine(10, 100, 1.0, 10) == pytest.approx(1.0)
        assert nn.warmup_cosine(100, 100, 1.0, 10) == pytest.approx(0.1)

    def test_clip(self):
        p = nn.parameter(np.zeros(2))
        p.grad = np.array([3.0, 4.0])
        assert nn.clip_grad_norm([p], 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose(p.grad, [0.6, 0.8])


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1, 2], dtype=np.int64)}
        nn.save_checkpoint(tmp_path / "c.npz", arrays, {"hello": [1, 2]})
        back, meta = nn.load_checkpoint(tmp_path / "c.npz")
        np.testing.assert_array_equal(back["a"], arrays["a"])
        assert back["b"].dtype == np.int64
        assert meta["hello"] == [1, 2]

    def test_corrupt_file(self, tmp_path):
        (tmp_path / "bad.npz").write_bytes(b"not a checkpoint")
        with pytest.raises(nn.CheckpointError):
            nn.load_checkpoint(tmp_path / "bad.npz")
