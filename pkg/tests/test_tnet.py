import math

import numpy as np
import pytest

from symgpt import nn
from symgpt.eqgen import GenConfig, generate_instance, instance_rng
from symgpt.tnet import TNet, TNetConfig, batch_point_clouds, point_cloud, squash


@pytest.fixture(scope="module")
def tnet():
    return TNet(TNetConfig(d_max=3, e=16), np.random.default_rng(0))


class TestSquash:
    def test_values(self):
        assert squash(np.array(math.e - 1)) == pytest.approx(1.0, abs=1e-15)
        assert squash(np.array(0.0)) == 0.0
        assert squash(np.array(-(math.e - 1))) == pytest.approx(-1.0, abs=1e-15)

    def test_monotone(self):
        r = np.random.default_rng(0)
        a, b = r.normal(scale=100, size=(2, 1000))
        assert np.all((squash(a) - squash(b)) * (a - b) >= 0)

    def test_finite_for_extremes(self):
        assert np.isfinite(squash(np.array([1e308, -1e308]))).all()


class TestPointCloud:
    def test_padding(self):
        pc = point_cloud(np.array([[1.0, 2.0]]), np.array([5.0]), d_max=4)
        np.testing.assert_array_equal(pc, [[1, 2, 0, 0, 5]])

    def test_too_many_variables(self):
        with pytest.raises(ValueError):
            point_cloud(np.ones((2, 3)), np.ones(2), d_max=2)

    def test_normalize_zero_gives_shift(self, tnet):
        out = tnet.normalize(np.zeros((2, 4))).data
        np.testing.assert_array_equal(out, np.broadcast_to(tnet.norm_shift.data, (2, 4)))

    def test_rejects_non_finite(self, tnet):
        with pytest.raises(ValueError):
            tnet(np.array([[np.nan, 0, 0, 1.0]]))

    def test_rejects_empty(self, tnet):
        with pytest.raises(ValueError):
            tnet(np.zeros((0, 4)))

    def test_rejects_wrong_width(self, tnet):
        with pytest.raises(nn.ShapeError):
            tnet(np.zeros((3, 5)))


class TestEncoder:
    def test_shapes(self, tnet):
        assert tnet(np.ones((7, 4))).shape == (16,)
        assert tnet(np.ones((2, 7, 4))).shape == (2, 16)

    def test_permutation_invariance(self, tnet):
        r = np.random.default_rng(1)
        pc = r.normal(size=(25, 4))
        base = tnet(pc).data
        for _ in range(10):
            np.testing.assert_array_equal(tnet(pc[r.permutation(25)]).data, base)

    def test_duplication_invariance(self, tnet):
        pc = np.random.default_rng(2).normal(size=(9, 4))
        np.testing.assert_array_equal(tnet(np.concatenate([pc, pc])).data, tnet(pc).data)

    def test_single_point_matches_manual_pipeline(self, tnet):
        pc = np.array([[0.3, -1.2, 0.0, 2.5]])
        h = squash(pc) * tnet.norm_scale.data + tnet.norm_shift.data
        for layer in (tnet.stage1, tnet.stage2, tnet.stage3):
            h = np.maximum(h @ layer.weight.data + layer.bias.data, 0)
        h = h[0]
        h = (h - h.mean()) / np.sqrt(h.var() + tnet.pool_norm.eps) * tnet.pool_norm.weight.data + tnet.pool_norm.bias.data
        h = np.maximum(h @ tnet.fc1.weight.data + tnet.fc1.bias.data, 0)
        expected = h @ tnet.fc2.weight.data + tnet.fc2.bias.data
        np.testing.assert_allclose(tnet(pc).data, expected, rtol=1e-12, atol=1e-12)

    def test_batch_padding_is_invisible(self, tnet):
        r = np.random.default_rng(3)
        clouds = [r.normal(size=(n, 4)) for n in (3, 11, 6)]
        batched = tnet(batch_point_clouds(clouds)).data
        for i, c in enumerate(clouds):
            # BLAS may block a batched product differently, hence not bitwise
            np.testing.assert_allclose(batched[i], tnet(c).data, rtol=0, atol=1e-12)

    def test_zero_columns_for_unused_variables(self, tnet):
        cfg = GenConfig(d=2, n_points=15)
        for i in range(20):
            inst = generate_instance(cfg, instance_rng(0, i))
            widened = np.concatenate([inst.X, np.zeros((inst.n, 1))], axis=1)
            np.testing.assert_array_equal(tnet(point_cloud(widened, inst.y, 3)).data,
                                          tnet(point_cloud(inst.X, inst.y, 3)).data)

    def test_every_stage_receives_gradient(self):
        net = TNet(TNetConfig(d_max=2, e=8), np.random.default_rng(4))
        out = net(np.random.default_rng(5).normal(size=(2, 10, 3)))
        nn.backward(nn.mul(out, out).sum(), net.parameters())
        for name in ("norm_scale", "stage1", "stage2", "stage3", "pool_norm", "fc1", "fc2"):
            grads = [p.grad for k, p in net.named_parameters().items() if k.startswith(name)]
            assert any(np.abs(g).sum() > 0 for g in grads), name
