import numpy as np
import pytest

from edaseg.gradcheck import grad_check
from edaseg.layers import Downsampler, EdaModule, Head, init_params
from edaseg.tensor import ShapeError

from gradcases import COMPOSITES, draw


def _fresh(block, seed=0, dtype=np.float64):
    params, buffers = init_params([block], np.random.default_rng(seed), dtype)
    return params, buffers


def _count(block):
    return sum(int(np.prod(s)) for s in block.param_shapes().values())


class TestEdaModule:
    def test_dense_growth(self):
        m = EdaModule("m", 60, 40, dilation=2)
        params, buffers = _fresh(m)
        y, _ = m.forward(np.random.default_rng(1).standard_normal((1, 60, 8, 12)), params, buffers)
        assert y.shape == (1, 100, 8, 12)

    def test_param_count(self):
        # 130*40 + 2*(3*40*40) + 2*(3*40*40) + 3*(2*40), summed by hand
        assert _count(EdaModule("m", 130, 40, dilation=4)) == 24640

    def test_dilation_adds_no_weights(self):
        assert _count(EdaModule("m", 130, 40, 1)) == _count(EdaModule("m", 130, 40, 16))

    @pytest.mark.parametrize("mode", ["train", "infer"])
    def test_passthrough_is_exact(self, mode):
        m = EdaModule("m", 5, 3, dilation=2)
        params, buffers = _fresh(m)
        x = np.random.default_rng(2).standard_normal((2, 5, 6, 7))
        y, _ = m.forward(x, params, buffers, mode, np.random.default_rng(0))
        assert np.array_equal(y[:, :5], x)

    def test_stack_channels(self):
        c, k, n = 7, 4, 5
        x = np.random.default_rng(3).standard_normal((1, c, 6, 6))
        for i in range(n):
            m = EdaModule(f"m{i}", c + i * k, k, dilation=1 + i)
            x, _ = m.forward(x, *_fresh(m, i))
        assert x.shape[1] == c + n * k

    def test_channel_mismatch(self):
        m = EdaModule("m", 4, 2)
        with pytest.raises(ShapeError, match="channels"):
            m.forward(np.zeros((1, 3, 4, 4)), *_fresh(m))

    def test_infer_independent_of_batch(self):
        m = EdaModule("m", 3, 4, dilation=2)
        params, buffers = _fresh(m)
        buffers = {k: v + (0.5 if k.endswith("var") else 0.1) for k, v in buffers.items()}
        x = np.random.default_rng(4).standard_normal((4, 3, 6, 6))
        full, _ = m.forward(x, params, buffers, "infer")
        one, _ = m.forward(x[2:3], params, buffers, "infer")
        np.testing.assert_array_equal(full[2:3], one)

    def test_train_updates_running_stats(self):
        m = EdaModule("m", 3, 2)
        params, buffers = _fresh(m)
        before = {k: v.copy() for k, v in buffers.items()}
        m.forward(np.random.default_rng(5).standard_normal((2, 3, 4, 4)) + 3, params, buffers,
                  "train", np.random.default_rng(0))
        assert any(not np.array_equal(before[k], buffers[k]) for k in buffers)


class TestDownsampler:
    def test_widening_branch(self):
        d = Downsampler("ds1", 3, 15)
        assert d.widening and d.param_shapes()["ds1.conv.weight"] == (12, 3, 3, 3)
        y, _ = d.forward(np.ones((1, 3, 48, 72)), *_fresh(d))
        assert y.shape == (1, 15, 24, 36)

    @pytest.mark.parametrize("cin,cout", [(260, 130), (63, 15), (8, 8)])
    def test_conv_only_branch(self, cin, cout):
        d = Downsampler("ds", cin, cout)
        assert not d.widening
        assert d.param_shapes()["ds.conv.weight"] == (cout, cin, 3, 3)
        y, _ = d.forward(np.ones((1, cin, 4, 6)), *_fresh(d))
        assert y.shape == (1, cout, 2, 3)

    def test_odd_input(self):
        d = Downsampler("ds", 3, 15)
        with pytest.raises(ShapeError, match="even"):
            d.forward(np.ones((1, 3, 5, 6)), *_fresh(d))


class TestHead:
    def test_upsamples_to_input(self):
        h = Head("head", 450, 6, 8)
        y, _ = h.forward(np.zeros((1, 450, 60, 90), np.float32), _fresh(h)[0])
        assert y.shape == (1, 6, 480, 720)

    def test_factor_one(self):
        h = Head("head", 4, 6, 1)
        assert h.forward(np.zeros((2, 4, 3, 5)), _fresh(h)[0])[0].shape == (2, 6, 3, 5)

    def test_param_count(self):
        assert _count(Head("head", 450, 6, 8)) == 2706


def test_init_is_seeded():
    m = EdaModule("m", 3, 4)
    a, _ = _fresh(m, 7)
    b, _ = _fresh(m, 7)
    assert all(np.array_equal(a[k], b[k]) for k in a)


@pytest.mark.parametrize("name", sorted(COMPOSITES))
def test_composite_gradcheck(name):
    worst = 0.0
    for i in range(20):
        op, inputs = draw(COMPOSITES[name], np.random.default_rng(1000 + i))
        report = grad_check(op, inputs, seed=i)
        assert report.passed, f"case {i}: {report}"
        worst = max(worst, report.max_error)
    assert worst < 1e-4
