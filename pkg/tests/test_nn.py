import math

import numpy as np
import pytest
import torch

from singvc import nn as ops
from singvc.nn import ContainerError, ShapeError, load_tensors, save_tensors


def conv_oracle(x, w, dilation, causal):
    """Direct-summation convolution with the module's padding rule."""
    c_out, c_in, k = w.shape
    t = x.shape[1]
    pad_total = (k - 1) * dilation
    left = pad_total if causal else pad_total - pad_total // 2
    xp = np.zeros((c_in, t + pad_total))
    xp[:, left : left + t] = x
    out = np.zeros((c_out, t))
    for o in range(c_out):
        for pos in range(t):
            acc = 0.0
            for i in range(c_in):
                for j in range(k):
                    acc += w[o, i, j] * xp[i, pos + j * dilation]
            out[o, pos] = acc
    return out


class TestConv1d:
    def test_kernel_one_identity(self):
        x = torch.randn(3, 9, dtype=torch.float64)
        w = torch.eye(3, dtype=torch.float64).reshape(3, 3, 1)
        assert torch.equal(ops.conv1d(x, w), x)

    def test_delay_line(self):
        x = torch.tensor([[1.0, 2.0, 3.0]])
        w_keep = torch.tensor([[[0.0, 1.0]]])  # tap on the current sample
        assert torch.equal(ops.conv1d(x, w_keep, causal=True), x)
        w_delay = torch.tensor([[[1.0, 0.0]]])  # tap on the previous sample
        assert ops.conv1d(x, w_delay, causal=True).tolist() == [[0.0, 1.0, 2.0]]

    @pytest.mark.parametrize("causal", [True, False])
    @pytest.mark.parametrize("dilation,k", [(1, 2), (4, 2), (2, 3), (1, 5)])
    def test_matches_direct_summation(self, causal, dilation, k):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 8))
        w = rng.normal(size=(3, 2, k))
        got = ops.conv1d(torch.from_numpy(x), torch.from_numpy(w), dilation=dilation, causal=causal)
        want = conv_oracle(x, w, dilation, causal)
        assert np.abs(got.numpy() - want).max() <= 1e-6

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError, match="conv1d"):
            ops.conv1d(torch.zeros(2, 5), torch.zeros(4, 3, 2))

    def test_length_preserved_with_batch(self):
        x = torch.randn(2, 3, 17)
        w = torch.randn(5, 3, 4)
        assert ops.conv1d(x, w, dilation=3, causal=False).shape == (2, 5, 17)

    def test_causal_output_ignores_future(self):
        rng = torch.Generator().manual_seed(0)
        x = torch.randn(2, 32, generator=rng, dtype=torch.float64)
        w = torch.randn(2, 2, 3, generator=rng, dtype=torch.float64)
        base = ops.conv1d(x, w, dilation=2, causal=True)
        x2 = x.clone()
        x2[:, 20:] += 5.0
        pert = ops.conv1d(x2, w, dilation=2, causal=True)
        assert torch.equal(base[:, :20], pert[:, :20])
        assert not torch.equal(base[:, 20:], pert[:, 20:])


class TestGatedUnit:
    def test_zero(self):
        z = torch.zeros(2, 3)
        assert torch.all(ops.gated_unit(z, z) == 0)

    def test_sigmoid_saturation(self):
        a = torch.linspace(-2, 2, 9, dtype=torch.float64)
        b = torch.full_like(a, 30.0)
        assert torch.allclose(ops.gated_unit(a, b), torch.tanh(a), atol=1e-9)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(4, 6))
        got = ops.gated_unit(torch.from_numpy(a), torch.from_numpy(b)).numpy()
        want = np.vectorize(lambda p, q: math.tanh(p) * (1 / (1 + math.exp(-q))))(a, b)
        assert np.abs(got - want).max() <= 1e-7

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.gated_unit(torch.zeros(2, 3), torch.zeros(3, 2))


class TestPointwise:
    def test_relu(self):
        assert ops.relu(torch.tensor(-1.0)).item() == 0.0
        assert ops.relu(torch.tensor(2.5)).item() == 2.5

    def test_elu(self):
        assert ops.elu(torch.tensor(0.0)).item() == 0.0
        assert ops.elu(torch.tensor(-20.0, dtype=torch.float64)).item() == pytest.approx(
            math.exp(-20) - 1, abs=1e-8
        )
        assert ops.elu(torch.tensor(3.0)).item() == 3.0


class TestAvgPool:
    def test_constant(self):
        x = torch.full((1, 2, 12), 0.7)
        assert torch.allclose(ops.avg_pool(x, 4, 4), torch.full((1, 2, 3), 0.7))

    def test_global_mean(self):
        x = torch.arange(10, dtype=torch.float64).reshape(1, 1, 10)
        assert ops.avg_pool(x, 10, 10).item() == pytest.approx(4.5)

    def test_matches_loop(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 11))
        kernel, stride = 3, 2
        got = ops.avg_pool(torch.from_numpy(x), kernel, stride).numpy()
        n_out = (11 - kernel) // stride + 1
        want = np.stack(
            [[x[c, i * stride : i * stride + kernel].mean() for i in range(n_out)] for c in range(2)]
        )
        assert np.allclose(got, want, atol=1e-12)

    def test_too_short(self):
        with pytest.raises(ShapeError):
            ops.avg_pool(torch.zeros(1, 1, 3), 4, 4)


class TestUpsampleRepeat:
    def test_identity(self):
        x = torch.randn(2, 5)
        assert torch.equal(ops.upsample_repeat(x, 1), x)

    def test_pattern(self):
        x = torch.tensor([[1.0, 2.0]])
        assert ops.upsample_repeat(x, 2).tolist() == [[1.0, 1.0, 2.0, 2.0]]

    def test_pool_inverts(self):
        x = torch.randn(3, 7, dtype=torch.float64)
        up = ops.upsample_repeat(x, 5)
        assert torch.allclose(ops.avg_pool(up, 5, 5), x, atol=1e-12)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        logits = torch.zeros(256, 12, dtype=torch.float64)
        targets = torch.randint(0, 256, (12,))
        assert ops.softmax_cross_entropy(logits, targets).item() == pytest.approx(math.log(256), abs=1e-9)

    def test_confident_logit(self):
        logits = torch.zeros(256, 4, dtype=torch.float64)
        targets = torch.tensor([3, 100, 0, 255])
        for t_pos, cls in enumerate(targets):
            logits[cls, t_pos] = 30.0
        assert ops.softmax_cross_entropy(logits, targets).item() <= 1e-9

    def test_two_classes(self):
        logits = torch.zeros(2, 5, dtype=torch.float64)
        targets = torch.zeros(5, dtype=torch.long)
        assert ops.softmax_cross_entropy(logits, targets).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            ops.softmax_cross_entropy(torch.zeros(4, 3), torch.tensor([0, 4, 1]))


class TestGradCheck:
    def test_square_function(self):
        err = ops.grad_check(lambda x: x * x, torch.tensor([3.0]), eps=1e-3)
        assert err <= 1e-6

    def test_all_primitives_at_random_points(self):
        gen = torch.Generator().manual_seed(99)

        def rand(*shape):
            return torch.randn(*shape, generator=gen, dtype=torch.float64)

        for trial in range(10):
            x = rand(2, 8)
            w = rand(3, 2, 2)
            assert ops.grad_check(lambda a, b: ops.conv1d(a, b, dilation=2, causal=True), (x, w)) <= 1e-4
            assert ops.grad_check(lambda a, b: ops.conv1d(a, b, dilation=1, causal=False), (x, w)) <= 1e-4
            assert ops.grad_check(ops.gated_unit, (rand(3, 4), rand(3, 4))) <= 1e-4
            # keep relu away from its kink at 0
            xr = rand(3, 4)
            xr = xr + torch.sign(xr) * 0.01
            assert ops.grad_check(ops.relu, xr) <= 1e-4
            xe = rand(3, 4)
            xe = xe + torch.sign(xe) * 0.01
            assert ops.grad_check(ops.elu, xe) <= 1e-4
            assert ops.grad_check(lambda a: ops.avg_pool(a, 3, 2), rand(2, 9)) <= 1e-4
            assert ops.grad_check(lambda a: ops.upsample_repeat(a, 3), rand(2, 5)) <= 1e-4
            targets = torch.randint(0, 6, (7,), generator=gen)
            assert ops.grad_check(lambda a: ops.softmax_cross_entropy(a, targets), rand(6, 7)) <= 1e-4


class TestSvc1Container:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "encoder.w": rng.normal(size=(3, 4)).astype(np.float32),
            "table": rng.normal(size=(2, 8)).astype(np.float32),
            "scalar": np.float32(1.5).reshape(()),
        }
        path = tmp_path / "params.svc1"
        save_tensors(path, tensors)
        back = load_tensors(path)
        assert set(back) == set(tensors)
        for name in tensors:
            assert back[name].dtype == np.float32
            assert np.array_equal(back[name], tensors[name])

    def test_magic_checked(self, tmp_path):
        path = tmp_path / "bogus.svc1"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(ContainerError, match="magic"):
            load_tensors(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "params.svc1"
        save_tensors(path, {"a": np.ones((4, 4), dtype=np.float32)})
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ContainerError):
            load_tensors(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ContainerError, match="no such"):
            load_tensors(tmp_path / "none.svc1")
