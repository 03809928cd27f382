import math

import numpy as np
import pytest

from spn.checkpoint import save_checkpoint
from spn.errors import ConfigError, DatasetError, InputError
from spn.network import (Network, NetworkSpec, batch_loss, reference_spec, spn_backward,
                         spn_forward, tiny_spec)
from spn.oracles import check_gradients, finite_diff_grad
from spn.optim import OptimizerConfig
from spn.sp_core import ProposalMap, SpConfig
from spn.train import train


def tiny_net(seed=0, relu=False, classes=3):
    return Network.init(tiny_spec(classes, relu=relu), seed=seed)


def tiny_image(seed=0):
    return np.random.default_rng(seed + 100).standard_normal((1, 16, 16))


def hand_net():
    spec = NetworkSpec([{"type": "conv", "out": 1, "kernel": 3, "stride": 1, "padding": 1},
                        {"type": "sp"}, {"type": "gap"}, {"type": "fc"}],
                       class_count=2, in_channels=1, input_size=4,
                       sp_config=SpConfig(max_iters=10_000))
    params = {
        "conv0.weight": np.array([[[[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]]]]) / 4,
        "conv0.bias": np.array([0.1]),
        "fc.weight": np.array([[2.0], [-1.0]]),
        "fc.bias": np.array([0.0, 0.5]),
    }
    return Network(spec, params)


def hand_forward(img, params, eps, tol, max_iters):
    """Straight-line conv -> walk -> coupling -> mean -> fc on plain Python lists."""
    n = 4
    w = params["conv0.weight"][0, 0].tolist()
    u = [[params["conv0.bias"][0] for _ in range(n)] for _ in range(n)]
    for i in range(n):
        for j in range(n):
            for a in range(3):
                for b in range(3):
                    r, c = i + a - 1, j + b - 1
                    if 0 <= r < n and 0 <= c < n:
                        u[i][j] += w[a][b] * img[r][c]
    nodes = [(i, j) for i in range(n) for j in range(n)]
    raw = [[abs(u[i][j] - u[p][q]) * math.exp(-((i - p) ** 2 + (j - q) ** 2) / (2 * eps * eps))
            for (p, q) in nodes] for (i, j) in nodes]
    colsum = [sum(raw[a][b] for a in range(16)) for b in range(16)]
    d = [[raw[a][b] / colsum[b] for b in range(16)] for a in range(16)]
    m = [1 / 16] * 16
    for _ in range(max_iters):
        nxt = [sum(d[a][b] * m[b] for b in range(16)) for a in range(16)]
        change = sum(abs(x - y) for x, y in zip(nxt, m))
        m = nxt
        if change < tol:
            break
    pooled = sum(u[i][j] * m[i * n + j] for (i, j) in nodes) / 16
    fw, fb = params["fc.weight"], params["fc.bias"]
    return [fw[c][0] * pooled + fb[c] for c in range(2)], m


def test_hand_traced_forward():
    net = hand_net()
    img = np.arange(16, dtype=float).reshape(4, 4) % 5 / 4
    logits, cache = spn_forward(net, img[None])
    expected, m = hand_forward(img.tolist(), net.params, 0.6, 1e-10, 10_000)
    np.testing.assert_allclose(cache.proposals[0].data.ravel(), m, atol=1e-12)
    np.testing.assert_allclose(logits, expected, rtol=1e-10, atol=1e-14)


def test_forward_is_deterministic():
    net = Network.init(reference_spec(3), seed=4)
    img = np.random.default_rng(0).random((3, 32, 32))
    a, ca = spn_forward(net, img)
    b, cb = spn_forward(net, img)
    assert np.array_equal(a, b)
    assert np.array_equal(ca.proposals[0].data, cb.proposals[0].data)


def test_batch_matches_single_images():
    net = Network.init(reference_spec(3), seed=1)
    imgs = np.random.default_rng(1).random((3, 3, 32, 32))
    batch, _ = spn_forward(net, imgs)
    for k in range(3):
        np.testing.assert_allclose(spn_forward(net, imgs[k])[0], batch[k], rtol=1e-12, atol=1e-14)


def test_no_sp_equals_forced_uniform_map():
    spec = reference_spec(3)
    net = Network.init(spec, seed=2)
    ablated = Network(reference_spec(3, use_sp=False), net.params)
    imgs = np.random.default_rng(2).random((2, 3, 32, 32))
    uniform = [ProposalMap.uniform(8), ProposalMap.uniform(8)]
    a, _ = spn_forward(net, imgs, frozen=uniform)
    b, _ = spn_forward(ablated, imgs)
    assert np.array_equal(a, b)


def test_uniform_map_preserves_class_ranking():
    # the same stack without any sp layer: logits differ only by the 1/N^2 factor
    net = Network.init(reference_spec(3, use_sp=False), seed=3)
    layers = [l for l in net.spec.layers if l["type"] != "sp"]
    plain_spec = NetworkSpec(layers, 3, input_mean=0.5)
    plain = Network(plain_spec, {k: v for k, v in net.params.items()})
    imgs = np.random.default_rng(3).random((5, 3, 32, 32))
    a, _ = spn_forward(net, imgs)
    b, _ = spn_forward(plain, imgs)
    np.testing.assert_allclose(a * 64, b, rtol=1e-12)
    assert np.array_equal(a.argmax(axis=1), b.argmax(axis=1))


def test_forward_rejects_bad_input():
    net = tiny_net()
    with pytest.raises(InputError):
        spn_forward(net, np.zeros((3, 16, 16)))
    with pytest.raises(InputError):
        spn_forward(net, np.zeros((1, 16, 16)), frozen=[np.ones((8, 8)) / 64])


@pytest.mark.parametrize("layers", [
    [{"type": "conv", "out": 2, "kernel": 3}, {"type": "gap"}, {"type": "sp"}, {"type": "fc"}],
    [{"type": "sp"}, {"type": "conv", "out": 2, "kernel": 3}, {"type": "gap"}, {"type": "fc"}],
    [{"type": "conv", "out": 2, "kernel": 3}, {"type": "maxpool2"}, {"type": "sp"}, {"type": "gap"},
     {"type": "fc"}],
    [{"type": "conv", "out": 2, "kernel": 3}, {"type": "gap"}],
    [{"type": "dropout"}, {"type": "gap"}, {"type": "fc"}],
])
def test_spec_validation(layers):
    with pytest.raises(ConfigError):
        NetworkSpec(layers, 2, in_channels=1, input_size=8)


def test_spec_dict_roundtrip():
    spec = reference_spec(4, use_sp=False, loss_mode="sigmoid", sp_config=SpConfig(damping=0.1))
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


# backward

def test_zero_upstream_gives_zero_gradients():
    net = tiny_net(relu=True)
    logits, cache = spn_forward(net, tiny_image())
    grads = spn_backward(net, cache, np.zeros_like(logits))
    assert set(grads) == set(net.params)
    assert all(not g.any() for g in grads.values())


def test_one_hot_map_masks_conv_gradients():
    net = tiny_net(seed=1)
    m = np.zeros((16, 16))
    m[5, 9] = 1.0
    img = tiny_image(1)
    d = np.array([0.3, -1.0, 0.7])
    _, cache = spn_forward(net, img, frozen=[m])
    g1 = spn_backward(net, cache, d)
    # pixels outside the 3x3 receptive field of (5, 9) cannot matter
    other = img.copy()
    keep = np.zeros_like(other, dtype=bool)
    keep[:, 4:7, 8:11] = True
    other[~keep] = np.random.default_rng(9).standard_normal((~keep).sum())
    _, cache2 = spn_forward(net, other, frozen=[m])
    g2 = spn_backward(net, cache2, d)
    for name in g1:
        np.testing.assert_array_equal(g1[name], g2[name])


def test_backward_rejects_foreign_cache():
    a = tiny_net()
    logits, cache = spn_forward(a, tiny_image())
    with pytest.raises(InputError):
        spn_backward(a, cache, np.zeros(5))


@pytest.mark.parametrize("seed", range(5))
def test_gradcheck_tiny_net(seed):
    net = tiny_net(seed, relu=True)
    report = check_gradients(net, tiny_image(seed), seed % 3)
    assert report.passed, report.lines()


def test_gradcheck_stack_with_pooling():
    spec = NetworkSpec([
        {"type": "conv", "out": 3, "kernel": 3, "stride": 1, "padding": 1}, {"type": "relu"},
        {"type": "maxpool2"},
        {"type": "conv", "out": 4, "kernel": 3, "stride": 1, "padding": 1}, {"type": "relu"},
        {"type": "sp"}, {"type": "gap"}, {"type": "fc"},
    ], class_count=3, in_channels=2, input_size=8)
    net = Network.init(spec, seed=5)
    imgs = np.random.default_rng(5).standard_normal((2, 2, 8, 8))
    logits, cache = spn_forward(net, imgs)
    _, d = batch_loss(net, logits, [0, 2])
    analytic = spn_backward(net, cache, d)

    def loss_at(_):
        return batch_loss(net, spn_forward(net, imgs, frozen=cache.proposals)[0], [0, 2])[0]

    # some entries are ~1e-6, where central-difference rounding (~1e-11) dominates
    # the relative error, so compare with an absolute floor instead
    for name, p in net.params.items():
        np.testing.assert_allclose(analytic[name], finite_diff_grad(loss_at, p), rtol=1e-6,
                                   atol=1e-10, err_msg=name)


def test_gradcheck_sigmoid_loss():
    spec = tiny_spec(3, relu=True)
    spec.loss_mode = "sigmoid"
    net = Network.init(spec, seed=6)
    report = check_gradients(net, tiny_image(6), np.array([1.0, 0.0, 1.0]))
    assert report.passed, report.lines()


def test_batch_loss_is_mean():
    net = tiny_net()
    logits = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]])
    e, g = batch_loss(net, logits, [0, 2])
    p = np.exp(logits[1] - 3) / np.exp(logits[1] - 3).sum()
    assert e == pytest.approx((math.log(3) - math.log(p[2])) / 2, rel=1e-14)
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-16)


# training

def small_set(n=6, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 1, 16, 16)), [int(v) for v in rng.integers(0, 3, n)]


def test_zero_learning_rate_leaves_params():
    net = tiny_net()
    before = {k: v.copy() for k, v in net.params.items()}
    x, y = small_set()
    train(net, x, y, OptimizerConfig(learning_rate=0.0, epochs=2))
    for k in before:
        assert np.array_equal(before[k], net.params[k])


def test_single_sample_loss_decreases():
    net = tiny_net(seed=2)
    x, _ = small_set(1, seed=2)
    losses = []
    train(net, x, [1], OptimizerConfig(learning_rate=0.01, epochs=10, batch_size=1),
          on_epoch=lambda s: losses.append(s.loss))
    assert len(losses) == 10
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_training_log_fields():
    net = tiny_net()
    x, y = small_set()
    res = train(net, x, y, OptimizerConfig(epochs=2, batch_size=4))
    assert [s.epoch for s in res.history] == [1, 2]
    for s in res.history:
        assert 0 <= s.accuracy <= 1 and s.loss > 0 and s.mean_walk_iters >= 1
    assert set(res.velocity) == set(net.params)


def test_fixed_seed_training_is_bit_reproducible(tmp_path):
    x, y = small_set(8, seed=3)
    blobs = []
    for run in range(2):
        net = tiny_net(seed=7)
        res = train(net, x, y, OptimizerConfig(epochs=2, batch_size=3, seed=11))
        path = tmp_path / f"run{run}.spn"
        save_checkpoint(res.net, path, res.velocity, [vars(s) for s in res.history])
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1]


def test_train_errors():
    net = tiny_net()
    with pytest.raises(DatasetError):
        train(net, np.zeros((0, 1, 16, 16)), [], OptimizerConfig())
    with pytest.raises(DatasetError):
        train(net, np.zeros((1, 1, 16, 16)), [3], OptimizerConfig())
