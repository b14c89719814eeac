import numpy as np
import pytest

from berthtrack.nn import MLP, Adam, policy_forward
from oracles import dense_forward


def _net(sizes, out_act, seed, scale=None):
    return MLP(sizes, out_act, scale).init(np.random.default_rng(seed))


def _loss(net, x, w):
    return float(np.sum(w * net.forward(x)))


@pytest.mark.parametrize("out_act", ["linear", "sigmoid", "tanh"])
def test_gradients_match_central_differences(out_act):
    rng = np.random.default_rng(0)
    for trial in range(5):
        net = _net([4, 8, 3], out_act, trial, scale=rng.uniform(0.5, 2.0, 4))
        x = rng.normal(size=(6, 4))
        w = rng.normal(size=(6, 3))
        _, acts = net.forward_cache(x)
        grads, gx = net.backward(acts, w, need_input_grad=True)
        eps = 1e-5
        for p, g in zip(net.params, grads):
            fd = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + eps
                up = _loss(net, x, w)
                p[idx] = old - eps
                down = _loss(net, x, w)
                p[idx] = old
                fd[idx] = (up - down) / (2 * eps)
            rel = np.abs(fd - g) / np.maximum(1e-3, np.abs(fd) + np.abs(g))
            assert rel.max() < 1e-4
        fdx = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += eps
            xm[idx] -= eps
            fdx[idx] = (_loss(net, xp, w) - _loss(net, xm, w)) / (2 * eps)
        np.testing.assert_allclose(gx, fdx, rtol=1e-4, atol=1e-7)


def test_zero_loss_gives_zero_gradients():
    net = _net([4, 8, 3], "linear", 1)
    x = np.random.default_rng(1).normal(size=(5, 4))
    y, acts = net.forward_cache(x)
    grads, _ = net.backward(acts, 2 * (y - y))
    assert all(np.all(g == 0) for g in grads)


def test_batch_gradient_is_sum_of_sample_gradients():
    net = _net([4, 8, 3], "sigmoid", 2)
    rng = np.random.default_rng(2)
    x = rng.normal(size=(7, 4))
    w = rng.normal(size=(7, 3))
    _, acts = net.forward_cache(x)
    total, _ = net.backward(acts, w)
    parts = [net.backward(net.forward_cache(x[i:i + 1])[1], w[i:i + 1])[0] for i in range(7)]
    for k, g in enumerate(total):
        np.testing.assert_allclose(g, sum(p[k] for p in parts), atol=1e-12)


def test_non_finite_gradient_raises():
    net = _net([2, 3, 1], "linear", 3)
    _, acts = net.forward_cache(np.ones((1, 2)))
    with pytest.raises(FloatingPointError):
        net.backward(acts, np.array([[np.nan]]))


def test_forward_matches_neuron_by_neuron_oracle():
    rng = np.random.default_rng(4)
    for out_act in ("sigmoid", "linear"):
        net = _net([32, 16, 16, 16, 3], out_act, 5)
        for _ in range(10):
            x = rng.normal(size=32)
            W = net.params[0::2]
            b = net.params[1::2]
            np.testing.assert_allclose(net.forward(x), dense_forward(W, b, x, out_act), rtol=0, atol=1e-10)


def test_input_scale_divides_inputs():
    net = _net([3, 5, 2], "linear", 6, scale=[2.0, 4.0, 0.5])
    plain = MLP([3, 5, 2], "linear")
    plain.params = [p.copy() for p in net.params]
    x = np.array([1.0, -2.0, 0.3])
    np.testing.assert_allclose(net.forward(x), plain.forward(x / [2.0, 4.0, 0.5]), atol=1e-15)


def test_policy_zero_weights_gives_half():
    net = MLP([32, 256, 256, 256, 3], "sigmoid")
    np.testing.assert_array_equal(policy_forward(net, np.ones(32)), [0.5, 0.5, 0.5])


def test_policy_outputs_in_open_unit_interval():
    net = _net([22, 64, 3], "sigmoid", 7)
    for p in net.params:
        p *= 40.0  # drive the pre-activations far into saturation
    s = np.random.default_rng(7).normal(0, 50, (500, 22))
    out = policy_forward(net, s)
    assert np.all(out >= 0.0) and np.all(out <= 1.0) and np.all(np.isfinite(out))


def test_dimension_mismatch_raises():
    net = MLP([32, 8, 3], "sigmoid")
    with pytest.raises(ValueError):
        policy_forward(net, np.zeros(22))
    with pytest.raises(ValueError):
        net.forward(np.zeros((4, 31)))
    with pytest.raises(ValueError):
        MLP([3, 2], "relu")
    with pytest.raises(ValueError):
        MLP([3, 2], input_scale=[1.0, 0.0, 1.0])


def test_flat_roundtrip_and_soft_update():
    a = _net([4, 6, 2], "linear", 8)
    b = _net([4, 6, 2], "linear", 9)
    v = a.flat()
    c = a.copy()
    c.set_flat(np.zeros_like(v))
    c.set_flat(v)
    np.testing.assert_array_equal(c.flat(), v)
    with pytest.raises(ValueError):
        c.set_flat(np.zeros(v.size + 1))
    d0 = np.linalg.norm(b.flat() - a.flat())
    dists = []
    for _ in range(200):
        b.soft_update(a, 0.05)
        dists.append(np.linalg.norm(b.flat() - a.flat()))
    # geometric decay at rate (1 - tau)
    np.testing.assert_allclose(dists, d0 * 0.95 ** np.arange(1, 201), rtol=1e-8)


def test_adam_matches_reference_update():
    rng = np.random.default_rng(10)
    p = rng.normal(size=5)
    ref = p.copy()
    opt = Adam([p], lr=0.01)
    m = np.zeros(5)
    v = np.zeros(5)
    for t in range(1, 6):
        g = rng.normal(size=5)
        opt.step([p], [g])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** t)
        vhat = v / (1 - 0.999 ** t)
        ref -= 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
        # the two epsilon placements differ by O(eps)
        np.testing.assert_allclose(p, ref, atol=1e-8)


def test_float32_networks_stay_float32():
    net = MLP([4, 8, 2], "linear", dtype=np.float32).init(np.random.default_rng(0))
    y, acts = net.forward_cache(np.ones((3, 4)))
    grads, _ = net.backward(acts, np.ones((3, 2)))
    assert y.dtype == np.float32 and all(g.dtype == np.float32 for g in grads)
