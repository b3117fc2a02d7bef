import numpy as np
import pytest

from tilebot import netcore as nc
from tilebot.netcore import Tensor


# ---------------------------------------------------------------------------
# finite-difference machinery


def numeric_grad(make_loss, param, eps=1e-6):
    g = np.zeros_like(param.data)
    for i in range(param.data.size):  # index, not ravel: views can be copies
        idx = np.unravel_index(i, param.data.shape)
        old = param.data[idx]
        param.data[idx] = old + eps
        lp = float(make_loss().data)
        param.data[idx] = old - eps
        lm = float(make_loss().data)
        param.data[idx] = old
        g[idx] = (lp - lm) / (2 * eps)
    return g


def assert_grads_close(analytic, numeric, tol=1e-4):
    denom = np.maximum(1e-4, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.max(np.abs(analytic - numeric) / denom)
    assert err < tol, f"max relative gradient error {err:.3e}"


def check_grads(make_loss, params):
    loss = make_loss()
    loss.backward()
    for p in params:
        assert_grads_close(p.grad, numeric_grad(make_loss, p))


# ---------------------------------------------------------------------------
# per-op gradient checks


@pytest.mark.parametrize("name,fn,positive", [
    ("tanh", lambda t: t.tanh().sum(), False),
    ("exp", lambda t: t.exp().sum(), False),
    ("log", lambda t: t.log().sum(), True),
    ("square", lambda t: t.square().sum(), False),
    ("softplus", lambda t: t.softplus().sum(), False),
    ("clip", lambda t: t.clip(-0.5, 0.5).square().sum(), False),
    ("sum_axis0", lambda t: t.sum(axis=0).square().sum(), False),
    ("mean_axis1", lambda t: t.mean(axis=1).square().sum(), False),
    ("mean_all", lambda t: t.mean() * 3.0, False),
    ("logsumexp", lambda t: t.logsumexp(axis=1).sum(), False),
    ("reshape", lambda t: t.reshape(-1, 1).square().sum(), False),
    ("neg_sub", lambda t: (-t - 0.3).square().sum(), False),
])
def test_unary_op_gradients(name, fn, positive):
    rng = np.random.default_rng(hash(name) % 2**32)
    data = rng.normal(size=(4, 5))
    if positive:
        data = np.abs(data) + 0.5
    # keep clip inputs away from the kink where FD is one-sided
    if name == "clip":
        data = np.where(np.abs(np.abs(data) - 0.5) < 0.05, 0.7, data)
    t = Tensor(data)
    check_grads(lambda: fn(t), [t])


def test_binary_op_gradients():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(4, 5)))
    b = Tensor(rng.normal(size=(4, 5)) + 3.0)  # offset avoids minimum() ties
    row = Tensor(rng.normal(size=(1, 5)))
    check_grads(lambda: ((a + b) * (a - b)).sum(), [a, b])
    check_grads(lambda: (a * row).sum(), [a, row])  # broadcast
    check_grads(lambda: a.minimum(b).sum(), [a, b])
    check_grads(lambda: a.minimum(-1.0).sum(), [a])


def test_matmul_gradients():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(6, 4)))
    w = Tensor(rng.normal(size=(4, 3)))
    check_grads(lambda: (x @ w).square().sum(), [x, w])


def test_gather_gradients():
    rng = np.random.default_rng(3)
    t = Tensor(rng.normal(size=(5, 3)))
    idx = np.array([0, 2, 1, 1, 0])
    check_grads(lambda: t.gather(idx).square().sum(), [t])


def test_mlp_gradients_match_fd():
    rng = np.random.default_rng(4)
    mlp = nc.init_mlp((4, 8, 5, 3), rng)
    x = rng.normal(size=(7, 4))

    def loss():
        out = nc.mlp_forward(mlp, x)
        return out.square().mean() + out.exp().mean() * 0.1

    check_grads(loss, mlp.params())


def test_gaussian_head_gradients():
    rng = np.random.default_rng(5)
    mean = Tensor(rng.normal(size=(6, 3)))
    log_std = Tensor(rng.normal(size=3) * 0.3)
    actions = rng.normal(size=(6, 3))
    check_grads(lambda: nc.gaussian_logprob(mean, log_std, actions).mean(),
                [mean, log_std])
    check_grads(lambda: nc.gaussian_entropy(log_std.clip(-5, 2)), [log_std])


def test_categorical_head_gradients():
    rng = np.random.default_rng(6)
    logits = Tensor(rng.normal(size=(6, 4)))
    idx = np.array([0, 3, 1, 2, 2, 0])
    check_grads(lambda: nc.categorical_logprob(logits, idx).mean(), [logits])
    check_grads(lambda: nc.categorical_entropy(logits).mean(), [logits])


def test_clipped_surrogate_gradients():
    # The exact objective shape used by the policy update.
    rng = np.random.default_rng(7)
    mean = Tensor(rng.normal(size=(8, 3)) * 0.1)
    log_std = Tensor(np.full(3, -0.5))
    actions = rng.normal(size=(8, 3))
    logp_old = rng.normal(size=8) * 0.1 - 3.0
    adv = rng.normal(size=8)

    def loss():
        logp = nc.gaussian_logprob(mean, log_std, actions)
        ratio = (logp - logp_old).exp()
        surr = (ratio * adv).minimum(ratio.clip(0.8, 1.2) * adv)
        return -surr.mean()

    check_grads(loss, [mean, log_std])


def test_bce_via_softplus_gradients():
    rng = np.random.default_rng(8)
    logits = Tensor(rng.normal(size=(10, 1)))
    y = (rng.random(10) > 0.5).astype(float).reshape(-1, 1)
    # y*log(sigmoid) + (1-y)*log(1-sigmoid), written with softplus
    check_grads(
        lambda: ((-logits).softplus() * y + logits.softplus() * (1 - y)).mean(),
        [logits])


def test_constant_loss_zero_gradient():
    t = Tensor(np.array([1.0, 2.0]))
    loss = (t * 0.0).sum() + 5.0
    loss.backward()
    np.testing.assert_array_equal(t.grad, [0.0, 0.0])


def test_loss_sum_linearity():
    rng = np.random.default_rng(9)
    t = Tensor(rng.normal(size=(3, 3)))
    t.square().sum().backward()
    g1 = t.grad.copy()
    t.tanh().sum().backward()
    g2 = t.grad.copy()
    (t.square().sum() + t.tanh().sum()).backward()
    np.testing.assert_allclose(t.grad, g1 + g2, atol=1e-12)


# ---------------------------------------------------------------------------
# MLP structure


def test_zero_weight_mlp_outputs_zero():
    mlp = nc.init_mlp((3, 4, 2), np.random.default_rng(0))
    for w in mlp.weights:
        w.data[:] = 0.0
    out = nc.mlp_forward(mlp, np.ones((5, 3)))
    np.testing.assert_array_equal(out.data, np.zeros((5, 2)))


def test_identity_hidden_layer_is_tanh():
    mlp = nc.init_mlp((3, 3, 3), np.random.default_rng(0))
    mlp.weights[0].data = np.eye(3)
    mlp.weights[1].data = np.eye(3)
    for b in mlp.biases:
        b.data[:] = 0.0
    x = np.array([[0.2, -0.7, 1.5]])
    np.testing.assert_allclose(nc.mlp_forward(mlp, x).data, np.tanh(x),
                               atol=1e-15)


def test_golden_seed_net_output():
    mlp = nc.init_mlp((4, 8, 3), np.random.default_rng(0))
    x = np.array([[0.3, -1.2, 0.05, 0.9], [1.0, 0.0, -0.5, 0.25]])
    expect = np.array([
        [-0.00642478552358389, 0.00218970278539823, -0.00281127423434693],
        [-0.00303659782876778, -0.00254975413967172, -0.00128215170273548],
    ])
    np.testing.assert_allclose(nc.mlp_forward(mlp, x).data, expect, rtol=1e-8)


def test_numpy_forward_matches_tape_forward():
    rng = np.random.default_rng(10)
    mlp = nc.init_mlp((5, 16, 16, 4), rng)
    x = rng.normal(size=(9, 5))
    np.testing.assert_allclose(nc.mlp_forward_np(mlp, x),
                               nc.mlp_forward(mlp, x).data, atol=1e-14)


def test_orthogonal_init_properties():
    rng = np.random.default_rng(11)
    tall = nc.orthogonal_init(rng, 8, 3, gain=np.sqrt(2))
    np.testing.assert_allclose(tall.T @ tall, 2.0 * np.eye(3), atol=1e-10)
    wide = nc.orthogonal_init(rng, 3, 8, gain=0.01)
    np.testing.assert_allclose(wide @ wide.T, 1e-4 * np.eye(3), atol=1e-12)


def test_init_deterministic():
    m1 = nc.init_mlp((4, 8, 2), np.random.default_rng(42))
    m2 = nc.init_mlp((4, 8, 2), np.random.default_rng(42))
    for a, b in zip(m1.params(), m2.params()):
        np.testing.assert_array_equal(a.data, b.data)


def test_dimension_mismatch():
    mlp = nc.init_mlp((4, 8, 2), np.random.default_rng(0))
    with pytest.raises(nc.DimensionMismatch):
        nc.mlp_forward(mlp, np.zeros((3, 5)))


# ---------------------------------------------------------------------------
# distributions: closed forms and sampling


def test_gaussian_logprob_at_mean():
    log_std = np.array([0.1, -0.3, 0.7])
    mean = np.zeros((1, 3))
    lp = nc.gaussian_logprob(mean, log_std, mean).data[0]
    expect = -log_std.sum() - 1.5 * np.log(2 * np.pi)
    assert abs(lp - expect) < 1e-12


def test_gaussian_entropy_doubling_sigma():
    log_std = np.array([0.2, -0.5])
    h0 = float(nc.gaussian_entropy(log_std).data)
    h1 = float(nc.gaussian_entropy(log_std + np.log(2)).data)
    assert abs((h1 - h0) - 2 * np.log(2)) < 1e-12


def test_gaussian_sample_monte_carlo_mean():
    rng = np.random.default_rng(12)
    mean = np.array([1.5, -2.0])
    log_std = np.array([0.0, 0.5])
    draws = np.asarray([nc.gaussian_sample(mean, log_std, rng)
                        for _ in range(100_000)])
    se = np.exp(log_std) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)


def test_gaussian_sample_deterministic():
    a = nc.gaussian_sample(np.zeros(3), np.zeros(3), np.random.default_rng(5))
    b = nc.gaussian_sample(np.zeros(3), np.zeros(3), np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


def test_categorical_uniform_entropy():
    h = nc.categorical_entropy(np.zeros((1, 7))).data[0]
    assert abs(h - np.log(7)) < 1e-12


def test_categorical_dominant_logit_entropy():
    logits = np.array([[20.0, 0.0, 0.0]])
    assert nc.categorical_entropy(logits).data[0] < 1e-6


def test_categorical_logprob_matches_softmax():
    rng = np.random.default_rng(13)
    logits = rng.normal(size=(5, 4))
    idx = np.array([1, 0, 3, 2, 2])
    lp = nc.categorical_logprob(Tensor(logits), idx).data
    p = nc.softmax(logits)
    np.testing.assert_allclose(lp, np.log(p[np.arange(5), idx]), atol=1e-12)


def test_categorical_sample_frequencies():
    rng = np.random.default_rng(14)
    logits = np.array([0.0, 1.0, -1.0])
    p = nc.softmax(logits)
    n = 100_000
    draws = nc.categorical_sample(np.tile(logits, (n, 1)), rng)
    freq = np.bincount(draws, minlength=3) / n
    sigma = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freq - p) < 3 * sigma)


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]))
    st = nc.adam_init([p])
    p.grad = np.zeros(2)
    nc.adam_step([p], st)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    q = Tensor(np.array([3.0]))
    st2 = nc.adam_init([q])
    q.grad = None
    nc.adam_step([q], st2)
    np.testing.assert_array_equal(q.data, [3.0])


def test_adam_first_step_magnitude_is_lr():
    p = Tensor(np.array([1.0, 2.0, 3.0]))
    st = nc.adam_init([p], lr=5e-4)
    p.grad = np.array([3.7, -0.2, 10.0])
    before = p.data.copy()
    nc.adam_step([p], st)
    np.testing.assert_allclose(np.abs(p.data - before), 5e-4, rtol=1e-6)
    assert np.all(np.sign(before - p.data) == np.sign(p.grad))


def test_adam_minimizes_quadratic_bowl():
    p = Tensor(np.array([5.0, -4.0]))
    st = nc.adam_init([p], lr=0.05)
    for _ in range(2000):
        loss = p.square().sum()
        loss.backward()
        nc.adam_step([p], st)
        if np.all(np.abs(p.data) < 1e-3):
            break
    assert np.all(np.abs(p.data) < 1e-3)


# ---------------------------------------------------------------------------
# checkpoint container


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    arrays = {"w0": rng.normal(size=(4, 3)), "b0": rng.normal(size=3),
              "scalar": np.array(2.5)}
    meta = {"step": 123, "rng_state": {"state": {"state": 12345, "inc": 67}}}
    path = tmp_path / "ckpt.mlp1"
    nc.save_arrays(path, arrays, meta)
    loaded, meta2 = nc.load_arrays(path)
    assert meta2 == meta
    assert list(loaded) == ["w0", "b0", "scalar"]
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])


def test_checkpoint_magic_rejected(tmp_path):
    path = tmp_path / "bad.mlp1"
    path.write_bytes(b"XXXX" + b"\x00" * 32)
    with pytest.raises(ValueError, match="MLP1"):
        nc.load_arrays(path)
