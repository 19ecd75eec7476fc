"""Kernel tests: naive-loop conv oracle, finite differences, reference Adam."""

import numpy as np
import pytest

from ndlite import nn


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def fd_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar f wrt array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
        it.iternext()
    return g


def naive_conv2d(x, w, b=None):
    """Direct six-loop 'same' stride-1 convolution; the oracle."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    y = np.zeros((n, o, h, wd))
    for ni in range(n):
        for oi in range(o):
            for hi in range(h):
                for wi in range(wd):
                    acc = 0.0
                    for ci in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                hh, ww = hi + u - ph, wi + v - pw
                                if 0 <= hh < h and 0 <= ww < wd:
                                    acc += x[ni, ci, hh, ww] * w[oi, ci, u, v]
                    y[ni, oi, hi, wi] = acc + (b[oi] if b is not None else 0.0)
    return y


# ------------------------------------------------------------------ conv2d

def test_conv_matches_naive_3x3():
    r = np.random.default_rng(0)
    x = r.normal(size=(2, 3, 5, 4))
    w = r.normal(size=(4, 3, 3, 3))
    b = r.normal(size=4)
    y, _ = nn.conv2d(x, w, b)
    assert rel_err(y, naive_conv2d(x, w, b)) < 1e-12


def test_conv_matches_naive_1x1():
    r = np.random.default_rng(1)
    x = r.normal(size=(3, 4, 16, 1))
    w = r.normal(size=(5, 4, 1, 1))
    y, _ = nn.conv2d(x, w)
    assert rel_err(y, naive_conv2d(x, w)) < 1e-12


def test_conv_matches_naive_depth_one_3x3():
    # W=1 exercises zero padding on the narrow axis.
    r = np.random.default_rng(2)
    x = r.normal(size=(2, 6, 16, 1))
    w = r.normal(size=(6, 6, 3, 3))
    y, _ = nn.conv2d(x, w)
    assert rel_err(y, naive_conv2d(x, w)) < 1e-12


def test_conv_backward_finite_difference():
    r = np.random.default_rng(3)
    x = r.normal(size=(2, 3, 6, 5))
    w = r.normal(size=(4, 3, 3, 3))
    b = r.normal(size=4)
    proj = r.normal(size=(2, 4, 6, 5))

    def loss():
        y, _ = nn.conv2d(x, w, b)
        return float((y * proj).sum())

    y, cache = nn.conv2d(x, w, b)
    dx, dw, db = nn.conv2d_grad(proj, cache)
    assert rel_err(dx, fd_grad(loss, x)) < 1e-6
    assert rel_err(dw, fd_grad(loss, w)) < 1e-6
    assert rel_err(db, fd_grad(loss, b)) < 1e-6


def test_conv_backward_no_bias():
    r = np.random.default_rng(4)
    x = r.normal(size=(2, 2, 4, 3))
    w = r.normal(size=(3, 2, 1, 1))
    y, cache = nn.conv2d(x, w)
    proj = r.normal(size=y.shape)
    dx, dw, db = nn.conv2d_grad(proj, cache)
    assert db is None

    def loss():
        y2, _ = nn.conv2d(x, w)
        return float((y2 * proj).sum())

    assert rel_err(dw, fd_grad(loss, w)) < 1e-6


def test_conv_validates_shapes():
    x = np.zeros((1, 3, 4, 4))
    with pytest.raises(ValueError):
        nn.conv2d(x, np.zeros((2, 5, 3, 3)))
    with pytest.raises(ValueError):
        nn.conv2d(x, np.zeros((2, 3, 2, 2)))


# --------------------------------------------------------------- batchnorm

def test_batchnorm_training_normalizes():
    r = np.random.default_rng(5)
    x = r.normal(loc=3.0, scale=2.0, size=(8, 4, 6, 5))
    bn = nn.BnState.create(4)
    y, _ = nn.batchnorm(x, bn, training=True)
    assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-10
    assert rel_err(y.var(axis=(0, 2, 3)), np.ones(4)) < 1e-4  # off by eps only


def test_batchnorm_running_stats_update():
    r = np.random.default_rng(6)
    x = r.normal(size=(16, 3, 4, 4))
    bn = nn.BnState.create(3, momentum=0.25)
    mean0, var0 = bn.running_mean.copy(), bn.running_var.copy()
    nn.batchnorm(x, bn, training=True)
    bm = x.mean(axis=(0, 2, 3))
    bv = x.var(axis=(0, 2, 3))
    assert rel_err(bn.running_mean, 0.75 * mean0 + 0.25 * bm) < 1e-12
    assert rel_err(bn.running_var, 0.75 * var0 + 0.25 * bv) < 1e-12


def test_batchnorm_inference_uses_running_stats():
    r = np.random.default_rng(7)
    bn = nn.BnState.create(2)
    bn.gamma = np.array([2.0, -1.0])
    bn.beta = np.array([0.5, 1.5])
    bn.running_mean = np.array([1.0, -2.0])
    bn.running_var = np.array([4.0, 0.25])
    x = r.normal(size=(1, 2, 3, 3))
    y, _ = nn.batchnorm(x, bn, training=False)
    expect = (bn.gamma[None, :, None, None]
              * (x - bn.running_mean[None, :, None, None])
              / np.sqrt(bn.running_var + bn.eps)[None, :, None, None]
              + bn.beta[None, :, None, None])
    assert rel_err(y, expect) < 1e-12


def test_batchnorm_rejects_tiny_training_batch():
    bn = nn.BnState.create(2)
    x = np.zeros((1, 2, 4, 4))
    with pytest.raises(ValueError):
        nn.batchnorm(x, bn, training=True)
    nn.batchnorm(x, bn, training=False)  # inference is fine


def test_batchnorm_backward_finite_difference_4d():
    r = np.random.default_rng(8)
    x = r.normal(size=(4, 3, 5, 2))
    bn = nn.BnState.create(3)
    bn.gamma = r.normal(size=3)
    bn.beta = r.normal(size=3)
    proj = r.normal(size=x.shape)

    def loss():
        y, _ = nn.batchnorm(x, bn, training=True)
        return float((y * proj).sum())

    y, cache = nn.batchnorm(x, bn, training=True)
    dx, dgamma, dbeta = nn.batchnorm_grad(proj, cache)
    assert rel_err(dx, fd_grad(loss, x)) < 1e-5
    assert rel_err(dgamma, fd_grad(loss, bn.gamma)) < 1e-6
    assert rel_err(dbeta, fd_grad(loss, bn.beta)) < 1e-6


def test_batchnorm_backward_finite_difference_2d():
    r = np.random.default_rng(9)
    x = r.normal(size=(6, 4))
    bn = nn.BnState.create(4)
    bn.gamma = r.normal(size=4)
    proj = r.normal(size=x.shape)

    def loss():
        y, _ = nn.batchnorm(x, bn, training=True)
        return float((y * proj).sum())

    y, cache = nn.batchnorm(x, bn, training=True)
    dx, dgamma, dbeta = nn.batchnorm_grad(proj, cache)
    assert rel_err(dx, fd_grad(loss, x)) < 1e-5
    assert rel_err(dgamma, fd_grad(loss, bn.gamma)) < 1e-6


def test_batchnorm_backward_inference_mode():
    r = np.random.default_rng(10)
    x = r.normal(size=(3, 2, 4, 4))
    bn = nn.BnState.create(2)
    bn.running_mean = r.normal(size=2)
    bn.running_var = np.abs(r.normal(size=2)) + 0.5
    proj = r.normal(size=x.shape)

    def loss():
        y, _ = nn.batchnorm(x, bn, training=False)
        return float((y * proj).sum())

    y, cache = nn.batchnorm(x, bn, training=False)
    dx, _, _ = nn.batchnorm_grad(proj, cache)
    assert rel_err(dx, fd_grad(loss, x)) < 1e-6


# ------------------------------------------------------------------- dense

def test_dense_forward_and_backward():
    r = np.random.default_rng(11)
    x = r.normal(size=(5, 7))
    w = r.normal(size=(7, 3))
    b = r.normal(size=3)
    y, cache = nn.dense(x, w, b)
    assert rel_err(y, x @ w + b) < 1e-12
    proj = r.normal(size=y.shape)

    def loss():
        y2, _ = nn.dense(x, w, b)
        return float((y2 * proj).sum())

    dx, dw, db = nn.dense_grad(proj, cache)
    assert rel_err(dx, fd_grad(loss, x)) < 1e-6
    assert rel_err(dw, fd_grad(loss, w)) < 1e-6
    assert rel_err(db, fd_grad(loss, b)) < 1e-6


# -------------------------------------------------------------- activations

def test_relu():
    x = np.array([-2.0, -0.0, 0.0, 3.0])
    y, cache = nn.relu(x)
    assert np.array_equal(y, [0.0, 0.0, 0.0, 3.0])
    dy = np.ones_like(x)
    assert np.array_equal(nn.relu_grad(dy, cache), [0.0, 0.0, 0.0, 1.0])


def test_sigmoid_values_and_grad():
    r = np.random.default_rng(12)
    x = r.normal(size=(4, 5))
    y, cache = nn.sigmoid(x)
    assert rel_err(y, 1.0 / (1.0 + np.exp(-x))) < 1e-12
    proj = r.normal(size=x.shape)

    def loss():
        y2, _ = nn.sigmoid(x)
        return float((y2 * proj).sum())

    assert rel_err(nn.sigmoid_grad(proj, cache), fd_grad(loss, x)) < 1e-6


def test_sigmoid_extreme_inputs_stay_finite():
    y, _ = nn.sigmoid(np.array([-1000.0, 1000.0]))
    assert np.all(np.isfinite(y))
    assert y[0] == 0.0 or y[0] < 1e-300
    assert y[1] == 1.0


def test_softmax_rows_normalize_and_stable():
    logits = np.array([[1e4, 1e4 - 1.0], [-1e4, 0.0]])
    p = nn.softmax(logits)
    assert np.all(np.isfinite(p))
    assert rel_err(p.sum(axis=1), np.ones(2)) < 1e-12
    assert p[0, 0] > p[0, 1] and p[1, 1] > p[1, 0]


def test_softmax_xent_value_and_grad():
    r = np.random.default_rng(13)
    logits = r.normal(size=(6, 2))
    labels = r.integers(0, 2, size=6)
    loss, dlogits = nn.softmax_xent(logits, labels)
    p = nn.softmax(logits)
    expect = -np.mean(np.log(p[np.arange(6), labels]))
    assert abs(loss - expect) < 1e-10

    def f():
        l2, _ = nn.softmax_xent(logits, labels)
        return float(l2)

    assert rel_err(dlogits, fd_grad(f, logits)) < 1e-6


# -------------------------------------------------------------------- adam

def reference_adam(params, grad_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam, scalar-looped."""
    p = {k: v.copy() for k, v in params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.items()}
    for t, grads in enumerate(grad_seq, start=1):
        for k, g in grads.items():
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mhat = m[k] / (1 - b1 ** t)
            vhat = v[k] / (1 - b2 ** t)
            p[k] = p[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return p


def test_adam_matches_reference():
    r = np.random.default_rng(14)
    params = {"a": r.normal(size=(3, 4)), "b": r.normal(size=5)}
    grad_seq = [{"a": r.normal(size=(3, 4)), "b": r.normal(size=5)}
                for _ in range(10)]
    expect = reference_adam(params, grad_seq, lr=0.01)
    opt = nn.Adam(lr=0.01)
    live = {k: v.copy() for k, v in params.items()}
    for grads in grad_seq:
        opt.step(live, grads)
    for k in params:
        assert rel_err(live[k], expect[k]) < 1e-10


def test_adam_skips_none_grads_and_takes_lr_override():
    params = {"a": np.array([1.0]), "b": np.array([1.0])}
    opt = nn.Adam(lr=0.1)
    opt.step(params, {"a": np.array([1.0]), "b": None}, lr=0.5)
    assert params["b"][0] == 1.0
    # First step moves by ~lr in the gradient direction.
    assert abs(params["a"][0] - 0.5) < 1e-6
