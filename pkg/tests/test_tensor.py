"""Tensor op semantics and gradient checks against independent oracles."""

import numpy as np
import pytest

from pulseid import tensor as T
from pulseid.errors import ConfigError, ContractError, NumericError, ShapeError
from pulseid.optim import ParamStore, finite_diff


def naive_conv1d(x, k):
    """Triple-loop same-length cross-correlation oracle."""
    b, c, l = x.shape
    o, _, kk = k.shape
    p = (kk - 1) // 2
    y = np.zeros((b, o, l))
    for bi in range(b):
        for oi in range(o):
            for t in range(l):
                acc = 0.0
                for ci in range(c):
                    for j in range(kk):
                        s = t + j - p
                        if 0 <= s < l:
                            acc += x[bi, ci, s] * k[oi, ci, j]
                y[bi, oi, t] = acc
    return y


def naive_conv2d(x, k):
    b, c, h, w = x.shape
    o, _, kh, kw = k.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    y = np.zeros((b, o, h, w))
    for bi in range(b):
        for oi in range(o):
            for r in range(h):
                for t in range(w):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                rr, tt = r + i - ph, t + j - pw
                                if 0 <= rr < h and 0 <= tt < w:
                                    acc += x[bi, ci, rr, tt] * k[oi, ci, i, j]
                    y[bi, oi, r, t] = acc
    return y


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


def check_grads(build, params, tol=1e-4, eps=1e-5):
    """Compare tape gradients of build(params) against central differences."""
    with T.Tape() as tape:
        loss = build(params)
    analytic = T.grad(tape, loss, params)
    numeric = finite_diff(lambda p: build(p).item(), params, eps=eps)
    for name in params.names():
        err = rel_err(analytic[name].data, numeric[name].data)
        assert err <= tol, f"{name}: rel err {err:.2e}"


# ---------------------------------------------------------------------------
# forward semantics


def test_dense_identity_and_bias():
    x = T.Tensor([[1.0, 2.0]])
    assert np.allclose(T.dense(x, T.Tensor(np.eye(2)), T.Tensor([0.0, 0.0])).data, [[1, 2]])
    assert np.allclose(
        T.dense(x, T.Tensor(np.zeros((2, 2))), T.Tensor([3.0, 4.0])).data, [[3, 4]]
    )
    assert np.allclose(
        T.dense(x, T.Tensor(np.ones((2, 2))), T.Tensor([0.0, 0.0])).data, [[3, 3]]
    )


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        T.dense(T.Tensor([[1.0, 2.0]]), T.Tensor(np.ones((3, 2))), T.Tensor([0.0, 0.0]))


def test_conv1d_hand_cases():
    x = T.Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    ident = T.conv1d(x, T.Tensor(np.array([[[1.0]]])))
    assert np.allclose(ident.data, x.data)
    # cross-correlation (no kernel flip): y[t] = sum_j x[t+j-1] * k[j]
    edge = T.conv1d(x, T.Tensor(np.array([[[1.0, 0.0, -1.0]]])))
    assert np.allclose(edge.data, [[[-2.0, -2.0, 2.0]]])
    zeros = T.conv1d(T.Tensor(np.zeros((1, 1, 5))), T.Tensor(np.array([[[1.0, 2.0, 3.0]]])))
    assert np.allclose(zeros.data, 0.0)


def test_conv1d_even_kernel_rejected():
    with pytest.raises(ConfigError):
        T.conv1d(T.Tensor(np.zeros((1, 1, 4))), T.Tensor(np.zeros((1, 1, 2))))


def test_conv2d_hand_cases():
    x = T.Tensor(np.arange(4.0).reshape(1, 1, 2, 2) + 1.0)  # [[1,2],[3,4]]
    one = T.conv2d(x, T.Tensor(np.ones((1, 1, 1, 1))))
    assert np.allclose(one.data, x.data)
    summed = T.conv2d(x, T.Tensor(np.ones((1, 1, 3, 3))))
    assert np.allclose(summed.data[0, 0], [[10.0, 10.0], [10.0, 10.0]])
    const = T.conv2d(T.Tensor(np.full((1, 1, 5, 5), 3.0)), T.Tensor(np.full((1, 1, 3, 3), 1 / 9)))
    assert np.allclose(const.data[0, 0, 1:-1, 1:-1], 3.0)


@pytest.mark.parametrize("seed", range(5))
def test_conv_matches_naive_loops(seed):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=(2, 3, 11))
    k1 = rng.normal(size=(4, 3, 5))
    assert rel_err(T.conv1d(T.Tensor(x1), T.Tensor(k1)).data, naive_conv1d(x1, k1)) < 1e-10
    x2 = rng.normal(size=(2, 2, 6, 7))
    k2 = rng.normal(size=(3, 2, 3, 3))
    assert rel_err(T.conv2d(T.Tensor(x2), T.Tensor(k2)).data, naive_conv2d(x2, k2)) < 1e-10


def test_softmax_values_and_invariance():
    p = T.softmax(T.Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(p.data, [1 / 3] * 3)
    logs = T.softmax(T.Tensor(np.log([1.0, 2.0, 3.0])))
    assert np.allclose(logs.data, [1 / 6, 2 / 6, 3 / 6])
    x = np.random.default_rng(0).normal(size=(4, 7))
    a = T.softmax(T.Tensor(x)).data
    b = T.softmax(T.Tensor(x + 13.5)).data
    assert np.allclose(a, b, atol=1e-12)
    assert np.allclose(a.sum(axis=-1), 1.0, atol=1e-12)


def test_attention_single_token_is_value_projection():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 1, 4))
    wv = rng.normal(size=(4, 4))
    out = T.attention(
        T.Tensor(x), T.Tensor(rng.normal(size=(4, 4))), T.Tensor(rng.normal(size=(4, 4))),
        T.Tensor(wv), heads=2,
    )
    assert np.allclose(out.data, x @ wv)


def test_attention_identical_tokens_identical_outputs():
    rng = np.random.default_rng(2)
    tok = rng.normal(size=4)
    x = np.tile(tok, (1, 5, 1))
    out = T.attention(
        T.Tensor(x), T.Tensor(rng.normal(size=(4, 4))), T.Tensor(rng.normal(size=(4, 4))),
        T.Tensor(rng.normal(size=(4, 4))), heads=2,
    ).data
    assert np.allclose(out, out[:, :1, :])


def test_attention_matches_direct_formula():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 2, 4))
    wq, wk, wv = (rng.normal(size=(4, 4)) for _ in range(3))
    got = T.attention(T.Tensor(x), T.Tensor(wq), T.Tensor(wk), T.Tensor(wv), heads=2).data

    q, k, v = x @ wq, x @ wk, x @ wv
    want = np.zeros_like(x)
    for h in range(2):
        sl = slice(2 * h, 2 * h + 2)
        s = q[0][:, sl] @ k[0][:, sl].T / np.sqrt(2.0)
        e = np.exp(s - s.max(axis=-1, keepdims=True))
        w = e / e.sum(axis=-1, keepdims=True)
        want[0][:, sl] = w @ v[0][:, sl]
    assert rel_err(got, want) < 1e-12


def test_attention_bad_heads():
    x = T.Tensor(np.zeros((1, 3, 4)))
    w = T.Tensor(np.zeros((4, 4)))
    with pytest.raises(ConfigError):
        T.attention(x, w, w, w, heads=3)


def test_nonfinite_rejected():
    with pytest.raises(NumericError):
        T.Tensor([1.0, np.nan])


def test_extract_segments_linear_values():
    x = T.Tensor(np.arange(10.0))
    seg = T.extract_segments(x, [(0, 9)], out_len=5)
    assert np.allclose(seg.data, [[0.0, 2.25, 4.5, 6.75, 9.0]])


def test_bandpass_time_removes_dc_keeps_band():
    fs = 30.0
    t = np.arange(300) / fs
    x = 5.0 + np.sin(2 * np.pi * 1.2 * t)
    y = T.bandpass_time(T.Tensor(x), fs, 0.66, 4.16).data
    assert abs(y.mean()) < 1e-9
    assert np.abs(y).max() == pytest.approx(1.0, rel=0.02)


# ---------------------------------------------------------------------------
# gradients vs the finite-difference oracle, >= 10 seeds per op family


@pytest.mark.parametrize("seed", range(10))
def test_grad_dense_chain(seed):
    rng = np.random.default_rng(seed)
    ps = ParamStore(seed)
    ps.create("w", (3, 4))
    ps.create("b", (4,), init="zeros")
    x = T.Tensor(rng.normal(size=(2, 3)))

    def build(p):
        return T.mean_all(T.tanh(T.dense(x, p["w"], p["b"])))

    check_grads(build, ps)


@pytest.mark.parametrize("seed", range(10))
def test_grad_conv1d_pool_relu(seed):
    rng = np.random.default_rng(100 + seed)
    ps = ParamStore(seed)
    ps.create("k", (2, 1, 3))
    ps.create("b", (2,), init="zeros")
    x = T.Tensor(rng.normal(size=(1, 1, 8)))

    def build(p):
        h = T.relu(T.bias_channels(T.conv1d(x, p["k"]), p["b"]))
        return T.mean_all(T.max_pool1d(h, 2))

    check_grads(build, ps)


@pytest.mark.parametrize("seed", range(10))
def test_grad_conv2d_rowpool_tanh(seed):
    rng = np.random.default_rng(200 + seed)
    ps = ParamStore(seed)
    ps.create("k", (2, 2, 3, 3))
    ps.create("b", (2,), init="zeros")
    x = T.Tensor(rng.normal(size=(1, 2, 6, 5)))

    def build(p):
        h = T.tanh(T.bias_channels(T.conv2d(x, p["k"]), p["b"]))
        return T.mean_all(T.avg_pool_rows(h, 3))

    check_grads(build, ps)


@pytest.mark.parametrize("seed", range(10))
def test_grad_attention(seed):
    rng = np.random.default_rng(300 + seed)
    ps = ParamStore(seed)
    for n in ("wq", "wk", "wv"):
        ps.create(n, (4, 4))
    x = T.Tensor(rng.normal(size=(2, 3, 4)))

    def build(p):
        return T.mean_all(T.attention(x, p["wq"], p["wk"], p["wv"], heads=2))

    check_grads(build, ps, tol=1e-3)


@pytest.mark.parametrize("seed", range(10))
def test_grad_softmax_logclamp_gather(seed):
    rng = np.random.default_rng(400 + seed)
    ps = ParamStore(seed)
    ps.create("w", (3, 4))
    x = T.Tensor(rng.normal(size=(2, 3)))

    def build(p):
        probs = T.softmax(T.dense(x, p["w"], T.Tensor(np.zeros(4))))
        return T.neg(T.mean_all(T.log_clamped(T.gather_col(probs, 1))))

    check_grads(build, ps)


@pytest.mark.parametrize("seed", range(10))
def test_grad_zscore_affine(seed):
    rng = np.random.default_rng(500 + seed)
    ps = ParamStore(seed)
    ps.create("g", (5,))
    ps.create("b", (5,), init="zeros")
    ps.create("x", (3, 5))

    def build(p):
        return T.mean_all(T.mul(T.layer_norm(p["x"], p["g"], p["b"]),
                                T.layer_norm(p["x"], p["g"], p["b"])))

    check_grads(build, ps, tol=1e-3)


@pytest.mark.parametrize("seed", range(10))
def test_grad_bandpass_segments(seed):
    rng = np.random.default_rng(600 + seed)
    ps = ParamStore(seed)
    ps.create("x", (40,))

    def build(p):
        y = T.bandpass_time(p["x"], 10.0, 0.8, 4.0)
        seg = T.extract_segments(y, [(3, 17), (17, 31)], out_len=12)
        return T.mean_all(T.mul(T.zscore_last(seg), seg))

    check_grads(build, ps, tol=1e-3)


@pytest.mark.parametrize("seed", range(10))
def test_grad_psd_style_pipeline(seed):
    rng = np.random.default_rng(700 + seed)
    ps = ParamStore(seed)
    ps.create("x", (16,))
    cos = np.cos(2 * np.pi * np.outer(np.arange(1, 5), np.arange(16)) / 16)
    sin = np.sin(2 * np.pi * np.outer(np.arange(1, 5), np.arange(16)) / 16)

    def build(p):
        x = T.reshape(p["x"], (16, 1))
        re = T.matmul(T.Tensor(cos), x)
        im = T.matmul(T.Tensor(sin), x)
        power = T.add(T.mul(re, re), T.mul(im, im))
        p_norm = T.div_b(power, T.add_scalar(T.sum_all(power), 1e-9))
        return T.sum_all(T.mul(p_norm, p_norm))

    check_grads(build, ps, tol=1e-3)


def test_grad_unreachable_param_is_zero():
    ps = ParamStore(0)
    ps.create("used", (2,))
    ps.create("unused", (3,))
    with T.Tape() as tape:
        loss = T.sum_all(T.mul(ps["used"], ps["used"]))
    gs = T.grad(tape, loss, ps)
    assert np.allclose(gs["used"].data, 2 * ps["used"].data)
    assert np.allclose(gs["unused"].data, 0.0)


def test_grad_simple_square():
    ps = ParamStore(0)
    ps.create("w", (1,), init="zeros")
    ps["w"] = T.Tensor(np.array([3.0]))
    with T.Tape() as tape:
        loss = T.sum_all(T.mul(ps["w"], ps["w"]))
    assert np.allclose(T.grad(tape, loss, ps)["w"].data, [6.0])


def test_grad_requires_scalar_loss():
    ps = ParamStore(0)
    ps.create("w", (2,))
    with T.Tape() as tape:
        loss = T.mul(ps["w"], ps["w"])
    with pytest.raises(ContractError):
        T.grad(tape, loss, ps)


def test_backward_deterministic():
    def run():
        ps = ParamStore(7)
        ps.create("k", (2, 1, 3))
        x = T.Tensor(np.linspace(-1, 1, 12).reshape(1, 1, 12))
        with T.Tape() as tape:
            loss = T.mean_all(T.tanh(T.conv1d(x, ps["k"])))
        return T.grad(tape, loss, ps)["k"].data.tobytes()

    assert run() == run()
