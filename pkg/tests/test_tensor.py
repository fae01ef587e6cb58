import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locproj import functional as F
from locproj.gradcheck import grad_check
from locproj.tensor import Tensor, concat, count_flops, no_grad, stack, take_rows


def rand(rng, *shape, grad=True):
    return Tensor(rng.normal(size=shape), requires_grad=grad)


# -- Tensor basics ------------------------------------------------------------

def test_rejects_zero_extent():
    with pytest.raises(ValueError):
        Tensor(np.zeros((0, 3)))


def test_grad_matches_data_shape_and_accumulates():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    (a * a).sum().backward()
    assert a.grad.shape == a.shape
    np.testing.assert_allclose(a.grad, 2 * a.data)
    (a * 1.0).sum().backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)
    a.zero_grad()
    assert a.grad is None


def test_shared_subexpression_gradient():
    a = Tensor(np.array([2.0]), requires_grad=True)
    b = a * a
    (b + b * a).sum().backward()
    # d/da (a^2 + a^3) = 2a + 3a^2
    np.testing.assert_allclose(a.grad, [4.0 + 12.0])


def test_no_grad_records_nothing():
    a = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        b = (a * 2.0).sum()
    assert not b.requires_grad


def test_backward_on_constant_raises():
    with pytest.raises(RuntimeError):
        Tensor(np.ones(1)).backward()


def test_take_rows_and_stack_concat_grads():
    rng = np.random.default_rng(0)
    table = rand(rng, 5, 3)
    ids = np.array([[0, 2], [2, 4]])
    w = rand(rng, 2, 2, 3, grad=False)
    rep = grad_check(lambda: (take_rows(table, ids) * w).sum(), {"table": table})
    assert rep.passed, rep
    a, b = rand(rng, 2, 3), rand(rng, 2, 3)
    rep = grad_check(lambda: (concat([a, b], axis=1) * concat([b, a], axis=1)).sum()
                     + (stack([a, b]) ** 3).sum(), [a, b])
    assert rep.passed, rep


def test_broadcasting_grads():
    rng = np.random.default_rng(1)
    a, b = rand(rng, 4, 3), rand(rng, 3)
    rep = grad_check(lambda: ((a * b + b) / (a * a + 2.0)).sum(), {"a": a, "b": b})
    assert rep.passed, rep


def test_elementwise_ops_grad():
    rng = np.random.default_rng(2)
    a = rand(rng, 3, 4)
    for fn in (lambda t: t.exp(), lambda t: (t * t + 1.0).log(), F.gelu, F.silu,
               lambda t: F.softmax(t, axis=0), lambda t: F.log_softmax(t)):
        out = fn(a)
        wts = Tensor(rng.normal(size=out.shape))
        rep = grad_check(lambda: (fn(a) * wts).sum(), {"a": a})
        assert rep.passed, rep


def test_matmul_batched_grad_and_flops():
    rng = np.random.default_rng(3)
    a, b = rand(rng, 2, 3, 4), rand(rng, 4, 5)
    with count_flops() as box:
        out = a @ b
    assert out.shape == (2, 3, 5)
    assert box[0] == 2 * 2 * 3 * 5 * 4
    rep = grad_check(lambda: ((a @ b) ** 2).sum(), [a, b])
    assert rep.passed, rep


# -- conv2d -------------------------------------------------------------------

def conv_oracle(x, w, b, stride, pad):
    B, C, H, W = x.shape
    Co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = (H + 2 * pad - k) // stride + 1, (W + 2 * pad - k) // stride + 1
    out = np.zeros((B, Co, Ho, Wo))
    for n in range(B):
        for o in range(Co):
            for i in range(Ho):
                for j in range(Wo):
                    acc = 0.0 if b is None else b[o]
                    for c in range(C):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[n, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[n, o, i, j] = acc
    return out


def test_conv_pointwise_scaling():
    out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.full((1, 1, 1, 1), 2.0)))
    np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))


def test_conv_identity_kernel():
    x = np.random.default_rng(0).normal(size=(1, 1, 4, 4))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(F.conv2d(Tensor(x), Tensor(w), padding=1).data, x)


@pytest.mark.parametrize("shape,co,k,stride,pad", [
    ((1, 2, 4, 4), 3, 3, 1, 0), ((2, 4, 8, 8), 2, 3, 1, 1), ((2, 3, 7, 7), 2, 3, 2, 0),
    ((1, 2, 5, 5), 2, 5, 1, 2), ((2, 2, 8, 8), 3, 1, 1, 0)])
def test_conv_matches_loop_oracle(shape, co, k, stride, pad):
    rng = np.random.default_rng(sum(shape) + k)
    x = rng.normal(size=shape)
    w = rng.normal(size=(co, shape[1], k, k))
    b = rng.normal(size=co)
    got = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    assert np.max(np.abs(got - conv_oracle(x, w, b, stride, pad))) < 1e-12


def test_grouped_conv_matches_per_group_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 4, 5, 5))
    w = rng.normal(size=(4, 2, 3, 3))
    got = F.conv2d(Tensor(x), Tensor(w), padding=1, groups=2).data
    want = np.concatenate([conv_oracle(x[:, :2], w[:2], None, 1, 1),
                           conv_oracle(x[:, 2:], w[2:], None, 1, 1)], axis=1)
    assert np.max(np.abs(got - want)) < 1e-12


def test_conv_errors_name_the_axis():
    x = Tensor(np.ones((1, 2, 4, 4)))
    with pytest.raises(ValueError, match="channel axis"):
        F.conv2d(x, Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ValueError, match="odd"):
        F.conv2d(x, Tensor(np.ones((1, 2, 2, 2))))
    with pytest.raises(ValueError, match="W axis"):
        F.conv2d(Tensor(np.ones((1, 2, 5, 4))), Tensor(np.ones((1, 2, 3, 3))), stride=2)


@pytest.mark.parametrize("stride,pad,groups", [(1, 1, 1), (2, 0, 1), (1, 1, 2)])
def test_conv_grad(stride, pad, groups):
    rng = np.random.default_rng(5)
    x, w, b = rand(rng, 2, 4, 5, 5), rand(rng, 4, 4 // groups, 3, 3), rand(rng, 4)
    rep = grad_check(lambda: (F.conv2d(x, w, b, stride, pad, groups) ** 2).sum(),
                     {"x": x, "w": w, "b": b}, tol=1e-7)
    assert rep.passed, rep


# -- adaptive pooling ---------------------------------------------------------

def pool_oracle(x, h, w):
    H, W = x.shape[-2:]
    out = np.zeros(x.shape[:-2] + (h, w))
    for i in range(h):
        for j in range(w):
            r0, r1 = (i * H) // h, -((-(i + 1) * H) // h)
            c0, c1 = (j * W) // w, -((-(j + 1) * W) // w)
            out[..., i, j] = x[..., r0:r1, c0:c1].mean(axis=(-2, -1))
    return out


def test_pool_by_hand():
    x = np.arange(1.0, 17.0).reshape(1, 1, 4, 4)
    got = F.adaptive_avg_pool2d(Tensor(x), (2, 2)).data[0, 0]
    np.testing.assert_allclose(got, [[3.5, 5.5], [11.5, 13.5]], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(F.adaptive_avg_pool2d(Tensor(np.ones((1, 1, 4, 4))), (2, 2)).data,
                                  np.ones((1, 1, 2, 2)))


def test_pool_identity_and_errors():
    x = np.random.default_rng(0).normal(size=(2, 3, 5, 5))
    np.testing.assert_array_equal(F.adaptive_avg_pool2d(Tensor(x), (5, 5)).data, x)
    with pytest.raises(ValueError):
        F.adaptive_avg_pool2d(Tensor(x), (0, 2))
    with pytest.raises(ValueError, match="allow_upsample"):
        F.adaptive_avg_pool2d(Tensor(x), (6, 6))
    assert F.adaptive_avg_pool2d(Tensor(x), (7, 9), allow_upsample=True).shape == (2, 3, 7, 9)


@settings(max_examples=60, deadline=None)
@given(H=st.integers(1, 9), W=st.integers(1, 9), h=st.integers(1, 9), w=st.integers(1, 9),
       seed=st.integers(0, 2**16))
def test_pool_matches_window_oracle(H, W, h, w, seed):
    h, w = min(h, H), min(w, W)
    x = np.random.default_rng(seed).normal(size=(1, 2, H, W))
    got = F.adaptive_avg_pool2d(Tensor(x), (h, w)).data
    np.testing.assert_allclose(got, pool_oracle(x, h, w), atol=1e-13)
    if H % h == 0 and W % w == 0:
        np.testing.assert_allclose(got.mean(axis=(-2, -1)), x.mean(axis=(-2, -1)), atol=1e-13)


def test_pool_grad():
    rng = np.random.default_rng(6)
    x = rand(rng, 1, 2, 5, 7)
    rep = grad_check(lambda: (F.adaptive_avg_pool2d(x, (3, 2)) ** 2).sum(), [x])
    assert rep.passed, rep
    rep = grad_check(lambda: (F.adaptive_avg_pool2d(x, (6, 9), allow_upsample=True) ** 2).sum(), [x])
    assert rep.passed, rep


# -- bilinear sampling --------------------------------------------------------

def bilinear_oracle(img, u, v):
    C, H, W = img.shape
    py = min(max(u * H - 0.5, 0.0), H - 1.0)
    px = min(max(v * W - 0.5, 0.0), W - 1.0)
    y0, x0 = int(np.floor(py)), int(np.floor(px))
    y1, x1 = min(y0 + 1, H - 1), min(x0 + 1, W - 1)
    fy, fx = py - y0, px - x0
    return ((1 - fy) * (1 - fx) * img[:, y0, x0] + (1 - fy) * fx * img[:, y0, x1]
            + fy * (1 - fx) * img[:, y1, x0] + fy * fx * img[:, y1, x1])


def test_bilinear_on_cell_centers_and_clamp():
    rng = np.random.default_rng(7)
    img = rng.normal(size=(3, 4, 5))
    pts = [((i + 0.5) / 4, (j + 0.5) / 5) for i in range(4) for j in range(5)]
    got = F.bilinear_sample(Tensor(img), Tensor(np.array(pts))).data
    np.testing.assert_allclose(got, img.reshape(3, -1).T, atol=1e-15)
    mid = F.bilinear_sample(Tensor(img), Tensor(np.array([[0.5 / 4, 1.0 / 5]]))).data[0]
    np.testing.assert_allclose(mid, 0.5 * (img[:, 0, 0] + img[:, 0, 1]), atol=1e-15)
    corner = F.bilinear_sample(Tensor(img), Tensor(np.array([[-5.0, -5.0], [7.0, 9.0]]))).data
    np.testing.assert_array_equal(corner[0], img[:, 0, 0])
    np.testing.assert_array_equal(corner[1], img[:, -1, -1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5)), min_size=1, max_size=6),
       st.integers(1, 6), st.integers(1, 6))
def test_bilinear_matches_oracle(pts, H, W):
    img = np.random.default_rng(H * 7 + W).normal(size=(2, H, W))
    got = F.bilinear_sample(Tensor(img), Tensor(np.array(pts))).data
    want = np.stack([bilinear_oracle(img, u, v) for u, v in pts])
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_bilinear_piecewise_linear_between_centers():
    img = np.random.default_rng(8).normal(size=(1, 3, 3))
    ts = np.linspace(0, 1, 7)
    pts = np.stack([np.full_like(ts, 0.5), (1.5 + ts) / 3], axis=-1)
    got = F.bilinear_sample(Tensor(img), Tensor(pts)).data[:, 0]
    np.testing.assert_allclose(got, (1 - ts) * img[0, 1, 1] + ts * img[0, 1, 2], atol=1e-14)


def test_bilinear_batched_and_weights_agree():
    rng = np.random.default_rng(9)
    img = rng.normal(size=(2, 3, 4, 4))
    pts = rng.uniform(0, 1, size=(2, 5, 2))
    got = F.bilinear_sample(Tensor(img), Tensor(pts)).data
    wmap = F.bilinear_weights(pts, 4, 4)
    np.testing.assert_allclose(got, np.einsum("bqhw,bchw->bqc", wmap, img), atol=1e-13)
    np.testing.assert_allclose(wmap.sum(axis=(-2, -1)), 1.0, atol=1e-14)


def test_bilinear_grad_away_from_kinks():
    rng = np.random.default_rng(10)
    H, W = 5, 6
    img = rand(rng, 3, H, W)
    # positions strictly inside cells, at least 0.1 cell widths from any kink
    cells = np.stack([rng.integers(0, H - 1, 6), rng.integers(0, W - 1, 6)], axis=-1)
    frac = rng.uniform(0.1, 0.9, size=(6, 2))
    pos = cells + frac
    pts = Tensor(np.stack([(pos[:, 0] + 0.5) / H, (pos[:, 1] + 0.5) / W], axis=-1), requires_grad=True)
    w = Tensor(rng.normal(size=(6, 3)))
    rep = grad_check(lambda: (F.bilinear_sample(img, pts) * w).sum(), {"img": img, "pts": pts}, tol=1e-6)
    assert rep.passed, rep


# -- softmax, layer norm, linear, attention --------------------------------------

def test_softmax_cases():
    np.testing.assert_allclose(F.softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-16)
    big = F.softmax(Tensor(np.array([1000.0, 0.0, 0.0]))).data
    assert np.isfinite(big).all() and abs(big[0] - 1) < 1e-15
    v = np.random.default_rng(0).normal(size=5)
    naive = np.exp(v) / np.exp(v).sum()
    assert np.max(np.abs(F.softmax(Tensor(v)).data - naive)) < 1e-15


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_is_a_distribution(vals):
    s = F.softmax(Tensor(np.array(vals))).data
    assert (s > 0).all()
    assert abs(s.sum() - 1.0) < 1e-12


def test_layer_norm_constant_and_grad():
    g, b = Tensor(np.ones(4), requires_grad=True), Tensor(np.zeros(4), requires_grad=True)
    np.testing.assert_array_equal(F.layer_norm(Tensor(np.full((2, 4), 3.0)), g, b).data, 0.0)
    rng = np.random.default_rng(11)
    x, g2, b2 = rand(rng, 3, 4), rand(rng, 4), rand(rng, 4)
    w = Tensor(rng.normal(size=(3, 4)))
    rep = grad_check(lambda: (F.layer_norm(x, g2, b2) * w).sum(), [x, g2, b2])
    assert rep.passed, rep


def test_linear_identity():
    x = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_array_equal(F.linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x)


def test_attention_single_key_returns_value():
    rng = np.random.default_rng(12)
    q = Tensor(rng.normal(size=(4, 6)))
    k = Tensor(rng.normal(size=(1, 6)))
    v = Tensor(rng.normal(size=(1, 6)))
    out, w = F.multi_head_attention(q, k, v, heads=1)
    np.testing.assert_allclose(out.data, np.repeat(v.data, 4, axis=0), atol=1e-15)
    np.testing.assert_array_equal(w, 1.0)


def test_attention_oracle_and_errors():
    rng = np.random.default_rng(13)
    q, k, v = rng.normal(size=(3, 8)), rng.normal(size=(5, 8)), rng.normal(size=(5, 8))
    out, w = F.multi_head_attention(Tensor(q), Tensor(k), Tensor(v), heads=2)
    want = []
    for h in range(2):
        sl = slice(4 * h, 4 * h + 4)
        s = q[:, sl] @ k[:, sl].T / 2.0
        a = np.exp(s - s.max(1, keepdims=True))
        a /= a.sum(1, keepdims=True)
        want.append(a @ v[:, sl])
    np.testing.assert_allclose(out.data, np.concatenate(want, axis=1), atol=1e-14)
    np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-14)
    with pytest.raises(ValueError, match="divide"):
        F.multi_head_attention(Tensor(q), Tensor(k), Tensor(v), heads=3)


def test_attention_grad_with_mask():
    rng = np.random.default_rng(14)
    q, k, v = rand(rng, 2, 4, 8), rand(rng, 2, 4, 8), rand(rng, 2, 4, 8)
    mask = np.triu(np.full((4, 4), -np.inf), k=1)
    w = Tensor(rng.normal(size=(2, 4, 8)))
    rep = grad_check(lambda: (F.multi_head_attention(q, k, v, 2, mask)[0] * w).sum(), [q, k, v])
    assert rep.passed, rep


def test_masked_nll_by_hand_and_grad():
    logits = np.array([[[1.0, 2.0], [0.5, -0.5], [3.0, 0.0]]])
    targets = np.array([[1, 0, 1]])
    mask = np.array([[True, False, True]])
    lp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    want = -(lp[0, 0, 1] + lp[0, 2, 1]) / 2
    got = F.masked_nll(Tensor(logits), targets, mask)
    assert abs(float(got.data) - want) < 1e-14
    t = Tensor(logits, requires_grad=True)
    rep = grad_check(lambda: F.masked_nll(t, targets, mask), [t])
    assert rep.passed, rep
    with pytest.raises(ValueError):
        F.masked_nll(Tensor(logits), targets, np.zeros_like(mask))


# -- grad_check itself ----------------------------------------------------------

def test_grad_check_square():
    w = Tensor(np.array([3.0]), requires_grad=True)
    rep = grad_check(lambda: (w * w).sum(), {"w": w})
    assert rep.passed and rep.max_error < 1e-10


def test_grad_check_detects_wrong_gradient():
    from locproj.tensor import make_op
    w = Tensor(np.array([1.5, -0.5]), requires_grad=True)

    def bad():
        return make_op(np.asarray((w.data ** 2).sum()), (w,), lambda g: (g * w.data,))  # half the truth

    rep = grad_check(bad, [w])
    assert not rep.passed and rep.max_error > 0.1


def test_grad_check_non_finite_fails():
    w = Tensor(np.array([-1.0]), requires_grad=True)
    with np.errstate(invalid="ignore"):
        rep = grad_check(lambda: w.log().sum(), [w])
    assert not rep.passed and not rep.finite


def test_grad_check_subsets_large_params():
    w = Tensor(np.random.default_rng(0).normal(size=(50, 50)), requires_grad=True)
    calls = []

    def f():
        calls.append(1)
        return (w * w).sum()

    rep = grad_check(f, [w], max_coords=10)
    assert rep.passed and len(calls) == 1 + 2 * 10


def test_conv_flop_counter():
    with count_flops() as box:
        F.conv2d(Tensor(np.ones((2, 3, 5, 5))), Tensor(np.ones((4, 3, 3, 3))), padding=1)
    assert box[0] == 2 * 2 * 4 * 5 * 5 * 3 * 9
