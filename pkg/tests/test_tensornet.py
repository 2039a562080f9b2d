import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gtg.tensornet import (
    CheckpointError,
    MlpParams,
    RmspropState,
    clip_grad_norm,
    conv2d_backward,
    conv2d_forward,
    conv2d_reference,
    cross_entropy,
    finite_diff_check,
    finite_diff_report,
    load_checkpoint,
    log_softmax,
    maxpool_nodes,
    maxpool_nodes_backward,
    mlp_backward,
    mlp_forward,
    rmsprop_step,
    save_checkpoint,
    softmax,
)


def naive_conv(x, k):
    """Six nested loops over output cell, output channel and tap; zero padding."""
    w, h, cin = x.shape
    cout = k.shape[3]
    out = np.zeros((w, h, cout))
    for px in range(w):
        for py in range(h):
            for o in range(cout):
                for i in range(3):
                    for j in range(3):
                        qx, qy = px + i - 1, py + j - 1
                        if 0 <= qx < w and 0 <= qy < h:
                            out[px, py, o] += x[qx, qy] @ k[i, j, :, o]
    return out


def test_mlp_identity_relu():
    p = MlpParams([np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)])
    y, _ = mlp_forward(p, np.array([1.0, -1.0]))
    np.testing.assert_array_equal(y, [1.0, 0.0])


def test_single_linear_layer():
    p = MlpParams([np.array([[2.0, 0.0], [0.0, 3.0]])], [np.zeros(2)])
    y, _ = mlp_forward(p, np.array([1.0, 1.0]))
    np.testing.assert_array_equal(y, [2.0, 3.0])


def test_mlp_rejects_wrong_width():
    p = MlpParams.init(np.random.default_rng(0), [3, 2])
    with pytest.raises(ValueError, match="input dim 3"):
        mlp_forward(p, np.zeros((1, 4)))


def test_mlp_gradient_100_trials():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        p = MlpParams.init(rng, [3, 5, 2])
        for b in p.biases:
            b[...] = rng.normal(scale=0.1, size=b.shape)
        x = rng.normal(size=(4, 3))
        t = rng.normal(size=(4, 2))
        params = p.named("m")

        def loss():
            y, _ = mlp_forward(p, x)
            return 0.5 * float(((y - t) ** 2).sum())

        y, cache = mlp_forward(p, x)
        _, grads = mlp_backward(p, cache, y - t, "m")
        worst = max(worst, finite_diff_check(loss, params, grads))
    assert worst < 1e-5


def test_maxpool_examples():
    pooled, _ = maxpool_nodes(np.array([[1.0, 5.0], [3.0, 2.0]]))
    np.testing.assert_array_equal(pooled, [3.0, 5.0])
    single = np.array([[4.0, -1.0]])
    np.testing.assert_array_equal(maxpool_nodes(single)[0], [4.0, -1.0])


def test_maxpool_tie_goes_to_first_node():
    x = np.array([[2.0], [2.0], [1.0]])
    pooled, idx = maxpool_nodes(x)
    assert idx.tolist() == [0]
    dx = maxpool_nodes_backward(idx, 3, np.array([1.0]))
    np.testing.assert_array_equal(dx, [[1.0], [0.0], [0.0]])


def test_maxpool_gradient_distinct_entries():
    rng = np.random.default_rng(1)
    x = rng.permutation(12).astype(float).reshape(4, 3)
    w = rng.normal(size=3)
    pooled, idx = maxpool_nodes(x)
    grads = {"x": maxpool_nodes_backward(idx, 4, w)}
    err = finite_diff_check(lambda: float(maxpool_nodes(x)[0] @ w), {"x": x}, grads)
    assert err < 1e-6


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    p = softmax(np.array([1000.0, 0.0]))
    assert np.isfinite(p).all()
    assert p[0] == pytest.approx(1.0) and p[1] < 1e-300 + 1e-12
    assert np.isfinite(log_softmax(np.array([1000.0, -1000.0]))).all()


def test_softmax_rejects_nan():
    with pytest.raises(ValueError):
        softmax(np.array([np.nan, 0.0]))


def test_cross_entropy_gradient():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(5, 4))
    y = rng.integers(0, 4, 5)
    _, g = cross_entropy(z, y)
    assert finite_diff_check(lambda: float(cross_entropy(z, y)[0]), {"z": z}, {"z": g}) < 1e-6


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(z):
    p = softmax(z)
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, rtol=1e-12)


def test_conv_center_kernel_is_identity():
    x = np.random.default_rng(3).normal(size=(5, 4, 2))
    k = np.zeros((3, 3, 2, 2))
    k[1, 1] = np.eye(2)
    np.testing.assert_array_equal(conv2d_reference(x, k), x)


def test_conv_all_ones():
    out = conv2d_reference(np.ones((5, 5, 1)), np.ones((3, 3, 1, 1)))[..., 0]
    assert out[2, 2] == 9 and out[0, 2] == 6 and out[0, 0] == 4
    assert out[1:-1, 1:-1].min() == 9


def test_conv_matches_naive_loops():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 6)), 3))
        k = rng.normal(size=(3, 3, 3, 2))
        np.testing.assert_allclose(conv2d_reference(x, k), naive_conv(x, k), atol=1e-12, rtol=0)


def test_conv_backward():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 4, 3, 2))
    k = rng.normal(size=(3, 3, 2, 3))
    bias = rng.normal(size=3)
    t = rng.normal(size=(2, 4, 3, 3))
    y, cols = conv2d_forward(x, k, bias)
    dx, dk, db = conv2d_backward(cols, k, y - t)

    def loss():
        return 0.5 * float(((conv2d_forward(x, k, bias)[0] - t) ** 2).sum())

    err = finite_diff_check(loss, {"x": x, "k": k, "b": bias}, {"x": dx, "k": dk, "b": db})
    assert err < 1e-7


def test_rmsprop_zero_gradient():
    p = {"w": np.array([1.0, 2.0])}
    st_ = RmspropState()
    st_.square_avg["w"] = np.array([4.0, 4.0])
    rmsprop_step(p, {"w": np.zeros(2)}, st_)
    np.testing.assert_array_equal(p["w"], [1.0, 2.0])
    np.testing.assert_allclose(st_.square_avg["w"], [3.96, 3.96])


def test_rmsprop_first_step_hand_value():
    p = {"w": np.array([0.0])}
    rmsprop_step(p, {"w": np.array([1.0])}, RmspropState())
    assert p["w"][0] == pytest.approx(-0.001 / (np.sqrt(0.01) + 1e-5), rel=1e-12)
    assert p["w"][0] == pytest.approx(-0.00999, abs=1e-5)


def test_rmsprop_fixed_point():
    p = {"w": np.array([0.0])}
    s = RmspropState()
    for _ in range(3000):
        before = p["w"][0]
        rmsprop_step(p, {"w": np.array([1.0])}, s)
    assert before - p["w"][0] == pytest.approx(0.001 / (1 + 1e-5), rel=1e-6)


def test_clip_grad_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_grad_norm(g, 1.0) == pytest.approx(5.0)
    assert np.sqrt(g["a"][0] ** 2 + g["b"][0] ** 2) == pytest.approx(1.0, rel=1e-5)
    g = {"a": np.array([0.3])}
    clip_grad_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_fd_on_square():
    p = {"p": np.array([3.0])}
    rep = finite_diff_report(lambda: float(p["p"][0] ** 2), p, {"p": np.array([6.0])})
    assert rep.max_rel_error < 1e-8 / 6
    assert rep.coords_checked == 1


def test_fd_detects_wrong_gradient():
    p = {"p": np.array([3.0])}
    assert finite_diff_check(lambda: float(p["p"][0] ** 2), p, {"p": np.array([5.0])}) > 0.1


def test_fd_skips_kinks_when_signature_changes():
    p = {"p": np.array([0.0, 1.0])}

    def f():
        v = p["p"]
        return float(np.abs(v).sum()), (v > 0).tobytes()

    rep = finite_diff_report(f, p, {"p": np.array([0.0, 1.0])})
    assert rep.coords_skipped == 1 and rep.coords_checked == 1
    assert rep.max_rel_error < 1e-9


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    tensors = {"a.weight": rng.normal(size=(3, 2)), "b": rng.normal(size=0), "s": np.array(2.5)}
    save_checkpoint(tmp_path / "c.gtgc", tensors)
    back = load_checkpoint(tmp_path / "c.gtgc")
    assert list(back) == list(tensors)
    for k in tensors:
        np.testing.assert_array_equal(back[k], tensors[k])


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad"
    bad.write_bytes(b"nope")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)
    save_checkpoint(tmp_path / "c", {"x": np.ones(4)})
    data = (tmp_path / "c").read_bytes()
    (tmp_path / "t").write_bytes(data[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t")
