import numpy as np
import pytest

from marl_lens import nn
from marl_lens.errors import NonFiniteGradient, ParseError, ShapeMismatch
from oracles import gradcheck, random_net


def test_fc_zero_params_gives_zero_output():
    spec = nn.NetSpec(3, 4, 2, "fc")
    params = nn.init_params(spec, np.random.default_rng(0))
    for p in params:
        p.data[...] = 0
    out, h = nn.forward(spec, params, np.ones((5, 3)))
    assert h is None
    assert np.array_equal(out.data, np.zeros((5, 2)))


def test_gru_zero_params_hand_computed():
    # all gates sigmoid(0) = 0.5, candidate tanh(0) = 0, so h' = 0 + 0.5 * (h - 0) = h / 2
    spec = nn.NetSpec(2, 2, 2, "gru")
    params = nn.init_params(spec, np.random.default_rng(0), dtype=np.float64)
    for p in params:
        p.data[...] = 0
    _, h = nn.forward(spec, params, np.array([[0.3, -0.7]]), np.array([[1.0, -2.0]]))
    np.testing.assert_allclose(h.data, [[0.5, -1.0]])


def test_gru_single_unit_by_hand():
    # 1 input, 1 hidden, identity-ish weights; computed by hand
    spec = nn.NetSpec(1, 1, 1, "gru")
    p = nn.init_params(spec, np.random.default_rng(0), dtype=np.float64)
    p["fc_in.w"].data[...] = 1.0
    p["fc_in.b"].data[...] = 0.0
    p["gru.w_i"].data[...] = [[1.0, 2.0, 3.0]]
    p["gru.w_h"].data[...] = [[0.5, -1.0, 1.0]]
    p["gru.b_i"].data[...] = 0.0
    p["gru.b_h"].data[...] = 0.0
    x, h = 0.5, 0.2
    y = max(x, 0.0)
    sig = lambda v: 1 / (1 + np.exp(-v))
    r = sig(1.0 * y + 0.5 * h)
    z = sig(2.0 * y - 1.0 * h)
    n = np.tanh(3.0 * y + r * (1.0 * h))
    expected = (1 - z) * n + z * h
    _, h_out = nn.forward(spec, p, np.array([[x]]), np.array([[h]]))
    assert h_out.data[0, 0] == pytest.approx(expected, abs=1e-12)


def test_batching_matches_rows():
    spec = nn.NetSpec(3, 8, 4, "gru")
    params = nn.init_params(spec, np.random.default_rng(1), dtype=np.float64)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 3))
    h = rng.standard_normal((6, 8))
    out, hb = nn.forward(spec, params, x, h)
    for i in range(6):
        o_i, h_i = nn.forward(spec, params, x[i:i + 1], h[i:i + 1])
        np.testing.assert_allclose(out.data[i], o_i.data[0], atol=1e-12)
        np.testing.assert_allclose(hb.data[i], h_i.data[0], atol=1e-12)


def test_no_grad_path_matches_taped_forward():
    for body in ("fc", "gru"):
        spec = nn.NetSpec(5, 16, 3, body)
        params = nn.init_params(spec, np.random.default_rng(3))
        x = np.random.default_rng(4).standard_normal((7, 5)).astype(np.float32)
        h = np.zeros((7, 16), np.float32) if body == "gru" else None
        taped, _ = nn.forward(spec, params, x, h)
        with nn.no_grad():
            fast, _ = nn.forward(spec, params, x, h)
        np.testing.assert_allclose(fast.data, taped.data, rtol=1e-6, atol=1e-6)


def test_shape_errors():
    spec = nn.NetSpec(3, 4, 2, "gru")
    params = nn.init_params(spec, np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        nn.forward(spec, params, np.ones((1, 2)), np.zeros((1, 4)))
    with pytest.raises(ShapeMismatch):
        nn.forward(spec, params, np.ones((1, 3)))
    fc = nn.NetSpec(3, 4, 2, "fc")
    with pytest.raises(ShapeMismatch):
        nn.forward(fc, nn.init_params(fc, np.random.default_rng(0)), np.ones((1, 3)), np.zeros((1, 4)))


def test_linear_gradient_is_outer_product():
    W = nn.Tensor(np.random.default_rng(0).standard_normal((3, 2)), requires_grad=True)
    x = np.array([[1.0, -2.0, 0.5]])
    g = np.array([[0.3, -1.1]])
    nn.backward(nn.as_tensor(x) @ W, g)
    np.testing.assert_allclose(W.grad, np.outer(x[0], g[0]))


def test_unused_parameter_gets_zero_gradient():
    store = nn.ParamStore({"a": np.ones(2), "b": np.ones(2)}, dtype=np.float64)
    store.zero_grad()
    nn.backward((store["a"] * 3.0).sum())
    grads = store.grads()
    assert grads[0].tolist() == [3.0, 3.0]
    assert grads[1].tolist() == [0.0, 0.0]


@pytest.mark.parametrize("body", ["fc", "gru"])
def test_gradcheck(body):
    rng = np.random.default_rng(11)
    for _ in range(10):
        params, loss = random_net(rng, body)
        assert gradcheck(params, loss) < 1e-4


def test_ops_gradcheck():
    rng = np.random.default_rng(5)
    store = nn.ParamStore({"a": rng.standard_normal((3, 4)), "b": rng.uniform(0.5, 2, (3, 4))},
                          dtype=np.float64)
    idx = np.array([[0, 1, 3], [2, 2, 0], [1, 3, 3]])

    def loss():
        a, b = store["a"], store["b"]
        ls = nn.log_softmax(a)
        t = nn.take_last(ls, idx[:, :1][:, 0])
        m = nn.minimum(a * b, nn.clip(a, -0.3, 0.4))
        c = nn.concat([nn.tabs(a), nn.log(b)], axis=-1)
        s = nn.stack([nn.exp(a * 0.1), nn.square(b)], axis=0)
        return (t.sum() + m.mean() + (c[:, 1:5] * 0.7).sum() + s.sum() * 0.01
                + nn.tanh(a).sum() + nn.sigmoid(b).sum() + (a / 3.0).sum())

    assert gradcheck(store, loss) < 1e-4


def test_clip_global_norm():
    g = [np.array([12.0, 16.0])]  # norm 20
    clipped, norm = nn.clip_global_norm(g, 10)
    assert norm == 20
    np.testing.assert_allclose(clipped[0], [6.0, 8.0])
    assert nn.global_norm(clipped) == pytest.approx(10)
    small = [np.array([3.0, 4.0])]
    assert nn.clip_global_norm(small, 10)[0][0].tolist() == [3.0, 4.0]
    zero = [np.zeros(3)]
    assert nn.clip_global_norm(zero, 10)[0][0].tolist() == [0, 0, 0]
    # projection: clipping twice is clipping once
    twice, _ = nn.clip_global_norm(clipped, 10)
    np.testing.assert_allclose(twice[0], clipped[0])


def _store(value):
    return nn.ParamStore({"w": np.array(value, dtype=np.float64)}, dtype=np.float64)


def test_adam_zero_gradient_and_zero_lr():
    s = _store([1.0, -2.0])
    opt = nn.Adam(s, lr=0.1)
    opt.step([np.zeros(2)])
    assert s["w"].data.tolist() == [1.0, -2.0]
    opt = nn.Adam(s, lr=0.0)
    opt.step([np.array([5.0, -3.0])])
    assert s["w"].data.tolist() == [1.0, -2.0]
    assert s.step == 2


def test_adam_constant_gradient_moves_lr_per_step():
    s = _store([0.0, 0.0])
    opt = nn.Adam(s, lr=0.01)
    for _ in range(1000):
        before = s["w"].data.copy()
        opt.step([np.array([3.0, -0.5])])
    # with a fixed gradient the bias-corrected step is exactly lr * sign(g) (up to eps)
    np.testing.assert_allclose(s["w"].data - before, [-0.01, 0.01], rtol=1e-6)
    np.testing.assert_allclose(s["w"].data, [-10.0, 10.0], rtol=1e-6)


def test_adam_rejects_non_finite():
    s = _store([1.0])
    opt = nn.Adam(s, lr=0.1)
    with pytest.raises(NonFiniteGradient):
        opt.step([np.array([np.nan])])
    assert s["w"].data.tolist() == [1.0]
    assert opt.t == 0


def test_adam_clips():
    s = _store([0.0, 0.0])
    opt = nn.Adam(s, lr=0.1, max_grad_norm=1.0)
    assert opt.step([np.array([30.0, 40.0])]) == pytest.approx(50.0)


def test_soft_updates():
    online, target = _store([1.0, 2.0]), _store([0.0, 0.0])
    nn.TargetUpdate("soft", 0.0)(online, target)
    assert target["w"].data.tolist() == [0.0, 0.0]
    nn.TargetUpdate("soft", 0.25)(online, target)
    assert target["w"].data.tolist() == [0.25, 0.5]
    nn.TargetUpdate("soft", 1.0)(online, target)
    assert target["w"].data.tolist() == [1.0, 2.0]


def test_hard_update_every_200():
    online, target = _store([1.0]), _store([0.0])
    upd = nn.TargetUpdate("hard", 200)
    for step in range(1, 200):
        upd(online, target)
        assert target["w"].data[0] == 0.0, step
    upd(online, target)
    assert target["w"].data[0] == 1.0


def test_checkpoint_round_trip(tmp_path):
    arrays = {
        "agent0/fc0.w": np.arange(6, dtype=np.float32).reshape(2, 3),
        "scalar": np.array(2.5),
        "ids": np.arange(4, dtype=np.int64),
        "__config__": np.frombuffer(b"[experiment]\n", dtype=np.uint8),
    }
    path = tmp_path / "ck.bin"
    nn.save_checkpoint(path, arrays)
    raw = path.read_bytes()
    assert raw[:4] == b"MLCK"
    back = nn.load_checkpoint(path)
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        assert np.array_equal(back[k], arrays[k])


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE")
    with pytest.raises(ParseError):
        nn.load_checkpoint(path)


def test_init_gains():
    spec = nn.NetSpec(4, 8, 3, "fc")
    p = nn.init_params(spec, np.random.default_rng(0), head_gain=0.01, dtype=np.float64)
    w = p["fc0.w"].data
    np.testing.assert_allclose(w @ w.T, 2.0 * np.eye(4), atol=1e-10)  # (in, out) layout
    assert np.abs(p["out.w"].data).max() <= 0.01 + 1e-12
    assert not p["fc0.b"].data.any()
