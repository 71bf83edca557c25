import numpy as np
import pytest

from mimax import autodiff as ad
from mimax.autodiff import Tensor
from mimax.encoder import (
    EVAL, TRAIN, BatchNormState, BatchTooSmallError, PredictorParams, copy_params, ema_update, encode,
    init_encoder, init_predictor, load_checkpoint, parameter_count, predict, save_checkpoint,
)
from mimax.gradcheck import analytic_grad, check_gradients, numerical_grad


def _x(seed=0, n=32):
    return np.random.default_rng(seed).normal(size=(n, 2))


def test_shapes_and_count():
    enc = init_encoder(0, "f")
    assert enc.W1.shape == (2, 64) and enc.b1.shape == (64,) and enc.W2.shape == (64, 3)
    # 2*64 + 64 + 2*64 + 64*3 + 2*3 = 518
    assert parameter_count(enc) == 2 * 64 + 64 + 2 * 64 + 64 * 3 + 2 * 3 == 518
    assert parameter_count(init_predictor(0, "f", hidden=16)) == 3 * 16 + 16 + 16 * 3 + 3


def test_output_rows_are_unit_norm():
    enc = init_encoder(1, "f")
    for mode in (TRAIN, EVAL):
        z = encode(enc, _x(), mode).data
        assert z.shape == (32, 3)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)


def test_train_mode_needs_two_rows():
    enc = init_encoder(0, "f")
    with pytest.raises(BatchTooSmallError):
        encode(enc, np.zeros((1, 2)), TRAIN)
    encode(enc, np.ones((1, 2)), EVAL)


def test_eval_mode_is_pure():
    enc = init_encoder(2, "f")
    encode(enc, _x(), TRAIN)
    before = enc.digest()
    a = encode(enc, _x(3), EVAL).data
    b = encode(enc, _x(3), EVAL).data
    assert a.tobytes() == b.tobytes()
    assert enc.digest() == before


def test_train_mode_updates_running_stats():
    enc = init_encoder(2, "f")
    before = enc.digest()
    encode(enc, _x(), TRAIN)
    assert enc.digest() != before
    assert np.all(enc.bn1.running_var > 0) and np.all(enc.bn2.running_var > 0)


def test_batch_norm_normalizes():
    bn = BatchNormState.init(4)
    rng = np.random.default_rng(4)
    h = rng.normal(size=(200, 4)) * np.array([0.1, 1.0, 5.0, 30.0]) + 3.0
    out = bn(Tensor(h), TRAIN).data  # gamma = 1, beta = 0: output is the normalized activation
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-9)
    v = h.var(axis=0)
    # normalized variance is v / (v + eps) exactly, so it is within 1e-6 of 1 once v >= 10
    np.testing.assert_allclose(out.var(axis=0), v / (v + bn.eps), rtol=1e-12)
    big = v >= 10
    assert big.any()
    np.testing.assert_allclose(out.var(axis=0)[big], 1.0, atol=1e-6)


def test_batch_norm_running_stats_use_unbiased_variance():
    bn = BatchNormState.init(2)
    h = np.array([[0.0, 1.0], [2.0, 5.0], [4.0, 3.0]])
    bn(Tensor(h), TRAIN)
    np.testing.assert_allclose(bn.running_mean, 0.1 * h.mean(axis=0), rtol=1e-15)
    np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * h.var(axis=0, ddof=1), rtol=1e-15)


def test_batch_norm_state_validation():
    with pytest.raises(ValueError):
        BatchNormState.init(3, eps=0.0)
    with pytest.raises(ValueError):
        BatchNormState.init(3, momentum=1.0)


@pytest.mark.parametrize("seed", range(3))
def test_encoder_gradient_alignment(seed):
    enc = init_encoder(seed, "f")
    x1, x2 = _x(seed, 8), _x(seed + 10, 8)

    def fn():
        return ad.mean(ad.rowwise_cosine(encode(enc, x1, TRAIN), encode(enc, x2, TRAIN)))

    # b1 feeds batch norm, which removes any per-feature shift: its gradient is exactly zero
    params = [p for p in enc.parameters() if p is not enc.b1]
    assert check_gradients(fn, params, step=1e-6) < 1e-4
    assert np.abs(analytic_grad(fn, [enc.b1])[0]).max() < 1e-12
    assert np.abs(numerical_grad(fn, enc.b1, 1e-6)).max() < 1e-8


def test_predictor_identity_like_init():
    eye = np.eye(3)
    head = PredictorParams(Tensor(eye), Tensor(np.zeros(3)), Tensor(eye), Tensor(np.zeros(3)))
    z = np.abs(np.random.default_rng(0).normal(size=(5, 3)))  # positive so relu passes through
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    np.testing.assert_allclose(predict(head, Tensor(z)).data, z, atol=1e-12)


def test_predictor_zero_weights_rejected():
    zero = PredictorParams(Tensor(np.zeros((3, 4))), Tensor(np.zeros(4)), Tensor(np.zeros((4, 3))), Tensor(np.zeros(3)))
    with pytest.raises(ad.DegenerateRowError):
        predict(zero, Tensor(np.eye(3)))


def test_predictor_gradient():
    head = init_predictor(0, "f", hidden=16)
    z = Tensor(encode(init_encoder(0, "f"), _x(0, 6), EVAL).data)
    w = np.random.default_rng(1).normal(size=(6, 3))
    assert check_gradients(lambda: ad.sum(predict(head, z) * w), head.parameters(), step=1e-6) < 1e-4


def test_copy_is_deep_and_identical():
    src = init_encoder(0, "f")
    encode(src, _x(), TRAIN)
    dup = copy_params(src)
    assert dup.digest() == src.digest()
    for a, b in zip(src.named_arrays().values(), dup.named_arrays().values()):
        assert a.tobytes() == b.tobytes()
    src.W1.data = Tensor(src.W1.data + 1.0).data
    src.bn1.running_mean = src.bn1.running_mean + 1.0
    assert dup.digest() != src.digest()
    assert encode(dup, _x(5), EVAL).data.tobytes() != encode(src, _x(5), EVAL).data.tobytes()


def test_ema_update_limits():
    online, target = init_encoder(0, "f"), init_encoder(0, "g")
    encode(online, _x(), TRAIN)
    frozen = target.digest()
    ema_update(target, online, 1.0)
    fresh = init_encoder(0, "g")
    assert [p.data.tobytes() for p in target.parameters()] == [p.data.tobytes() for p in fresh.parameters()]
    assert target.digest() != frozen  # running stats are still copied at tau = 1
    ema_update(target, online, 0.0)
    assert target.digest() == online.digest()
    with pytest.raises(ValueError):
        ema_update(target, online, 1.5)


def test_ema_unrolls_to_convex_combination():
    target = init_encoder(0, "t")
    history = [init_encoder(0, "o", k) for k in range(3)]
    t0 = target.W1.data.copy()
    tau = 0.9
    for online in history:
        ema_update(target, online, tau)
    expected = tau**3 * t0 + sum((1 - tau) * tau ** (2 - k) * h.W1.data for k, h in enumerate(history))
    np.testing.assert_allclose(target.W1.data, expected, rtol=1e-13)


def test_checkpoint_roundtrip(tmp_path):
    enc = init_encoder(3, "f")
    encode(enc, _x(), TRAIN)
    path = tmp_path / "f.npz"
    save_checkpoint(enc, path)
    back = load_checkpoint(path)
    assert back.digest() == enc.digest()
    assert encode(back, _x(7), EVAL).data.tobytes() == encode(enc, _x(7), EVAL).data.tobytes()


def test_independent_streams():
    assert init_encoder(0, "f").digest() != init_encoder(0, "g").digest()
    assert init_encoder(0, "f").digest() == init_encoder(0, "f").digest()
