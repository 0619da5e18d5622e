import numpy as np
import pytest

from labelmend import losses, segnet
from labelmend.data import LabelMask, RunConfig

from oracles import fd_gradient, reference_probs

REL_FLOOR = 1e-4


def gradient_case(seed, n=2, size=8):
    """Random net (biases nudged off zero), batch, binary alpha and lambda."""
    rng = np.random.default_rng(seed)
    params = segnet.init_params(2, seed)
    for b in params[1::2]:
        b += rng.normal(0.0, 0.1, b.shape)
    images = rng.random((n, size, size))
    labels = rng.integers(0, 2, (n, size, size))
    alphas = rng.integers(0, 2, (n, size, size)).astype(float)
    lams = rng.integers(0, 2, n).astype(float)
    lams[rng.integers(n)] = 1.0
    return params, images, labels, alphas, lams


def relative_errors(analytic, numeric, kinked):
    a = np.concatenate([g.ravel() for g in analytic])
    b = np.concatenate([g.ravel() for g in numeric])
    skip = np.concatenate([k.ravel() for k in kinked])
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)
    return (np.abs(a - b) / scale)[~skip], skip


def gradient_check(seed, mu=1e-4):
    params, images, labels, alphas, lams = gradient_case(seed)
    onehots = (labels[..., None] == np.arange(2)).astype(float)
    _, grads = segnet.loss_and_grads(params, images, onehots, alphas, lams, mu)
    numeric, kinked = fd_gradient(params, images, labels, alphas, lams, mu)
    return relative_errors(grads, numeric, kinked)


def test_parameter_count_and_init():
    params = segnet.init_params(2, 0)
    assert sum(p.size for p in params) == 17474
    assert [p.shape for p in params] == segnet.param_shapes(2)
    assert all(not b.any() for b in params[1::2])
    assert segnet.init_params(3, 0)[-1].shape == (3,)
    for a, b in zip(params, segnet.init_params(2, 0)):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        segnet.init_params(1, 0)


def test_forward_matches_reference_network():
    params, images, *_ = gradient_case(11, n=3, size=12)
    np.testing.assert_allclose(segnet.forward_batch(params, images),
                               reference_probs(params, images)[0], rtol=0, atol=1e-13)


def test_gradient_matches_finite_differences():
    errors, skipped = gradient_check(7)
    assert errors.max() < 1e-6
    assert skipped.mean() < 0.01


def test_gradient_with_dropout_masks_matches_finite_differences():
    params, images, labels, alphas, lams = gradient_case(9)
    onehots = (labels[..., None] == np.arange(2)).astype(float)
    seeds = [5, 9]

    def objective(p):
        probs = segnet.forward_batch(p, images, seeds, 0.3)
        value, _ = losses.data_loss_and_logit_grad(probs, onehots, alphas, lams)
        return value + 1e-4 * sum(float(np.sum(q * q)) for q in p)

    _, grads = segnet.loss_and_grads(params, images, onehots, alphas, lams, 1e-4,
                                     "mean", seeds, 0.3)
    rng = np.random.default_rng(0)
    for bi, block in enumerate(params):
        for j in rng.choice(block.size, min(10, block.size), replace=False):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[bi].flat[j] += 1e-5
            minus[bi].flat[j] -= 1e-5
            fd = (objective(plus) - objective(minus)) / 2e-5
            a = grads[bi].flat[j]
            assert abs(a - fd) / max(abs(a), abs(fd), REL_FLOOR) < 1e-6


def test_forward_deterministic_and_degenerate_dropout():
    params = segnet.init_params(2, 3)
    image = np.random.default_rng(0).random((8, 8))
    plain = segnet.forward(params, image)
    np.testing.assert_array_equal(plain, segnet.forward(params, image))
    np.testing.assert_array_equal(plain, segnet.forward(params, image, True, 0.0, 99))
    assert plain.shape == (8, 8, 2)
    np.testing.assert_allclose(plain.sum(-1), 1.0, atol=1e-12)


def test_dropout_seeded_and_varied():
    params = segnet.init_params(2, 3)
    image = np.random.default_rng(1).random((8, 8))
    a = segnet.forward(params, image, True, 0.3, 5)
    np.testing.assert_array_equal(a, segnet.forward(params, image, True, 0.3, 5))
    outs = [segnet.forward(params, image, True, 0.3, s) for s in range(10)]
    assert any(not np.array_equal(outs[0], o) for o in outs[1:])


def test_batch_does_not_change_a_sample():
    params = segnet.init_params(2, 4)
    images = np.random.default_rng(2).random((5, 8, 12))
    together = segnet.forward_batch(params, images, [10, 11, 12, 13, 14], 0.2)
    alone = segnet.forward_batch(params, images[2:3], [12], 0.2)
    np.testing.assert_array_equal(together[2], alone[0])


def test_zero_weight_batch_gradient_is_regularizer():
    params = segnet.init_params(2, 5)
    images = np.random.default_rng(3).random((2, 8, 8))
    onehots = np.zeros((2, 8, 8, 2))
    onehots[..., 0] = 1
    zeros = np.zeros(2)
    loss, grads = segnet.loss_and_grads(params, images, onehots, np.ones((2, 8, 8)), zeros, 1e-4)
    assert loss == pytest.approx(1e-4 * sum(float(np.sum(p * p)) for p in params))
    for p, g in zip(params, grads):
        np.testing.assert_allclose(g, 2e-4 * p, rtol=1e-15)
    _, doubled = segnet.loss_and_grads(params, images, onehots, np.ones((2, 8, 8)), zeros, 2e-4)
    for g, d in zip(grads, doubled):
        np.testing.assert_allclose(d, 2 * g, rtol=1e-15)


def test_backward_wrapper_matches_batched_gradient():
    params, images, labels, alphas, lams = gradient_case(8)
    batch = [(images[i], LabelMask(labels[i]), alphas[i], lams[i]) for i in range(2)]
    loss, grads = segnet.backward(params, batch, RunConfig())
    onehots = (labels[..., None] == np.arange(2)).astype(float)
    loss2, grads2 = segnet.loss_and_grads(params, images, onehots, alphas, lams, 1e-4)
    assert loss == loss2
    for a, b in zip(grads, grads2):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        segnet.backward(params, [], RunConfig())


def test_predict_ties_go_to_smaller_class():
    probs = np.array([[[0.5, 0.5], [0.2, 0.8]], [[0.9, 0.1], [1 / 3, 2 / 3]]])
    assert segnet.argmax_labels(probs).tolist() == [[0, 1], [0, 1]]
    tie3 = np.full((1, 1, 3), 1 / 3)
    assert segnet.argmax_labels(tie3).tolist() == [[0]]


def test_predict_all_zero_head_is_background():
    params = segnet.init_params(2, 6)
    params[-2][:] = 0.0
    mask = segnet.predict(params, np.random.default_rng(4).random((8, 8)))
    assert mask.provenance == "prediction"
    assert not mask.data.any()


def test_predict_batch_matches_predict():
    params = segnet.init_params(3, 7)
    images = np.random.default_rng(5).random((3, 8, 8))
    batch = segnet.predict_batch(params, images, chunk=2)
    for img, mask in zip(images, batch):
        assert mask == segnet.predict(params, img)


def test_model_bytes_round_trip(tmp_path):
    params = segnet.init_params(2, 8)
    path = tmp_path / "m.bin"
    segnet.save_params(params, path)
    raw = path.read_bytes()
    assert raw.startswith(b"SEGW1")
    assert len(raw) == 5 + sum(4 + 4 * p.ndim + 8 * p.size for p in params)
    again = segnet.load_params(path)
    for a, b in zip(params, again):
        np.testing.assert_array_equal(a, b)
    assert segnet.params_to_bytes(again) == raw
    with pytest.raises(ValueError, match="magic"):
        segnet.params_from_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(ValueError, match="truncated"):
        segnet.params_from_bytes(raw[:-8])


def test_forward_rejects_bad_shapes():
    params = segnet.init_params(2, 0)
    with pytest.raises(ValueError):
        segnet.forward(params, np.zeros((6, 8)))
    with pytest.raises(ValueError):
        segnet.forward_batch(params, np.zeros((8, 8)))
