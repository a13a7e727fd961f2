import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesrx import nn


def small_net(rng, sizes=(2, 16, 4)):
    params = nn.init_network(list(sizes), rng)
    for b in params.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    return params


def numeric_grad(fn, arr, eps=1e-6):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + eps
        up = fn()
        arr[i] = old - eps
        down = fn()
        arr[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)) + np.max(np.abs(b)), 1e-12)


# --- forward -----------------------------------------------------------------


def test_zero_network_is_uniform():
    params = nn.zero_network([5, 16, 4])
    probs = nn.mlp_forward(params, np.arange(5.0))
    assert np.array_equal(probs, np.full(4, 0.25))


def test_hand_computed_forward():
    # 2-2-2 network evaluated by hand
    params = nn.NetworkParams([np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([[1.0, 1.0], [0.0, 0.0]])],
                              [np.zeros(2), np.array([0.0, 0.0])])
    x = np.array([2.0, 3.0])
    hidden = np.maximum(np.array([2.0, -3.0]), 0)  # (2, 0)
    logits = np.array([hidden.sum(), 0.0])
    expected = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(nn.mlp_forward(params, x), expected, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(-50, 50))
def test_softmax_sums_to_one(seed, scale):
    rng = np.random.default_rng(seed)
    params = small_net(rng, (3, 16, 8))
    x = scale * rng.normal(size=(5, 3))
    probs, _ = nn.forward_batch(params, x)
    assert np.all(probs >= 0)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_input_width_mismatch():
    params = nn.zero_network([3, 16, 2])
    with pytest.raises(nn.ShapeError):
        nn.mlp_forward(params, np.zeros(4))


def test_forward_deterministic_with_ones_mask():
    rng = np.random.default_rng(1)
    params = small_net(rng)
    x = rng.normal(size=(7, 2))
    a, _ = nn.forward_batch(params, x, mask=np.ones(16))
    b, _ = nn.forward_batch(params, x, mask=np.ones(16))
    c, _ = nn.forward_batch(params, x)
    assert np.array_equal(a, b) and np.array_equal(a, c)


# --- loss --------------------------------------------------------------------


def test_cross_entropy_values():
    assert nn.cross_entropy_loss(np.array([0.25] * 4), 2) == pytest.approx(np.log(4))
    diag = {}
    assert nn.cross_entropy_loss(np.array([1.0, 0.0]), 1, diag) == pytest.approx(-np.log(1e-12))
    assert diag["clipped"] == 1
    with pytest.raises(nn.ShapeError):
        nn.cross_entropy_loss(np.array([0.5, 0.5]), 2)


# --- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("n_symbols", [2, 4, 8])
def test_backward_matches_finite_differences(n_symbols):
    rng = np.random.default_rng(n_symbols)
    params = small_net(rng, (2, 16, n_symbols))
    x = rng.normal(size=(9, 2))
    y = rng.integers(0, n_symbols, size=9)
    mask = rng.uniform(0.2, 1.0, size=16)
    _, grads = nn.backward(params, x, y, mask=mask, need_inputs=True)

    def loss():
        probs, _ = nn.forward_batch(params, x, mask)
        return nn.batch_cross_entropy(probs, y)

    for got, arr in zip(grads.arrays(), params.arrays()):
        assert rel_err(got, numeric_grad(loss, arr)) < 1e-6
    # mask gradient summed over the batch equals d loss / d shared mask
    assert rel_err(grads.mask.sum(axis=0), numeric_grad(loss, mask)) < 1e-6
    assert rel_err(grads.inputs, numeric_grad(loss, x)) < 1e-6


def test_kl_regularizer_hand_value_and_gradients():
    params = nn.zero_network([3, 16, 4])
    post = nn.DropoutPosterior(params, np.zeros(16))
    value, _, _ = nn.kl_regularizer(post, beta=10.0)
    assert value == pytest.approx(-16 * np.log(2) / 10.0)

    rng = np.random.default_rng(3)
    post = nn.DropoutPosterior(small_net(rng, (3, 16, 4)), rng.normal(size=16), prior_stddev=0.7)
    _, g_w, g_logit = nn.kl_regularizer(post, beta=3.0)

    def val():
        return nn.kl_regularizer(post, beta=3.0)[0]

    assert rel_err(g_w[0], numeric_grad(val, post.nominal.weights[0])) < 1e-6
    assert np.all(g_w[1] == 0)
    assert rel_err(g_logit, numeric_grad(val, post.dropout_logits)) < 1e-6


def test_kl_vanishes_with_large_beta():
    rng = np.random.default_rng(0)
    post = nn.make_posterior(small_net(rng), 0.3)
    assert abs(nn.kl_regularizer(post, 1e15)[0]) < 1e-12
    with pytest.raises(ValueError):
        nn.kl_regularizer(post, 0.0)


def test_free_energy_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    post = nn.make_posterior(small_net(rng, (2, 16, 4)), 0.2)
    x = rng.normal(size=(6, 2))
    y = rng.integers(0, 4, size=6)
    seed = 5

    def value():
        return nn.free_energy_grads(post, x, y, 50.0, np.random.default_rng(seed))[0]

    _, g_params, g_logit, _ = nn.free_energy_grads(post, x, y, 50.0, np.random.default_rng(seed))
    for got, arr in zip(g_params, post.nominal.arrays()):
        assert rel_err(got, numeric_grad(value, arr)) < 1e-5
    assert rel_err(g_logit, numeric_grad(value, post.dropout_logits, eps=1e-7)) < 1e-4


# --- Adam --------------------------------------------------------------------


def test_adam_first_step_is_signed_learning_rate():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -4.0, 1e-3])]
    state = nn.AdamState.for_arrays(p, learning_rate=0.01)
    nn.adam_step(state, p, g)
    # bias-corrected moments give m/sqrt(v) = sign(g) up to epsilon
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g[0] / (np.abs(g[0]) + 1e-8)
    assert np.allclose(p[0], expected, rtol=0, atol=1e-12)


def test_adam_reduces_quadratic():
    x = [np.array([3.0])]
    state = nn.AdamState.for_arrays(x, learning_rate=0.1)
    losses = []
    for _ in range(2):
        losses.append(float(x[0][0] ** 2))
        nn.adam_step(state, x, [2 * x[0]])
    losses.append(float(x[0][0] ** 2))
    assert losses[2] < losses[1] < losses[0]


def test_adam_shape_checks():
    state = nn.AdamState.for_arrays([np.zeros(2)])
    with pytest.raises(nn.ShapeError):
        nn.adam_step(state, [np.zeros(2)], [np.zeros(3)])


# --- dropout -----------------------------------------------------------------


def test_concrete_mask_examples():
    assert nn.concrete_mask(0.0, 0.5, 0.1) == pytest.approx(0.5)
    assert nn.concrete_mask(0.0, 0.9, 1.0) == pytest.approx(0.9)
    # near-zero temperature: hard threshold at u = sigmoid(-logit)
    logit = 0.8
    u0 = 1 / (1 + np.exp(logit))
    assert nn.concrete_mask(logit, u0 + 0.02, 1e-3) > 0.999
    assert nn.concrete_mask(logit, u0 - 0.02, 1e-3) < 0.001
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            nn.concrete_mask(0.0, bad, 0.1)


def test_concrete_keep_derivative():
    u = np.array([0.3, 0.6, 0.95])
    logits = np.array([-1.0, 0.2, 2.0])
    _, d = nn.concrete_keep(logits, u, 0.5)
    eps = 1e-6
    num = (nn.concrete_keep(logits + eps, u, 0.5)[0] - nn.concrete_keep(logits - eps, u, 0.5)[0]) / (2 * eps)
    assert np.allclose(d, num, atol=1e-8)


def test_realization_limits():
    rng = np.random.default_rng(0)
    params = small_net(rng)
    keep_all = nn.sample_dropout_realization(nn.DropoutPosterior(params, np.full(16, -30.0)), rng)
    assert all(np.array_equal(a, b) for a, b in zip(keep_all.arrays(), params.arrays()))
    drop_all = nn.sample_dropout_realization(nn.DropoutPosterior(params, np.full(16, 30.0)), rng)
    zeroed = drop_all.copy()
    zeroed.biases[-1][:] = 0
    probs = nn.mlp_forward(zeroed, np.array([0.3, -1.0]))
    assert np.allclose(probs, 0.25)


def test_empirical_drop_rate():
    rng = np.random.default_rng(123)
    logits = np.full(10_000, np.log(0.1 / 0.9))
    keep = nn.sample_keep_mask(logits, rng)
    assert abs((1 - keep.mean()) - 0.1) < 0.01


def test_dropout_sequence_is_seeded():
    rng = np.random.default_rng(0)
    post = nn.make_posterior(small_net(rng), 0.4)
    a = [nn.sample_dropout_realization(post, r).weights[1] for r in [np.random.default_rng(9)] * 3]
    b = [nn.sample_dropout_realization(post, r).weights[1] for r in [np.random.default_rng(9)] * 3]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_per_example_training_masks():
    rng = np.random.default_rng(2)
    post = nn.make_posterior(small_net(rng), 0.5)
    keep, dkeep = nn.draw_concrete_keep(post, np.random.default_rng(0), 12)
    assert keep.shape == dkeep.shape == (12, 16)
    assert not np.allclose(keep[0], keep[1])


def test_drop_probs_in_open_interval():
    with pytest.raises(nn.ShapeError):
        nn.DropoutPosterior(nn.zero_network([2, 16, 2]), np.zeros(3))
    post = nn.make_posterior(nn.zero_network([2, 16, 2]), 0.1)
    assert np.allclose(post.dropout_logits, np.log(0.1 / 0.9))
    assert np.all((post.drop_probs > 0) & (post.drop_probs < 1))


# --- training ----------------------------------------------------------------


def test_frequentist_fit_learns_separable_data():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(200, 2))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)
    params = nn.init_network([2, 16, 2], rng)
    hist = []
    nn.fit_frequentist(params, x, y, steps=300, lr=1e-2, history=hist)
    acc = (nn.forward_batch(params, x)[0].argmax(1) == y).mean()
    assert acc > 0.95 and hist[-1] < hist[0]


def test_divergence_carries_layer_and_module():
    params = nn.init_network([2, 16, 2], np.random.default_rng(0))
    params.weights[0][0, 0] = np.inf
    with pytest.raises(nn.TrainingDivergence) as info:
        nn.fit_frequentist(params, np.ones((3, 2)), np.zeros(3, dtype=int), steps=1, module=(1, 2))
    assert info.value.module == (1, 2)
    assert info.value.layer is not None


# --- snapshots ---------------------------------------------------------------


def test_snapshot_layout_and_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    params = small_net(rng, (3, 16, 4))
    data = nn.params_to_bytes(params)
    count = np.frombuffer(data[:4], "<u4")[0]
    sizes = np.frombuffer(data[4:4 + 4 * count], "<u4")
    assert list(sizes) == [3, 16, 4]
    body = np.frombuffer(data[4 + 4 * count:], "<f8")
    expected = np.concatenate([params.weights[0].ravel(), params.biases[0], params.weights[1].ravel(),
                               params.biases[1]])
    assert np.array_equal(body, expected)
    nn.save_params(tmp_path / "m.bin", params)
    back = nn.load_params(tmp_path / "m.bin")
    assert all(np.array_equal(a, b) for a, b in zip(back.arrays(), params.arrays()))
    with pytest.raises(ValueError):
        nn.params_from_bytes(data + b"\0")
