import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hvocr.ctc import ctc_loss_from_logits
from hvocr.network import (TrainConfig, backward, closed_form_weight_count, count_weights, forward,
                           init_network, load_model, predict_lattices, save_model, sgd_step, train)

from gradcheck import random_case, worst_relative_error
from oracles import blstm_scalar


def perturbed(net, seed, scale=0.4):
    rng = np.random.default_rng(seed)
    for arr in net.arrays():
        arr += rng.uniform(-scale, scale, size=arr.shape)
    return net


# -- construction ------------------------------------------------------------

def test_init_deterministic_and_in_range():
    a = init_network([4, 3], 5, 3, seed=7)
    b = init_network([4, 3], 5, 3, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    c = init_network([4, 3], 5, 3, seed=8)
    assert not np.array_equal(a.w_out, c.w_out)
    for name, arr in a.parameters():
        if name.endswith("bias"):
            continue
        assert np.all(np.abs(arr) <= 0.1), name


def test_gate_biases():
    net = init_network([3], 2, 2, gate_bias=(1.0, -1.0, 2.0))
    H = 3
    bias = net.forward_layers[0].bias
    assert np.all(bias[:H] == 1.0) and np.all(bias[H:2 * H] == -1.0)
    assert np.all(bias[2 * H:3 * H] == 0.0) and np.all(bias[3 * H:] == 2.0)
    assert np.all(net.b_out == 0.0)


def test_tiny_net_hand_count():
    # per direction: 4 blocks x (3 inputs + 2 recurrent + 1 bias) x 2 units = 48,
    # plus 3 peephole vectors of 2 = 6 -> 54; both directions 108;
    # output (2*2 + 1) x (2 + 1) = 15
    net = init_network([2], 3, 2)
    assert count_weights(net) == 123
    assert closed_form_weight_count([2], 3, 2) == 123
    assert count_weights(init_network([2], 3, 2, peepholes=False)) == 123 - 12


def test_count_delta_when_doubling_h():
    # 1-layer count: 2 (4 (I + H + 1) H + 3H) + (2H + 1)(K + 1)
    def hand(I, H, K):
        return 2 * (4 * (I + H + 1) * H + 3 * H) + (2 * H + 1) * (K + 1)
    for I, H, K in [(3, 2, 2), (16, 5, 10), (1, 1, 1)]:
        delta = count_weights(init_network([2 * H], I, K)) - count_weights(init_network([H], I, K))
        assert delta == hand(I, 2 * H, K) - hand(I, H, K)


def test_multilayer_count_matches_closed_form():
    for sizes in ([4, 3], [2, 2, 2], [5]):
        assert count_weights(init_network(sizes, 7, 4)) == closed_form_weight_count(sizes, 7, 4)


@pytest.mark.parametrize("sizes,inp,k", [([], 3, 2), ([0], 3, 2), ([2], 0, 2), ([2], 3, 0)])
def test_init_errors(sizes, inp, k):
    with pytest.raises(ValueError):
        init_network(sizes, inp, k)


# -- forward -----------------------------------------------------------------

def test_single_frame_sums_to_one():
    lat, _ = forward(init_network([3], 4, 3), np.ones((1, 4)))
    assert lat.shape == (1, 4)
    assert lat.sum() == pytest.approx(1.0, abs=1e-12)


def test_zero_net_uniform():
    net = init_network([3, 2], 4, 3, init_range=0.0, gate_bias=(0.0, 0.0, 0.0))
    lat, _ = forward(net, np.zeros((5, 4)))
    np.testing.assert_allclose(lat, 0.25, atol=1e-15)


@pytest.mark.parametrize("sizes,T,peep", [([2], 1, True), ([3], 5, True), ([3, 2], 6, True),
                                          ([2, 3, 2], 4, False)])
def test_forward_matches_scalar_reference(sizes, T, peep):
    net = perturbed(init_network(sizes, 3, 2, seed=3, peepholes=peep), 4)
    x = np.random.default_rng(5).normal(size=(T, 3))
    lat, _ = forward(net, x)
    assert np.max(np.abs(lat - blstm_scalar(net, x))) < 1e-12


def test_forward_errors():
    net = init_network([2], 3, 2)
    with pytest.raises(ValueError):
        forward(net, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        forward(net, np.zeros((0, 3)))
    bad = np.zeros((2, 3))
    bad[1, 1] = np.nan
    with pytest.raises(ValueError):
        forward(net, bad)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_lattice_rows_are_distributions(seed, T):
    net = perturbed(init_network([3, 2], 4, 5, seed=seed % 1000), seed, scale=2.0)
    x = np.random.default_rng(seed).normal(scale=3.0, size=(T, 4))
    lat, _ = forward(net, x)
    np.testing.assert_allclose(lat.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(lat > 0) and np.all(lat < 1)


def test_batched_prediction_matches_single():
    net = perturbed(init_network([3, 2], 4, 3, seed=1), 2)
    rng = np.random.default_rng(0)
    seqs = [rng.normal(size=(T, 4)) for T in (1, 6, 3, 9)]
    batched = predict_lattices(net, seqs, batch_size=3)
    for s, lat in zip(seqs, batched):
        np.testing.assert_allclose(lat, forward(net, s)[0], atol=1e-13)


def mirror(net):
    """Backward direction := forward direction, symmetric feedforward and output."""
    for f, b in zip(net.forward_layers, net.backward_layers):
        for src, dst in zip(f.arrays(True), b.arrays(True)):
            dst[...] = src
    for n, W in enumerate(net.ff_weights):
        H = net.hidden_sizes[n]
        W[H:] = W[:H]
    H = net.hidden_sizes[-1]
    net.w_out[H:] = net.w_out[:H]
    return net


@pytest.mark.parametrize("sizes", [[3], [3, 2], [2, 2, 3]])
def test_reversal_symmetry(sizes):
    net = mirror(perturbed(init_network(sizes, 3, 3, seed=9), 10))
    x = np.random.default_rng(11).normal(size=(7, 3))
    a, _ = forward(net, x)
    b, _ = forward(net, x[::-1])
    assert np.max(np.abs(a - b[::-1])) < 1e-10


# -- backward ----------------------------------------------------------------

def test_zero_upstream_gradient():
    net = init_network([3, 2], 3, 2)
    _, cache = forward(net, np.ones((4, 3)))
    assert all(np.all(g == 0) for g in backward(net, cache, np.zeros((4, 3))))


def test_stale_cache_rejected():
    net = init_network([2], 3, 2)
    _, cache = forward(net, np.ones((3, 3)))
    net2 = init_network([2], 3, 2)
    with pytest.raises(ValueError):
        backward(net2, cache, np.zeros((3, 3)))
    sgd_step(net, [np.zeros_like(a) for a in net.arrays()], None, TrainConfig())
    with pytest.raises(ValueError):
        backward(net, cache, np.zeros((3, 3)))
    _, cache = forward(net, np.ones((3, 3)))
    with pytest.raises(ValueError):
        backward(net, cache, np.zeros((2, 3)))


@pytest.mark.parametrize("n_layers,hidden,T", [(1, 2, 1), (1, 3, 4), (2, 2, 4), (2, 3, 7)])
def test_gradient_check(n_layers, hidden, T):
    net, x, labels = random_case(n_layers, hidden, T, seed=100 * n_layers + 10 * hidden + T)
    assert worst_relative_error(net, x, labels) < 1e-4


def test_gradient_check_single_frame_peephole_path():
    # at T = 1 recurrent weights get no gradient; peepholes still do
    net, x, labels = random_case(1, 2, 1, seed=3)
    _, cache = forward(net, x)
    from gradcheck import analytic_grads
    grads = dict(zip([n for n, _ in net.parameters()], analytic_grads(net, x, labels)))
    assert np.all(grads["layer0.fwd.w_rec"] == 0)
    assert np.any(grads["layer0.fwd.peep"] != 0)
    assert worst_relative_error(net, x, labels) < 1e-4


# -- sgd ---------------------------------------------------------------------

def grads_like(net, value):
    return [np.full_like(a, value) for a in net.arrays()]


def test_sgd_zero_gradient():
    net = init_network([2], 3, 2)
    before = [a.copy() for a in net.arrays()]
    sgd_step(net, grads_like(net, 0.0), None, TrainConfig())
    assert all(np.array_equal(a, b) for a, b in zip(net.arrays(), before))


def test_sgd_first_and_second_step():
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    net = init_network([2], 3, 2)
    before = [a.copy() for a in net.arrays()]
    g = 0.5
    net, v = sgd_step(net, grads_like(net, g), None, cfg)
    for a, b in zip(net.arrays(), before):
        np.testing.assert_allclose(a, b - 0.1 * 0.5, rtol=0, atol=1e-15)
    net, v = sgd_step(net, grads_like(net, g), v, cfg)
    # lr g (1 + (1 + momentum)) = 0.05 * 2.9
    for a, b in zip(net.arrays(), before):
        np.testing.assert_allclose(a, b - 0.145, rtol=0, atol=1e-15)


def test_sgd_shape_mismatch():
    net = init_network([2], 3, 2)
    with pytest.raises(ValueError):
        sgd_step(net, grads_like(net, 0.0)[:-1], None, TrainConfig())
    bad = grads_like(net, 0.0)
    bad[0] = np.zeros((1, 1))
    with pytest.raises(ValueError):
        sgd_step(net, bad, None, TrainConfig())


@pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"momentum": 1.0}, {"momentum": -0.1},
                                {"max_epochs": 0}, {"patience": -1}, {"batch_size": 0}])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# -- training ----------------------------------------------------------------

def toy_dataset(n=6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        labels = [int(v) for v in rng.integers(0, 3, size=2)]
        out.append((rng.normal(size=(6, 4)), labels))
    return out


def test_patience_zero_runs_one_epoch():
    net, log = train(init_network([3], 4, 3), toy_dataset(), TrainConfig(patience=0, max_epochs=50))
    assert len(log) == 1 and log[0]["epoch"] == 1


def test_overfit_one_sequence():
    x, y = toy_dataset(1)[0]
    net0 = init_network([4], 4, 3, seed=1)
    initial = ctc_loss_from_logits(np.log(forward(net0, x)[0]), y).loss
    cfg = TrainConfig(learning_rate=1e-2, max_epochs=200, patience=200)
    net, log = train(net0, [(x, y)], cfg)
    final = ctc_loss_from_logits(np.log(forward(net, x)[0]), y).loss
    assert final < initial
    assert len(log) == 200


def test_training_is_deterministic():
    cfg = TrainConfig(learning_rate=1e-2, max_epochs=5, patience=5, batch_size=2, rng_seed=4)
    a, la = train(init_network([3], 4, 3, seed=2), toy_dataset(), cfg)
    b, lb = train(init_network([3], 4, 3, seed=2), toy_dataset(), cfg)
    assert la == lb
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_train_returns_best_validation_parameters():
    cfg = TrainConfig(learning_rate=5e-2, max_epochs=8, patience=8)
    records = []
    net, log = train(init_network([3], 4, 3), toy_dataset(), cfg, callback=records.append)
    assert records == log
    best = min(r["val_ctc"] for r in log)
    from hvocr.network import evaluate_ctc
    data = toy_dataset()
    loss, _ = evaluate_ctc(net, [x for x, _ in data], [y for _, y in data])
    assert loss == pytest.approx(best, rel=1e-12)


def test_train_errors():
    net = init_network([2], 4, 3)
    with pytest.raises(ValueError, match="empty"):
        train(net, [], TrainConfig())
    with pytest.raises(ValueError, match="out of range"):
        train(net, [(np.zeros((5, 4)), [3])], TrainConfig())
    with pytest.raises(ValueError):
        train(net, [(np.zeros((5, 4)), [])], TrainConfig())
    with pytest.raises(ValueError, match="too short"):
        train(net, [(np.zeros((2, 4)), [1, 1])], TrainConfig())


# -- model files -------------------------------------------------------------

@pytest.mark.parametrize("peep", [True, False])
def test_save_load_bit_exact(tmp_path, peep):
    net = perturbed(init_network([3, 2], 5, 4, seed=6, peepholes=peep), 1)
    save_model(net, tmp_path / "m.blstm")
    back = load_model(tmp_path / "m.blstm")
    assert back.hidden_sizes == net.hidden_sizes and back.peepholes == peep
    assert all(np.array_equal(a, b) for a, b in zip(net.arrays(), back.arrays()))
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert np.array_equal(forward(net, x)[0], forward(back, x)[0])


def test_load_rejects_corrupt(tmp_path):
    net = init_network([2], 3, 2)
    p = tmp_path / "m.blstm"
    save_model(net, p)
    raw = p.read_bytes()
    (tmp_path / "short.blstm").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_model(tmp_path / "short.blstm")
    (tmp_path / "magic.blstm").write_bytes(raw.replace(b"hvocr-blstm", b"other-model", 1))
    with pytest.raises(ValueError):
        load_model(tmp_path / "magic.blstm")
    (tmp_path / "nohdr.blstm").write_bytes(b"garbage")
    with pytest.raises(ValueError):
        load_model(tmp_path / "nohdr.blstm")
