import numpy as np
import pytest

from eprop.errors import ConfigError, ShapeError
from eprop.network import (
    BroadcastMode,
    NetworkConfig,
    forward_step,
    init_network,
    initial_readout,
    initial_states,
    learning_signal,
    readout_step,
    update_broadcast,
)
from eprop.neuron import NeuronParams

P = NeuronParams()


def zero_params(cfg):
    params = init_network(cfg, 0)
    for layer in params.layers:
        layer.w_in[:] = 0
        layer.w_rec[:] = 0
    params.w_out[:] = 0
    return params


def test_init_is_deterministic():
    cfg = NetworkConfig(n_neurons=40)
    a, b = init_network(cfg, 7), init_network(cfg, 7)
    for k, v in a.arrays().items():
        assert np.array_equal(v, b.arrays()[k])
    assert not np.array_equal(a.w_out, init_network(cfg, 8).w_out)


def test_full_size_mask_counts():
    params = init_network(NetworkConfig(), 0)
    layer = params.layers[0]
    assert layer.w_rec.shape == (800, 800)
    assert np.all(np.diag(layer.w_rec) == 0)
    assert not layer.mask_rec.diagonal().any()
    off_diag_zeros = (~layer.mask_rec).sum() - 800
    assert off_diag_zeros == int(np.floor(0.8 * 800 * 800))
    assert (~layer.mask_in).sum() == int(np.floor(0.8 * 800 * 39))
    assert np.all(layer.w_rec[~layer.mask_rec] == 0)


def test_lif_fraction_and_adaptation():
    params = init_network(NetworkConfig(n_neurons=100), 0)
    beta = params.layers[0].beta
    assert (beta == 0).sum() == 25
    assert np.all(beta[beta > 0] == 0.184)


def test_three_layers_split_neurons():
    params = init_network(NetworkConfig(n_layers=3, n_neurons=800, sparsity=0.0), 0)
    assert params.layer_sizes == [266, 266, 266]
    assert params.layers[1].w_in.shape == (266, 266)
    assert params.w_out.shape == (61, 798)


@pytest.mark.parametrize("kw", [dict(n_layers=4), dict(n_layers=0), dict(n_neurons=0),
                                dict(n_outputs=-1), dict(sparsity=1.0), dict(lif_fraction=2)])
def test_bad_config(kw):
    with pytest.raises(ConfigError):
        NetworkConfig(**kw)


def test_symmetric_feedback_is_transposed_readout():
    params = init_network(NetworkConfig(n_layers=2, n_neurons=20), 0)
    for r in range(2):
        np.testing.assert_array_equal(params.b_feedback[r], params.out_block(r).T)


def test_zero_weights_give_uniform_output_and_decay():
    cfg = NetworkConfig(n_neurons=10)
    params = zero_params(cfg)
    states = initial_states(params)
    ro = initial_readout(params)
    ro.y[:] = 1.0
    states, _, _, ro = forward_step(params, states, np.ones(39), ro, P)
    np.testing.assert_allclose(ro.y, 0.8)
    np.testing.assert_allclose(ro.pi, 1 / 61)


def test_readout_geometric_limit():
    params = zero_params(NetworkConfig(n_neurons=4, n_outputs=3))
    params.w_out[:] = 0.25
    ro = initial_readout(params)
    for _ in range(200):
        ro = readout_step(params, ro, [np.ones(4)], 0.8)
    # constant drive c = 1 converges to c / (1 - kappa) = 5
    np.testing.assert_allclose(ro.y, 5.0, rtol=1e-12)


def test_no_spikes_gives_decay_plus_bias():
    params = zero_params(NetworkConfig(n_neurons=4, n_outputs=3))
    params.bias[:] = [1.0, -1.0, 0.5]
    ro = initial_readout(params)
    ro.y[:] = 2.0
    ro = readout_step(params, ro, [np.zeros(4)], 0.8)
    np.testing.assert_allclose(ro.y, 1.6 + params.bias)


def test_input_width_checked():
    params = init_network(NetworkConfig(n_neurons=4), 0)
    with pytest.raises(ShapeError):
        forward_step(params, initial_states(params), np.ones(38), initial_readout(params), P)


def test_deep_layer_reads_same_step_spikes():
    cfg = NetworkConfig(n_layers=2, n_neurons=2, n_inputs=1, n_outputs=2, sparsity=0.0,
                        recurrent=False, lif_fraction=1.0)
    params = zero_params(cfg)
    params.layers[0].w_in[:] = 2.0
    params.layers[1].w_in[:] = 2.0
    states, spikes, _, _ = forward_step(params, initial_states(params), np.ones(1),
                                        initial_readout(params), P)
    assert spikes[0][0] == 1 and spikes[1][0] == 1


def test_learning_signal_examples():
    b = np.eye(3)[[1]]  # one neuron reading class 1
    pi = np.array([0.2, 0.5, 0.3])
    assert np.all(learning_signal(b, pi, pi) == 0)
    target = np.array([0.0, 0.3, 0.7])
    assert learning_signal(b, pi, target)[0] == pytest.approx(0.2)


def test_update_broadcast_modes():
    cfg = NetworkConfig(n_neurons=6, n_outputs=4)
    sym = init_network(cfg, 0)
    sym.w_out += 1.0
    update_broadcast(sym, np.ones_like(sym.w_out))
    np.testing.assert_array_equal(sym.b_feedback[0], sym.w_out.T)

    rnd = init_network(NetworkConfig(n_neurons=6, n_outputs=4, broadcast="random"), 0)
    before = rnd.b_feedback[0].copy()
    update_broadcast(rnd, np.ones_like(rnd.w_out))
    np.testing.assert_array_equal(rnd.b_feedback[0], before)

    ada = init_network(NetworkConfig(n_neurons=6, n_outputs=4, broadcast="adaptive"), 0)
    before = ada.b_feedback[0].copy()
    update_broadcast(ada, np.zeros_like(ada.w_out))
    np.testing.assert_array_equal(ada.b_feedback[0], before)
    delta = np.arange(24.0).reshape(4, 6)
    update_broadcast(ada, delta)
    np.testing.assert_array_equal(ada.b_feedback[0], before + delta.T)


def test_broadcast_parse():
    assert BroadcastMode.parse("Adaptive") is BroadcastMode.ADAPTIVE
    with pytest.raises(ConfigError):
        BroadcastMode.parse("bogus")


def test_copy_is_deep():
    params = init_network(NetworkConfig(n_neurons=6), 0)
    other = params.copy()
    other.layers[0].w_in += 1
    other.b_feedback[0] += 1
    assert not np.array_equal(params.layers[0].w_in, other.layers[0].w_in)
    assert not np.array_equal(params.b_feedback[0], other.b_feedback[0])


def test_learning_signal_ignores_constant_row_shift():
    rng = np.random.default_rng(0)
    for _ in range(100):
        b = rng.normal(size=(5, 7))
        pi = rng.dirichlet(np.ones(7))
        target = np.eye(7)[rng.integers(7)]
        shifted = b + rng.normal(size=(5, 1))
        np.testing.assert_allclose(learning_signal(shifted, pi, target),
                                   learning_signal(b, pi, target), atol=1e-12)


def test_softmax_normalised():
    params = init_network(NetworkConfig(n_neurons=8), 3)
    ro = initial_readout(params)
    rng = np.random.default_rng(1)
    for _ in range(20):
        ro = readout_step(params, ro, [(rng.random(8) < 0.5).astype(float)], 0.8)
        assert abs(ro.pi.sum() - 1) <= 1e-12 and np.all(ro.pi > 0)
