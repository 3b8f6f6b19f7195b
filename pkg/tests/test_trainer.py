import math

import numpy as np
import pytest

from eprop.dataset import Utterance, synthetic_task
from eprop.errors import ConfigError, InputError
from eprop.network import NetworkConfig, init_network
from eprop.neuron import NeuronKind, NeuronParams
from eprop.oracle import finite_difference_readout
from eprop.trainer import (
    NO_REG,
    Batch,
    OptimizerState,
    RegConfig,
    RegState,
    TrainConfig,
    Trainer,
    adam_apply,
    cross_entropy,
    evaluate,
    firing_rate_reg,
    l2_reg,
    lr_warmup,
    reg_error,
    run_batch,
    run_sample,
    sample_gradients,
)

import oracles

P = NeuronParams()


def tiny(model="alif", n_layers=1, n_neurons=8, n_outputs=5, seed=0, **kw):
    cfg = NetworkConfig(n_layers=n_layers, n_neurons=n_neurons, n_outputs=n_outputs, model=model,
                        **kw)
    return init_network(cfg, seed)


def utterances(n, t_len=12, n_classes=5, seed=1, scale=1.0):
    data = synthetic_task(seed, n_classes, n, t_len, separation=2.0)
    for u in data:
        u.features = u.features * scale
    return data


# --- loss and regularisers --------------------------------------------------

def test_cross_entropy_examples():
    pi = np.full((7, 61), 1 / 61)
    labels = np.zeros(7, dtype=int)
    assert cross_entropy(pi, labels) == pytest.approx(7 * math.log(61))
    sharp = np.full((1, 2), 0.0)
    sharp[0] = [1 - 1e-12, 1e-12]
    assert cross_entropy(sharp, [0]) == pytest.approx(0.0, abs=1e-11)
    with pytest.raises(InputError):
        cross_entropy(pi, labels[:3])


def test_firing_rate_reg_examples():
    series = np.full((5, 3), 0.01)
    assert np.all(firing_rate_reg(series, 0.01, 50.0) == 0)
    assert reg_error(np.full(3, 0.01), 0.01) == 0
    assert reg_error(np.array([0.0]), 0.01) == pytest.approx(5e-5)
    # silent neuron: negative contribution so that descent raises its weights
    assert firing_rate_reg(np.zeros((4, 1)), 0.01, 50.0)[0] == pytest.approx(-2.0)
    with pytest.raises(InputError):
        firing_rate_reg(np.zeros((0, 2)), 0.01, 1.0)
    with pytest.raises(InputError):
        RegState(np.zeros(3)).f_av


def test_l2_reg_examples():
    assert np.all(l2_reg(np.zeros(3), 1e-5) == 0)
    assert l2_reg(np.ones(1), 1e-5)[0] == pytest.approx(1e-5)
    assert l2_reg(np.ones(2), 1e-5, np.array([True, False]))[1] == 0


# --- optimiser ----------------------------------------------------------------

def test_adam_first_step_identity():
    g = np.array([0.3, -2.0, 0.0])
    d = adam_apply(OptimizerState(), {"w": g}, 0.01)["w"]
    np.testing.assert_allclose(d, -0.01 * g / (np.abs(g) + 1e-5), rtol=1e-12)


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=30)
    opt = OptimizerState()
    ours = [adam_apply(opt, {"w": np.array([g])}, 0.003)["w"][0] for g in grads]
    np.testing.assert_allclose(ours, oracles.adam_scalar(grads, 0.003), rtol=1e-12)


def test_adam_zero_gradient_never_moves():
    opt = OptimizerState()
    for _ in range(5):
        assert np.all(adam_apply(opt, {"w": np.zeros(4)}, 0.1)["w"] == 0)


def test_lr_warmup():
    assert lr_warmup(0, 100, 0.01) == pytest.approx(0.01 / 100)
    assert lr_warmup(49, 100, 0.01) == pytest.approx(0.005)
    assert lr_warmup(100, 100, 0.01) == 0.01
    assert lr_warmup(250, 100, 0.01) == 0.01


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(beta1=1.0)


# --- the sample loop ------------------------------------------------------------

def test_zero_weight_bias_gradient():
    params = tiny(n_outputs=61)
    for layer in params.layers:
        layer.w_in[:] = 0
    params.w_out[:] = 0
    labels = np.array([3, 3, 10, 60, 0])
    utt = Utterance(np.ones((5, 39)), labels)
    g = sample_gradients(params, utt, P)["bias"]
    # the readout integrates the bias, so every residual is weighted by sum_s kappa^s
    bbar = np.cumsum(0.8 ** -np.arange(5)) * 0.8 ** np.arange(5)
    target = np.zeros((5, 61))
    target[np.arange(5), labels] = 1
    expect = ((1 / 61 - target) * bbar[:, None]).sum(axis=0)
    np.testing.assert_allclose(g, expect, rtol=1e-12)
    np.testing.assert_allclose(g, finite_difference_readout(params, utt, P)["bias"], rtol=1e-6)


def test_zero_learning_signal_gives_zero_hidden_gradients():
    params = tiny(broadcast="random")
    params.b_feedback = [np.zeros_like(b) for b in params.b_feedback]
    g = sample_gradients(params, utterances(1)[0], P)
    assert np.all(g["w_in0"] == 0) and np.all(g["w_rec0"] == 0)


def test_empty_utterance_rejected():
    with pytest.raises(InputError):
        run_sample(tiny(), Utterance(np.zeros((0, 39)), []), P)
    with pytest.raises(InputError):
        Batch.from_utterances([])


@pytest.mark.parametrize("model", ["alif", "stdp-alif", "izh"])
def test_fused_kernels_match_reference_path(model):
    scale = 12.0 if model == "izh" else 1.5
    params = tiny(model, n_layers=2, n_neurons=16)
    batch = Batch.from_utterances(utterances(3, scale=scale))
    a = run_batch(params, batch, P, fused=True)
    b = run_batch(params, batch, P, fused=False)
    for k in a.grads:
        np.testing.assert_allclose(a.grads[k], b.grads[k], rtol=1e-10, atol=1e-12)


def test_batch_equals_sum_of_samples():
    params = tiny(n_neurons=10)
    data = utterances(3)
    data[1] = Utterance(data[1].features[:7], data[1].labels[:7])
    batch = run_batch(params, Batch.from_utterances(data), P)
    singles = [run_batch(params, Batch.from_utterances([u]), P) for u in data]
    for k in batch.grads:
        np.testing.assert_allclose(batch.grads[k], sum(s.grads[k] for s in singles),
                                   rtol=1e-10, atol=1e-12)
    assert batch.n_frames == 12 + 7 + 12


def test_gradients_respect_masks():
    params = tiny(n_neurons=12)
    g = sample_gradients(params, utterances(1)[0], P)
    assert np.all(g["w_in0"][~params.layers[0].mask_in] == 0)
    assert np.all(g["w_rec0"][~params.layers[0].mask_rec] == 0)


# --- evaluation ---------------------------------------------------------------

def test_uniform_predictor_is_at_chance():
    params = tiny(n_outputs=61)
    params.w_out[:] = 0
    data = [Utterance(np.zeros((61, 39)), np.arange(61))]
    rec = evaluate(params, data, P)
    assert rec.miscls_pct == pytest.approx(100 * 60 / 61)
    assert rec.xent == pytest.approx(math.log(61))


def test_perfect_predictor_and_saturated_rate():
    params = tiny(n_outputs=2, sparsity=0.0, lif_fraction=1.0, recurrent=False)
    params.layers[0].w_in[:] = 10.0
    params.w_out[:] = 0
    params.bias[:] = [5.0, 0.0]
    # refractory neurons fire every third step at most; all-spiking needs t_refr = 0
    p0 = NeuronParams(t_refr=0)
    rec = evaluate(params, [Utterance(np.ones((6, 39)), np.zeros(6))], p0)
    assert rec.miscls_pct == 0
    assert rec.mean_rate_hz == pytest.approx(1000.0)


# --- training loop --------------------------------------------------------------

def make_trainer(model="alif", broadcast="symmetric", seed=0):
    params = tiny(model, n_neurons=16, n_outputs=3, broadcast=broadcast, seed=seed)
    return Trainer(params, P, TrainConfig(batch_size=4, epochs=1, max_iters=None, seed=seed),
                   RegConfig())


def test_training_is_bit_deterministic():
    data = utterances(16, n_classes=3)
    a, b = make_trainer(), make_trainer()
    a.fit(data)
    b.fit(data)
    for k, v in a.params.arrays().items():
        assert np.array_equal(v, b.params.arrays()[k])


def test_masks_and_ties_hold_during_training():
    data = utterances(16, n_classes=3)
    tr = make_trainer()
    tr.fit(data)
    layer = tr.params.layers[0]
    assert np.all(layer.w_in[~layer.mask_in] == 0)
    assert np.all(layer.w_rec[~layer.mask_rec] == 0)
    np.testing.assert_array_equal(tr.params.b_feedback[0], tr.params.w_out.T)
    assert tr.iteration == 4


def test_random_feedback_never_changes():
    data = utterances(16, n_classes=3)
    tr = make_trainer(broadcast="random")
    before = tr.params.b_feedback[0].copy()
    tr.fit(data)
    np.testing.assert_array_equal(tr.params.b_feedback[0], before)


def test_validation_tracks_best():
    data = utterances(24, n_classes=3)
    params = tiny(n_neurons=16, n_outputs=3)
    tr = Trainer(params, P, TrainConfig(batch_size=4, eval_every=2), RegConfig())
    hist = tr.fit(data[:16], data[16:])
    assert [r.iteration for r in hist] == [2, 4]
    assert tr.best[0] == min(r.miscls_pct for r in hist)


def test_training_reduces_loss():
    data = synthetic_task(0, 2, 64, 15, separation=2.0)
    params = tiny(n_neurons=32, n_outputs=2)
    tr = Trainer(params, P, TrainConfig(batch_size=16, epochs=10), NO_REG)
    before = evaluate(params, data, P).xent
    tr.fit(data)
    assert evaluate(tr.params, data, P).xent < before
    assert tr.iteration == 40


@pytest.mark.parametrize("model", [NeuronKind.STDP_ALIF, NeuronKind.IZHIKEVICH])
def test_other_models_train_finitely(model):
    tr = make_trainer(model.value)
    tr.fit(utterances(8, n_classes=3, scale=10.0 if model is NeuronKind.IZHIKEVICH else 1.0))
    for v in tr.params.arrays().values():
        assert np.all(np.isfinite(v))
