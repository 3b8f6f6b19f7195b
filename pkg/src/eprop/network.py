"""Network topology, initialisation, layered forward pass and learning signals."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ShapeError
from .neuron import HiddenState, NeuronKind, neuron_step

N_INPUTS = 39
N_CLASSES = 61


class BroadcastMode(str, Enum):
    RANDOM = "random"
    SYMMETRIC = "symmetric"
    ADAPTIVE = "adaptive"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ConfigError(f"unknown broadcast mode {value!r}") from None


@dataclass(frozen=True)
class NetworkConfig:
    n_layers: int = 1
    n_neurons: int = 800  # total over all layers
    n_inputs: int = N_INPUTS
    n_outputs: int = N_CLASSES
    model: NeuronKind = NeuronKind.ALIF
    broadcast: BroadcastMode = BroadcastMode.SYMMETRIC
    lif_fraction: float = 0.25
    sparsity: float = 0.8
    recurrent: bool = True
    adaptation: float = 0.184  # beta of the non-LIF neurons

    def __post_init__(self):
        object.__setattr__(self, "model", NeuronKind.parse(self.model))
        object.__setattr__(self, "broadcast", BroadcastMode.parse(self.broadcast))
        if self.n_layers not in (1, 2, 3):
            raise ConfigError(f"n_layers must be 1, 2 or 3, got {self.n_layers}")
        for name in ("n_neurons", "n_inputs", "n_outputs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_neurons // self.n_layers < 1:
            raise ConfigError("fewer neurons than layers")
        if not 0.0 <= self.sparsity < 1.0:
            raise ConfigError(f"sparsity must lie in [0, 1), got {self.sparsity}")
        if not 0.0 <= self.lif_fraction <= 1.0:
            raise ConfigError(f"lif_fraction must lie in [0, 1], got {self.lif_fraction}")

    @property
    def layer_sizes(self):
        return [self.n_neurons // self.n_layers] * self.n_layers


@dataclass
class LayerParams:
    w_in: np.ndarray
    w_rec: np.ndarray
    mask_in: np.ndarray
    mask_rec: np.ndarray
    beta: np.ndarray
    model: NeuronKind

    @property
    def size(self):
        return self.w_rec.shape[0]


@dataclass
class NetworkParams:
    layers: list
    w_out: np.ndarray
    bias: np.ndarray
    b_feedback: list
    broadcast: BroadcastMode = BroadcastMode.SYMMETRIC

    @property
    def model(self):
        return self.layers[0].model

    @property
    def layer_sizes(self):
        return [layer.size for layer in self.layers]

    @property
    def n_inputs(self):
        return self.layers[0].w_in.shape[1]

    @property
    def n_outputs(self):
        return self.w_out.shape[0]

    def out_block(self, r):
        """Columns of ``w_out`` that read layer ``r``."""
        start = sum(self.layer_sizes[:r])
        return self.w_out[:, start:start + self.layer_sizes[r]]

    def copy(self):
        layers = [LayerParams(l.w_in.copy(), l.w_rec.copy(), l.mask_in.copy(), l.mask_rec.copy(),
                              l.beta.copy(), l.model) for l in self.layers]
        return NetworkParams(layers, self.w_out.copy(), self.bias.copy(),
                             [b.copy() for b in self.b_feedback], self.broadcast)

    def arrays(self):
        """Trainable arrays by name, in a fixed order."""
        out = {}
        for r, layer in enumerate(self.layers):
            out[f"w_in{r}"] = layer.w_in
            out[f"w_rec{r}"] = layer.w_rec
        out["w_out"] = self.w_out
        out["bias"] = self.bias
        return out

    def masks(self):
        out = {}
        for r, layer in enumerate(self.layers):
            out[f"w_in{r}"] = layer.mask_in
            out[f"w_rec{r}"] = layer.mask_rec
        return out


@dataclass
class ReadoutState:
    y: np.ndarray
    pi: np.ndarray = field(default=None)


def _sparsify(rng, shape, fraction, exclude_diagonal=False):
    """Boolean mask (True = kept) with exactly ``floor(fraction * size)`` zeros off the diagonal."""
    mask = np.ones(shape, dtype=bool)
    if exclude_diagonal:
        np.fill_diagonal(mask, False)
    candidates = np.flatnonzero(mask)
    n_zero = min(int(np.floor(fraction * mask.size)), candidates.size)
    mask.flat[rng.choice(candidates, size=n_zero, replace=False)] = False
    return mask


def init_network(config, seed):
    """Gaussian weights with std ``1/sqrt(fan_in)``, then frozen sparsity masks."""
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = config.n_inputs
    for n in config.layer_sizes:
        w_in = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(n, fan_in))
        w_rec = rng.normal(0.0, 1.0 / np.sqrt(max(n - 1, 1)), size=(n, n))
        mask_in = _sparsify(rng, w_in.shape, config.sparsity)
        if config.recurrent:
            mask_rec = _sparsify(rng, w_rec.shape, config.sparsity, exclude_diagonal=True)
        else:
            mask_rec = np.zeros((n, n), dtype=bool)
        w_in *= mask_in
        w_rec *= mask_rec
        beta = np.full(n, config.adaptation)
        n_lif = int(round(config.lif_fraction * n))
        beta[rng.choice(n, size=n_lif, replace=False)] = 0.0
        layers.append(LayerParams(w_in, w_rec, mask_in, mask_rec, beta, config.model))
        fan_in = n
    n_total = sum(config.layer_sizes)
    w_out = rng.normal(0.0, 1.0 / np.sqrt(n_total), size=(config.n_outputs, n_total))
    bias = np.zeros(config.n_outputs)
    params = NetworkParams(layers, w_out, bias, [], config.broadcast)
    if config.broadcast is BroadcastMode.SYMMETRIC:
        params.b_feedback = [params.out_block(r).T.copy() for r in range(len(layers))]
    else:
        params.b_feedback = [rng.normal(0.0, 1.0 / np.sqrt(n_total), size=(n, config.n_outputs))
                             for n in config.layer_sizes]
    return params


def initial_states(params, batch_shape=()):
    return [HiddenState.zeros(tuple(batch_shape) + (n,), params.model) for n in params.layer_sizes]


def initial_readout(params, batch_shape=()):
    y = np.zeros(tuple(batch_shape) + (params.n_outputs,))
    return ReadoutState(y, softmax(y))


def softmax(y):
    shifted = y - np.max(y, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def layer_drive(layer, presyn_in, z_prev):
    """Synaptic input ``W_in @ presyn_in + W_rec @ z_prev`` for a batch of samples."""
    return presyn_in @ layer.w_in.T + z_prev @ layer.w_rec.T


def forward_step(params, states, input_vec, readout, neuron_params):
    """One network time step.

    ``states`` hold the layer states of the previous step. Layers are updated
    shallow to deep, each deep layer reading the fresh spikes of the layer below.
    Returns ``(new_states, spikes, psis, new_readout)``.
    """
    input_vec = np.asarray(input_vec, dtype=float)
    if input_vec.shape[-1] != params.n_inputs:
        raise ShapeError(f"expected {params.n_inputs} input channels, got {input_vec.shape[-1]}")
    new_states, spikes, psis = [], [], []
    presyn = input_vec
    for layer, state in zip(params.layers, states):
        drive = layer_drive(layer, presyn, state.last_z)
        new_state, z, psi = neuron_step(layer.model, state, drive, neuron_params, layer.beta)
        new_states.append(new_state)
        spikes.append(z)
        psis.append(psi)
        presyn = z
    readout = readout_step(params, readout, spikes, neuron_params.kappa)
    return new_states, spikes, psis, readout


def readout_step(params, readout, spikes, kappa):
    z_all = np.concatenate(spikes, axis=-1) if len(spikes) > 1 else spikes[0]
    y = kappa * readout.y + z_all @ params.w_out.T + params.bias
    return ReadoutState(y, softmax(y))


def learning_signal(b_feedback, pi, pi_target):
    """Per-neuron signal ``L_j = sum_k B_jk (pi_k - pi*_k)``."""
    return (np.asarray(pi) - np.asarray(pi_target)) @ np.asarray(b_feedback).T


def update_broadcast(params, delta_w_out):
    """Keep the feedback weights consistent with the chosen broadcast mode."""
    mode = params.broadcast
    if mode is BroadcastMode.SYMMETRIC:
        params.b_feedback = [params.out_block(r).T.copy() for r in range(len(params.layers))]
    elif mode is BroadcastMode.ADAPTIVE:
        start = 0
        for r, n in enumerate(params.layer_sizes):
            params.b_feedback[r] += delta_w_out[:, start:start + n].T
            start += n
    return params


def one_hot(labels, n_classes=N_CLASSES):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (n_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out
