"""Reference gradients for tiny networks: unrolled BPTT and finite differences.

The BPTT oracle rebuilds the forward pass in float64 torch and lets autograd
do the reverse sweep. Spikes use a straight-through surrogate, so the forward
value is the exact Heaviside step while the backward pass sees the same
pseudo-derivative e-prop uses. By default a spike's effect on its own neuron's
reset is detached, matching the hidden-state factorization behind e-prop.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import OracleSizeError
from .network import one_hot, softmax
from .neuron import (
    IZH_A_JUMP,
    IZH_A_REST,
    IZH_V_PEAK,
    IZH_V_RESET,
    IZH_V_REST,
    NeuronKind,
)
from .trainer import LOG_FLOOR, Batch, NO_REG, run_batch

MAX_NEURONS = 32
MAX_STEPS = 64


@dataclass
class MatrixReport:
    max_abs_diff: float
    rel_error: float
    cosine: float


@dataclass
class GradientReport:
    matrices: dict

    def __getitem__(self, name):
        return self.matrices[name]

    def worst_rel_error(self):
        return max(r.rel_error for r in self.matrices.values())

    def worst_cosine(self):
        return min(r.cosine for r in self.matrices.values())


def compare(grads, oracle, names=None):
    """Max abs difference, norm-relative error and cosine for every shared matrix."""
    names = [n for n in grads if n in oracle] if names is None else names
    out = {}
    for name in names:
        a = np.asarray(grads[name], dtype=float).ravel()
        b = np.asarray(oracle[name], dtype=float).ravel()
        diff = np.linalg.norm(a - b)
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if nb > 0:
            rel = diff / nb
        else:
            rel = 0.0 if diff == 0 else np.inf
        if na > 0 and nb > 0:
            cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
        else:
            cos = 1.0 if na == nb else 0.0
        out[name] = MatrixReport(float(np.max(np.abs(a - b), initial=0.0)), float(rel), cos)
    return GradientReport(out)


def eprop_gradients(params, utterance, neuron_params, clip=False):
    """Cross-entropy-only e-prop gradients of one sample (summed over time)."""
    res = run_batch(params, Batch.from_utterances([utterance]), neuron_params, NO_REG, "train", clip)
    return res.grads


def _check_size(params, n_steps):
    if sum(params.layer_sizes) > MAX_NEURONS or n_steps > MAX_STEPS:
        raise OracleSizeError(
            f"oracle limited to {MAX_NEURONS} neurons and {MAX_STEPS} steps, "
            f"got {sum(params.layer_sizes)} neurons and {n_steps} steps")


def _spike(fwd, surrogate_arg, psi):
    """Heaviside value ``fwd`` with ``d fwd / d arg = psi`` in the backward pass."""
    return fwd + psi.detach() * (surrogate_arg - surrogate_arg.detach())


def _tri(x, p):
    return p.gamma * torch.clamp(1.0 - torch.abs(x / p.v_th), min=0.0)


def _forward(tensors, params, x, p, detach_reset=True):
    """Unrolled forward pass; returns the logits of every step."""
    kind = params.model
    t_refr = int(p.t_refr)
    n_t = x.shape[0]
    d = (lambda z: z.detach()) if detach_reset else (lambda z: z)
    states = []
    for layer in params.layers:
        n = layer.size
        if kind is NeuronKind.IZHIKEVICH:
            v = torch.full((n,), IZH_V_REST, dtype=torch.float64)
            a = torch.full((n,), IZH_A_REST, dtype=torch.float64)
        else:
            v = torch.zeros(n, dtype=torch.float64)
            a = torch.zeros(n, dtype=torch.float64)
        states.append({"v": v, "a": a, "z": torch.zeros(n, dtype=torch.float64),
                       "refr": np.zeros(n, dtype=np.int64), "clamped": np.zeros(n, dtype=bool)})
    y = torch.zeros(params.n_outputs, dtype=torch.float64)
    logits = []
    for t in range(n_t):
        presyn = x[t]
        zs = []
        for r, layer in enumerate(params.layers):
            s = states[r]
            w_in, w_rec = tensors[f"w_in{r}"], tensors[f"w_rec{r}"]
            beta = torch.as_tensor(layer.beta, dtype=torch.float64)
            drive = w_in @ presyn + w_rec @ s["z"]
            z_prev = s["z"]
            if kind is NeuronKind.IZHIKEVICH:
                v_t = s["v"] - (s["v"] - IZH_V_RESET) * d(z_prev)
                a_t = s["a"] + IZH_A_JUMP * d(z_prev)
                v = v_t + 0.04 * v_t ** 2 + 5.0 * v_t + 140.0 - a_t + drive
                a = a_t + 0.004 * v_t - 0.02 * a_t
                fwd = (v.detach() >= IZH_V_PEAK).double()
                psi = p.gamma * torch.exp((torch.clamp(v, max=IZH_V_PEAK) - IZH_V_PEAK) / IZH_V_PEAK)
                z = _spike(fwd, v, psi)
                s.update(v=v, a=a, z=z)
            else:
                clamped = s["refr"] > 0
                if kind is NeuronKind.ALIF:
                    v = p.alpha * s["v"] + drive - d(z_prev) * p.v_th
                else:
                    z_end = torch.as_tensor((s["clamped"] & (s["refr"] == 0)).astype(float))
                    decayed = p.alpha * s["v"]
                    v = decayed + drive - d(z_prev) * decayed - z_end * decayed
                a = p.rho * s["a"] + z_prev
                u = v - p.v_th - beta * a
                cand = (u.detach() >= 0).numpy()
                z_np = np.where(clamped, 0.0, cand.astype(float))
                clamped_t = torch.as_tensor(clamped)
                if kind is NeuronKind.ALIF:
                    psi = torch.where(clamped_t, torch.zeros_like(u), _tri(u, p))
                else:
                    psi = torch.where(clamped_t, torch.full_like(u, -p.gamma),
                                      _tri(v - p.v_th, p))
                z = _spike(torch.as_tensor(z_np), u, psi)
                refr = np.where(z_np > 0, t_refr, np.where(clamped, s["refr"] - 1, 0))
                s.update(v=v, a=a, z=z, refr=refr.astype(np.int64), clamped=clamped)
            zs.append(s["z"])
            presyn = s["z"]
        z_all = torch.cat(zs) if len(zs) > 1 else zs[0]
        y = p.kappa * y + tensors["w_out"] @ z_all + tensors["bias"]
        logits.append(y)
    return torch.stack(logits)


def bptt_gradient(params, utterance, neuron_params, detach_reset=True):
    """Exact gradients of the summed cross-entropy by reverse-mode differentiation."""
    x_np = np.asarray(utterance.features, dtype=float)
    _check_size(params, len(x_np))
    tensors = {k: torch.tensor(v, dtype=torch.float64, requires_grad=True)
               for k, v in params.arrays().items()}
    logits = _forward(tensors, params, torch.as_tensor(x_np), neuron_params, detach_reset)
    target = torch.as_tensor(np.asarray(utterance.labels, dtype=np.int64))
    loss = torch.nn.functional.cross_entropy(logits, target, reduction="sum")
    loss.backward()
    grads = {k: t.grad.numpy().copy() for k, t in tensors.items()}
    for name, mask in params.masks().items():
        grads[name] *= mask
    return grads


def hidden_spikes(params, utterance, neuron_params):
    res = run_batch(params, Batch.from_utterances([utterance]), neuron_params, NO_REG, "eval",
                    keep_outputs=True)
    return res.spikes[0]


def readout_loss(w_out, bias, spikes, labels, kappa):
    """Summed cross-entropy of the leaky readout driven by a fixed spike train.

    ``w_out`` and ``bias`` may carry a leading stack axis, in which case one
    loss per stacked readout is returned.
    """
    w_out = np.asarray(w_out, dtype=float)
    bias = np.asarray(bias, dtype=float)
    stacked = w_out.ndim == 3
    if not stacked:
        w_out, bias = w_out[None], bias[None]
    labels = np.asarray(labels)
    y = np.zeros(bias.shape)
    total = np.zeros(len(bias))
    for t in range(len(labels)):
        y = kappa * y + w_out @ spikes[t] + bias
        total -= np.log(np.maximum(softmax(y)[:, labels[t]], LOG_FLOOR))
    return total if stacked else float(total[0])


def finite_difference_readout(params, utterance, neuron_params, h=1e-5):
    """Central differences of the loss with respect to ``w_out`` and ``bias``.

    Hidden spikes do not depend on the readout, so they are simulated once and
    every perturbed readout is evaluated in one stacked pass.
    """
    spikes = hidden_spikes(params, utterance, neuron_params)
    labels = np.asarray(utterance.labels)
    kappa = neuron_params.kappa
    w_out, bias = params.w_out, params.bias
    n_w, n_b = w_out.size, bias.size
    n = n_w + n_b
    steps = np.concatenate([np.eye(n), -np.eye(n)]) * h
    w_stack = w_out[None] + steps[:, :n_w].reshape((2 * n,) + w_out.shape)
    b_stack = bias[None] + steps[:, n_w:]
    losses = readout_loss(w_stack, b_stack, spikes, labels, kappa)
    g = (losses[:n] - losses[n:]) / (2.0 * h)
    return {"w_out": g[:n_w].reshape(w_out.shape), "bias": g[n_w:]}


def readout_closed_form(params, utterance, neuron_params):
    """``sum_t (pi_t - pi*_t) zbar_t^T`` and the bias analogue, from the spike train."""
    spikes = hidden_spikes(params, utterance, neuron_params)
    kappa = neuron_params.kappa
    target = one_hot(utterance.labels, params.n_outputs)
    y = np.zeros(params.n_outputs)
    zbar = np.zeros(spikes.shape[1])
    bbar = 0.0
    g_out = np.zeros_like(params.w_out)
    g_b = np.zeros_like(params.bias)
    for t in range(len(spikes)):
        y = kappa * y + params.w_out @ spikes[t] + params.bias
        err = softmax(y) - target[t]
        zbar = kappa * zbar + spikes[t]
        bbar = kappa * bbar + 1.0
        g_out += np.outer(err, zbar)
        g_b += err * bbar
    return {"w_out": g_out, "bias": g_b}
