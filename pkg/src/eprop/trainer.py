"""E-prop gradient accumulation, regularisers, Adam and the training loop."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError
from .network import (
    initial_states,
    learning_signal,
    one_hot,
    softmax,
    update_broadcast,
)
from .kernels import fused_step
from .neuron import EligibilityState, eligibility_step, neuron_step

log = logging.getLogger(__name__)

LOG_FLOOR = 1e-12
METRICS_HEADER = ["iter", "split", "xent", "miscls_pct", "mean_rate_hz", "reg_err"]


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-5
    batch_size: int = 32
    epochs: int = 1
    eval_every: int = 25
    seed: int = 0
    max_iters: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam forgetting factors must lie in [0, 1)")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


@dataclass(frozen=True)
class RegConfig:
    f_target: float = 0.01  # spikes per step
    c_reg: float = 50.0
    c_l2: float = 1e-5


NO_REG = RegConfig(c_reg=0.0, c_l2=0.0)


@dataclass
class RegState:
    """Running spike counts for one sample (reset at every sample)."""

    z_total: np.ndarray
    t_elapsed: int = 0
    f_target: float = 0.01
    c_reg: float = 50.0
    c_l2: float = 1e-5

    @property
    def f_av(self):
        if self.t_elapsed == 0:
            raise InputError("no steps elapsed")
        return self.z_total / self.t_elapsed


@dataclass
class MetricsRecord:
    iteration: int
    split: str
    xent: float
    miscls_pct: float
    mean_rate_hz: float
    reg_err: float

    def row(self):
        return [self.iteration, self.split, f"{self.xent:.10g}", f"{self.miscls_pct:.10g}",
                f"{self.mean_rate_hz:.10g}", f"{self.reg_err:.10g}"]


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v2: dict = field(default_factory=dict)
    step_count: int = 0


@dataclass
class Batch:
    x: np.ndarray        # (B, T, C), zero padded
    labels: np.ndarray   # (B, T)
    lengths: np.ndarray  # (B,)

    @classmethod
    def from_utterances(cls, utterances):
        if not utterances:
            raise InputError("empty batch")
        lengths = np.array([len(u.labels) for u in utterances], dtype=np.int64)
        if np.any(lengths == 0):
            raise InputError("empty utterance")
        n_ch = utterances[0].features.shape[1]
        x = np.zeros((len(utterances), lengths.max(), n_ch))
        labels = np.zeros((len(utterances), lengths.max()), dtype=np.int64)
        for b, u in enumerate(utterances):
            x[b, :lengths[b]] = u.features
            labels[b, :lengths[b]] = u.labels
        return cls(x, labels, lengths)


@dataclass
class BatchResult:
    """Gradient sums over the batch plus the raw counts behind the metrics."""

    grads: dict
    n_samples: int
    n_frames: int
    xent_sum: float
    n_wrong: int
    rate_sum: float       # sum over samples of the mean per-neuron f_av
    reg_err_sum: float
    pi: np.ndarray | None = None
    spikes: list | None = None


# --- loss and regularisers --------------------------------------------------

def cross_entropy(pi_seq, target_seq):
    """``-sum_{t,k} pi*_tk log pi_tk`` with a floor inside the log.

    ``target_seq`` may hold class indices or one-hot rows.
    """
    pi_seq = np.asarray(pi_seq, dtype=float)
    target = np.asarray(target_seq)
    if target.shape == pi_seq.shape[:-1]:
        target = one_hot(target, pi_seq.shape[-1])
    if target.shape != pi_seq.shape:
        raise InputError("prediction and target lengths differ")
    return float(-np.sum(target * np.log(np.maximum(pi_seq, LOG_FLOOR))))


def firing_rate_reg(f_av_series, f_target, c_reg):
    """Per-neuron contribution ``c_reg * sum_t (f_av_t - f_target)``.

    ``f_av_series`` stacks the running averages along axis 0. The result is
    added to every afferent weight of the neuron; silent neurons get a
    negative contribution, i.e. their weights grow after the descent step.
    """
    f_av_series = np.asarray(f_av_series, dtype=float)
    if f_av_series.shape[0] == 0:
        raise InputError("firing-rate regulariser needs at least one step")
    return c_reg * np.sum(f_av_series - f_target, axis=0)


def reg_error(f_av, f_target):
    """``0.5 * sum_j (f_target - f_av_j)^2`` over the last axis."""
    return 0.5 * np.sum((f_target - np.asarray(f_av)) ** 2, axis=-1)


def l2_reg(w, c_l2, mask=None):
    g = c_l2 * np.asarray(w, dtype=float)
    return g if mask is None else g * mask


# --- optimiser ----------------------------------------------------------------

def adam_apply(opt, grads, eta_eff, beta1=0.9, beta2=0.999, eps=1e-5):
    """One Adam step on minibatch-mean gradients. Returns weight deltas."""
    opt.step_count += 1
    i = opt.step_count
    deltas = {}
    for name, g in grads.items():
        m = opt.m.get(name)
        v2 = opt.v2.get(name)
        if m is None:
            m = np.zeros_like(g)
            v2 = np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        v2 = beta2 * v2 + (1.0 - beta2) * g * g
        opt.m[name] = m
        opt.v2[name] = v2
        m_hat = m / (1.0 - beta1 ** i)
        v_hat = v2 / (1.0 - beta2 ** i)
        deltas[name] = -eta_eff * m_hat / (np.sqrt(v_hat) + eps)
    return deltas


def lr_warmup(iter_index, iters_per_epoch, eta):
    """Linear ramp from ``eta / iters_per_epoch`` to ``eta`` over the first epoch."""
    return eta * min(1.0, (iter_index + 1) / max(1, iters_per_epoch))


# --- the e-prop sample loop -------------------------------------------------

def run_batch(params, batch, neuron_params, reg=RegConfig(), mode="train", clip=True,
              keep_outputs=False, fused=True):
    """Simulate a batch of samples and accumulate e-prop gradients online.

    Every quantity used at step ``t`` is available at step ``t``: the learning
    signal pairs with the kappa-filtered eligibility trace instead of looking
    ahead. Gradients are summed over the batch (divide by ``n_samples`` for
    the mean). In ``"eval"`` mode only the metrics are produced. ``fused``
    selects the single-pass kernels; the unfused path uses the reference
    recursions of :mod:`eprop.neuron`.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    x, labels, lengths = batch.x, batch.labels, batch.lengths
    if x.shape[1] == 0 or np.any(lengths == 0):
        raise InputError("empty utterance")
    n_b, n_t = labels.shape
    kind = params.model
    kappa = neuron_params.kappa
    sizes = params.layer_sizes
    n_out = params.n_outputs

    states = initial_states(params, (n_b,))
    psi_prev = [np.zeros((n_b, n)) for n in sizes]
    y = np.zeros((n_b, n_out))
    z_total = np.zeros((n_b, sum(sizes)))
    reg_sum = np.zeros((n_b, sum(sizes)))
    xent = 0.0
    n_wrong = 0
    pis = [] if keep_outputs else None
    spike_log = [] if keep_outputs else None

    if train:
        has_rec = [bool(layer.mask_rec.any()) for layer in params.layers]
        elig_in = [EligibilityState.zeros((n_b,) + layer.w_in.shape) for layer in params.layers]
        elig_rec = [EligibilityState.zeros((n_b,) + layer.w_rec.shape) if has_rec[r] else None
                    for r, layer in enumerate(params.layers)]
        g_in = [np.zeros_like(layer.w_in) for layer in params.layers]
        g_rec = [np.zeros_like(layer.w_rec) for layer in params.layers]
        g_out = np.zeros_like(params.w_out)
        g_b = np.zeros_like(params.bias)
        zbar = np.zeros((n_b, sum(sizes)))
        bbar = np.zeros(n_b)

    for t in range(n_t):
        valid = (t < lengths).astype(float)
        presyn = x[:, t]
        spikes = []
        step_inputs = []
        for r, layer in enumerate(params.layers):
            prev = states[r]
            drive = presyn @ layer.w_in.T + prev.last_z @ layer.w_rec.T
            new, z, psi = neuron_step(kind, prev, drive, neuron_params, layer.beta)
            step_inputs.append((prev, psi_prev[r], psi, presyn))
            states[r] = new
            psi_prev[r] = psi
            spikes.append(z)
            presyn = z
        z_all = np.concatenate(spikes, axis=1) if len(spikes) > 1 else spikes[0]
        y = kappa * y + z_all @ params.w_out.T + params.bias
        pi = softmax(y)
        lab = labels[:, t]
        p_true = pi[np.arange(n_b), lab]
        xent -= float(np.sum(valid * np.log(np.maximum(p_true, LOG_FLOOR))))
        n_wrong += int(np.sum(valid * (np.argmax(pi, axis=1) != lab)))

        z_total += z_all * valid[:, None]
        f_av = z_total / np.minimum(t + 1, lengths)[:, None]
        reg_sum += (f_av - reg.f_target) * valid[:, None]
        if keep_outputs:
            pis.append(pi)
            spike_log.append(z_all)

        if train:
            err = (pi - one_hot(lab, n_out)) * valid[:, None]
            for r, layer in enumerate(params.layers):
                prev, psi_a, psi_b, pre_in = step_inputs[r]
                sig = learning_signal(params.b_feedback[r], err, 0.0)
                if fused:
                    fused_step(kind, elig_in[r], prev, psi_a, psi_b, pre_in, neuron_params,
                               layer.beta, sig, g_in[r], clip)
                    if has_rec[r]:
                        fused_step(kind, elig_rec[r], prev, psi_a, psi_b, prev.last_z,
                                   neuron_params, layer.beta, sig, g_rec[r], clip)
                    continue
                eligibility_step(kind, elig_in[r], prev, psi_a, psi_b, pre_in, neuron_params,
                                 layer.beta, clip)
                g_in[r] += np.einsum("bj,bji->ji", sig, elig_in[r].trace_filtered)
                if has_rec[r]:
                    eligibility_step(kind, elig_rec[r], prev, psi_a, psi_b, prev.last_z,
                                     neuron_params, layer.beta, clip)
                    g_rec[r] += np.einsum("bj,bji->ji", sig, elig_rec[r].trace_filtered)
            zbar = kappa * zbar + z_all
            bbar = kappa * bbar + 1.0
            g_out += err.T @ zbar
            g_b += err.T @ bbar

    f_av_final = z_total / lengths[:, None]
    result = BatchResult(
        grads={},
        n_samples=n_b,
        n_frames=int(lengths.sum()),
        xent_sum=xent,
        n_wrong=n_wrong,
        rate_sum=float(np.sum(np.mean(f_av_final, axis=1))),
        reg_err_sum=float(np.sum(reg_error(f_av_final, reg.f_target))),
    )
    if keep_outputs:
        result.pi = np.stack(pis, axis=1)
        result.spikes = np.stack(spike_log, axis=1)
    if not train:
        return result

    reg_per_neuron = reg.c_reg * reg_sum.sum(axis=0)
    start = 0
    for r, layer in enumerate(params.layers):
        rj = reg_per_neuron[start:start + sizes[r]][:, None]
        start += sizes[r]
        g_in[r] += rj + n_b * reg.c_l2 * layer.w_in
        g_rec[r] += rj + n_b * reg.c_l2 * layer.w_rec
        g_in[r] *= layer.mask_in
        g_rec[r] *= layer.mask_rec
        result.grads[f"w_in{r}"] = g_in[r]
        result.grads[f"w_rec{r}"] = g_rec[r]
    result.grads["w_out"] = g_out + n_b * reg.c_l2 * params.w_out
    result.grads["bias"] = g_b
    return result


def run_sample(params, utterance, neuron_params, reg=RegConfig(), mode="train", clip=True,
               iteration=0):
    """Single-sample wrapper around :func:`run_batch`."""
    if len(utterance.labels) == 0:
        raise InputError("empty utterance")
    res = run_batch(params, Batch.from_utterances([utterance]), neuron_params, reg, mode, clip)
    return res.grads, metrics_from(res, iteration, mode, neuron_params.dt)


def metrics_from(results, iteration, split, dt):
    if isinstance(results, BatchResult):
        results = [results]
    n_frames = sum(r.n_frames for r in results)
    n_samples = sum(r.n_samples for r in results)
    return MetricsRecord(
        iteration=iteration,
        split=split,
        xent=sum(r.xent_sum for r in results) / n_frames,
        miscls_pct=100.0 * sum(r.n_wrong for r in results) / n_frames,
        mean_rate_hz=sum(r.rate_sum for r in results) / n_samples / dt,
        reg_err=sum(r.reg_err_sum for r in results) / n_samples,
    )


def evaluate(params, utterances, neuron_params, reg=RegConfig(), batch_size=32, iteration=0,
             split="val", clip=True):
    """Frame-wise misclassification, cross-entropy, firing rate and E_reg on a split."""
    if not utterances:
        raise InputError(f"split {split!r} is empty")
    results = []
    for i in range(0, len(utterances), batch_size):
        batch = Batch.from_utterances(utterances[i:i + batch_size])
        results.append(run_batch(params, batch, neuron_params, reg, "eval", clip))
    return metrics_from(results, iteration, split, neuron_params.dt)


def append_metrics(path, record):
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new:
            writer.writerow(METRICS_HEADER)
        writer.writerow(record.row())


# --- training loop -------------------------------------------------------------

class Trainer:
    """Minibatch e-prop with Adam, warmup and periodic validation."""

    def __init__(self, params, neuron_params, train_cfg=TrainConfig(), reg=RegConfig(),
                 clip=True, metrics_path=None):
        self.params = params
        self.neuron_params = neuron_params
        self.cfg = train_cfg
        self.reg = reg
        self.clip = clip
        self.metrics_path = metrics_path
        self.opt = OptimizerState()
        self.iteration = 0
        self.best = None  # (miscls_pct, iteration, params copy)
        self.history = []

    def epoch_order(self, epoch, n):
        return np.random.default_rng([self.cfg.seed, epoch]).permutation(n)

    def iters_per_epoch(self, n_train):
        return max(1, int(np.ceil(n_train / self.cfg.batch_size)))

    def step(self, utterances, iters_per_epoch):
        """One minibatch update. Returns the train-mode batch result."""
        res = run_batch(self.params, Batch.from_utterances(utterances), self.neuron_params,
                        self.reg, "train", self.clip)
        grads = {k: g / res.n_samples for k, g in res.grads.items()}
        eta_eff = lr_warmup(self.iteration, iters_per_epoch, self.cfg.eta)
        deltas = adam_apply(self.opt, grads, eta_eff, self.cfg.beta1, self.cfg.beta2,
                            self.cfg.adam_eps)
        p = self.params
        for r, layer in enumerate(p.layers):
            layer.w_in += deltas[f"w_in{r}"]
            layer.w_rec += deltas[f"w_rec{r}"]
            layer.w_in *= layer.mask_in
            layer.w_rec *= layer.mask_rec
        p.w_out += deltas["w_out"]
        p.bias += deltas["bias"]
        update_broadcast(p, deltas["w_out"])
        self.iteration += 1
        return res

    def validate(self, val):
        rec = evaluate(self.params, val, self.neuron_params, self.reg, self.cfg.batch_size,
                       self.iteration, "val", self.clip)
        self.history.append(rec)
        if self.metrics_path:
            append_metrics(self.metrics_path, rec)
        if self.best is None or rec.miscls_pct < self.best[0]:
            self.best = (rec.miscls_pct, self.iteration, self.params.copy())
        return rec

    def fit(self, train, val=None, on_eval=None):
        """Train until ``epochs`` or ``max_iters`` is reached; resumes from ``self.iteration``."""
        n = len(train)
        if n == 0:
            raise InputError("training split is empty")
        per_epoch = self.iters_per_epoch(n)
        total = per_epoch * self.cfg.epochs
        if self.cfg.max_iters is not None:
            total = min(total, self.cfg.max_iters) if self.cfg.epochs else self.cfg.max_iters
        while self.iteration < total:
            epoch, pos = divmod(self.iteration, per_epoch)
            order = self.epoch_order(epoch, n)
            idx = order[pos * self.cfg.batch_size:(pos + 1) * self.cfg.batch_size]
            res = self.step([train[i] for i in idx], per_epoch)
            train_rec = metrics_from(res, self.iteration, "train", self.neuron_params.dt)
            if self.metrics_path:
                append_metrics(self.metrics_path, train_rec)
            if val is not None and (self.iteration % self.cfg.eval_every == 0
                                    or self.iteration == total):
                rec = self.validate(val)
                log.info("iter %d val miscls %.2f%% xent %.4f rate %.1f Hz",
                         rec.iteration, rec.miscls_pct, rec.xent, rec.mean_rate_hz)
                if on_eval is not None:
                    on_eval(self, rec)
        return self.history


def sample_gradients(params, utterance, neuron_params, clip=True):
    """Plain cross-entropy e-prop gradients for one sample (no regularisers)."""
    grads, _ = run_sample(params, utterance, neuron_params, NO_REG, "train", clip)
    return grads

