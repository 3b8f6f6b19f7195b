"""Discrete-time neuron dynamics and their e-prop eligibility recursions.

Three models are supported: ALIF (LIF when ``beta == 0``), STDP-ALIF and a
self-resetting Izhikevich neuron. All functions are vectorised over neurons.
Hidden-state arrays have shape ``(..., N)``; eligibility arrays have shape
``(..., N, M)`` with the postsynaptic neuron on axis ``-2`` and the
presynaptic unit on axis ``-1``. Plain Python scalars work as well.

Time indexing: a step maps the state ``h[t-1]`` (with its spike ``z[t-1]``)
to ``h[t]`` and returns ``z[t]`` together with the pseudo-derivative
``psi[t]`` evaluated on the new state. The eligibility vector update for
that same step needs the Jacobian of the transition, which depends on the
*previous* pseudo-derivative ``psi[t-1]``, while the eligibility trace uses
``psi[t]``. The eligibility functions therefore take ``psi`` (transition)
and ``psi_next`` (trace).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, NumericInputError

IZH_V_RESET = -65.0
IZH_V_PEAK = 30.0
IZH_A_JUMP = 2.0
# Fixed point of the Izhikevich map for zero input.
IZH_V_REST = -70.0
IZH_A_REST = -14.0
IZH_EPS_V_BOUND = 3.0
IZH_EPS_A_BOUND = 0.005


class NeuronKind(str, Enum):
    ALIF = "alif"
    STDP_ALIF = "stdp-alif"
    IZHIKEVICH = "izhikevich"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"izh": cls.IZHIKEVICH, "stdp_alif": cls.STDP_ALIF, "stdpalif": cls.STDP_ALIF}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ConfigError(f"unknown neuron model {value!r}") from None


@dataclass(frozen=True)
class NeuronParams:
    alpha: float = 0.8
    rho: float = 0.975
    beta: float = 0.184
    kappa: float = 0.8
    gamma: float = 0.3
    v_th: float = 0.95
    t_refr: int = 2
    dt: float = 1e-3  # seconds per step

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.v_th <= 0:
            raise ConfigError(f"v_th must be > 0, got {self.v_th}")
        if int(self.t_refr) != self.t_refr or self.t_refr < 0:
            raise ConfigError(f"t_refr must be a non-negative integer, got {self.t_refr}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")


@dataclass
class HiddenState:
    """Per-neuron state at one time step.

    ``refr_remaining`` counts the upcoming steps during which the spike output
    is clamped to zero; ``clamped`` marks whether this state itself was clamped.
    """

    v: np.ndarray
    a: np.ndarray
    refr_remaining: np.ndarray
    last_z: np.ndarray
    clamped: np.ndarray

    @classmethod
    def zeros(cls, shape, kind=NeuronKind.ALIF):
        kind = NeuronKind.parse(kind)
        if kind is NeuronKind.IZHIKEVICH:
            v = np.full(shape, IZH_V_REST)
            a = np.full(shape, IZH_A_REST)
        else:
            v = np.zeros(shape)
            a = np.zeros(shape)
        return cls(
            v=v,
            a=a,
            refr_remaining=np.zeros(shape, dtype=np.int64),
            last_z=np.zeros(shape),
            clamped=np.zeros(shape, dtype=bool),
        )

    @property
    def refractory_ending(self):
        """True where this is the last clamped step of a refractory window."""
        return self.clamped & (self.refr_remaining == 0)

    def copy(self):
        return HiddenState(*(np.array(x, copy=True) for x in
                             (self.v, self.a, self.refr_remaining, self.last_z, self.clamped)))


@dataclass
class EligibilityState:
    eps_v: np.ndarray
    eps_a: np.ndarray
    trace_filtered: np.ndarray = field(default=None)

    def __post_init__(self):
        self.eps_v = np.asarray(self.eps_v, dtype=float)
        self.eps_a = np.asarray(self.eps_a, dtype=float)
        if self.trace_filtered is None:
            self.trace_filtered = np.zeros_like(self.eps_v)
        else:
            self.trace_filtered = np.asarray(self.trace_filtered, dtype=float)

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def copy(self):
        return EligibilityState(self.eps_v.copy(), self.eps_a.copy(), self.trace_filtered.copy())


def _col(x):
    x = np.asarray(x, dtype=float)
    return x[..., None] if x.ndim else x


def _row(x):
    x = np.asarray(x, dtype=float)
    return x[..., None, :] if x.ndim else x


def _check_finite(x, what):
    if not np.isfinite(x).all():
        raise NumericInputError(f"non-finite {what}")


def heaviside(x):
    return (np.asarray(x) >= 0).astype(float)


# --- pseudo-derivatives -----------------------------------------------------

def alif_pseudo_derivative(v, a, params, beta=None, clamped=False):
    """Triangular surrogate, zero while the neuron is refractory."""
    beta = params.beta if beta is None else beta
    psi = params.gamma * np.maximum(0.0, 1.0 - np.abs((v - params.v_th - beta * a) / params.v_th))
    return np.where(clamped, 0.0, psi)


def stdp_alif_pseudo_derivative(v, params, clamped=False):
    """Triangular surrogate on ``v`` alone, clamped to ``-gamma`` while refractory."""
    psi = params.gamma * np.maximum(0.0, 1.0 - np.abs((v - params.v_th) / params.v_th))
    return np.where(clamped, -params.gamma, psi)


def izhikevich_pseudo_derivative(v, params):
    return params.gamma * np.exp((np.minimum(v, IZH_V_PEAK) - IZH_V_PEAK) / IZH_V_PEAK)


def alif_spike(v, a, params, beta=None):
    beta = params.beta if beta is None else beta
    return heaviside(v - params.v_th - beta * a)


# --- state transitions ------------------------------------------------------

def _refractory_update(state, z_candidate, t_refr):
    clamped = state.refr_remaining > 0
    z = np.where(clamped, 0.0, z_candidate)
    refr = np.where(z > 0, t_refr, np.where(clamped, state.refr_remaining - 1, 0))
    return z, refr.astype(np.int64), clamped


def alif_step(state, weighted_in, params, beta=None):
    """Advance ALIF neurons by one step.

    ``weighted_in`` is the summed synaptic drive for the new step.
    Returns ``(new_state, z, psi)``.
    """
    _check_finite(weighted_in, "synaptic input")
    beta = params.beta if beta is None else beta
    z_prev = state.last_z
    v = params.alpha * state.v + weighted_in - z_prev * params.v_th
    a = params.rho * state.a + z_prev
    z, refr, clamped = _refractory_update(state, alif_spike(v, a, params, beta), params.t_refr)
    psi = alif_pseudo_derivative(v, a, params, beta, clamped)
    return HiddenState(v, a, refr, z, clamped), z, psi


def stdp_alif_step(state, weighted_in, params, beta=None):
    """Advance STDP-ALIF neurons: hard reset at a spike and at the end of refractoriness."""
    _check_finite(weighted_in, "synaptic input")
    beta = params.beta if beta is None else beta
    z_prev = state.last_z
    z_end = state.refractory_ending.astype(float)
    decayed = params.alpha * state.v
    v = decayed + weighted_in - z_prev * decayed - z_end * decayed
    a = params.rho * state.a + z_prev
    z, refr, clamped = _refractory_update(state, alif_spike(v, a, params, beta), params.t_refr)
    psi = stdp_alif_pseudo_derivative(v, params, clamped)
    return HiddenState(v, a, refr, z, clamped), z, psi


def izhikevich_step(state, weighted_in, params):
    """Advance self-resetting Izhikevich neurons (1 ms Euler step).

    The spike condition ``v >= 30`` is inferred from the cap used in the
    pseudo-derivative. Refractoriness is implicit, so nothing is clamped.
    """
    _check_finite(weighted_in, "synaptic input")
    _check_finite(state.v, "membrane state")
    _check_finite(state.a, "recovery state")
    z_prev = state.last_z
    v_t = state.v - (state.v - IZH_V_RESET) * z_prev
    a_t = state.a + IZH_A_JUMP * z_prev
    v = v_t + 0.04 * v_t ** 2 + 5.0 * v_t + 140.0 - a_t + weighted_in
    a = a_t + 0.004 * v_t - 0.02 * a_t
    z = heaviside(v - IZH_V_PEAK)
    psi = izhikevich_pseudo_derivative(v, params)
    zeros = np.zeros(np.shape(v), dtype=np.int64)
    return HiddenState(v, a, zeros, z, zeros.astype(bool)), z, psi


# --- eligibility recursions ---------------------------------------------------
# These update ``elig`` in place and return ``(elig, e)``.

def alif_eligibility_step(elig, psi, presyn, params, beta=None, psi_next=None):
    """ALIF eligibility vector, trace and filtered trace for one step.

    ``eps_a`` is updated before ``eps_v`` so that no temporary copy of the
    old ``eps_v`` is needed.
    """
    beta = _col(params.beta if beta is None else beta)
    psi = _col(psi)
    psi_next = psi if psi_next is None else _col(psi_next)
    elig.eps_a *= params.rho - psi * beta
    elig.eps_a += psi * elig.eps_v
    elig.eps_v *= params.alpha
    elig.eps_v += _row(presyn)
    e = psi_next * (elig.eps_v - beta * elig.eps_a)
    elig.trace_filtered *= params.kappa
    elig.trace_filtered += e
    return elig, e


def stdp_alif_eligibility_step(elig, psi, presyn, spike_now, spike_refr_ago, params,
                               beta=None, psi_next=None):
    """STDP-ALIF eligibility: the activation history is erased by either reset.

    ``spike_now`` and ``spike_refr_ago`` describe the state being left
    (its own spike, and whether its refractory window ends there).
    """
    beta = _col(params.beta if beta is None else beta)
    psi = _col(psi)
    psi_next = psi if psi_next is None else _col(psi_next)
    keep = params.alpha * (1.0 - _col(spike_now) - _col(spike_refr_ago))
    elig.eps_a *= params.rho - psi * beta
    elig.eps_a += psi * elig.eps_v
    elig.eps_v *= keep
    elig.eps_v += _row(presyn)
    e = psi_next * (elig.eps_v - beta * elig.eps_a)
    elig.trace_filtered *= params.kappa
    elig.trace_filtered += e
    return elig, e


def izhikevich_eligibility_step(elig, psi, presyn, spike_now, v, params, clip=True):
    """Izhikevich eligibility with the optional clipping correction.

    ``spike_now`` and ``v`` belong to the state being left; ``psi`` is the
    pseudo-derivative of the new state and only multiplies ``eps_v``.
    """
    open_ = 1.0 - _col(spike_now)
    eps_v_old = elig.eps_v.copy()
    elig.eps_v *= open_ * (6.0 + 0.08 * _col(v))
    elig.eps_v -= elig.eps_a
    elig.eps_v += _row(presyn)
    elig.eps_a *= 0.98
    elig.eps_a += 0.004 * open_ * eps_v_old
    if clip:
        np.clip(elig.eps_v, -IZH_EPS_V_BOUND, IZH_EPS_V_BOUND, out=elig.eps_v)
        np.clip(elig.eps_a, -IZH_EPS_A_BOUND, IZH_EPS_A_BOUND, out=elig.eps_a)
    e = _col(psi) * elig.eps_v
    elig.trace_filtered *= params.kappa
    elig.trace_filtered += e
    return elig, e


def neuron_step(kind, state, weighted_in, params, beta=None):
    """Dispatch to the step function of ``kind``."""
    kind = NeuronKind.parse(kind)
    if kind is NeuronKind.ALIF:
        return alif_step(state, weighted_in, params, beta)
    if kind is NeuronKind.STDP_ALIF:
        return stdp_alif_step(state, weighted_in, params, beta)
    return izhikevich_step(state, weighted_in, params)


def eligibility_step(kind, elig, prev_state, psi_prev, psi, presyn, params, beta=None, clip=True):
    """Dispatch the eligibility update for a transition out of ``prev_state``."""
    kind = NeuronKind.parse(kind)
    if kind is NeuronKind.ALIF:
        return alif_eligibility_step(elig, psi_prev, presyn, params, beta, psi_next=psi)
    if kind is NeuronKind.STDP_ALIF:
        return stdp_alif_eligibility_step(
            elig, psi_prev, presyn, prev_state.last_z,
            prev_state.refractory_ending.astype(float), params, beta, psi_next=psi)
    return izhikevich_eligibility_step(elig, psi, presyn, prev_state.last_z, prev_state.v,
                                       params, clip=clip)
