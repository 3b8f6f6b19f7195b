"""Fused per-step eligibility updates with gradient accumulation.

Each kernel performs, for every (sample, post, pre) triple, the eligibility
vector update, the trace, the kappa filter and ``grad += L * ebar`` in a
single pass. They compute exactly what the reference functions in
:mod:`eprop.neuron` compute, and fall back to those when numba is missing.
"""
from __future__ import annotations

import numpy as np

from .neuron import IZH_EPS_A_BOUND, IZH_EPS_V_BOUND, EligibilityState, NeuronKind

try:
    from numba import njit
except ImportError:  # pragma: no cover - exercised only without numba
    njit = None


def _lif_family_py(eps_v, eps_a, trace, psi_prev, psi, keep, beta, presyn, rho, kappa, sig, grad):
    b = beta[None, :, None]
    eps_a *= rho - psi_prev[:, :, None] * b
    eps_a += psi_prev[:, :, None] * eps_v
    eps_v *= keep[:, :, None]
    eps_v += presyn[:, None, :]
    trace *= kappa
    trace += psi[:, :, None] * (eps_v - b * eps_a)
    grad += np.einsum("bj,bji->ji", sig, trace)


def _izh_py(eps_v, eps_a, trace, psi, open_, vfac, presyn, kappa, clip, sig, grad):
    old = eps_v.copy()
    eps_v *= vfac[:, :, None]
    eps_v -= eps_a
    eps_v += presyn[:, None, :]
    eps_a *= 0.98
    eps_a += 0.004 * open_[:, :, None] * old
    if clip:
        np.clip(eps_v, -IZH_EPS_V_BOUND, IZH_EPS_V_BOUND, out=eps_v)
        np.clip(eps_a, -IZH_EPS_A_BOUND, IZH_EPS_A_BOUND, out=eps_a)
    trace *= kappa
    trace += psi[:, :, None] * eps_v
    grad += np.einsum("bj,bji->ji", sig, trace)


if njit is not None:
    @njit(cache=True, fastmath=False)
    def _lif_family_nb(eps_v, eps_a, trace, psi_prev, psi, keep, beta, presyn, rho, kappa, sig,
                       grad):
        n_b, n_post, n_pre = eps_v.shape
        for b in range(n_b):
            for j in range(n_post):
                pp = psi_prev[b, j]
                ca = rho - pp * beta[j]
                kj = keep[b, j]
                pj = psi[b, j]
                bj = beta[j]
                sj = sig[b, j]
                for i in range(n_pre):
                    ev = eps_v[b, j, i]
                    ea = ca * eps_a[b, j, i] + pp * ev
                    ev = kj * ev + presyn[b, i]
                    tr = kappa * trace[b, j, i] + pj * (ev - bj * ea)
                    eps_v[b, j, i] = ev
                    eps_a[b, j, i] = ea
                    trace[b, j, i] = tr
                    grad[j, i] += sj * tr

    @njit(cache=True, fastmath=False)
    def _izh_nb(eps_v, eps_a, trace, psi, open_, vfac, presyn, kappa, clip, sig, grad):
        n_b, n_post, n_pre = eps_v.shape
        for b in range(n_b):
            for j in range(n_post):
                vf = vfac[b, j]
                oa = 0.004 * open_[b, j]
                pj = psi[b, j]
                sj = sig[b, j]
                for i in range(n_pre):
                    ev_old = eps_v[b, j, i]
                    ea_old = eps_a[b, j, i]
                    ev = ev_old * vf - ea_old + presyn[b, i]
                    ea = ea_old * 0.98 + oa * ev_old
                    if clip:
                        ev = min(max(ev, -IZH_EPS_V_BOUND), IZH_EPS_V_BOUND)
                        ea = min(max(ea, -IZH_EPS_A_BOUND), IZH_EPS_A_BOUND)
                    tr = kappa * trace[b, j, i] + pj * ev
                    eps_v[b, j, i] = ev
                    eps_a[b, j, i] = ea
                    trace[b, j, i] = tr
                    grad[j, i] += sj * tr

    lif_family_step = _lif_family_nb
    izh_step = _izh_nb
    HAVE_NUMBA = True
else:  # pragma: no cover
    lif_family_step = _lif_family_py
    izh_step = _izh_py
    HAVE_NUMBA = False


def fused_step(kind, elig: EligibilityState, prev, psi_prev, psi, presyn, params, beta, sig, grad,
               clip=True, use_numba=True):
    """Advance ``elig`` over one transition out of ``prev`` and add ``sig * ebar`` into ``grad``.

    Arguments follow :func:`eprop.neuron.eligibility_step`; ``sig`` is the
    (batch, post) learning signal of the new step.
    """
    presyn = np.ascontiguousarray(presyn, dtype=float)
    sig = np.ascontiguousarray(sig, dtype=float)
    if kind is NeuronKind.IZHIKEVICH:
        open_ = 1.0 - prev.last_z
        vfac = open_ * (6.0 + 0.08 * prev.v)
        fn = izh_step if use_numba else _izh_py
        fn(elig.eps_v, elig.eps_a, elig.trace_filtered, np.ascontiguousarray(psi), open_, vfac,
           presyn, params.kappa, bool(clip), sig, grad)
        return
    if kind is NeuronKind.STDP_ALIF:
        keep = params.alpha * (1.0 - prev.last_z - prev.refractory_ending)
    else:
        keep = np.full(prev.v.shape, params.alpha)
    fn = lif_family_step if use_numba else _lif_family_py
    fn(elig.eps_v, elig.eps_a, elig.trace_filtered, np.ascontiguousarray(psi_prev),
       np.ascontiguousarray(psi), np.ascontiguousarray(keep, dtype=float),
       np.ascontiguousarray(np.broadcast_to(beta, prev.v.shape[-1:]), dtype=float), presyn,
       params.rho, params.kappa, sig, grad)
