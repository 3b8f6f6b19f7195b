"""Single-synapse simulations driven by scripted current injections.

A presynaptic neuron projects onto a postsynaptic neuron through one synapse.
Both receive injected current according to a protocol; the synapse's
eligibility vector, trace and filtered trace are recorded together with the
accumulated weight change ``sum_t L * ebar_t`` for a constant learning
signal ``L``. With ``L > 0`` read as a reinforcing signal, a positive
``acc_dW`` means the synapse is potentiated.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .neuron import EligibilityState, HiddenState, NeuronKind, NeuronParams, eligibility_step, neuron_step

DEMO_COLUMNS = ["t", "I", "v_pre", "v_post", "z_pre", "z_post", "eps_v", "eps_a", "e", "ebar",
                "acc_dW"]
DEMO_MODELS = ("alif", "stdp-alif", "izh", "izh-unclipped")
TARGETS = ("pre", "post")


@dataclass
class Protocol:
    model: NeuronKind
    steps: int
    injections: list = field(default_factory=list)  # (t, amplitude, target, duration)
    learning_signal: float = 1.0
    weight: float = 0.0
    clip: bool = True
    random: dict | None = None

    def currents(self):
        """Injected current per step, shape (steps, 2) for (pre, post)."""
        cur = np.zeros((self.steps, 2))
        for t, amp, target, dur in self.injections:
            col = TARGETS.index(target)
            cur[t:t + dur, col] += amp
        if self.random:
            cur += random_currents(self.steps, **self.random)
        return cur


def random_currents(steps, seed=0, rate=0.05, amplitude=1.0, jitter=0.5):
    """Independent random pulse trains for the two neurons."""
    rng = np.random.default_rng(seed)
    hits = rng.random((steps, 2)) < rate
    amps = amplitude * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=(steps, 2)))
    return np.where(hits, amps, 0.0)


def parse_protocol(raw):
    allowed = {"model", "steps", "injections", "learning_signal", "weight", "clip", "random",
               "description"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown protocol keys: {sorted(unknown)}")
    try:
        model = NeuronKind.parse(raw["model"])
        steps = int(raw["steps"])
    except KeyError as exc:
        raise ConfigError(f"protocol is missing {exc.args[0]!r}") from None
    if steps < 1:
        raise ConfigError("protocol needs at least one step")
    injections = []
    for item in raw.get("injections", []):
        if len(item) not in (3, 4):
            raise ConfigError(f"injection must be [t, amplitude, target(, duration)], got {item}")
        t, amp, target = int(item[0]), float(item[1]), str(item[2])
        dur = int(item[3]) if len(item) == 4 else 1
        if target not in TARGETS:
            raise ConfigError(f"injection target must be 'pre' or 'post', got {target!r}")
        if not 0 <= t < steps or dur < 1:
            raise ConfigError(f"injection {item} outside the protocol")
        injections.append((t, amp, target, dur))
    return Protocol(model, steps, injections, float(raw.get("learning_signal", 1.0)),
                    float(raw.get("weight", 0.0)), bool(raw.get("clip", True)), raw.get("random"))


def load_protocol(spec):
    """Load a protocol from a JSON path or by shipped name (alif, stdp-alif, izh, izh-unclipped)."""
    path = Path(spec)
    if path.suffix != ".json" and str(spec) in DEMO_MODELS:
        text = resources.files("eprop").joinpath("protocols", f"{spec}.json").read_text()
    else:
        text = path.read_text()
    return parse_protocol(json.loads(text))


def _post_view(state):
    """The postsynaptic half of a pair state, shape (1,)."""
    return HiddenState(state.v[1:], state.a[1:], state.refr_remaining[1:], state.last_z[1:],
                       state.clamped[1:])


def run_demo(protocol, params=NeuronParams()):
    """Simulate the neuron pair and return one dict per step with :data:`DEMO_COLUMNS`.

    Both neurons advance together as a batch of two (index 0 is presynaptic).
    """
    kind = protocol.model
    cur = protocol.currents()
    pair = HiddenState.zeros((2,), kind)
    elig = EligibilityState.zeros((1, 1))
    psi_post = np.zeros(1)
    drive = np.zeros(2)
    acc = 0.0
    rows = []
    for t in range(protocol.steps):
        presyn = pair.last_z[:1].copy()  # the synapse delivers last step's spike
        drive[0] = cur[t, 0]
        drive[1] = cur[t, 1] + protocol.weight * presyn[0]
        prev_post = _post_view(pair)
        pair, z, psi = neuron_step(kind, pair, drive, params)
        _, e = eligibility_step(kind, elig, prev_post, psi_post, psi[1:], presyn, params,
                                clip=protocol.clip)
        psi_post = psi[1:]
        ebar = float(elig.trace_filtered[0, 0])
        acc += protocol.learning_signal * ebar
        rows.append({
            "t": t, "I": float(cur[t, 1]), "v_pre": float(pair.v[0]), "v_post": float(pair.v[1]),
            "z_pre": float(z[0]), "z_post": float(z[1]),
            "eps_v": float(elig.eps_v[0, 0]), "eps_a": float(elig.eps_a[0, 0]),
            "e": float(np.asarray(e).reshape(-1)[0]), "ebar": ebar, "acc_dW": acc,
        })
    return rows


def demo_columns(rows):
    """Rows as a dict of column arrays."""
    return {c: np.array([r[c] for r in rows]) for c in DEMO_COLUMNS}


def write_demo_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DEMO_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (r[k] if k == "t" else f"{r[k]:.10g}") for k in DEMO_COLUMNS})
