"""Versioned binary checkpoints: JSON header followed by little-endian float64 arrays.

Layout::

    b"EPCK" | u32 version | u32 header length | header (UTF-8 JSON) | arrays

The header lists every array by name and shape in payload order, plus the run
configuration, the iteration counter and the Adam step count. The data order
of an epoch is a pure function of (seed, epoch), so nothing else is needed to
resume a run exactly.
"""
from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import FormatError
from .network import BroadcastMode, LayerParams, NetworkParams
from .neuron import NeuronKind
from .trainer import OptimizerState

MAGIC = b"EPCK"
VERSION = 1
_HEAD = struct.Struct("<4sII")


def _collect(params, opt):
    arrays = {}
    for r, layer in enumerate(params.layers):
        arrays[f"w_in{r}"] = layer.w_in
        arrays[f"w_rec{r}"] = layer.w_rec
        arrays[f"mask_in{r}"] = layer.mask_in.astype(float)
        arrays[f"mask_rec{r}"] = layer.mask_rec.astype(float)
        arrays[f"beta{r}"] = layer.beta
        arrays[f"b_feedback{r}"] = params.b_feedback[r]
    arrays["w_out"] = params.w_out
    arrays["bias"] = params.bias
    if opt is not None:
        for name in sorted(opt.m):
            arrays[f"adam_m/{name}"] = opt.m[name]
            arrays[f"adam_v/{name}"] = opt.v2[name]
    return arrays


def save_checkpoint(path, params, opt=None, iteration=0, config=None, extra=None):
    """Write atomically (temp file then rename)."""
    arrays = _collect(params, opt)
    header = {
        "format": "eprop-checkpoint",
        "model": params.model.value,
        "broadcast": params.broadcast.value,
        "n_layers": len(params.layers),
        "iteration": int(iteration),
        "adam_steps": int(opt.step_count) if opt is not None else 0,
        "config": config or {},
        "extra": extra or {},
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Return ``(params, opt, header)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEAD.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, n_head = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(data[_HEAD.size:_HEAD.size + n_head])
    except ValueError:
        raise FormatError(f"{path}: corrupt header") from None
    off = _HEAD.size + n_head
    arrays = {}
    for spec in header["arrays"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        if off + 8 * count > len(data):
            raise FormatError(f"{path}: payload shorter than the header declares")
        arrays[spec["name"]] = np.frombuffer(data, "<f8", count, off).reshape(spec["shape"]).copy()
        off += 8 * count
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after the declared arrays")

    kind = NeuronKind.parse(header["model"])
    layers = []
    feedback = []
    for r in range(header["n_layers"]):
        layers.append(LayerParams(arrays[f"w_in{r}"], arrays[f"w_rec{r}"],
                                  arrays[f"mask_in{r}"] > 0.5, arrays[f"mask_rec{r}"] > 0.5,
                                  arrays[f"beta{r}"], kind))
        feedback.append(arrays[f"b_feedback{r}"])
    params = NetworkParams(layers, arrays["w_out"], arrays["bias"], feedback,
                           BroadcastMode.parse(header["broadcast"]))
    opt = OptimizerState(step_count=header["adam_steps"])
    for name, v in arrays.items():
        if name.startswith("adam_m/"):
            opt.m[name[7:]] = v
        elif name.startswith("adam_v/"):
            opt.v2[name[7:]] = v
    return params, opt, header
