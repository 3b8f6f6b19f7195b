"""Command-line interface: ``features``, ``train``, ``eval`` and ``demo``.

Exit codes: 0 success, 1 run failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DATA_ROOT_ENV, from_dict, load_config, override
from .demo import DEMO_MODELS, demo_columns, load_protocol, run_demo, write_demo_csv
from .errors import ConfigError, EpropError, FormatError, IndexingError
from .features import ChannelStats, align_targets, mel_filterbank, raw_features, standardize
from .network import init_network
from .neuron import NeuronKind
from .trainer import Trainer, append_metrics, evaluate

log = logging.getLogger("eprop")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --- features ---------------------------------------------------------------

def _split_uids(index):
    return {name: [r.uid for r in index.split(name)] for name in ("train", "val", "test")}


def cmd_features(args):
    cfg = load_config(args.config)
    root = args.timit or cfg.data.timit or os.environ.get(DATA_ROOT_ENV)
    if not root or not Path(root).is_dir():
        raise UsageError(f"TIMIT directory not found: {root!r} (use --timit or ${DATA_ROOT_ENV})")
    out = Path(args.out)
    index = dataset.index_corpus(root, seed=args.seed, strict=args.strict)
    splits = _split_uids(index)
    counts = "/".join(str(len(splits[s])) for s in ("train", "val", "test"))
    manifest_path = out / "manifest.json"
    fhash = dataset.config_hash(cfg.features)
    if manifest_path.exists() and not args.force:
        old = dataset.Manifest.load(manifest_path)
        if old.feature_hash == fhash and old.splits == splits:
            print(f"cache up to date: train/val/test {counts}")
            return EXIT_OK
    out.mkdir(parents=True, exist_ok=True)

    phone_map = dataset.PhoneMap()
    fbank = mel_filterbank(cfg.features)
    records = [r for s in ("train", "val", "test") for r in index.split(s)]
    intervals = {r.uid: dataset.read_phones(r.phones, phone_map) for r in records}

    # first pass: channel statistics of the training split
    n, total, total_sq = 0, 0.0, 0.0
    for r in index.split("train"):
        f = raw_features(dataset.read_audio(r.audio), cfg.features, fbank)
        n += len(f)
        total = total + f.sum(axis=0)
        total_sq = total_sq + (f ** 2).sum(axis=0)
    mean = total / n
    stats = ChannelStats(mean, np.sqrt(np.maximum(total_sq / n - mean ** 2, 0.0)))

    # second pass: standardized caches for every split
    for r in records:
        f = raw_features(dataset.read_audio(r.audio), cfg.features, fbank)
        labels = align_targets(intervals[r.uid], len(f), cfg.features, phone_map)
        utt = dataset.Utterance(standardize(f, stats), labels, r.uid)
        dataset.write_cache(out / dataset.cache_filename(r.uid), utt)
    dataset.Manifest(phone_map.phones, stats.mean.tolist(), stats.std.tolist(), splits,
                     fhash).save(manifest_path)
    print(f"wrote {len(records)} caches to {out}: train/val/test {counts}")
    return EXIT_OK


# --- train / eval -------------------------------------------------------------

def synthetic_data(cfg):
    d = cfg.data
    utts = dataset.synthetic_task(cfg.train.seed, d.n_classes, d.n_train + d.n_val + d.n_test,
                                  d.t_len, separation=d.separation)
    return {"train": utts[:d.n_train], "val": utts[d.n_train:d.n_train + d.n_val],
            "test": utts[d.n_train + d.n_val:]}


def load_data(cfg, synthetic, splits=("train", "val")):
    if synthetic:
        data = synthetic_data(cfg)
        return {s: data[s] for s in splits}
    cache = Path(cfg.data.cache)
    if not (cache / "manifest.json").exists():
        raise UsageError(f"no feature cache at {cache}; run 'features' first or pass --synthetic")
    return {s: dataset.load_split(cache, s, cfg.features) for s in splits}


def _train_overrides(cfg, args):
    cfg = override(cfg, "train", seed=args.seed, max_iters=args.max_iters, epochs=args.epochs)
    cfg = override(cfg, "network", model=args.model, broadcast=args.broadcast,
                   n_layers=args.n_layers, n_neurons=args.n_neurons)
    cfg = override(cfg, "data", out_dir=args.out)
    if args.no_clip:
        cfg = override(cfg, "clip", clip=False)
    return cfg


def cmd_train(args):
    if args.resume:
        if not Path(args.resume).exists():
            raise UsageError(f"checkpoint {args.resume} not found")
        params, opt, header = load_checkpoint(args.resume)
        cfg = from_dict(header["config"])
        synthetic = header["extra"].get("synthetic", False)
    else:
        cfg = load_config(args.config)
        synthetic = args.synthetic
        params = opt = header = None
    cfg = _train_overrides(cfg, args)
    if synthetic:
        cfg = override(cfg, "network", n_outputs=cfg.data.n_classes)
    data = load_data(cfg, synthetic)
    out = Path(cfg.data.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if params is None:
        params = init_network(cfg.network, cfg.train.seed)

    trainer = Trainer(params, cfg.neuron, cfg.train, cfg.reg, cfg.clip, str(out / "metrics.csv"))
    extra = {"synthetic": synthetic}
    if header is not None:
        trainer.opt = opt
        trainer.iteration = header["iteration"]
        if "best_miscls" in header["extra"]:
            trainer.best = (header["extra"]["best_miscls"], header["extra"]["best_iteration"], None)

    def checkpoint(tr, rec=None):
        meta = dict(extra)
        if tr.best is not None:
            meta.update(best_miscls=tr.best[0], best_iteration=tr.best[1])
        save_checkpoint(out / "last.ckpt", tr.params, tr.opt, tr.iteration, cfg.to_dict(), meta)
        if rec is not None and tr.best is not None and tr.best[1] == rec.iteration:
            save_checkpoint(out / "best.ckpt", tr.best[2], None, rec.iteration, cfg.to_dict(), meta)
        if rec is not None:
            print(f"iter {rec.iteration}: val miscls {rec.miscls_pct:.2f}% xent {rec.xent:.4f} "
                  f"rate {rec.mean_rate_hz:.1f} Hz reg {rec.reg_err:.4g}", flush=True)

    trainer.fit(data["train"], data["val"], on_eval=checkpoint)
    checkpoint(trainer)
    if trainer.best is not None:
        print(f"best val miscls {trainer.best[0]:.2f}% at iteration {trainer.best[1]}")
    return EXIT_OK


def cmd_eval(args):
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint {args.checkpoint} not found")
    params, _, header = load_checkpoint(args.checkpoint)
    cfg = from_dict(header["config"])
    synthetic = header["extra"].get("synthetic", False)
    utts = load_data(cfg, synthetic, (args.split,))[args.split]
    rec = evaluate(params, utts, cfg.neuron, cfg.reg, cfg.train.batch_size, header["iteration"],
                   args.split, cfg.clip)
    print(f"{args.split}: miscls {rec.miscls_pct:.2f}% xent {rec.xent:.4f} "
          f"rate {rec.mean_rate_hz:.2f} Hz reg {rec.reg_err:.6g}")
    metrics = args.metrics or str(Path(args.checkpoint).with_name("eval_metrics.csv"))
    append_metrics(metrics, rec)
    return EXIT_OK


# --- demo -------------------------------------------------------------------

def cmd_demo(args):
    try:
        protocol = load_protocol(args.protocol or args.model)
    except FileNotFoundError:
        raise UsageError(f"protocol {args.protocol} not found") from None
    protocol.model = NeuronKind.parse("izh" if args.model.startswith("izh") else args.model)
    if args.model == "izh-unclipped":
        protocol.clip = False
    elif args.model == "izh":
        protocol.clip = True
    if args.learning_signal is not None:
        protocol.learning_signal = args.learning_signal
    rows = run_demo(protocol, load_config(args.config).neuron)
    write_demo_csv(rows, args.out)
    cols = demo_columns(rows)
    print(f"{args.model}: {protocol.steps} steps, final acc_dW {cols['acc_dW'][-1]:.6g}, "
          f"max |eps_v| {np.abs(cols['eps_v']).max():.6g} -> {args.out}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="eprop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="index TIMIT and write standardized MFCC caches")
    p.add_argument("--timit", help=f"corpus root (default: ${DATA_ROOT_ENV})")
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--seed", type=int, default=0, help="validation split seed")
    p.add_argument("--config")
    p.add_argument("--force", action="store_true", help="rebuild even if the cache is current")
    p.add_argument("--strict", action="store_true", help="require 3696/400/192 split sizes")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train a network with e-prop")
    p.add_argument("--config")
    p.add_argument("--synthetic", action="store_true", help="use the synthetic task")
    p.add_argument("--resume", help="continue from a last.ckpt file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--model", choices=[k.value for k in NeuronKind])
    p.add_argument("--broadcast", choices=["random", "symmetric", "adaptive"])
    p.add_argument("--n-layers", type=int, choices=[1, 2, 3])
    p.add_argument("--n-neurons", type=int)
    p.add_argument("--no-clip", action="store_true", help="disable Izhikevich eligibility clipping")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--metrics", help="CSV file to append to")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("demo", help="single-synapse simulation to CSV")
    p.add_argument("--model", choices=DEMO_MODELS, required=True)
    p.add_argument("--protocol", help="protocol JSON (default: the shipped one for --model)")
    p.add_argument("--out", required=True)
    p.add_argument("--learning-signal", type=float)
    p.add_argument("--config")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, IndexingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EpropError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
