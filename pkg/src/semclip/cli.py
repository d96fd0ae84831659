"""Command-line entry point: ``semclip tokens|channel|exp ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import channel, experiments as ex
from .config import RunManifest, format_config, parse_config
from .errors import SemclipError
from .plotting import emit_plots
from .tokens import (ImageSpec, TokenBatch, load_feature_cache, read_cache_header, save_feature_cache,
                     synth_cluster_tokens, toy_image_encoder)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# ------------------------------------------------------------------ tokens

def cmd_tokens_synth(args) -> int:
    batch = synth_cluster_tokens(args.classes, args.per_class, args.dim, args.spread, args.seed,
                                 args.subspace_dim)
    save_feature_cache(batch, args.out)
    _emit({"path": str(args.out), "count": len(batch), "dim": batch.dim, "classes": batch.num_classes})
    return 0


def cmd_tokens_encode(args) -> int:
    images = np.load(args.images)
    spec = ImageSpec.parse(args.spec)
    if images.ndim == 3:
        images = images[None]
    rows = [toy_image_encoder(img, args.seed, args.dim, spec) for img in images]
    batch = TokenBatch(np.stack(rows))
    save_feature_cache(batch, args.out)
    _emit({"path": str(args.out), "count": len(batch), "dim": batch.dim, "spec": str(spec)})
    return 0


def cmd_tokens_inspect(args) -> int:
    info = read_cache_header(args.path)
    batch = load_feature_cache(args.path)
    info.update(path=str(args.path), labels=batch.labels is not None,
                mean_norm=float(np.linalg.norm(batch.values, axis=1).mean()) if len(batch) else 0.0)
    if batch.labels is not None:
        info["classes"] = batch.num_classes
    _emit(info)
    return 0


# ----------------------------------------------------------------- channel

def cmd_channel_probe(args) -> int:
    if args.symbols < 1:
        raise SemclipError("--symbols must be positive")
    _emit(channel.probe(args.snr_db, args.symbols, args.seed, args.power))
    return 0


# ---------------------------------------------------------------------- exp

def _finish(run: Path, command: str, cfg, outputs, digests) -> None:
    manifest = RunManifest.for_config(cfg)
    manifest.checkpoints = dict(sorted(digests.items()))
    manifest.outputs = [Path(p).name for p in outputs]
    manifest.write(run / f"manifest_{command}.json")
    print(f"{command}: wrote {', '.join(manifest.outputs)} (manifest {manifest.hash()})")


def _load_all(cfg, run: Path):
    trained = [ex.load_trained(cfg, s, run) for s in cfg.seeds]
    digests = {}
    for t in trained:
        digests.update(t.digests())
    return trained, digests


def _write_sweep(run, name, result, cfg, plots=False):
    path = run / name
    ex.write_report(result.rows, path, cfg.hash(), result.failures, cfg.scale)
    outputs = [path]
    if plots and result.rows:
        outputs += emit_plots(result.rows, run)
    for method, snr, seed, msg in result.failures:
        print(f"failed cell {method} @ {snr} dB seed {seed}: {msg}", file=sys.stderr)
    return outputs


def cmd_exp_train(args, cfg) -> int:
    run = args.run
    run.mkdir(parents=True, exist_ok=True)
    (run / "config.txt").write_text(format_config(cfg))
    digests, outputs = {}, [run / "config.txt"]
    for seed in cfg.seeds:
        trained = ex.train_seed(cfg, seed, args.log_every)
        digests.update(ex.save_trained(trained, run))
        outputs += sorted(run.glob(f"seed{seed}_*"))
    _finish(run, "train", cfg, outputs, digests)
    return 0


def cmd_exp_sweep(args, cfg) -> int:
    trained, digests = _load_all(cfg, args.run)
    result = ex.snr_sweep(cfg, trained)
    _finish(args.run, "sweep", cfg, _write_sweep(args.run, "sweep.csv", result, cfg, plots=True), digests)
    return 0 if result.complete else 1


def cmd_exp_ablate(args, cfg) -> int:
    trained, digests = _load_all(cfg, args.run)
    result = ex.ablation_suite(cfg, trained)
    _finish(args.run, "ablate", cfg, _write_sweep(args.run, "ablation.csv", result, cfg), digests)
    return 0 if result.complete else 1


def cmd_exp_crossdata(args, cfg) -> int:
    trained, digests = _load_all(cfg, args.run)
    result = ex.cross_dataset_eval(cfg, trained, args.split)
    _finish(args.run, "crossdata", cfg, _write_sweep(args.run, "crossdata.csv", result, cfg), digests)
    return 0 if result.complete else 1


def cmd_exp_bandwidth(args, cfg) -> int:
    args.run.mkdir(parents=True, exist_ok=True)
    rows = ex.bandwidth_sweep(cfg, log_every=args.log_every)
    path = args.run / "bandwidth.csv"
    ex.write_bandwidth_report(rows, path, cfg.hash())
    outputs = [path] + emit_plots([], args.run, rows)
    _finish(args.run, "bandwidth", cfg, outputs, {})
    return 0


def cmd_exp_plot(args, cfg) -> int:
    rows, bw = [], None
    if (args.run / "sweep.csv").exists():
        rows = ex.parse_report(args.run / "sweep.csv")[0]
    if (args.run / "bandwidth.csv").exists():
        bw = ex.parse_bandwidth_report(args.run / "bandwidth.csv")[0]
    if not rows and not bw:
        raise SemclipError(f"no sweep.csv or bandwidth.csv in {args.run}")
    for p in emit_plots(rows, args.run, bw):
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semclip", description="Semantic token transmission toolkit.")
    top = p.add_subparsers(dest="group", required=True, metavar="{tokens,channel,exp}")

    tokens = top.add_parser("tokens", help="feature caches").add_subparsers(dest="cmd", required=True)
    s = tokens.add_parser("synth", help="write synthetic cluster tokens")
    s.add_argument("--classes", type=int, default=16)
    s.add_argument("--per-class", type=int, default=64)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--spread", type=float, default=0.3)
    s.add_argument("--subspace-dim", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_tokens_synth)
    s = tokens.add_parser("encode", help="run the toy image encoder over a .npy image stack")
    s.add_argument("--images", type=Path, required=True)
    s.add_argument("--spec", default="8x8x3")
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_tokens_encode)
    s = tokens.add_parser("inspect", help="print a cache header as JSON")
    s.add_argument("path", type=Path)
    s.set_defaults(func=cmd_tokens_inspect)

    chan = top.add_parser("channel", help="channel tools").add_subparsers(dest="cmd", required=True)
    s = chan.add_parser("probe", help="measure the AWGN channel")
    s.add_argument("--snr-db", type=float, required=True)
    s.add_argument("--symbols", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--power", type=float, default=1.0)
    s.set_defaults(func=cmd_channel_probe)

    exp = top.add_parser("exp", help="desk-scale experiments").add_subparsers(dest="cmd", required=True)
    for name, func, hlp in (
        ("train", cmd_exp_train, "train all methods and write checkpoints"),
        ("sweep", cmd_exp_sweep, "SNR sweep of every method, CSV plus figures"),
        ("ablate", cmd_exp_ablate, "prompt-learning / AF ablation"),
        ("crossdata", cmd_exp_crossdata, "zero-shot transfer to a disjoint class set"),
        ("bandwidth", cmd_exp_bandwidth, "accuracy vs channel uses (retrains per L)"),
        ("plot", cmd_exp_plot, "re-render figures from CSV reports"),
    ):
        s = exp.add_parser(name, help=hlp)
        s.add_argument("--config", type=Path, default=None, help="flat key=value file")
        s.add_argument("--run", type=Path, default=Path("run"), help="run directory")
        s.add_argument("--log-every", type=int, default=0)
        if name == "crossdata":
            s.add_argument("--split", default=None, help="class split to evaluate on")
        s.set_defaults(func=func, needs_config=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    try:
        if getattr(args, "needs_config", False):
            return args.func(args, parse_config(args.config))
        return args.func(args)
    except (SemclipError, ValueError, OSError) as e:
        print(f"semclip: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
