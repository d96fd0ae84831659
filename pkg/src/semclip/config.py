"""Experiment configuration, flat ``key=value`` parsing and run manifests.

A config file holds one ``key = value`` per line; ``#`` starts a comment.
Tuples are comma separated.  Every key must name an :class:`ExperimentConfig`
field; anything missing keeps its default.
"""
from __future__ import annotations

import dataclasses
import json
import os
import time
import typing
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .errors import ConfigError
from .jscc import JsccConfig
from .tapl import TaplConfig
from .tokens import ImageSpec
from .training import TrainConfig
from .util import stable_hash
from .world import WorldConfig

SEED_ENV = "SEMCLIP_SEED"
METHODS = ("semclip", "semclip_no_tapl", "semclip_no_af", "clip_ft_direct")
METRICS = ("top1", "recall@1")


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[str, ...] = METHODS
    metrics: tuple[str, ...] = METRICS
    seeds: tuple[int, ...] = (0, 1, 2)
    snrs: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)

    # synthetic world
    token_dim: int = 64
    embed_dim: int = 64
    context_len: int = 4
    subspace_dim: int = 6
    spread: float = 0.5
    image_mean: float = 1.5
    text_offset: float = 2.0
    text_gap: float = 0.5
    train_classes: int = 16
    test_classes: int = 16
    train_per_class: int = 256
    test_per_class: int = 300

    # codec and training
    channel_uses: int = 32
    standardize: bool = True
    power: float = 1.0
    snr_range: tuple[float, float] = (-10.0, 10.0)
    no_af_snr: float = 0.0
    batch_size: int = 128
    lr: float = 1e-3
    scale: float = 10.0
    stage1_steps: int = 2000
    stage2_steps: int = 1000

    # alternate distribution for zero-shot transfer
    cross_split: str = "cross"
    cross_classes: int = 12
    cross_spread: float = 0.6
    cross_per_class: int = 200
    cross_snrs: tuple[float, ...] = (0.0,)

    # bandwidth sweep
    bandwidth_uses: tuple[int, ...] = (4, 8, 16, 32)
    bandwidth_snr: float = 0.0
    image_spec: str = "336x336x3"

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not self.methods:
            raise ConfigError("need at least one method")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ConfigError(f"unknown metrics {bad}; choose from {list(METRICS)}")
        lo, hi = self.snr_range
        if lo > hi:
            raise ConfigError(f"snr_range lower bound {lo} exceeds upper bound {hi}")
        if self.cross_split in ("train", "test"):
            raise ConfigError("cross_split must differ from the train and test splits")
        for name in ("token_dim", "embed_dim", "context_len", "subspace_dim", "train_classes",
                     "test_classes", "train_per_class", "test_per_class", "channel_uses",
                     "batch_size", "cross_classes", "cross_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if min(self.train_classes, self.test_classes, self.cross_classes) < 2:
            raise ConfigError("every class set needs at least two classes")
        if any(u < 1 for u in self.bandwidth_uses):
            raise ConfigError("bandwidth_uses entries must be positive")
        if not self.spread > 0 or not self.cross_spread > 0:
            raise ConfigError("spreads must be positive")
        try:
            ImageSpec.parse(self.image_spec)
            self.world(0)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def hash(self) -> str:
        return stable_hash(self)

    def world(self, seed: int) -> WorldConfig:
        return WorldConfig(token_dim=self.token_dim, embed_dim=self.embed_dim,
                           context_len=self.context_len, subspace_dim=self.subspace_dim,
                           spread=self.spread, image_mean=self.image_mean,
                           text_offset=self.text_offset, text_gap=self.text_gap, seed=seed)

    def jscc(self, use_af: bool = True, channel_uses: int | None = None) -> JsccConfig:
        return JsccConfig(input_dim=self.token_dim, channel_uses=channel_uses or self.channel_uses,
                          use_af=use_af, power=self.power, standardize=self.standardize)

    def tapl(self) -> TaplConfig:
        return TaplConfig(token_dim=self.token_dim, embed_dim=self.embed_dim,
                          context_len=self.context_len)

    def stage1(self, seed: int, fixed_snr: float | None = None) -> TrainConfig:
        rng = self.snr_range if fixed_snr is None else (fixed_snr, fixed_snr)
        return TrainConfig(snr_range_db=tuple(rng), batch_size=self.batch_size, lr=self.lr,
                           steps=self.stage1_steps, seed=seed, scale=self.scale)

    def stage2(self, seed: int) -> TrainConfig:
        return TrainConfig(snr_range_db=tuple(self.snr_range), batch_size=self.batch_size,
                           lr=self.lr, steps=self.stage2_steps, seed=seed, scale=self.scale)


def _parse_scalar(kind, text: str, key: str):
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        return kind(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def _parse_value(hint, text: str, key: str):
    if typing.get_origin(hint) is tuple:
        args = typing.get_args(hint)
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_parse_scalar(args[0], p, key) for p in parts)
        if len(parts) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} comma-separated values, got {len(parts)}")
        return tuple(_parse_scalar(a, p, key) for a, p in zip(args, parts))
    return _parse_scalar(hint, text.strip(), key)


def parse_config_text(text: str, env: typing.Mapping[str, str] | None = None) -> ExperimentConfig:
    """Parse flat ``key=value`` text into a validated config.

    ``env`` (default ``os.environ``) may carry ``SEMCLIP_SEED``, which
    replaces the seed list with that single seed.
    """
    hints = typing.get_type_hints(ExperimentConfig)
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in hints:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(hints[key], value, key)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        values["seeds"] = (_parse_scalar(int, env[SEED_ENV], SEED_ENV),)
    return ExperimentConfig(**values)


def parse_config(path=None, env=None) -> ExperimentConfig:
    """Read a config file; ``None`` gives the defaults (plus any env override)."""
    text = "" if path is None else Path(path).read_text()
    return parse_config_text(text, env)


def format_config(cfg: ExperimentConfig) -> str:
    """Every field as ``key = value``; parses back to an equal config."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


@dataclass
class RunManifest:
    """Provenance written beside every output.

    ``hash()`` covers everything except the timestamp, so two runs with
    equal hashes used the same code version, config, seeds and weights.
    """

    config_hash: str
    seeds: list
    config: dict
    version: str = __version__
    checkpoints: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    seed_override: str | None = None
    created: float = field(default_factory=time.time)

    @classmethod
    def for_config(cls, cfg: ExperimentConfig, env=None) -> "RunManifest":
        env = os.environ if env is None else env
        return cls(cfg.hash(), list(cfg.seeds), dataclasses.asdict(cfg),
                   seed_override=env.get(SEED_ENV) or None)

    def hash(self) -> str:
        body = dataclasses.asdict(self)
        body.pop("created")
        return stable_hash(body)

    def write(self, path) -> None:
        body = dataclasses.asdict(self)
        body["manifest_hash"] = self.hash()
        Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        body = json.loads(Path(path).read_text())
        stored = body.pop("manifest_hash", None)
        m = cls(**body)
        if stored is not None and stored != m.hash():
            raise ConfigError(f"manifest {path} was edited: stored hash {stored} != {m.hash()}")
        return m
