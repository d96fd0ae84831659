"""Desk-scale experiment protocol: train every method, sweep SNR, report.

Methods
-------
``semclip``          SNR-adaptive codec + prompt learning
``semclip_no_tapl``  same codec, frozen prompts
``semclip_no_af``    codec without AF modules trained at one fixed SNR, frozen prompts
``clip_ft_direct``   raw tokens sent uncoded over the channel, frozen prompts
``upper_bound``      original tokens, no channel (reference rows only)

Every cell is keyed by ``(method, snr_db, seed)`` and computed from a
generator derived from that key, so rows are reproducible one by one.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import channel
from .checkpoint import ParameterStore, load_checkpoint, save_checkpoint
from .config import METHODS, METRICS, ExperimentConfig
from .errors import ClassOverlapError, FormatError, MissingCheckpointError
from .jscc import JsccCodec, codec_from_store, init_codec
from .tapl import ClassnameSet, TaplHead, cosine_scores, frozen_prompt_features
from .tokens import ImageSpec, TokenBatch
from .training import TrainResult, jscc_loss, train_stage1, train_stage2
from .util import seeded_generator
from .world import ClassPool, SyntheticWorld

REFERENCE = "upper_bound"
ALL_METHODS = METHODS + (REFERENCE,)
ABLATION = ("semclip", "semclip_no_tapl", "semclip_no_af")

REPORT_COLUMNS = ("method", "snr_db", "metric", "value", "seed", "config_hash")
BANDWIDTH_COLUMNS = ("method", "channel_uses", "bandwidth_ratio", "snr_db", "metric", "value",
                     "seed", "config_hash")

REPORT_NOTES = (
    "clip_ft_direct: raw tokens zero-padded to ceil(N/2) complex symbols, power-normalized, "
    "sent over AWGN and scored with frozen prompts; it is a noisy baseline, not a noiseless bound",
    "upper_bound: original tokens with no channel, frozen prompts",
    "semclip_no_af: codec without AF modules trained at a single fixed SNR",
)


def _rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(tag.encode())])


def _snr_key(snr_db: float) -> int:
    if math.isinf(snr_db):  # noiseless channel; the generator is never drawn from
        return 1 << 30
    return int(round(snr_db * 1000))


def _tensor(batch: TokenBatch) -> torch.Tensor:
    return torch.as_tensor(batch.values, dtype=torch.float32)


# ---------------------------------------------------------------- training


@dataclass
class TrainedSeed:
    seed: int
    config: ExperimentConfig
    world: SyntheticWorld
    train_pool: ClassPool
    codec: JsccCodec
    codec_no_af: JsccCodec
    head: TaplHead
    traces: dict = field(default_factory=dict)

    def stores(self) -> dict[str, ParameterStore]:
        return {
            "codec": self.codec.store("stage1", self.seed),
            "codec_no_af": self.codec_no_af.store("stage1", self.seed),
            "tapl": self.head.store("stage2", self.seed),
        }

    def digests(self) -> dict[str, str]:
        return {f"seed{self.seed}_{k}": s.digest() for k, s in self.stores().items()}


def make_world(cfg: ExperimentConfig, seed: int):
    world = SyntheticWorld(cfg.world(seed))
    return world, world.classes("train", cfg.train_classes)


def train_tokens(cfg: ExperimentConfig, world: SyntheticWorld, pool: ClassPool, seed: int) -> TokenBatch:
    return world.sample(pool, cfg.train_per_class, _rng(seed, "train"))


def test_split(cfg: ExperimentConfig, world: SyntheticWorld, seed: int):
    """Unseen classes from the training distribution, with their classnames."""
    pool = world.classes("test", cfg.test_classes)
    return world.sample(pool, cfg.test_per_class, _rng(seed, "test")), world.classnames(pool)


def heldout_tokens(cfg: ExperimentConfig, world: SyntheticWorld, pool: ClassPool, seed: int,
                   per_class: int = 100) -> TokenBatch:
    """Fresh samples of the training classes (never seen by the optimizer)."""
    return world.sample(pool, per_class, _rng(seed, "heldout"))


def _new_codec(cfg: ExperimentConfig, seed: int, data: TokenBatch, use_af: bool,
               channel_uses: int | None = None) -> JsccCodec:
    codec = init_codec(cfg.jscc(use_af, channel_uses), seed)
    if cfg.standardize:
        codec.fit_standardization(_tensor(data))
    return codec


def _new_head(cfg: ExperimentConfig, world: SyntheticWorld, seed: int) -> TaplHead:
    return TaplHead(cfg.tapl(), world.text_encoder, seed, world.context_init())


def train_seed(cfg: ExperimentConfig, seed: int, log_every: int = 0,
               channel_uses: int | None = None, with_no_af: bool = True) -> TrainedSeed:
    """Train the codec (stage 1), the prompt learner (stage 2) and the no-AF codec."""
    world, pool = make_world(cfg, seed)
    data = train_tokens(cfg, world, pool, seed)
    traces = {}
    codec = _new_codec(cfg, seed, data, True, channel_uses)
    traces["stage1"] = train_stage1(data, codec, cfg.stage1(seed), log_every)
    no_af = _new_codec(cfg, seed, data, False, channel_uses)
    if with_no_af:
        traces["stage1_no_af"] = train_stage1(data, no_af, cfg.stage1(seed, cfg.no_af_snr), log_every)
    head = _new_head(cfg, world, seed)
    traces["stage2"] = train_stage2(data, codec, head, world.classnames(pool), cfg.stage2(seed), log_every)
    return TrainedSeed(seed, cfg, world, pool, codec, no_af, head, traces)


def train_methods(cfg: ExperimentConfig, log_every: int = 0) -> list[TrainedSeed]:
    return [train_seed(cfg, s, log_every) for s in cfg.seeds]


def checkpoint_path(run_dir, seed: int, part: str) -> Path:
    return Path(run_dir) / f"seed{seed}_{part}.sckp"


def save_trained(trained: TrainedSeed, run_dir) -> dict[str, str]:
    """Write the three checkpoints and the loss traces; return name -> digest."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for part, store in trained.stores().items():
        save_checkpoint(store, checkpoint_path(run_dir, trained.seed, part))
    for name, trace in trained.traces.items():
        trace.write_csv(run_dir / f"seed{trained.seed}_{name}_loss.csv")
    return trained.digests()


def load_trained(cfg: ExperimentConfig, seed: int, run_dir) -> TrainedSeed:
    world, pool = make_world(cfg, seed)
    parts = {}
    for part in ("codec", "codec_no_af", "tapl"):
        path = checkpoint_path(run_dir, seed, part)
        if not path.exists():
            raise MissingCheckpointError(f"missing checkpoint {path}; run `exp train` first")
        parts[part] = load_checkpoint(path)
    codec = codec_from_store(cfg.jscc(True), parts["codec"])
    no_af = codec_from_store(cfg.jscc(False), parts["codec_no_af"])
    head = _new_head(cfg, world, seed)
    if parts["tapl"].config_hash != cfg.tapl().hash():
        raise FormatError(f"prompt-learner checkpoint for seed {seed} was written with another config")
    parts["tapl"].load_into(head)
    for m in (codec, no_af, head):
        m.eval()
    return TrainedSeed(seed, cfg, world, pool, codec, no_af, head, {})


# -------------------------------------------------------------- evaluation


def baseline_clip_ft(tokens, snr_db: float, generator: torch.Generator | None = None,
                     power: float = 1.0) -> torch.Tensor:
    """Uncoded transmission: pack to ``ceil(N/2)`` complex symbols, normalize, AWGN, unpack."""
    tokens = torch.as_tensor(tokens)
    n = tokens.shape[-1]
    reals = torch.nn.functional.pad(tokens, (0, n % 2))
    frame = channel.power_normalize(channel.pack_complex(reals), power)
    cfg = channel.ChannelConfig(snr_db=float(snr_db), power=power)
    received = channel.awgn_transmit(frame, cfg, generator if generator is not None else cfg.generator())
    return channel.unpack_complex(received)[..., :n]


def eval_generator(seed: int, snr_db: float) -> torch.Generator:
    return seeded_generator(seed, 0xE7A1, _snr_key(snr_db))


def received_tokens(trained: TrainedSeed, method: str, snr_db: float, tokens: torch.Tensor,
                    generator: torch.Generator | None = None) -> torch.Tensor:
    gen = generator if generator is not None else eval_generator(trained.seed, snr_db)
    with torch.no_grad():
        if method in ("semclip", "semclip_no_tapl"):
            return trained.codec.transmit(tokens, snr_db, gen)
        if method == "semclip_no_af":
            return trained.codec_no_af.transmit(tokens, snr_db, gen)
        if method == "clip_ft_direct":
            return baseline_clip_ft(tokens, snr_db, gen, trained.config.power)
        if method == REFERENCE:
            return tokens
    raise ValueError(f"unknown method {method!r}; have {list(ALL_METHODS)}")


def text_features(trained: TrainedSeed, method: str, s_hat: torch.Tensor, classes: ClassnameSet):
    """Per-sample prompts for ``semclip``, the frozen initial prompts otherwise."""
    with torch.no_grad():
        if method == "semclip":
            return trained.head(s_hat, classes)
        return frozen_prompt_features(trained.world.context_init(), classes, trained.world.text_encoder)


def _scores(trained, method, snr_db, data: TokenBatch, classes: ClassnameSet):
    if data.labels is None:
        raise ValueError("evaluation needs labeled tokens")
    if data.num_classes > len(classes):
        raise ValueError(f"labels reach {data.num_classes} classes but only {len(classes)} prompts given")
    s_hat = received_tokens(trained, method, snr_db, _tensor(data))
    return cosine_scores(s_hat, text_features(trained, method, s_hat, classes))


def top1(scores: torch.Tensor, labels) -> float:
    return float((scores.argmax(dim=1) == torch.as_tensor(labels)).double().mean())


def recall_at_1(scores: torch.Tensor, labels) -> float:
    """Text-to-image recall@1 over galleries holding one image per class.

    Gallery ``j`` takes the ``j``-th image of every class.  The query for
    class ``k`` succeeds when that class's image ranks first in the gallery
    (ties go to the lower gallery position).
    """
    labels = np.asarray(labels)
    g = scores.shape[1]
    members = [np.flatnonzero(labels == k) for k in range(g)]
    depth = min(len(m) for m in members)
    if depth == 0:
        raise ValueError("every class needs at least one image for retrieval")
    gallery = torch.as_tensor(np.stack([m[:depth] for m in members], axis=1))  # (depth, G)
    per_gallery = scores[gallery]  # (depth, image position, query class)
    best = per_gallery.argmax(dim=1)
    return float((best == torch.arange(g)).double().mean())


def eval_classification(trained: TrainedSeed, method: str, snr_db: float, data: TokenBatch,
                        classes: ClassnameSet, shuffle_labels: bool = False) -> float:
    labels = data.labels
    if shuffle_labels:
        labels = _rng(trained.seed, "shuffle").permutation(labels)
    return top1(_scores(trained, method, snr_db, data, classes), labels)


def eval_retrieval(trained: TrainedSeed, method: str, snr_db: float, data: TokenBatch,
                   classes: ClassnameSet) -> float:
    return recall_at_1(_scores(trained, method, snr_db, data, classes), data.labels)


def fidelity(trained: TrainedSeed, snr_db: float, data: TokenBatch) -> float:
    """Mean ``cos(s, s_hat)`` through the SNR-adaptive codec."""
    s = _tensor(data)
    s_hat = received_tokens(trained, "semclip", snr_db, s)
    return float(torch.nn.functional.cosine_similarity(s, s_hat, dim=1).mean())


def codec_loss(codec: JsccCodec, data: TokenBatch, snrs, scale: float, seed: int = 0,
               batch: int = 128) -> float:
    """Token contrastive loss on a seeded random batch, averaged over ``snrs``.

    Rows are drawn like training batches (uniformly, not in storage order,
    which groups samples by class).
    """
    rows = _rng(seed, "codec_loss").choice(len(data), size=min(batch, len(data)), replace=False)
    s = _tensor(data)[torch.as_tensor(np.sort(rows))]
    total = 0.0
    with torch.no_grad():
        for snr in snrs:
            s_hat = codec.transmit(s, snr, eval_generator(seed, snr))
            total += float(jscc_loss(codec.centered(s), codec.centered(s_hat), scale))
    return total / len(snrs)


# ----------------------------------------------------------------- reports


@dataclass(frozen=True)
class ReportRow:
    method: str
    snr_db: float
    metric: str
    value: float
    seed: int
    config_hash: str

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"{self.metric} value {self.value} outside [0, 1]")

    def key(self):
        return (ALL_METHODS.index(self.method), self.metric, self.seed, self.snr_db)


@dataclass(frozen=True)
class BandwidthRow:
    method: str
    channel_uses: int
    bandwidth_ratio: float
    snr_db: float
    metric: str
    value: float
    seed: int
    config_hash: str

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"value {self.value} outside [0, 1]")

    def key(self):
        return (ALL_METHODS.index(self.method), self.metric, self.seed, self.channel_uses)


@dataclass
class SweepResult:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (method, snr_db, seed, message)

    def extend(self, other: "SweepResult") -> None:
        self.rows.extend(other.rows)
        self.failures.extend(other.failures)

    @property
    def complete(self) -> bool:
        return not self.failures


def run_cells(trained_seeds, methods, snrs, metrics, data_for, config_hash: str) -> SweepResult:
    """Evaluate every ``(method, snr, seed)`` cell.

    ``data_for(trained)`` returns ``(tokens, classnames)``.  A cell that
    raises is recorded as a failure and the sweep carries on.
    """
    out = SweepResult()
    for trained in trained_seeds:
        data, classes = data_for(trained)
        for method in methods:
            for snr in snrs:
                try:
                    scores = _scores(trained, method, snr, data, classes)
                    values = {"top1": top1(scores, data.labels)}
                    if "recall@1" in metrics:
                        values["recall@1"] = recall_at_1(scores, data.labels)
                except Exception as e:  # noqa: BLE001 - recorded, not swallowed
                    out.failures.append((method, float(snr), trained.seed, f"{type(e).__name__}: {e}"))
                    continue
                for metric in metrics:
                    out.rows.append(ReportRow(method, float(snr), metric, values[metric],
                                              trained.seed, config_hash))
    out.rows.sort(key=ReportRow.key)
    return out


def snr_sweep(cfg: ExperimentConfig, trained_seeds, reference: bool = True) -> SweepResult:
    """All configured methods on unseen classes at every configured SNR."""
    methods = tuple(cfg.methods) + ((REFERENCE,) if reference else ())
    return run_cells(trained_seeds, methods, cfg.snrs, cfg.metrics,
                     lambda t: test_split(cfg, t.world, t.seed), cfg.hash())


def ablation_suite(cfg: ExperimentConfig, trained_seeds) -> SweepResult:
    return run_cells(trained_seeds, ABLATION, cfg.snrs, ("top1",),
                     lambda t: test_split(cfg, t.world, t.seed), cfg.hash())


def check_disjoint(train: ClassPool, other: ClassPool, tol: float = 1e-6) -> None:
    """Reject an evaluation class set that shares a name or a center with training."""
    shared = sorted(set(train.names) & set(other.names))
    if shared:
        raise ClassOverlapError(f"evaluation classes overlap training classes: {shared[:5]}")
    a = train.centers / np.linalg.norm(train.centers, axis=1, keepdims=True)
    b = other.centers / np.linalg.norm(other.centers, axis=1, keepdims=True)
    close = np.argwhere(a @ b.T > 1 - tol)
    if len(close):
        i, j = close[0]
        raise ClassOverlapError(f"evaluation class {other.names[j]} duplicates training class {train.names[i]}")


def cross_split(cfg: ExperimentConfig, trained: TrainedSeed, split: str | None = None):
    split = split or cfg.cross_split
    pool = trained.world.classes(split, cfg.cross_classes)
    check_disjoint(trained.train_pool, pool)
    data = trained.world.sample(pool, cfg.cross_per_class, _rng(trained.seed, split), spread=cfg.cross_spread)
    return data, trained.world.classnames(pool)


def cross_dataset_eval(cfg: ExperimentConfig, trained_seeds, split: str | None = None) -> SweepResult:
    """Zero-shot transfer to a disjoint class set with a different spread; no retraining."""
    for t in trained_seeds:
        cross_split(cfg, t, split)  # overlap is a hard error, not a failed cell
    return run_cells(trained_seeds, tuple(cfg.methods), cfg.cross_snrs, ("top1",),
                     lambda t: cross_split(cfg, t, split), cfg.hash())


def bandwidth_sweep(cfg: ExperimentConfig, trained_seeds=None, log_every: int = 0) -> list[BandwidthRow]:
    """Top-1 accuracy vs channel uses at ``cfg.bandwidth_snr``.

    SemCLIP is retrained (both stages) for every ``L``; models already
    trained at ``cfg.channel_uses`` are reused.  Uncoded transmission has a
    single operating point at ``ceil(N/2)`` symbols.
    """
    spec = ImageSpec.parse(cfg.image_spec)
    known = {t.seed: t for t in (trained_seeds or [])}
    snr = cfg.bandwidth_snr
    rows = []
    for seed in cfg.seeds:
        for uses in cfg.bandwidth_uses:
            if uses == cfg.channel_uses and seed in known:
                trained = known[seed]
            else:
                trained = train_seed(cfg, seed, log_every, channel_uses=uses, with_no_af=False)
            data, classes = test_split(cfg, trained.world, seed)
            acc = eval_classification(trained, "semclip", snr, data, classes)
            rows.append(BandwidthRow("semclip", uses, channel.bandwidth_ratio(uses, spec), snr,
                                     "top1", acc, seed, cfg.hash()))
        uncoded = math.ceil(cfg.token_dim / 2)
        acc = eval_classification(trained, "clip_ft_direct", snr, data, classes)
        rows.append(BandwidthRow("clip_ft_direct", uncoded, channel.bandwidth_ratio(uncoded, spec), snr,
                                 "top1", acc, seed, cfg.hash()))
    rows.sort(key=BandwidthRow.key)
    return rows


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _write(rows, columns, path, config_hash: str, notes=(), failures=()) -> None:
    if not rows:
        raise ValueError("refusing to write an empty report")
    lines = [f"# {n}" for n in notes]
    lines.append(",".join(columns))
    for row in sorted(rows, key=lambda r: r.key()):
        lines.append(",".join(_cell(getattr(row, c)) for c in columns))
    for method, snr, seed, message in failures:
        lines.append(f"# failed: method={method} snr_db={snr!r} seed={seed}: {message}")
    lines.append(f"# config_hash={config_hash}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_report(rows, path, config_hash: str | None = None, failures=(), scale: float | None = None) -> None:
    """CSV with fixed columns, ``#`` notes on top and a config-hash footer."""
    config_hash = config_hash or (rows[0].config_hash if rows else "")
    notes = ("semclip desk-scale report",) + REPORT_NOTES
    if scale is not None:
        notes += (f"training similarity scale: {scale!r}",)
    _write(rows, REPORT_COLUMNS, path, config_hash, notes, failures)


def write_bandwidth_report(rows, path, config_hash: str | None = None) -> None:
    config_hash = config_hash or (rows[0].config_hash if rows else "")
    _write(rows, BANDWIDTH_COLUMNS, path, config_hash,
           ("semclip bandwidth sweep; bandwidth_ratio = L / (C*W*H)",) + REPORT_NOTES[:1])


def _read(path, columns, row_type):
    rows, footer, header_seen = [], None, False
    types = row_type.__annotations__
    for line in Path(path).read_text().splitlines():
        if line.startswith("# config_hash="):
            footer = line.split("=", 1)[1]
            continue
        if not line or line.startswith("#"):
            continue
        cells = line.split(",")
        if not header_seen:
            if tuple(cells) != columns:
                raise FormatError(f"{path}: unexpected header {line!r}")
            header_seen = True
            continue
        if len(cells) != len(columns):
            raise FormatError(f"{path}: row has {len(cells)} cells, want {len(columns)}")
        values = {}
        for c, text in zip(columns, cells):
            kind = types[c]
            values[c] = float(text) if kind == "float" else int(text) if kind == "int" else text
        rows.append(row_type(**values))
    if footer is None:
        raise FormatError(f"{path}: missing config_hash footer")
    return rows, footer


def parse_report(path):
    """Rows and footer hash of a report written by :func:`write_report`."""
    return _read(path, REPORT_COLUMNS, ReportRow)


def parse_bandwidth_report(path):
    return _read(path, BANDWIDTH_COLUMNS, BandwidthRow)


def summarize(rows) -> dict:
    """``(method, metric, x) -> (mean, std, n)`` over seeds; ``x`` is SNR or channel uses."""
    groups = {}
    for r in rows:
        x = r.channel_uses if isinstance(r, BandwidthRow) else r.snr_db
        groups.setdefault((r.method, r.metric, x), []).append(r.value)
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in sorted(groups.items())}
