"""Contrastive losses, SNR sampling and the two training stages."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import TrainingDivergence
from .jscc import JsccCodec
from .tapl import ClassnameSet, TaplHead, cosine_scores
from .util import seeded_generator


@dataclass(frozen=True)
class TrainConfig:
    snr_range_db: tuple[float, float] = (-10.0, 10.0)
    batch_size: int = 128
    lr: float = 1e-3
    steps: int = 2000
    seed: int = 0
    scale: float = 100.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        lo, hi = self.snr_range_db
        if lo > hi:
            raise ValueError(f"SNR range lower bound {lo} exceeds upper bound {hi}")
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.steps < 0 or self.lr < 0:
            raise ValueError("steps and lr must be non-negative")


@dataclass
class TrainResult:
    trace: list = field(default_factory=list)  # (step, loss, snr_db)

    @property
    def losses(self):
        return [row[1] for row in self.trace]

    def write_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("step,loss,snr_db\n")
            for step, loss, snr in self.trace:
                f.write(f"{step},{loss!r},{snr!r}\n")


def contrastive_ce(sim, labels):
    """Mean softmax cross-entropy of each row of ``sim`` against its label."""
    labels = torch.as_tensor(labels, dtype=torch.long)
    if sim.ndim != 2 or labels.shape != (sim.shape[0],):
        raise ValueError("need a 2-D similarity matrix and one label per row")
    if labels.numel() and (labels.min() < 0 or labels.max() >= sim.shape[1]):
        raise ValueError(f"labels must lie in [0, {sim.shape[1]})")
    picked = sim.gather(1, labels[:, None])[:, 0]
    return (torch.logsumexp(sim, dim=1) - picked).mean()


def jscc_loss(s, s_hat, scale: float = 100.0):
    """Symmetric contrastive loss between transmitted and received tokens."""
    if s.shape != s_hat.shape or s.shape[0] < 2:
        raise ValueError("need matching (B, N) batches with B >= 2")
    sim = scale * cosine_scores(s, s_hat)
    labels = torch.arange(len(s))
    return (contrastive_ce(sim, labels) + contrastive_ce(sim.T, labels)) / 2


def tapl_loss(s_hat, t, labels, scale: float = 100.0):
    """Image->text and text->image cross-entropy, averaged.

    Image->text: row ``b`` scores ``s_hat[b]`` against all ``G`` prompts,
    target ``labels[b]``.  Text->image: the ground-truth prompt of sample
    ``b`` is scored against every image in the batch, target ``b``.  ``t``
    is ``(G, N)`` or per-sample ``(B, G, N)``.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    b = len(s_hat)
    if t.ndim == 2:
        t = t.unsqueeze(0).expand(b, -1, -1)
    if labels.shape != (b,):
        raise ValueError("one label per sample")
    if labels.min() < 0 or labels.max() >= t.shape[1]:
        raise ValueError(f"labels must lie in [0, {t.shape[1]})")
    i2t = scale * cosine_scores(s_hat, t)
    gt_text = t[torch.arange(b), labels]
    t2i = scale * cosine_scores(gt_text, s_hat)
    return (contrastive_ce(i2t, labels) + contrastive_ce(t2i, torch.arange(b))) / 2


def sample_snr(cfg: TrainConfig, generator: torch.Generator) -> float:
    lo, hi = cfg.snr_range_db
    u = float(torch.rand((), generator=generator, dtype=torch.float64))
    return lo + (hi - lo) * u


def _check_finite(loss, step, snr):
    if not math.isfinite(loss.item()):
        raise TrainingDivergence(f"non-finite loss {loss.item()} at step {step} (snr {snr:.3f} dB)")


def _as_tensor(tokens):
    values = getattr(tokens, "values", tokens)
    return torch.as_tensor(np.asarray(values), dtype=torch.float32)


def train_stage1(tokens, codec: JsccCodec, cfg: TrainConfig, log_every: int = 0) -> TrainResult:
    """Train the JSCC pair with the symmetric token contrastive loss.

    Each step draws a minibatch and one SNR, passes the batch through
    encode -> AWGN -> decode, and takes an Adam step.  Noise is resampled
    every step and treated as a constant in the backward pass.  A
    standardizing codec is scored on centered tokens, so the shared mean
    (which costs no channel power) cannot be traded for contrast.
    """
    data = _as_tensor(tokens)
    gen = seeded_generator(cfg.seed, 1)
    opt = torch.optim.Adam(codec.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    result = TrainResult()
    codec.train()
    for step in range(cfg.steps):
        idx = torch.randperm(len(data), generator=gen)[:cfg.batch_size]
        snr = sample_snr(cfg, gen)
        s = data[idx]
        s_hat = codec.transmit(s, snr, gen)
        loss = jscc_loss(codec.centered(s), codec.centered(s_hat), cfg.scale)
        _check_finite(loss, step, snr)
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.trace.append((step, loss.item(), snr))
        if log_every and step % log_every == 0:
            print(f"stage1 step {step:5d}  snr {snr:+6.2f} dB  loss {loss.item():.4f}")
    codec.eval()
    return result


def train_stage2(tokens, codec: JsccCodec, head: TaplHead, classes: ClassnameSet,
                 cfg: TrainConfig, log_every: int = 0) -> TrainResult:
    """Train meta-net and context with the codec and encoders frozen."""
    data = _as_tensor(tokens)
    labels = torch.as_tensor(tokens.labels, dtype=torch.long)
    gen = seeded_generator(cfg.seed, 2)
    flags = [p.requires_grad for p in codec.parameters()]
    codec.requires_grad_(False)
    params = [p for p in head.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    result = TrainResult()
    for step in range(cfg.steps):
        idx = torch.randperm(len(data), generator=gen)[:cfg.batch_size]
        snr = sample_snr(cfg, gen)
        with torch.no_grad():
            s_hat = codec.transmit(data[idx], snr, gen)
        loss = tapl_loss(s_hat, head(s_hat, classes), labels[idx], cfg.scale)
        _check_finite(loss, step, snr)
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.trace.append((step, loss.item(), snr))
        if log_every and step % log_every == 0:
            print(f"stage2 step {step:5d}  snr {snr:+6.2f} dB  loss {loss.item():.4f}")
    for p, flag in zip(codec.parameters(), flags):
        p.requires_grad_(flag)
    return result
