"""Transmission-aware prompt learning and the similarity-based task performer.

A meta-network maps every decoded token to a conditional vector ``pi``
which is added to each of the ``M`` learnable context embeddings.  The
shifted context is concatenated with a classname embedding sequence and
fed to a frozen text encoder, giving per-sample text features of shape
``(B, G, N)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import ParameterStore
from .errors import ShapeError
from .util import init_linear, seeded_generator, stable_hash


@dataclass(frozen=True)
class TaplConfig:
    token_dim: int = 768
    embed_dim: int = 768
    context_len: int = 4
    meta_hidden: int | None = None
    use_meta: bool = True
    pooled_pi: bool = False
    context_init_std: float = 0.02

    @property
    def hidden(self) -> int:
        return self.meta_hidden if self.meta_hidden is not None else max(self.token_dim // 16, 8)

    def hash(self) -> str:
        return stable_hash(self)


class ToyTextEncoder(nn.Module):
    """Frozen stand-in text encoder: ``A @ masked_mean(seq) + b``.

    Mean pooling makes it blind to token order; that is accepted for the
    toy setting.
    """

    def __init__(self, embed_dim: int, out_dim: int, seed: int = 0, weight=None, bias=None):
        super().__init__()
        gen = seeded_generator(seed, 0x7E47)
        if weight is None:
            weight = torch.randn(out_dim, embed_dim, generator=gen) / embed_dim ** 0.5
        if bias is None:
            bias = torch.randn(out_dim, generator=gen) * 0.1
        self.register_buffer("weight", torch.as_tensor(weight, dtype=torch.float32), persistent=False)
        self.register_buffer("bias", torch.as_tensor(bias, dtype=torch.float32), persistent=False)
        self.embed_dim, self.out_dim = embed_dim, out_dim

    def forward(self, seq, mask=None):
        if seq.shape[-1] != self.embed_dim:
            raise ShapeError(f"text encoder expects dim {self.embed_dim}, got {seq.shape[-1]}")
        if seq.shape[-2] == 0:
            raise ValueError("empty embedding sequence")
        if mask is None:
            pooled = seq.mean(dim=-2)
        else:
            mask = mask.to(seq.dtype)
            count = mask.sum(dim=-1, keepdim=True)
            if torch.any(count == 0):
                raise ValueError("empty embedding sequence")
            pooled = (seq * mask[..., None]).sum(dim=-2) / count
        return pooled @ self.weight.T + self.bias


def toy_text_encoder(seq, encoder: ToyTextEncoder, mask=None):
    return encoder(torch.as_tensor(seq, dtype=encoder.weight.dtype), mask)


class MetaNet(nn.Module):
    """Two-layer MLP from decoded token (N) to conditional vector (D)."""

    def __init__(self, token_dim: int, embed_dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(token_dim, hidden)
        self.fc2 = nn.Linear(hidden, embed_dim)
        self.token_dim = token_dim

    def forward(self, s_hat):
        if s_hat.shape[-1] != self.token_dim:
            raise ShapeError(f"meta-net expects dim {self.token_dim}, got {s_hat.shape[-1]}")
        return self.fc2(torch.relu(self.fc1(s_hat)))


def meta_net_forward(s_hat, net: MetaNet):
    return net(s_hat)


class ClassnameSet:
    """Per-class embedding sequences, padded to a common length."""

    def __init__(self, names: Sequence[str], embeddings: Sequence):
        if len(names) != len(embeddings):
            raise ValueError("one embedding sequence per classname")
        if len(names) < 2:
            raise ValueError("need at least two classes")
        seqs = [torch.as_tensor(np.asarray(e), dtype=torch.float32) for e in embeddings]
        seqs = [s[None] if s.ndim == 1 else s for s in seqs]
        dims = {s.shape[-1] for s in seqs}
        if len(dims) != 1:
            raise ShapeError(f"classname embeddings disagree on dimension: {sorted(dims)}")
        if any(len(s) == 0 for s in seqs):
            raise ValueError("empty classname embedding")
        longest = max(len(s) for s in seqs)
        self.names = list(names)
        self.embed_dim = dims.pop()
        self.embeddings = torch.zeros(len(seqs), longest, self.embed_dim)
        self.mask = torch.zeros(len(seqs), longest, dtype=torch.bool)
        for k, s in enumerate(seqs):
            self.embeddings[k, :len(s)] = s
            self.mask[k, :len(s)] = True

    def __len__(self):
        return len(self.names)

    def subset(self, index) -> "ClassnameSet":
        index = list(index)
        seqs = [self.embeddings[k, self.mask[k]] for k in index]
        return ClassnameSet([self.names[k] for k in index], seqs)


def build_text_features(pi, context, classes: ClassnameSet, text_encoder):
    """Encode ``[(pi+e_1), ..., (pi+e_M), c_k...]`` for every sample and class.

    ``pi`` is ``(B, D)`` (or ``(D,)``); returns ``(B, G, N)``.
    """
    if pi.ndim == 1:
        pi = pi[None]
    if pi.shape[-1] != context.shape[-1] or classes.embed_dim != context.shape[-1]:
        raise ShapeError("conditional vector, context and classnames must share the embedding dim")
    b, g = pi.shape[0], len(classes)
    m, s = context.shape[0], classes.embeddings.shape[1]
    dtype = context.dtype
    prefix = (pi[:, None, :] + context[None]).unsqueeze(1).expand(b, g, m, -1)
    names = classes.embeddings.to(dtype).unsqueeze(0).expand(b, g, s, -1)
    seq = torch.cat([prefix, names], dim=2)
    mask = torch.cat([torch.ones(g, m, dtype=torch.bool), classes.mask], dim=1)
    return text_encoder(seq, mask.expand(b, g, m + s))


def cosine_scores(s_hat, t):
    """Cosine similarity of each ``s_hat[b]`` with each ``t[k]`` (or ``t[b, k]``)."""
    s_norm = s_hat.norm(dim=-1)
    t_norm = t.norm(dim=-1)
    if torch.any(s_norm == 0) or torch.any(t_norm == 0):
        raise ValueError("zero-norm feature row in cosine similarity")
    s_unit = s_hat / s_norm[..., None]
    t_unit = t / t_norm[..., None]
    if t.ndim == 2:
        return s_unit @ t_unit.T
    return torch.einsum("bn,bgn->bg", s_unit, t_unit)


def task_probabilities(s_hat, t, temperature: float = 1.0):
    """Softmax over classes of ``cos(s_hat, t) / temperature``."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if s_hat.shape[-1] != t.shape[-1]:
        raise ShapeError(f"token dim {s_hat.shape[-1]} != text feature dim {t.shape[-1]}")
    return torch.softmax(cosine_scores(s_hat, t) / temperature, dim=-1)


def classify(s_hat, t, temperature: float = 1.0):
    if len(s_hat) == 0:
        raise ValueError("empty batch")
    return task_probabilities(s_hat, t, temperature).argmax(dim=-1)


def retrieve(query, s_hat):
    """Image indices sorted by descending ``cos(query, s_hat[b])``; ties keep lower index first.

    ``query`` may be ``(N,)`` or per-image ``(B, N)`` (text features
    conditioned on each candidate).
    """
    if len(s_hat) == 0:
        raise ValueError("empty batch")
    if query.ndim == 1:
        scores = cosine_scores(s_hat, query[None])[:, 0]
    else:
        scores = cosine_scores(s_hat, query[:, None, :])[:, 0]
    return torch.sort(-scores, stable=True).indices


def init_context(context_len: int, embed_dim: int, seed: int, std: float = 0.02,
                 init_embeddings=None) -> torch.Tensor:
    """Context vectors from given word embeddings, else seeded N(0, std^2)."""
    if init_embeddings is not None:
        ctx = torch.as_tensor(np.asarray(init_embeddings), dtype=torch.float32).clone()
        if ctx.shape != (context_len, embed_dim):
            raise ShapeError(f"context init has shape {tuple(ctx.shape)}, want ({context_len}, {embed_dim})")
        return ctx
    return torch.randn(context_len, embed_dim, generator=seeded_generator(seed, 0xC0)) * std


class TaplHead(nn.Module):
    """Meta-net + learnable context around a frozen text encoder."""

    def __init__(self, config: TaplConfig, text_encoder: nn.Module, seed: int = 0, init_embeddings=None):
        super().__init__()
        if config.context_len < 1:
            raise ValueError("context length must be at least 1")
        self.config = config
        self.meta_net = MetaNet(config.token_dim, config.embed_dim, config.hidden)
        gen = seeded_generator(seed, 0x3E7A)
        for m in self.meta_net.modules():
            if isinstance(m, nn.Linear):
                init_linear(m, gen)
        self.context = nn.Parameter(init_context(config.context_len, config.embed_dim, seed,
                                                 config.context_init_std, init_embeddings))
        self.text_encoder = text_encoder
        for p in self.text_encoder.parameters():
            p.requires_grad_(False)

    def conditional(self, s_hat):
        if not self.config.use_meta:
            return torch.zeros(len(s_hat), self.config.embed_dim, dtype=self.context.dtype)
        pi = self.meta_net(s_hat)
        if self.config.pooled_pi:
            pi = pi.mean(dim=0, keepdim=True).expand_as(pi)
        return pi

    def forward(self, s_hat, classes: ClassnameSet):
        return build_text_features(self.conditional(s_hat), self.context, classes, self.text_encoder)

    def store(self, stage: str = "", seed: int = 0) -> ParameterStore:
        return ParameterStore.from_module(self, self.config.hash(), stage, seed)


def frozen_prompt_features(context, classes: ClassnameSet, text_encoder):
    """Unconditional prompt features ``T([e_1..e_M, c_k])``, shape ``(G, N)``."""
    pi = torch.zeros(1, context.shape[-1], dtype=context.dtype)
    return build_text_features(pi, context, classes, text_encoder)[0]
