"""Desk-scale stand-in for a pretrained vision-language model.

The world fixes everything a frozen foundation model would provide:

* image tokens ``s = m + u_k + eps``: a shared image-feature mean ``m``
  plus a unit class center ``u_k`` and within-class perturbation, both
  confined to a ``subspace_dim``-dimensional semantic subspace;
* a frozen toy text encoder and "pretrained" word embeddings for the
  context phrase (``context_len`` vectors);
* classname embeddings solved so that the plain prompt ``[e_1..e_M, c_k]``
  encodes to ``u_k + text_offset * m_hat + gap``, where ``gap`` is a fixed
  vector inside the semantic subspace (the text/image misalignment that
  learned prompts can remove).

Class sets are drawn per named split, so splits never share classes.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
import torch

from .tapl import ClassnameSet, ToyTextEncoder
from .tokens import TokenBatch, draw_centers, random_basis, sample_around


@dataclass(frozen=True)
class WorldConfig:
    token_dim: int = 64
    embed_dim: int = 64
    context_len: int = 4
    subspace_dim: int = 8
    spread: float = 0.3
    image_mean: float = 1.0
    text_offset: float = 1.0
    text_gap: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.subspace_dim < self.token_dim:
            raise ValueError("subspace_dim must lie in [1, token_dim)")
        if self.embed_dim < self.token_dim:
            raise ValueError("embed_dim must be >= token_dim so prompts can reach every feature")
        if self.spread < 0 or self.image_mean < 0 or self.text_gap < 0:
            raise ValueError("spread, image_mean and text_gap must be non-negative")


@dataclass
class ClassPool:
    names: list
    centers: np.ndarray
    split: str

    def __len__(self):
        return len(self.names)


class SyntheticWorld:
    def __init__(self, config: WorldConfig):
        self.config = config
        c = config
        rng = np.random.default_rng([c.seed, 0x5E11])
        full = random_basis(c.token_dim, c.subspace_dim + 1, rng)
        self.basis = full[:, :c.subspace_dim]
        self.mean_dir = full[:, c.subspace_dim]
        self.image_mean = self.mean_dir * c.image_mean
        gap = self.basis @ rng.standard_normal(c.subspace_dim)
        self.gap = gap / np.linalg.norm(gap) * c.text_gap
        self.text_encoder = ToyTextEncoder(c.embed_dim, c.token_dim, seed=c.seed)
        # stand-in for the word embeddings of the context phrase
        self.context_words = (rng.standard_normal((c.context_len, c.embed_dim)) * 0.5).astype(np.float32)

    def classes(self, split: str, count: int) -> ClassPool:
        rng = np.random.default_rng([self.config.seed, zlib.crc32(split.encode())])
        centers = draw_centers(count, self.config.token_dim, rng, self.basis)
        return ClassPool([f"{split}-{k:03d}" for k in range(count)], centers, split)

    def prompt_target(self, pool: ClassPool) -> np.ndarray:
        """Text features the plain prompt encodes to, one row per class."""
        return pool.centers + self.config.text_offset * self.mean_dir + self.gap

    def classnames(self, pool: ClassPool) -> ClassnameSet:
        c = self.config
        a = self.text_encoder.weight.double().numpy()
        b = self.text_encoder.bias.double().numpy()
        target = self.prompt_target(pool)
        pooled = np.linalg.lstsq(a, (target - b).T, rcond=None)[0].T
        emb = (c.context_len + 1) * pooled - self.context_words.astype(np.float64).sum(axis=0)
        return ClassnameSet(pool.names, [e[None].astype(np.float32) for e in emb])

    def sample(self, pool: ClassPool, per_class: int, rng: np.random.Generator,
               spread: float | None = None) -> TokenBatch:
        spread = self.config.spread if spread is None else spread
        batch = sample_around(pool.centers, per_class, spread, rng, self.basis)
        return TokenBatch(batch.values + self.image_mean.astype(np.float32), batch.labels)

    def context_init(self) -> torch.Tensor:
        return torch.from_numpy(self.context_words.copy())
