"""Power-constrained complex AWGN channel.

Frames are complex torch tensors of shape ``(..., L)``; every function
operates per item along the last axis.  Noise is drawn from an explicit
``torch.Generator`` so sweeps can hand each transmission its own stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .tokens import ImageSpec

CHANNEL_KINDS = ("awgn",)


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    power: float = 1.0
    seed: int = 0
    kind: str = "awgn"

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError("channel power must be positive")
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unsupported channel kind {self.kind!r}; have {CHANNEL_KINDS}")

    @property
    def noise_variance(self) -> float:
        return snr_to_noise_variance(self.snr_db, self.power)

    def generator(self) -> torch.Generator:
        return torch.Generator().manual_seed(self.seed)


def pack_complex(reals: torch.Tensor) -> torch.Tensor:
    """``[a_1..a_L, b_1..b_L] -> [a_1 + i b_1, ..., a_L + i b_L]``."""
    reals = torch.as_tensor(reals)
    if reals.shape[-1] % 2:
        raise ValueError(f"need an even number of reals, got {reals.shape[-1]}")
    half = reals.shape[-1] // 2
    return torch.complex(reals[..., :half], reals[..., half:])


def unpack_complex(frame: torch.Tensor) -> torch.Tensor:
    return torch.cat([frame.real, frame.imag], dim=-1)


def frame_power(frame: torch.Tensor) -> torch.Tensor:
    """Per-item average symbol power ``||z||^2 / L``."""
    return (frame.real ** 2 + frame.imag ** 2).mean(dim=-1)


def power_normalize(frame: torch.Tensor, power: float = 1.0) -> torch.Tensor:
    """Rescale each item to average symbol power ``power``."""
    length = frame.shape[-1]
    norm = torch.sqrt((frame.real ** 2 + frame.imag ** 2).sum(dim=-1, keepdim=True))
    if torch.any(norm == 0):
        raise ValueError("cannot power-normalize an all-zero frame")
    return frame * (math.sqrt(length * power) / norm)


def snr_to_noise_variance(snr_db: float, power: float = 1.0) -> float:
    if not power > 0:
        raise ValueError("power must be positive")
    return power * 10.0 ** (-snr_db / 10.0)


def complex_noise(shape, variance: float, generator: torch.Generator | None,
                  dtype=torch.float32) -> torch.Tensor:
    std = math.sqrt(variance / 2.0)
    re = torch.randn(shape, generator=generator, dtype=dtype)
    im = torch.randn(shape, generator=generator, dtype=dtype)
    return torch.complex(re * std, im * std)


def awgn_transmit(frame: torch.Tensor, cfg: ChannelConfig,
                  generator: torch.Generator | None = None) -> torch.Tensor:
    """``z_hat = z + n`` with ``n ~ CN(0, sigma^2)`` i.i.d. per symbol.

    Without an explicit ``generator`` a fresh one seeded from ``cfg.seed``
    is used, so the call is reproducible either way.
    """
    variance = cfg.noise_variance
    if variance == 0:
        return frame
    if generator is None:
        generator = cfg.generator()
    real_dtype = frame.real.dtype
    return frame + complex_noise(frame.shape, variance, generator, real_dtype)


def bandwidth_ratio(channel_uses: int, spec: ImageSpec) -> float:
    """``R = L / (C * W * H)``."""
    if channel_uses <= 0:
        raise ValueError("channel_uses must be positive")
    return channel_uses / (spec.channels * spec.width * spec.height)


def probe(snr_db: float, symbols: int, seed: int = 0, power: float = 1.0) -> dict:
    """Push ``symbols`` random unit-power symbols through the channel and measure it."""
    gen = torch.Generator().manual_seed(seed)
    z = power_normalize(complex_noise((1, symbols), 1.0, gen, torch.float64), power)
    cfg = ChannelConfig(snr_db=snr_db, power=power, seed=seed)
    noise = awgn_transmit(z, cfg, gen) - z
    signal_energy = float((z.abs() ** 2).sum())
    noise_energy = float((noise.abs() ** 2).sum())
    return {
        "snr_db": snr_db,
        "symbols": symbols,
        "power": power,
        "seed": seed,
        "noise_variance": cfg.noise_variance,
        "measured_signal_power": signal_energy / symbols,
        "measured_noise_variance": noise_energy / symbols,
        "measured_snr_db": 10 * math.log10(signal_energy / noise_energy) if noise_energy else math.inf,
        "noise_mean_real": float(noise.real.mean()),
        "noise_mean_imag": float(noise.imag.mean()),
    }
