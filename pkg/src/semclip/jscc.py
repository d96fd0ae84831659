"""SNR-adaptive JSCC codec for token vectors.

Encoder and decoder are stacks of dense layers; after each hidden dense
layer (and its nonlinearity) an attention-feature (AF) module rescales the
features with a sigmoid mask computed from ``concat(feature, snr)``.

With ``standardize`` on, the codec subtracts a fixed token mean before
encoding and, after decoding, rescales the output to a fixed norm and adds
the mean back.  Both statistics come from training tokens
(:meth:`JsccCodec.fit_standardization`) and are stored with the weights.
Channel power is then spent only on what varies between tokens.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from . import channel
from .checkpoint import ParameterStore, load_checkpoint, save_checkpoint
from .errors import ConfigHashMismatch, ShapeError
from .util import activation, init_linear, seeded_generator, stable_hash


@dataclass(frozen=True)
class JsccConfig:
    input_dim: int = 768
    channel_uses: int = 384
    encoder_widths: tuple[int, ...] | None = None
    decoder_widths: tuple[int, ...] | None = None
    activation: str = "relu"
    af_hidden_ratio: float = 0.25
    af_min_hidden: int = 16
    snr_scale: float = 1 / 20
    use_af: bool = True
    power: float = 1.0
    standardize: bool = False

    def __post_init__(self):
        if self.input_dim < 1 or self.channel_uses < 1:
            raise ValueError("input_dim and channel_uses must be positive")
        activation(self.activation)

    @property
    def enc_widths(self) -> tuple[int, ...]:
        return self.encoder_widths if self.encoder_widths is not None else (self.input_dim,) * 2

    @property
    def dec_widths(self) -> tuple[int, ...]:
        return self.decoder_widths if self.decoder_widths is not None else (self.input_dim,) * 2

    def af_hidden(self, feature_dim: int) -> int:
        return max(int(feature_dim * self.af_hidden_ratio), self.af_min_hidden)

    def hash(self) -> str:
        return stable_hash(self)


def _snr_column(snr_db, batch: int, like: torch.Tensor) -> torch.Tensor:
    snr = torch.as_tensor(snr_db, dtype=like.dtype)
    if snr.ndim == 0:
        return snr.expand(batch, 1)
    if snr.shape != (batch,):
        raise ShapeError(f"per-item SNR must have shape ({batch},), got {tuple(snr.shape)}")
    return snr[:, None]


def af_forward(feature, snr_db, w1, b1, w2, b2, snr_scale: float = 1 / 20, act: str = "relu"):
    """``feature * sigmoid(W2 act(W1 [feature, snr*scale] + b1) + b2)``.

    ``feature`` is ``(B, F)``; ``w1`` is ``(H, F+1)`` and ``w2`` is ``(F, H)``
    in ``nn.Linear`` layout.
    """
    if feature.ndim != 2 or feature.shape[1] + 1 != w1.shape[1]:
        raise ShapeError(f"AF input width {feature.shape[-1]} does not match weights {tuple(w1.shape)}")
    snr = _snr_column(snr_db, feature.shape[0], feature) * snr_scale
    h = activation(act)(torch.cat([feature, snr], dim=1) @ w1.T + b1)
    mask = torch.sigmoid(h @ w2.T + b2)
    return feature * mask


class AFModule(nn.Module):
    def __init__(self, feature_dim: int, hidden_dim: int, snr_scale: float = 1 / 20, act: str = "relu"):
        super().__init__()
        if hidden_dim < 1:
            raise ValueError("AF hidden width must be at least 1")
        self.fc1 = nn.Linear(feature_dim + 1, hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, feature_dim)
        self.snr_scale = snr_scale
        self.act = act

    def forward(self, x, snr_db):
        return af_forward(x, snr_db, self.fc1.weight, self.fc1.bias,
                          self.fc2.weight, self.fc2.bias, self.snr_scale, self.act)


class _Stack(nn.Module):
    """Dense(+act+AF) blocks followed by a plain output dense layer."""

    def __init__(self, in_dim: int, widths, out_dim: int, cfg: JsccConfig):
        super().__init__()
        self.dense = nn.ModuleList()
        self.af = nn.ModuleList()
        prev = in_dim
        for w in widths:
            self.dense.append(nn.Linear(prev, w))
            if cfg.use_af:
                self.af.append(AFModule(w, cfg.af_hidden(w), cfg.snr_scale, cfg.activation))
            prev = w
        self.out = nn.Linear(prev, out_dim)
        self.in_dim = in_dim
        self._act = activation(cfg.activation)

    def forward(self, x, snr_db):
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"expected width {self.in_dim}, got {x.shape[-1]}")
        for i, layer in enumerate(self.dense):
            x = self._act(layer(x))
            if len(self.af):
                x = self.af[i](x, snr_db)
        return self.out(x)


class JsccCodec(nn.Module):
    def __init__(self, config: JsccConfig):
        super().__init__()
        self.config = config
        n, l2 = config.input_dim, 2 * config.channel_uses
        self.encoder = _Stack(n, config.enc_widths, l2, config)
        self.decoder = _Stack(l2, config.dec_widths, n, config)
        if config.standardize:
            self.register_buffer("token_mean", torch.zeros(n))
            self.register_buffer("token_norm", torch.ones(()))

    @torch.no_grad()
    def fit_standardization(self, tokens) -> None:
        """Set the token mean and mean centered norm from ``(B, N)`` tokens."""
        if not self.config.standardize:
            raise ValueError("codec was built with standardize=False")
        x = torch.as_tensor(tokens, dtype=self.token_mean.dtype)
        if x.ndim != 2 or x.shape[1] != self.config.input_dim or len(x) < 2:
            raise ShapeError(f"need (B>=2, {self.config.input_dim}) tokens, got {tuple(x.shape)}")
        mean = x.mean(dim=0)
        norm = (x - mean).norm(dim=1).mean()
        if not norm > 0:
            raise ValueError("tokens are all identical; nothing to transmit")
        self.token_mean.copy_(mean)
        self.token_norm.copy_(norm)

    def centered(self, tokens):
        """Tokens as the codec sees them: mean removed when standardizing."""
        return tokens - self.token_mean if self.config.standardize else tokens

    def encoder_activations(self, tokens, snr_db):
        """Encoder output before complex packing and power normalization."""
        return self.encoder(self.centered(tokens), snr_db)

    def encode(self, tokens, snr_db):
        """``(B, N)`` tokens -> ``(B, L)`` complex frames at average power ``P``."""
        reals = self.encoder_activations(tokens, snr_db)
        if not torch.isfinite(reals).all():
            raise FloatingPointError("non-finite encoder activations")
        return channel.power_normalize(channel.pack_complex(reals), self.config.power)

    def decode(self, frames, snr_db):
        if frames.shape[-1] != self.config.channel_uses:
            raise ShapeError(f"expected {self.config.channel_uses} symbols, got {frames.shape[-1]}")
        out = self.decoder(channel.unpack_complex(frames), snr_db)
        if self.config.standardize:
            out = self.token_mean + self.token_norm * out / out.norm(dim=-1, keepdim=True).clamp_min(1e-12)
        return out

    def transmit(self, tokens, snr_db, generator=None, power: float | None = None):
        """encode -> AWGN -> decode at a single SNR."""
        frames = self.encode(tokens, snr_db)
        cfg = channel.ChannelConfig(snr_db=float(snr_db), power=power or self.config.power)
        noisy = channel.awgn_transmit(frames, cfg, generator if generator is not None else cfg.generator())
        return self.decode(noisy, snr_db)

    def store(self, stage: str = "", seed: int = 0) -> ParameterStore:
        return ParameterStore.from_module(self, self.config.hash(), stage, seed)


def init_codec(config: JsccConfig, seed: int) -> JsccCodec:
    codec = JsccCodec(config)
    gen = seeded_generator(seed, 0x15CC)
    for m in codec.modules():
        if isinstance(m, nn.Linear):
            init_linear(m, gen)
    return codec


def init_params(config: JsccConfig, seed: int) -> ParameterStore:
    return init_codec(config, seed).store(stage="init", seed=seed)


def codec_from_store(config: JsccConfig, store: ParameterStore) -> JsccCodec:
    if store.config_hash != config.hash():
        raise ConfigHashMismatch(f"store hash {store.config_hash} != config hash {config.hash()}")
    codec = JsccCodec(config)
    store.load_into(codec)
    return codec


def save_codec(codec: JsccCodec, path, stage: str = "", seed: int = 0) -> None:
    save_checkpoint(codec.store(stage, seed), path)


def load_codec(path, config: JsccConfig) -> JsccCodec:
    return codec_from_store(config, load_checkpoint(path, expected_hash=config.hash()))


def jscc_encode(tokens, snr_db, codec: JsccCodec):
    return codec.encode(torch.as_tensor(tokens, dtype=next(codec.parameters()).dtype), snr_db)


def jscc_decode(frames, snr_db, codec: JsccCodec):
    return codec.decode(frames, snr_db)
