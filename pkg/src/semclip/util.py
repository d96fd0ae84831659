from __future__ import annotations

import dataclasses
import hashlib
import json

import torch


def stable_hash(obj, length: int = 16) -> str:
    """Short sha256 of a canonical JSON rendering (dataclasses allowed)."""
    if dataclasses.is_dataclass(obj):
        obj = dataclasses.asdict(obj)
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:length]


def seeded_generator(*seeds: int) -> torch.Generator:
    """Generator keyed by a tuple of integers (e.g. ``(seed, step)``)."""
    h = hashlib.sha256(repr(tuple(int(s) for s in seeds)).encode()).digest()
    return torch.Generator().manual_seed(int.from_bytes(h[:8], "little") & ((1 << 63) - 1))


ACTIVATIONS = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "gelu": torch.nn.functional.gelu,
}


def activation(tag: str):
    try:
        return ACTIVATIONS[tag]
    except KeyError:
        raise ValueError(f"unknown activation {tag!r}; have {sorted(ACTIVATIONS)}") from None


def init_linear(layer: torch.nn.Linear, generator: torch.Generator) -> None:
    bound = 1.0 / layer.in_features ** 0.5
    with torch.no_grad():
        layer.weight.copy_(torch.rand(layer.weight.shape, generator=generator) * 2 * bound - bound)
        if layer.bias is not None:
            layer.bias.copy_(torch.rand(layer.bias.shape, generator=generator) * 2 * bound - bound)
