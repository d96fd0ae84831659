"""Central finite-difference checks of autograd gradients.

Each registered tag builds a small double-precision instance of a
component and a scalar objective over a list of leaf tensors.  The
objective is a fixed random projection of the component output (or the
loss itself for the training compositions).
"""
from __future__ import annotations

import torch

from . import channel
from .jscc import AFModule, JsccConfig, init_codec
from .tapl import ClassnameSet, MetaNet, TaplConfig, TaplHead, ToyTextEncoder, build_text_features
from .training import jscc_loss, tapl_loss
from .util import init_linear, seeded_generator

STEP = 1e-5
DENOM_FLOOR = 1e-12

_REGISTRY = {}


def register(tag):
    def deco(fn):
        _REGISTRY[tag] = fn
        return fn
    return deco


def available() -> list[str]:
    return sorted(_REGISTRY)


def compare(fn, leaves, step: float = STEP) -> float:
    """Max over leaves of ``||analytic - numeric|| / max(||analytic||, ||numeric||)``.

    The error is taken per leaf tensor rather than per entry; per-entry
    ratios blow up on gradient entries that are close to zero.
    """
    leaves = list(leaves)
    for x in leaves:
        x.grad = None
    fn().backward()
    worst = 0.0
    with torch.no_grad():
        for x in leaves:
            analytic = x.grad.detach().reshape(-1)
            numeric = torch.empty_like(analytic)
            flat = x.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                up = fn().item()
                flat[i] = orig - step
                down = fn().item()
                flat[i] = orig
                numeric[i] = (up - down) / (2 * step)
            denom = max(float(analytic.norm()), float(numeric.norm()), DENOM_FLOOR)
            worst = max(worst, float((analytic - numeric).norm()) / denom)
    return worst


def grad_check(tag: str, dims: int = 16, seed: int = 0) -> float:
    """Run the registered check ``tag`` and return the max relative error."""
    try:
        build = _REGISTRY[tag]
    except KeyError:
        raise ValueError(f"unknown gradient check {tag!r}; have {available()}") from None
    gen = seeded_generator(seed, 0x6C)
    fn, leaves = build(dims, gen)
    return compare(fn, leaves)


def _randn(*shape, gen):
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def _leaf(t):
    return t.detach().clone().requires_grad_(True)


def _module_leaves(module):
    module.double()
    return [p for p in module.parameters()]


@register("linear")
def _linear(dims, gen):
    x = _leaf(_randn(4, dims, gen=gen))
    w = _leaf(_randn(dims, dims, gen=gen))
    b = _leaf(_randn(dims, gen=gen))
    r = _randn(4, dims, gen=gen)
    return (lambda: ((x @ w.T + b) * r).sum()), [x, w, b]


@register("af")
def _af(dims, gen):
    af = AFModule(dims, max(dims // 4, 4))
    for m in (af.fc1, af.fc2):
        init_linear(m, gen)
    leaves = _module_leaves(af)
    x = _leaf(_randn(4, dims, gen=gen))
    snr = _leaf(_randn(4, gen=gen) * 10)
    r = _randn(4, dims, gen=gen)
    return (lambda: (af(x, snr) * r).sum()), [x, snr] + leaves


@register("meta_net")
def _meta(dims, gen):
    net = MetaNet(dims, dims, max(dims // 16, 8))
    for m in (net.fc1, net.fc2):
        init_linear(m, gen)
    leaves = _module_leaves(net)
    s = _leaf(_randn(4, dims, gen=gen))
    r = _randn(4, dims, gen=gen)
    return (lambda: (net(s) * r).sum()), [s] + leaves


def _toy_world(dims, gen, classes=3, context_len=2):
    enc = ToyTextEncoder(dims, dims, seed=int(torch.randint(0, 2**31, (), generator=gen))).double()
    names = ClassnameSet([f"c{k}" for k in range(classes)],
                         [_randn(1 + k % 2, dims, gen=gen) for k in range(classes)])
    names.embeddings = names.embeddings.double()
    return enc, names


@register("toy_text_encoder")
def _text_encoder(dims, gen):
    enc, _ = _toy_world(dims, gen)
    seq = _leaf(_randn(2, 3, dims, gen=gen))
    r = _randn(2, dims, gen=gen)
    return (lambda: (enc(seq) * r).sum()), [seq]


@register("text_path")
def _text_path(dims, gen):
    enc, names = _toy_world(dims, gen)
    pi = _leaf(_randn(3, dims, gen=gen) * 0.1)
    ctx = _leaf(_randn(2, dims, gen=gen) * 0.1)
    r = _randn(3, len(names), dims, gen=gen)
    return (lambda: (build_text_features(pi, ctx, names, enc) * r).sum()), [pi, ctx]


@register("stage1")
def _stage1(dims, gen):
    n, l = dims, max(dims // 2, 1)
    cfg = JsccConfig(input_dim=n, channel_uses=l, af_min_hidden=4)
    codec = init_codec(cfg, int(torch.randint(0, 2**31, (), generator=gen))).double()
    leaves = list(codec.parameters())
    s = _randn(6, n, gen=gen)
    snr = 3.0
    noise = channel.complex_noise((6, l), channel.snr_to_noise_variance(snr), gen, torch.float64)

    def fn():
        z = codec.encode(s, snr)
        return jscc_loss(s, codec.decode(z + noise, snr), scale=10.0)
    return fn, leaves


@register("stage1_standardized")
def _stage1_standardized(dims, gen):
    n, l = dims, max(dims // 2, 1)
    cfg = JsccConfig(input_dim=n, channel_uses=l, af_min_hidden=4, standardize=True)
    codec = init_codec(cfg, int(torch.randint(0, 2**31, (), generator=gen))).double()
    s = _randn(6, n, gen=gen) + 2.0
    codec.fit_standardization(s)
    leaves = list(codec.parameters())
    snr = -2.0
    noise = channel.complex_noise((6, l), channel.snr_to_noise_variance(snr), gen, torch.float64)

    def fn():
        s_hat = codec.decode(codec.encode(s, snr) + noise, snr)
        return jscc_loss(codec.centered(s), codec.centered(s_hat), scale=10.0)
    return fn, leaves


@register("stage2")
def _stage2(dims, gen):
    enc, names = _toy_world(dims, gen, classes=4)
    cfg = TaplConfig(token_dim=dims, embed_dim=dims, context_len=2)
    head = TaplHead(cfg, enc, seed=int(torch.randint(0, 2**31, (), generator=gen))).double()
    with torch.no_grad():
        head.context.normal_(generator=gen)
    leaves = [p for p in head.parameters() if p.requires_grad]
    s_hat = _randn(6, dims, gen=gen)
    labels = torch.tensor([0, 1, 2, 3, 1, 2])
    return (lambda: tapl_loss(s_hat, head(s_hat, names), labels, scale=10.0)), leaves
