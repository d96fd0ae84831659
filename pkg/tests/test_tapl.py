import math

import numpy as np
import pytest
import torch

from semclip.errors import ShapeError
from semclip.tapl import (ClassnameSet, TaplConfig, TaplHead, ToyTextEncoder, build_text_features, classify,
                          cosine_scores, frozen_prompt_features, init_context, retrieve, task_probabilities,
                          toy_text_encoder)


def _encoder(d=6, n=5, seed=0):
    a = torch.randn(n, d, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)
    enc = ToyTextEncoder(d, n, weight=a, bias=torch.zeros(n)).double()
    return enc, enc.weight


def test_text_features_closed_form():
    enc, a = _encoder()
    g = torch.Generator().manual_seed(1)
    pi = torch.randn(2, 6, generator=g, dtype=torch.float64)
    e1 = torch.randn(1, 6, generator=g, dtype=torch.float64)
    names = [torch.randn(1, 6, generator=g, dtype=torch.float64) for _ in range(3)]
    classes = ClassnameSet(["a", "b", "c"], names)
    classes.embeddings = classes.embeddings.double()
    t = build_text_features(pi, e1, classes, enc)
    assert t.shape == (2, 3, 5)
    for b in range(2):
        for k in range(3):
            c_k = classes.embeddings[k, 0]  # stored in float32
            want = a.numpy() @ ((pi[b] + e1[0] + c_k).numpy() / 2)
            np.testing.assert_allclose(t[b, k].numpy(), want, rtol=1e-12)


def test_padded_classnames_use_mask():
    enc, a = _encoder()
    short = torch.ones(1, 6)
    long = torch.ones(3, 6) * 2
    classes = ClassnameSet(["s", "l"], [short, long])
    assert classes.embeddings.shape == (2, 3, 6) and classes.mask.tolist() == [[1, 0, 0], [1, 1, 1]]
    ctx = torch.zeros(2, 6, dtype=torch.float64)
    t = build_text_features(torch.zeros(6, dtype=torch.float64), ctx, classes, enc)[0]
    np.testing.assert_allclose(t[0].numpy(), a.numpy() @ np.full(6, 1 / 3), rtol=1e-6)
    np.testing.assert_allclose(t[1].numpy(), a.numpy() @ np.full(6, 6 / 5), rtol=1e-6)
    sub = classes.subset([1, 0])
    assert sub.names == ["l", "s"] and sub.mask.tolist() == [[1, 1, 1], [1, 0, 0]]


def test_classnames_validation():
    with pytest.raises(ValueError):
        ClassnameSet(["a"], [torch.ones(1, 4)])
    with pytest.raises(ShapeError):
        ClassnameSet(["a", "b"], [torch.ones(1, 4), torch.ones(1, 5)])
    with pytest.raises(ValueError):
        ClassnameSet(["a", "b"], [torch.ones(0, 4), torch.ones(1, 4)])


def test_text_encoder_errors():
    enc = ToyTextEncoder(4, 3)
    with pytest.raises(ShapeError):
        enc(torch.ones(2, 5))
    with pytest.raises(ValueError):
        enc(torch.ones(0, 4))
    out = toy_text_encoder(np.ones((2, 4)), enc)
    assert out.shape == (3,)


def test_softmax_hand_case():
    s = torch.tensor([[1.0, 0.0]])
    t = torch.tensor([[2.0, 0.0], [0.0, 3.0]])
    p = task_probabilities(s, t, 1.0)
    assert float(p[0, 0]) == pytest.approx(math.e / (math.e + 1), abs=1e-6)
    assert float(p[0, 0]) == pytest.approx(0.7311, abs=1e-4)
    torch.testing.assert_close(p.sum(dim=1), torch.ones(1))


def test_argmax_invariances():
    g = torch.Generator().manual_seed(0)
    s, t = torch.randn(20, 8, generator=g), torch.randn(5, 8, generator=g)
    base = classify(s, t)
    assert torch.equal(classify(s * 3.5, t), base)
    assert torch.equal(classify(s, t * torch.tensor([[2.0], [0.1], [5.0], [1.0], [3.0]])), base)
    assert torch.equal(classify(s, t, temperature=0.01), base)
    with pytest.raises(ValueError):
        task_probabilities(s, t, 0.0)
    with pytest.raises(ValueError):
        classify(s[:0], t)
    with pytest.raises(ShapeError):
        task_probabilities(s, torch.randn(5, 7))


def test_cosine_rejects_zero_rows():
    with pytest.raises(ValueError):
        cosine_scores(torch.zeros(1, 3), torch.ones(2, 3))


def test_retrieve_order_and_ties():
    s = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    order = retrieve(torch.tensor([1.0, 0.0]), s)
    assert order.tolist() == [0, 2, 3, 1]
    per_image = torch.tensor([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])
    assert retrieve(per_image, s).tolist()[0] == 1
    with pytest.raises(ValueError):
        retrieve(torch.ones(2), s[:0])


def test_head_conditioning_modes():
    cfg = TaplConfig(token_dim=8, embed_dim=6, context_len=2)
    assert cfg.hidden == 8 and TaplConfig(768, 768).hidden == 48
    enc = ToyTextEncoder(6, 8)
    classes = ClassnameSet(["a", "b", "c"], [torch.randn(1, 6) for _ in range(3)])
    head = TaplHead(cfg, enc, seed=0)
    s = torch.randn(4, 8)
    t = head(s, classes)
    assert t.shape == (4, 3, 8)
    assert not torch.allclose(t[0], t[1])
    pooled = TaplHead(TaplConfig(8, 6, 2, pooled_pi=True), enc, seed=0)(s, classes)
    torch.testing.assert_close(pooled[0], pooled[3])
    frozen = TaplHead(TaplConfig(8, 6, 2, use_meta=False), enc, seed=0)
    torch.testing.assert_close(frozen(s, classes)[0], frozen_prompt_features(frozen.context, classes, enc))
    assert not any(p.requires_grad for p in enc.parameters())


def test_context_init():
    words = np.random.default_rng(0).standard_normal((4, 6)).astype(np.float32)
    np.testing.assert_array_equal(init_context(4, 6, 0, init_embeddings=words).numpy(), words)
    with pytest.raises(ShapeError):
        init_context(3, 6, 0, init_embeddings=words)
    a, b = init_context(4, 6, 1), init_context(4, 6, 1)
    assert torch.equal(a, b) and float(a.std()) < 0.05
