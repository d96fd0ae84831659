import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from semclip import channel
from semclip.tokens import ImageSpec


def test_pack_unpack_isometry():
    x = torch.randn(5, 12)
    z = channel.pack_complex(x)
    assert z.shape == (5, 6) and z.is_complex()
    assert torch.equal(z.real, x[:, :6]) and torch.equal(z.imag, x[:, 6:])
    assert torch.equal(channel.unpack_complex(z), x)
    np.testing.assert_allclose((z.abs() ** 2).sum(dim=1), (x ** 2).sum(dim=1), rtol=1e-6)


def test_pack_rejects_odd_length():
    with pytest.raises(ValueError):
        channel.pack_complex(torch.zeros(3))


def test_power_normalize_example():
    z = torch.tensor([[2 + 0j, 0 + 0j]], dtype=torch.complex128)
    out = channel.power_normalize(z, 1.0)
    np.testing.assert_allclose(out.numpy(), [[math.sqrt(2), 0]], atol=1e-12)


def test_power_normalize_is_idempotent_and_rejects_zero():
    z = torch.randn(4, 9, dtype=torch.complex64)
    once = channel.power_normalize(z, 2.0)
    torch.testing.assert_close(channel.power_normalize(once, 2.0), once)
    with pytest.raises(ValueError):
        channel.power_normalize(torch.zeros(1, 3, dtype=torch.complex64))


@settings(max_examples=60, deadline=None)
@given(b=st.integers(1, 6), length=st.integers(1, 40), power=st.floats(0.01, 100),
       scale=st.floats(1e-3, 1e3), seed=st.integers(0, 2**31))
def test_per_item_power_property(b, length, power, scale, seed):
    g = torch.Generator().manual_seed(seed)
    z = torch.complex(torch.randn(b, length, generator=g, dtype=torch.float64),
                      torch.randn(b, length, generator=g, dtype=torch.float64)) * scale
    out = channel.power_normalize(z, power)
    np.testing.assert_allclose(channel.frame_power(out).numpy(), power, rtol=1e-6)


def test_noise_variance_from_snr():
    assert channel.snr_to_noise_variance(0.0) == 1.0
    assert channel.snr_to_noise_variance(10.0, 2.0) == pytest.approx(0.2)
    assert channel.snr_to_noise_variance(-10.0) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        channel.snr_to_noise_variance(0.0, 0.0)
    with pytest.raises(ValueError):
        channel.ChannelConfig(snr_db=0.0, kind="rayleigh")


def test_complex_noise_component_variance():
    g = torch.Generator().manual_seed(0)
    n = channel.complex_noise((400_000,), 0.5, g, torch.float64)
    assert float(n.real.var()) == pytest.approx(0.25, rel=0.01)
    assert float(n.imag.var()) == pytest.approx(0.25, rel=0.01)
    assert float((n.abs() ** 2).mean()) == pytest.approx(0.5, rel=0.01)


def test_awgn_reproducible_and_noiseless_limit():
    z = channel.power_normalize(torch.randn(3, 8, dtype=torch.complex64))
    cfg = channel.ChannelConfig(snr_db=5.0, seed=7)
    assert torch.equal(channel.awgn_transmit(z, cfg), channel.awgn_transmit(z, cfg))
    assert torch.equal(channel.awgn_transmit(z, channel.ChannelConfig(snr_db=math.inf)), z)


@pytest.mark.parametrize("snr", [-10.0, 0.0, 10.0])
def test_probe_statistics(snr):
    out = channel.probe(snr, 1_000_000, seed=1)
    assert abs(out["measured_snr_db"] - snr) < 0.05
    assert abs(out["noise_mean_real"]) < 0.005 and abs(out["noise_mean_imag"]) < 0.005
    assert out["measured_signal_power"] == pytest.approx(1.0, abs=1e-9)


def test_bandwidth_ratio():
    assert channel.bandwidth_ratio(384, ImageSpec(336, 336, 3)) == pytest.approx(0.0011338, abs=1e-7)
    assert channel.bandwidth_ratio(32, ImageSpec(8, 8, 1)) == 0.5
    with pytest.raises(ValueError):
        channel.bandwidth_ratio(0, ImageSpec(8, 8, 1))
