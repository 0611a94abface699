import numpy as np
import pytest
import torch
from scipy.signal import convolve2d

from texdeblur.errors import DataError
from texdeblur.wavelet import dwt_high_freq, haar_dwt, haar_idwt


def oracle_haar(channel: np.ndarray):
    # independent route: strided 2-D correlation with explicit 2x2 Haar filters
    filters = {
        "ll": np.array([[0.5, 0.5], [0.5, 0.5]]),
        "lh": np.array([[0.5, -0.5], [0.5, -0.5]]),
        "hl": np.array([[0.5, 0.5], [-0.5, -0.5]]),
        "hh": np.array([[0.5, -0.5], [-0.5, 0.5]]),
    }
    out = {}
    for name, f in filters.items():
        full = convolve2d(channel, f[::-1, ::-1], mode="valid")
        out[name] = full[::2, ::2]
    return out["ll"], out["lh"], out["hl"], out["hh"]


def rand_nchw(shape, seed=0):
    return torch.from_numpy(
        np.random.default_rng(seed).random(shape).astype(np.float64)
    )


def test_constant_image_has_zero_high_frequency():
    x = torch.full((2, 3, 8, 8), 0.37, dtype=torch.float64)
    lh, hl, hh = dwt_high_freq(x)
    assert lh.shape == (2, 3, 4, 4)
    assert torch.all(lh == 0) and torch.all(hl == 0) and torch.all(hh == 0)


def test_round_trip_reconstruction():
    x = rand_nchw((2, 3, 16, 12), seed=1)
    assert torch.allclose(haar_idwt(*haar_dwt(x)), x, atol=1e-6)
    x32 = x.float()
    assert torch.allclose(haar_idwt(*haar_dwt(x32)), x32, atol=1e-6)


def test_energy_identity():
    x = rand_nchw((1, 2, 10, 14), seed=2)
    bands = haar_dwt(x)
    total = sum(float((b**2).sum()) for b in bands)
    assert abs(total - float((x**2).sum())) < 1e-9


def test_vertical_step_edge_energy_in_lh_only():
    # step between columns 2 and 3 falls inside the (2,3) block column
    x = torch.zeros((1, 1, 8, 8), dtype=torch.float64)
    x[..., :, 3:] = 1.0
    lh, hl, hh = dwt_high_freq(x)
    assert float((lh**2).sum()) > 0
    assert float((hl**2).sum()) == 0
    assert float((hh**2).sum()) == 0


def test_matches_filter_oracle():
    x = rand_nchw((2, 2, 12, 16), seed=3)
    ll, lh, hl, hh = haar_dwt(x)
    for n in range(2):
        for c in range(2):
            o_ll, o_lh, o_hl, o_hh = oracle_haar(x[n, c].numpy())
            assert np.allclose(ll[n, c].numpy(), o_ll, atol=1e-12)
            assert np.allclose(lh[n, c].numpy(), o_lh, atol=1e-12)
            assert np.allclose(hl[n, c].numpy(), o_hl, atol=1e-12)
            assert np.allclose(hh[n, c].numpy(), o_hh, atol=1e-12)


def test_odd_dims_rejected():
    with pytest.raises(DataError):
        haar_dwt(torch.zeros((1, 1, 7, 8)))
    with pytest.raises(DataError):
        dwt_high_freq(torch.zeros((1, 1, 8, 9)))
    with pytest.raises(DataError):
        haar_dwt(torch.zeros((8, 8)))


def test_differentiable():
    x = rand_nchw((1, 1, 8, 8), seed=4).requires_grad_(True)
    lh, hl, hh = dwt_high_freq(x)
    (lh.square().sum() + hl.square().sum() + hh.square().sum()).backward()
    assert x.grad is not None
    assert torch.isfinite(x.grad).all()
