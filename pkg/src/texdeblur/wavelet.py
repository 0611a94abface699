"""Level-1 orthonormal Haar analysis/synthesis for high-frequency losses.

Operates on (N, C, H, W) tensors with even spatial dims.  Band layout for a
2x2 block [[a, b], [c, d]]: LL averages, LH differentiates along x (responds
to horizontal variation, i.e. vertical edges), HL along y, HH diagonally.
The factor 1/2 makes the transform orthonormal, so energy is preserved.
"""

from __future__ import annotations

import torch

from .errors import DataError


def _check_even(x: torch.Tensor) -> None:
    if x.ndim != 4:
        raise DataError(f"expected (N, C, H, W), got shape {tuple(x.shape)}")
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise DataError(f"spatial dims must be even, got {tuple(x.shape[-2:])}")


def haar_dwt(x: torch.Tensor):
    """Return (LL, LH, HL, HH), each at half resolution."""
    _check_even(x)
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return ll, lh, hl, hh


def haar_idwt(ll: torch.Tensor, lh: torch.Tensor, hl: torch.Tensor, hh: torch.Tensor) -> torch.Tensor:
    """Exact inverse of haar_dwt."""
    a = (ll + lh + hl + hh) * 0.5
    b = (ll - lh + hl - hh) * 0.5
    c = (ll + lh - hl - hh) * 0.5
    d = (ll - lh - hl + hh) * 0.5
    n, ch, h, w = ll.shape
    out = ll.new_empty((n, ch, 2 * h, 2 * w))
    out[..., 0::2, 0::2] = a
    out[..., 0::2, 1::2] = b
    out[..., 1::2, 0::2] = c
    out[..., 1::2, 1::2] = d
    return out


def dwt_high_freq(x: torch.Tensor):
    """High-frequency bands (LH, HL, HH) at half resolution; LL is dropped."""
    _, lh, hl, hh = haar_dwt(x)
    return lh, hl, hh
