"""Orthonormal 2-D DCT-II helpers used for low-frequency dimension reduction.

The transforms are written as matrix products so they stay differentiable
and run on any leading batch shape ``[..., H, W]``.
"""

from functools import lru_cache

import numpy as np
import scipy.fft
import torch

from ..errors import ShapeError


@lru_cache(maxsize=32)
def _dct_matrix_np(n: int) -> np.ndarray:
    # row k holds the k-th orthonormal DCT-II basis vector
    return scipy.fft.dct(np.eye(n), norm="ortho", axis=0)


def dct_matrix(n: int, dtype=None) -> torch.Tensor:
    dtype = dtype or torch.get_default_dtype()
    return torch.as_tensor(_dct_matrix_np(n), dtype=dtype)


def dct2(x: torch.Tensor) -> torch.Tensor:
    """Orthonormal DCT over the last two axes."""
    h, w = x.shape[-2:]
    dh, dw = dct_matrix(h, x.dtype), dct_matrix(w, x.dtype)
    return dh @ x @ dw.T


def idct2(c: torch.Tensor) -> torch.Tensor:
    h, w = c.shape[-2:]
    dh, dw = dct_matrix(h, c.dtype), dct_matrix(w, c.dtype)
    return dh.T @ c @ dw


def dct_down(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Keep the top-left ``(H/factor, W/factor)`` block of the per-channel DCT."""
    h, w = x.shape[-2:]
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"spatial dims {(h, w)} not divisible by factor {factor}")
    return dct2(x)[..., : h // factor, : w // factor]


def dct_up(coeffs: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Zero-pad ``coeffs`` to ``(height, width)`` and invert the DCT."""
    ch, cw = coeffs.shape[-2:]
    if ch > height or cw > width:
        raise ShapeError(f"coefficient block {(ch, cw)} exceeds target {(height, width)}")
    full = coeffs.new_zeros(coeffs.shape[:-2] + (height, width))
    full[..., :ch, :cw] = coeffs
    return idct2(full)


def low_pass(x: torch.Tensor, keep_h: int, keep_w: int) -> torch.Tensor:
    """Project onto the span of the ``keep_h x keep_w`` lowest frequencies."""
    h, w = x.shape[-2:]
    c = dct2(x)
    mask = torch.zeros(h, w, dtype=x.dtype)
    mask[:keep_h, :keep_w] = 1.0
    return idct2(c * mask)
