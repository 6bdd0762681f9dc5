"""Edge extraction: oriented gradients on grayscale input and a normalized,
differentiable edge map shared by generator and discriminator.

The horizontal kernel is the classic Sobel [[-1,0,1],[-2,0,2],[-1,0,1]] (the
vertical one is its transpose); a Scharr variant is available behind the
``variant`` switch for sharper rotational accuracy. Inputs are reflect-padded
so the map keeps the input's spatial extent.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .image import LUMA_WEIGHTS, ImageBuffer, buffer_to_tensor

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SCHARR_X = np.array([[-3.0, 0.0, 3.0],
                     [-10.0, 0.0, 10.0],
                     [-3.0, 0.0, 3.0]])

# keeps sqrt differentiable at zero gradient while leaving constant inputs at
# exactly zero magnitude after the offset subtraction below
_SMOOTH_EPS_SQ = 1e-12
_NORM_FLOOR = 1e-8


def gradient_kernels(variant: str = "sobel", dtype=np.float64):
    if variant == "sobel":
        kx = SOBEL_X
    elif variant == "scharr":
        kx = SCHARR_X
    else:
        raise ConfigError(f"unknown edge kernel variant {variant!r}")
    gx = T.Tensor(kx[None, None], dtype=dtype)
    gy = T.Tensor(kx.T[None, None], dtype=dtype)
    return gx, gy


def sobel_gradients(gray: T.Tensor, variant: str = "sobel"):
    """Horizontal and vertical gradients of an (N, 1, H, W) tensor.

    Reflect padding keeps the output extents equal to the input's.
    """
    if gray.ndim != 4 or gray.shape[1] != 1:
        raise ShapeError(f"sobel_gradients expects (N, 1, H, W) input, got {gray.shape}")
    if gray.shape[2] < 3 or gray.shape[3] < 3:
        raise ShapeError(f"spatial extent must be at least 3x3, got {gray.shape}")
    kx, ky = gradient_kernels(variant, dtype=gray.dtype.type)
    padded = T.pad_reflect2d(gray, 1)
    return T.conv2d(padded, kx), T.conv2d(padded, ky)


def tensor_grayscale(x: T.Tensor) -> T.Tensor:
    """Differentiable Rec.601 luma for (N, 3, H, W); pass-through for (N, 1, H, W)."""
    if x.ndim != 4:
        raise ShapeError(f"expected NCHW input, got {x.shape}")
    if x.shape[1] == 1:
        return x
    if x.shape[1] != 3:
        raise ShapeError(f"expected 1 or 3 channels, got {x.shape[1]}")
    w = T.Tensor(np.asarray(LUMA_WEIGHTS).reshape(1, 3, 1, 1), dtype=x.dtype.type)
    return T.tsum(x * w, axis=1, keepdims=True)


def edge_map(image, variant: str = "sobel") -> T.Tensor:
    """Normalized gradient magnitude in [0, 1], shaped (N, 1, H, W).

    Accepts an ImageBuffer or an (N, C, H, W) tensor, C in {1, 3}. Constant
    inputs map to an all-zero tensor; otherwise the strongest edge is exactly 1.
    """
    if isinstance(image, ImageBuffer):
        image = buffer_to_tensor(image)
    gray = tensor_grayscale(image)
    gx, gy = sobel_gradients(gray, variant)
    mag = T.sqrt(T.square(gx) + T.square(gy) + _SMOOTH_EPS_SQ) - float(np.sqrt(_SMOOTH_EPS_SQ))
    peak = T.clamp(T.tmax(mag, axis=(1, 2, 3), keepdims=True), lo=_NORM_FLOOR)
    return mag / peak
