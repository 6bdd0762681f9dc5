"""Attention blocks: learned pixel maps, squeeze-excite channel weights, a
residual blend with a trainable scalar, and the per-channel classifier head
whose weights localize domain-discriminative regions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError

SE_REDUCTION = 8


@dataclass
class AttentionParams:
    """Weights for one attention block over ``channels``-wide features."""

    v: T.Tensor            # (C, C, 3, 3) conv producing the auxiliary feature
    pixel_conv: T.Tensor   # (1, 2, 7, 7) over stacked avg/max descriptors
    se_reduce: T.Tensor    # (C, C/r)
    se_expand: T.Tensor    # (C/r, C)
    lam: T.Tensor          # scalar blend weight, starts at 0
    cam_w: T.Tensor        # (C,) classifier weights

    @property
    def channels(self) -> int:
        return self.v.shape[0]

    def named_parameters(self, prefix: str = ""):
        for name in ("v", "pixel_conv", "se_reduce", "se_expand", "lam", "cam_w"):
            yield f"{prefix}{name}", getattr(self, name)


def init_attention_params(channels: int, rng: np.random.Generator,
                          dtype=np.float64, reduction: int = SE_REDUCTION) -> AttentionParams:
    if channels % reduction:
        raise ConfigError(
            f"attention channels ({channels}) must be divisible by the SE reduction "
            f"ratio ({reduction})")
    hidden = channels // reduction

    def w(*shape):
        # conv weights are (out, in, kh, kw); matmul weights are (in, out)
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        return T.Tensor(rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape),
                        requires_grad=True, dtype=dtype)

    return AttentionParams(
        v=w(channels, channels, 3, 3),
        pixel_conv=w(1, 2, 7, 7),
        se_reduce=w(channels, hidden),
        se_expand=w(hidden, channels),
        lam=T.Tensor(np.zeros(1), requires_grad=True, dtype=dtype),
        cam_w=w(channels),
    )


def pixel_attention(e_r: T.Tensor, params: AttentionParams) -> T.Tensor:
    """Spatial attention map in (0, 1), shaped (N, 1, H, W).

    The encoding runs through the auxiliary conv, is pooled per pixel across
    channels (mean and max), and the stacked 2-channel descriptor maps through
    a 7x7 conv and a sigmoid.
    """
    if e_r.ndim != 4:
        raise ShapeError(f"pixel_attention expects NCHW input, got {e_r.shape}")
    if e_r.shape[1] != params.channels:
        raise ShapeError(
            f"encoding has {e_r.shape[1]} channels but params were built for "
            f"{params.channels}")
    # replicate padding keeps the block spatially equivariant at borders
    u = T.conv2d(T.pad_edge2d(e_r, 1), params.v, stride=1)
    f_ave = T.tmean(u, axis=1, keepdims=True)
    f_max = T.tmax(u, axis=1, keepdims=True)
    f_g = T.concat([f_ave, f_max], axis=1)
    return T.sigmoid(T.conv2d(T.pad_edge2d(f_g, 3), params.pixel_conv, stride=1))


def channel_attention(e_r: T.Tensor, params: AttentionParams) -> T.Tensor:
    """Per-channel gate in (0, 1), shaped (N, C, 1, 1) (squeeze-and-excite)."""
    if e_r.ndim != 4:
        raise ShapeError(f"channel_attention expects NCHW input, got {e_r.shape}")
    c = e_r.shape[1]
    if c != params.channels:
        raise ShapeError(
            f"encoding has {c} channels but params were built for {params.channels}")
    squeezed = T.reshape(T.pool_global(e_r, "avg"), (e_r.shape[0], c))
    hidden = T.relu(squeezed @ params.se_reduce)
    gate = T.sigmoid(hidden @ params.se_expand)
    return T.reshape(gate, (e_r.shape[0], c, 1, 1))


def residual_blend(e_r: T.Tensor, i_att: T.Tensor, lam: T.Tensor) -> T.Tensor:
    """lam * i_att * e_r + e_r, with the map broadcasting over e_r.

    At lam == 0 the result equals e_r bit for bit, so an untrained block
    passes the encoding through unchanged.
    """
    try:
        np.broadcast_shapes(e_r.shape, i_att.shape)
    except ValueError as exc:
        raise ShapeError(f"attention map {i_att.shape} does not broadcast over "
                         f"encoding {e_r.shape}") from exc
    return lam * i_att * e_r + e_r


def cam_logit(e_r: T.Tensor, cam_w: T.Tensor):
    """Classifier squash over channel-wise spatial sums.

    Returns ``eta``: an (N,) tensor in (0, 1), the logistic squash of
    sum_k w_k * sum_{h,w} e_r[n, k, h, w], and ``cam_map``: a detached
    min-max-normalized (N, 1, H, W) heat map of the weighted channel sum for
    visualization.
    """
    if e_r.ndim != 4:
        raise ShapeError(f"cam_logit expects NCHW input, got {e_r.shape}")
    c = e_r.shape[1]
    if cam_w.size != c:
        raise ShapeError(f"cam weights have {cam_w.size} entries for {c} channels")
    pooled = T.reshape(T.tsum(e_r, axis=(2, 3), keepdims=True), (e_r.shape[0], c))
    logit = T.reshape(pooled @ T.reshape(cam_w, (c, 1)), (e_r.shape[0],))
    eta = T.sigmoid(logit)

    raw = (e_r.data * cam_w.data.reshape(1, c, 1, 1)).sum(axis=1, keepdims=True)
    lo = raw.min(axis=(2, 3), keepdims=True)
    hi = raw.max(axis=(2, 3), keepdims=True)
    cam_map = T.Tensor((raw - lo) / np.maximum(hi - lo, 1e-12), dtype=e_r.dtype.type)
    return eta, cam_map
