"""Generator and discriminator networks.

The generator runs two branches through one shared encoder: the image itself
and its edge map (replicated to three channels). The fused encoding passes
through pixel/channel attention with a learnable residual blend, then a
decoder whose residual blocks use adaptive layer-instance normalization with
modulation computed from the attention-weighted encoding. The discriminator
concatenates the edge map as a fourth input channel and judges patches at two
scales (a 70x70-receptive-field local head and a global head) with
spectral-normalized convolutions throughout.

Layer widths and depths are configuration-driven so the same code scales from
8x8 gradient-check fixtures to 256x256 training.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .attention import (AttentionParams, cam_logit, channel_attention,
                        init_attention_params, pixel_attention, residual_blend)
from .edge import edge_map
from .errors import ConfigError, ShapeError

_IN_EPS = 1e-5
_SN_EPS = 1e-12


# -- functional normalization ----------------------------------------------


def instance_norm(x: T.Tensor, gamma: T.Tensor, beta: T.Tensor) -> T.Tensor:
    """Per-sample, per-channel normalization with affine modulation."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects NCHW input, got {x.shape}")
    if x.shape[2] * x.shape[3] <= 1:
        raise ShapeError("instance_norm needs more than one spatial element")
    mu = T.tmean(x, axis=(2, 3), keepdims=True)
    centered = x - mu
    var = T.tmean(T.square(centered), axis=(2, 3), keepdims=True)
    return centered / T.sqrt(var + _IN_EPS) * gamma + beta


def layer_norm(x: T.Tensor, gamma: T.Tensor, beta: T.Tensor) -> T.Tensor:
    """Per-sample normalization over (C, H, W) with affine modulation."""
    if x.ndim != 4:
        raise ShapeError(f"layer_norm expects NCHW input, got {x.shape}")
    mu = T.tmean(x, axis=(1, 2, 3), keepdims=True)
    centered = x - mu
    var = T.tmean(T.square(centered), axis=(1, 2, 3), keepdims=True)
    return centered / T.sqrt(var + _IN_EPS) * gamma + beta


def adalin(x: T.Tensor, rho: T.Tensor, gamma: T.Tensor, beta: T.Tensor) -> T.Tensor:
    """Blend of instance- and layer-normalized features: rho picks IN."""
    if x.ndim != 4:
        raise ShapeError(f"adalin expects NCHW input, got {x.shape}")
    if x.shape[2] * x.shape[3] <= 1:
        raise ShapeError("adalin needs more than one spatial element")
    ones = T.Tensor(np.ones(1), dtype=x.dtype.type)
    zeros = T.Tensor(np.zeros(1), dtype=x.dtype.type)
    in_hat = instance_norm(x, ones, zeros)
    ln_hat = layer_norm(x, ones, zeros)
    return (rho * in_hat + (1.0 - rho) * ln_hat) * gamma + beta


def spectral_normalize(weight: T.Tensor, u: np.ndarray, update: bool = True):
    """Divide a conv/linear weight by its estimated top singular value.

    The weight is viewed as (out, rest). ``u`` is persistent power-iteration
    state updated in place when ``update`` is true; with ``update=False`` the
    stored vector is used as-is, keeping evaluation a pure function of the
    weight. Returns (normalized weight on tape, detached sigma estimate).
    """
    rows = weight.shape[0]
    cols = weight.size // rows
    w2d = weight.data.reshape(rows, cols)
    if update:
        v = w2d.T @ u
        v /= np.linalg.norm(v) + _SN_EPS
        u_next = w2d @ v
        u_next /= np.linalg.norm(u_next) + _SN_EPS
        u[:] = u_next
    else:
        v = w2d.T @ u
        v /= np.linalg.norm(v) + _SN_EPS
    ut = T.Tensor(u.reshape(1, rows).copy(), dtype=weight.dtype.type)
    vt = T.Tensor(v.reshape(cols, 1).copy(), dtype=weight.dtype.type)
    sigma = T.clamp(ut @ T.reshape(weight, (rows, cols)) @ vt, lo=_SN_EPS)
    scaled = weight / T.reshape(sigma, (1,) * weight.ndim)
    return scaled, float(sigma.data.reshape(-1)[0])


# -- layers -------------------------------------------------------------------


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True,
                 rng=None, dtype=np.float64, pad_mode="zero"):
        rng = rng or np.random.default_rng(0)
        std = np.sqrt(2.0 / (in_ch * kernel * kernel))  # fan-in scaled
        self.weight = T.Tensor(rng.normal(0.0, std, size=(out_ch, in_ch, kernel, kernel)),
                               requires_grad=True, dtype=dtype)
        self.bias = (T.Tensor(np.zeros((1, out_ch, 1, 1)), requires_grad=True, dtype=dtype)
                     if bias else None)
        self.stride = stride
        self.padding = padding
        self.pad_mode = pad_mode

    def __call__(self, x):
        if self.pad_mode == "edge" and self.padding:
            out = T.conv2d(T.pad_edge2d(x, self.padding), self.weight, self.stride, 0)
        else:
            out = T.conv2d(x, self.weight, self.stride, self.padding)
        return out + self.bias if self.bias is not None else out

    def named_parameters(self, prefix):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias


class SpectralConv2d(Conv2d):
    """Conv whose weight is spectrally normalized at every application."""

    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True,
                 rng=None, dtype=np.float64):
        super().__init__(in_ch, out_ch, kernel, stride, padding, bias, rng, dtype)
        rng = rng or np.random.default_rng(0)
        u = rng.normal(size=out_ch)
        self.u = (u / np.linalg.norm(u)).astype(dtype)
        self.last_sigma = 1.0

    def __call__(self, x, update_sn=False):
        w_sn, self.last_sigma = spectral_normalize(self.weight, self.u, update=update_sn)
        out = T.conv2d(x, w_sn, self.stride, self.padding)
        return out + self.bias if self.bias is not None else out

    def named_buffers(self, prefix):
        yield f"{prefix}.u", self.u


class InstanceNorm:
    def __init__(self, channels, dtype=np.float64):
        self.gamma = T.Tensor(np.ones((1, channels, 1, 1)), requires_grad=True, dtype=dtype)
        self.beta = T.Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True, dtype=dtype)

    def __call__(self, x):
        return instance_norm(x, self.gamma, self.beta)

    def named_parameters(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


class ResBlock:
    """conv-IN-relu-conv-IN plus skip, constant spatial extent."""

    def __init__(self, channels, rng, dtype=np.float64):
        self.conv1 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm1 = InstanceNorm(channels, dtype)
        self.conv2 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.norm2 = InstanceNorm(channels, dtype)

    def __call__(self, x):
        h = T.relu(self.norm1(self.conv1(x)))
        return x + self.norm2(self.conv2(h))

    def named_parameters(self, prefix):
        for name, part in (("conv1", self.conv1), ("norm1", self.norm1),
                           ("conv2", self.conv2), ("norm2", self.norm2)):
            yield from part.named_parameters(f"{prefix}.{name}")


class AdaResBlock:
    """Residual block whose normalizations blend IN/LN with per-channel rho
    and take per-sample gamma/beta modulation from the style head."""

    def __init__(self, channels, rng, dtype=np.float64):
        self.conv1 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, padding=1, bias=False, rng=rng, dtype=dtype)
        self.rho1 = T.Tensor(np.ones((1, channels, 1, 1)), requires_grad=True, dtype=dtype)
        self.rho2 = T.Tensor(np.ones((1, channels, 1, 1)), requires_grad=True, dtype=dtype)

    def __call__(self, x, gamma, beta):
        h = T.relu(adalin(self.conv1(x), self.rho1, gamma, beta))
        return x + adalin(self.conv2(h), self.rho2, gamma, beta)

    def named_parameters(self, prefix):
        yield from self.conv1.named_parameters(f"{prefix}.conv1")
        yield from self.conv2.named_parameters(f"{prefix}.conv2")
        yield f"{prefix}.rho1", self.rho1
        yield f"{prefix}.rho2", self.rho2

    def clamp_state(self):
        np.clip(self.rho1.data, 0.0, 1.0, out=self.rho1.data)
        np.clip(self.rho2.data, 0.0, 1.0, out=self.rho2.data)


# -- configuration ---------------------------------------------------------------


def _log2_int(n):
    return int(round(np.log2(n)))


@dataclass
class NetConfig:
    image_size: int = 256
    base_channels: int = 32
    downsamples: int = 3
    res_blocks: int = 4
    dec_res_blocks: int = 4
    disc_base_channels: int = 64
    disc_trunk_layers: int = 0   # 0 = derive from image_size
    disc_global_layers: int = 0  # 0 = derive from image_size
    edge_variant: str = "sobel"
    dtype: str = "float64"

    def __post_init__(self):
        if self.image_size % (1 << self.downsamples):
            raise ConfigError(
                f"image_size {self.image_size} must be divisible by "
                f"{1 << self.downsamples} (2**downsamples)")
        if self.disc_trunk_layers == 0:
            self.disc_trunk_layers = min(3, max(1, _log2_int(self.image_size) - 3))
        if self.disc_global_layers == 0:
            self.disc_global_layers = max(
                1, _log2_int(self.image_size) - 2 - self.disc_trunk_layers)
        if self.encoder_channels % 8:
            raise ConfigError(
                f"encoder output channels ({self.encoder_channels}) must be divisible "
                "by the SE reduction ratio 8; adjust base_channels/downsamples")
        if self.disc_channels % 8:
            raise ConfigError(
                f"discriminator trunk channels ({self.disc_channels}) must be divisible "
                "by the SE reduction ratio 8; adjust disc_base_channels")

    @property
    def encoder_channels(self) -> int:
        return self.base_channels * (1 << (self.downsamples - 1))

    @property
    def disc_channels(self) -> int:
        return self.disc_base_channels * (1 << (self.disc_trunk_layers - 1))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


class GeneratorOutput(NamedTuple):
    i_nor: T.Tensor    # enhanced image in [0, 1]
    i_att: T.Tensor    # pixel attention map
    eta: T.Tensor      # classifier squash per sample
    i_edg: T.Tensor    # edge map of the input
    cam_map: T.Tensor  # detached heat map for visualization


class DiscriminatorOutput(NamedTuple):
    local_logits: T.Tensor
    global_logits: T.Tensor
    eta: T.Tensor
    cam_map: T.Tensor


# -- generator ----------------------------------------------------------------------


class Generator:
    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        self.cfg = cfg
        dt = cfg.np_dtype
        ch = [3] + [cfg.base_channels << i for i in range(cfg.downsamples)]
        self.down_convs = [Conv2d(ch[i], ch[i + 1], 4, stride=2, padding=1, bias=False,
                                  rng=rng, dtype=dt)
                           for i in range(cfg.downsamples)]
        self.down_norms = [InstanceNorm(c, dt) for c in ch[1:]]
        c_e = cfg.encoder_channels
        self.enc_res = [ResBlock(c_e, rng, dt) for _ in range(cfg.res_blocks)]
        self.attn = init_attention_params(c_e, rng, dtype=dt)
        # style head: pooled attention-weighted encoding -> per-sample gamma/beta
        self.style_w_gamma = T.Tensor(rng.normal(0.0, 0.02, size=(c_e, c_e)),
                                      requires_grad=True, dtype=dt)
        self.style_b_gamma = T.Tensor(np.ones((1, c_e)), requires_grad=True, dtype=dt)
        self.style_w_beta = T.Tensor(rng.normal(0.0, 0.02, size=(c_e, c_e)),
                                     requires_grad=True, dtype=dt)
        self.style_b_beta = T.Tensor(np.zeros((1, c_e)), requires_grad=True, dtype=dt)
        self.dec_res = [AdaResBlock(c_e, rng, dt) for _ in range(cfg.dec_res_blocks)]
        up_ch = [c_e]
        for _ in range(cfg.downsamples):
            up_ch.append(max(cfg.base_channels, up_ch[-1] // 2))
        self.up_convs = [Conv2d(up_ch[i], up_ch[i + 1], 3, padding=1, bias=False,
                                rng=rng, dtype=dt)
                         for i in range(cfg.downsamples)]
        self.up_norms = [InstanceNorm(c, dt) for c in up_ch[1:]]
        self.final_conv = Conv2d(up_ch[-1], 3, 7, padding=3, bias=True, rng=rng, dtype=dt,
                                 pad_mode="edge")

    # encoder shared by the image branch and the edge branch
    def encode(self, x3: T.Tensor) -> T.Tensor:
        h = x3
        for conv, norm in zip(self.down_convs, self.down_norms):
            h = T.relu(norm(conv(h)))
        for block in self.enc_res:
            h = block(h)
        return h

    def _check_size(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"generator expects (N, 3, H, W) input, got {x.shape}")
        step = 1 << self.cfg.downsamples
        if x.shape[2] % step or x.shape[3] % step:
            raise ConfigError(
                f"input spatial size {x.shape[2]}x{x.shape[3]} must be divisible by {step}")

    def forward(self, x: T.Tensor) -> GeneratorOutput:
        self._check_size(x)
        i_edg = edge_map(x, self.cfg.edge_variant)
        e_img = self.encode(x)
        e_edge = self.encode(T.concat([i_edg, i_edg, i_edg], axis=1))
        fused = e_img + e_edge
        i_att = pixel_attention(fused, self.attn)
        gate = channel_attention(fused, self.attn)
        e_ro = residual_blend(fused, i_att, self.attn.lam) * gate
        eta, cam_map = cam_logit(fused, self.attn.cam_w)

        pooled = T.reshape(T.pool_global(e_ro, "avg"), (x.shape[0], self.cfg.encoder_channels))
        gamma = T.reshape(pooled @ self.style_w_gamma + self.style_b_gamma,
                          (x.shape[0], self.cfg.encoder_channels, 1, 1))
        beta = T.reshape(pooled @ self.style_w_beta + self.style_b_beta,
                         (x.shape[0], self.cfg.encoder_channels, 1, 1))

        h = e_ro
        for block in self.dec_res:
            h = block(h, gamma, beta)
        for conv, norm in zip(self.up_convs, self.up_norms):
            h = T.relu(norm(conv(T.upsample_nearest2(h))))
        i_nor = (T.tanh(self.final_conv(h)) + 1.0) * 0.5
        return GeneratorOutput(i_nor, i_att, eta, i_edg, cam_map)

    def translate(self, x: T.Tensor) -> T.Tensor:
        return self.forward(x).i_nor

    __call__ = forward

    def named_parameters(self, prefix: str = ""):
        for i, (conv, norm) in enumerate(zip(self.down_convs, self.down_norms)):
            yield from conv.named_parameters(f"{prefix}down{i}.conv")
            yield from norm.named_parameters(f"{prefix}down{i}.norm")
        for i, block in enumerate(self.enc_res):
            yield from block.named_parameters(f"{prefix}enc_res{i}")
        yield from self.attn.named_parameters(f"{prefix}attn.")
        yield f"{prefix}style.w_gamma", self.style_w_gamma
        yield f"{prefix}style.b_gamma", self.style_b_gamma
        yield f"{prefix}style.w_beta", self.style_w_beta
        yield f"{prefix}style.b_beta", self.style_b_beta
        for i, block in enumerate(self.dec_res):
            yield from block.named_parameters(f"{prefix}dec_res{i}")
        for i, (conv, norm) in enumerate(zip(self.up_convs, self.up_norms)):
            yield from conv.named_parameters(f"{prefix}up{i}.conv")
            yield from norm.named_parameters(f"{prefix}up{i}.norm")
        yield from self.final_conv.named_parameters(f"{prefix}final")

    def named_buffers(self, prefix: str = ""):
        return iter(())

    def post_step(self):
        """Clamp blend ratios after an optimizer step."""
        for block in self.dec_res:
            block.clamp_state()


# -- discriminator -------------------------------------------------------------------


class Discriminator:
    def __init__(self, cfg: NetConfig, rng: np.random.Generator):
        self.cfg = cfg
        dt = cfg.np_dtype
        ch = [4] + [cfg.disc_base_channels << i for i in range(cfg.disc_trunk_layers)]
        self.trunk = [SpectralConv2d(ch[i], ch[i + 1], 4, stride=2, padding=1,
                                     rng=rng, dtype=dt)
                      for i in range(cfg.disc_trunk_layers)]
        c_d = cfg.disc_channels
        self.attn = init_attention_params(c_d, rng, dtype=dt)
        self.local_conv = SpectralConv2d(c_d, 2 * c_d, 4, stride=1, padding=1,
                                         rng=rng, dtype=dt)
        self.local_out = SpectralConv2d(2 * c_d, 1, 4, stride=1, padding=1,
                                        rng=rng, dtype=dt)
        glob = []
        gch = c_d
        for _ in range(cfg.disc_global_layers):
            nxt = min(2 * gch, 8 * cfg.disc_base_channels)
            glob.append(SpectralConv2d(gch, nxt, 4, stride=2, padding=1, rng=rng, dtype=dt))
            gch = nxt
        self.global_convs = glob
        self.global_out = SpectralConv2d(gch, 1, 4, stride=1, padding=1, rng=rng, dtype=dt)
        self._validate_extents()

    def _validate_extents(self):
        size = self.cfg.image_size
        for _ in self.trunk:
            size = (size + 2 - 4) // 2 + 1
            if size < 1:
                raise ConfigError("discriminator trunk collapses below 1x1; "
                                  "reduce disc_trunk_layers")
        local = size
        for _ in range(2):
            local = local + 2 - 4 + 1
            if local < 1:
                raise ConfigError("local head collapses below 1x1 at this image size")
        for _ in self.global_convs:
            size = (size + 2 - 4) // 2 + 1
            if size < 1:
                raise ConfigError("global head collapses below 1x1; "
                                  "reduce disc_global_layers")
        if size + 2 - 4 + 1 < 1:
            raise ConfigError("global head output collapses below 1x1 at this image size")

    def forward(self, x: T.Tensor, update_sn: bool = False) -> DiscriminatorOutput:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"discriminator expects (N, 3, H, W) input, got {x.shape}")
        i_edg = edge_map(x, self.cfg.edge_variant)
        h = T.concat([x, i_edg], axis=1)
        for conv in self.trunk:
            h = T.leaky_relu(conv(h, update_sn=update_sn), 0.2)
        e_d = h
        i_att = pixel_attention(e_d, self.attn)
        gate = channel_attention(e_d, self.attn)
        c_r = e_d * i_att * gate
        eta, cam_map = cam_logit(e_d, self.attn.cam_w)
        local = T.leaky_relu(self.local_conv(c_r, update_sn=update_sn), 0.2)
        local_logits = self.local_out(local, update_sn=update_sn)
        g = c_r
        for conv in self.global_convs:
            g = T.leaky_relu(conv(g, update_sn=update_sn), 0.2)
        global_logits = self.global_out(g, update_sn=update_sn)
        return DiscriminatorOutput(local_logits, global_logits, eta, cam_map)

    __call__ = forward

    def _layers(self):
        for i, conv in enumerate(self.trunk):
            yield f"trunk{i}", conv
        yield "local_conv", self.local_conv
        yield "local_out", self.local_out
        for i, conv in enumerate(self.global_convs):
            yield f"global{i}", conv
        yield "global_out", self.global_out

    def named_parameters(self, prefix: str = ""):
        for name, conv in self._layers():
            yield from conv.named_parameters(f"{prefix}{name}")
        yield from self.attn.named_parameters(f"{prefix}attn.")

    def named_buffers(self, prefix: str = ""):
        for name, conv in self._layers():
            yield from conv.named_buffers(f"{prefix}{name}")

    def spectral_sigmas(self):
        """Top singular value of each normalized weight, computed exactly."""
        out = []
        for name, conv in self._layers():
            w_sn, _ = spectral_normalize(conv.weight, conv.u, update=False)
            rows = w_sn.shape[0]
            out.append((name, float(np.linalg.svd(
                w_sn.data.reshape(rows, -1), compute_uv=False)[0])))
        return out

    def post_step(self):
        pass


def set_requires_grad(net, flag: bool):
    for _, p in net.named_parameters():
        p.requires_grad = flag


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1
