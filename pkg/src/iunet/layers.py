"""Invertible building blocks: couplings, normalization, channel split.

Coupling layers transform one contiguous channel half conditioned on the
other; the roles alternate with the layer's ``swap`` flag. The conditioning
subnet is a fixed pipeline (3^d convolution, normalization with zero-
initialized gain, leaky ReLU), so a freshly built layer is the identity map.
Parameter gradients returned by the backward passes sum over the batch;
callers fold any 1/B into the incoming cotangent.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, ShapeError
from .tensor import as_tensor, same_conv3, same_conv3_backward


@dataclass
class NormParams:
    """Per-channel affine normalization over a channel grouping."""

    gamma: np.ndarray
    beta: np.ndarray
    scheme: str = "layer"  # "layer" (one group) or "group" (group_size channels each)
    group_size: int | None = None
    eps: float = 1e-6

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.gamma.shape != self.beta.shape or self.gamma.ndim != 1:
            raise ShapeError("gamma and beta must be equal-length vectors")
        if self.scheme not in ("layer", "group"):
            raise ConfigurationError(f"unknown normalization scheme {self.scheme!r}")
        c = self.gamma.shape[0]
        if self.scheme == "group":
            if not self.group_size or c % self.group_size != 0:
                raise ConfigurationError(
                    f"group size {self.group_size} does not divide {c} channels"
                )
        if not self.eps > 0:
            raise ConfigurationError("eps must be positive")

    @classmethod
    def zero_init(cls, channels, scheme="layer", group_size=None, eps=1e-6):
        """Zero gain and bias: the surrounding block becomes the zero map."""
        return cls(np.zeros(channels), np.zeros(channels), scheme, group_size, eps)

    def groups(self) -> int:
        c = self.gamma.shape[0]
        return c // self.group_size if self.scheme == "group" else 1


def _norm_stats(p: NormParams, xb: np.ndarray):
    b, c = xb.shape[0], xb.shape[1]
    g = p.groups()
    flat = xb.reshape(b, g, -1)  # group channels and all spatial positions together
    mean = flat.mean(axis=2, keepdims=True)
    var = flat.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = ((flat - mean) * inv).reshape(xb.shape)
    return xhat, inv, flat.shape[2]


def _chan(v: np.ndarray, spatial_ndim: int) -> np.ndarray:
    return v.reshape((1, -1) + (1,) * spatial_ndim)


def normalize(p: NormParams, x, d: int | None = None) -> np.ndarray:
    """Standardize per sample over the channel grouping, then apply gamma/beta."""
    dd = d if d is not None else np.asarray(x).ndim - 1
    xb, batched = as_tensor(x, dd, "x")
    if xb.shape[1] != p.gamma.shape[0]:
        raise ShapeError(f"input has {xb.shape[1]} channels, params expect {p.gamma.shape[0]}")
    xhat, _, _ = _norm_stats(p, xb)
    y = _chan(p.gamma, dd) * xhat + _chan(p.beta, dd)
    return y if batched else y[0]


def normalize_backward(p: NormParams, x, g, d: int | None = None):
    """Gradients of <normalize(p, x), g> w.r.t. (x, gamma, beta)."""
    dd = d if d is not None else np.asarray(x).ndim - 1
    xb, batched = as_tensor(x, dd, "x")
    gb, _ = as_tensor(g, dd, "g")
    if gb.shape != xb.shape:
        raise ShapeError(f"cotangent shape {gb.shape} differs from input shape {xb.shape}")
    xhat, inv, n = _norm_stats(p, xb)
    red = tuple([0] + list(range(2, xb.ndim)))
    g_beta = gb.sum(axis=red)
    g_gamma = (gb * xhat).sum(axis=red)
    gxh = gb * _chan(p.gamma, dd)
    b, grp = xb.shape[0], p.groups()
    gxh_f = gxh.reshape(b, grp, -1)
    xhat_f = xhat.reshape(b, grp, -1)
    m1 = gxh_f.mean(axis=2, keepdims=True)
    m2 = (gxh_f * xhat_f).mean(axis=2, keepdims=True)
    gx = (inv * (gxh_f - m1 - xhat_f * m2)).reshape(xb.shape)
    return (gx if batched else gx[0]), g_gamma, g_beta


@dataclass
class SubnetParams:
    """Conditioning subnet: 3^d convolution, normalization, leaky ReLU."""

    conv_w: np.ndarray
    norm: NormParams
    leak: float = 0.01

    def __post_init__(self):
        self.conv_w = np.asarray(self.conv_w, dtype=np.float64)
        if self.conv_w.ndim < 3:
            raise ShapeError("conv weights must have shape (C_out, C_in, 3, ...)")
        if self.norm.gamma.shape[0] != self.conv_w.shape[0]:
            raise ShapeError("normalization width must match conv output channels")

    @property
    def d(self) -> int:
        return self.conv_w.ndim - 2


def subnet_forward(p: SubnetParams, x) -> np.ndarray:
    h = same_conv3(p.conv_w, x)
    h = normalize(p.norm, h, p.d)
    return np.where(h >= 0, h, p.leak * h)


def _subnet_backward(p: SubnetParams, x, g):
    h1 = same_conv3(p.conv_w, x)
    h2 = normalize(p.norm, h1, p.d)
    g2 = g * np.where(h2 >= 0, 1.0, p.leak)
    g1, g_gamma, g_beta = normalize_backward(p.norm, h1, g2, p.d)
    g_w, g_x = same_conv3_backward(p.conv_w, x, g1)
    return g_x, {"conv_w": g_w, "norm_gamma": g_gamma, "norm_beta": g_beta}


@dataclass
class CouplingLayer:
    """Additive or affine coupling over contiguous channel halves."""

    kind: str
    subnet: SubnetParams
    swap: bool = False
    clamp: float = 2.0

    def __post_init__(self):
        if self.kind not in ("additive", "affine"):
            raise ConfigurationError(f"unknown coupling kind {self.kind!r}")

    @classmethod
    def build(cls, kind, channels, d, rng, swap=False, norm_scheme="layer",
              group_size=None, clamp=2.0, leak=0.01):
        if channels < 2 or channels % 2 != 0:
            raise ShapeError(f"coupling layers need an even channel count >= 2, got {channels}")
        half = channels // 2
        out = half if kind == "additive" else channels
        fan_in = half * 3**d
        w = rng.standard_normal((out, half) + (3,) * d) / np.sqrt(fan_in)
        norm = NormParams.zero_init(out, norm_scheme, group_size)
        return cls(kind=kind, subnet=SubnetParams(conv_w=w, norm=norm, leak=leak),
                   swap=swap, clamp=clamp)

    def _halves(self, xb):
        c = xb.shape[1]
        if c < 2 or c % 2 != 0:
            raise ShapeError(f"coupling layers need an even channel count >= 2, got {c}")
        h = c // 2
        if self.swap:
            return xb[:, h:], xb[:, :h], h
        return xb[:, :h], xb[:, h:], h

    def _assemble(self, passive, active):
        if self.swap:
            return np.concatenate([active, passive], axis=1)
        return np.concatenate([passive, active], axis=1)

    def _scale_shift(self, passive):
        h = subnet_forward(self.subnet, passive)
        half = h.shape[1] // 2
        s_raw = h[:, :half]
        sc = self.clamp * np.tanh(s_raw / self.clamp)
        return s_raw, sc, h[:, half:]


def coupling_forward(layer: CouplingLayer, x):
    """Transform the active half conditioned on the passive half.

    Returns (y, logdet); logdet is 0 for additive couplings and the sum of
    the clamped log-scales for affine ones (per sample when batched).
    """
    d = layer.subnet.d
    xb, batched = as_tensor(x, d, "x")
    passive, active, _ = layer._halves(xb)
    if layer.kind == "additive":
        y_act = active + subnet_forward(layer.subnet, passive)
        logdet = np.zeros(xb.shape[0])
    else:
        _, sc, t = layer._scale_shift(passive)
        y_act = active * np.exp(sc) + t
        logdet = sc.reshape(xb.shape[0], -1).sum(axis=1)
    y = layer._assemble(passive, y_act)
    return (y, logdet) if batched else (y[0], float(logdet[0]))


def coupling_inverse(layer: CouplingLayer, y):
    """Exact inverse of ``coupling_forward``."""
    x, _ = _coupling_inverse_ld(layer, y)
    return x


def _coupling_inverse_ld(layer: CouplingLayer, y):
    # Also accumulates the log-determinant of the inverse map.
    d = layer.subnet.d
    yb, batched = as_tensor(y, d, "y")
    passive, y_act, _ = layer._halves(yb)
    if layer.kind == "additive":
        active = y_act - subnet_forward(layer.subnet, passive)
        logdet = np.zeros(yb.shape[0])
    else:
        _, sc, t = layer._scale_shift(passive)
        active = (y_act - t) * np.exp(-sc)
        logdet = -sc.reshape(yb.shape[0], -1).sum(axis=1)
    x = layer._assemble(passive, active)
    return (x, logdet) if batched else (x[0], float(logdet[0]))


def coupling_backward(layer: CouplingLayer, y, grad_y, x_in, grad_logdet=0.0):
    """Vector-Jacobian products through a coupling layer.

    ``x_in`` is the layer input, either stored by the tape or reconstructed
    by inversion; ``grad_logdet`` weights the layer's logdet output (used by
    likelihood training). Returns (grad_x, parameter-gradient dict).
    """
    d = layer.subnet.d
    xb, batched = as_tensor(x_in, d, "x_in")
    gyb, _ = as_tensor(grad_y, d, "grad_y")
    if gyb.shape != xb.shape:
        raise ShapeError(f"grad_y shape {gyb.shape} differs from input shape {xb.shape}")
    passive, active, _ = layer._halves(xb)
    g_passive_out, g_active_out, _ = layer._halves(gyb)

    if layer.kind == "additive":
        g_active_in = g_active_out
        g_passive_sub, pgrads = _subnet_backward(layer.subnet, passive, g_active_out)
    else:
        s_raw, sc, _ = layer._scale_shift(passive)
        es = np.exp(sc)
        g_active_in = g_active_out * es
        gld = np.asarray(grad_logdet, dtype=np.float64).reshape(-1)
        if gld.size == 1:
            gld = np.full(xb.shape[0], float(gld[0]))
        g_sc = g_active_out * active * es + gld.reshape((-1,) + (1,) * (xb.ndim - 1))
        g_sraw = g_sc * (1.0 - np.tanh(s_raw / layer.clamp) ** 2)
        upstream = np.concatenate([g_sraw, g_active_out], axis=1)
        g_passive_sub, pgrads = _subnet_backward(layer.subnet, passive, upstream)

    g_passive_in = g_passive_out + g_passive_sub
    gx = layer._assemble(g_passive_in, g_active_in)
    return (gx if batched else gx[0]), pgrads


def split_count(channels: int, frac) -> int:
    """Number of channels the split keeps; rejects non-integer lambda * C."""
    if isinstance(frac, str):
        frac = Fraction(frac)
    k = float(frac) * channels
    k_int = round(k)
    if abs(k - k_int) > 1e-9:
        raise ConfigurationError(
            f"split fraction {frac} of {channels} channels is not an integer"
        )
    if not 1 <= k_int <= channels - 1:
        raise ConfigurationError(
            f"split fraction {frac} of {channels} channels leaves an empty side"
        )
    return k_int


def split(x, frac, d: int | None = None):
    """Split channels into (first lambda*C, remainder); concat restores x bitwise."""
    dd = d if d is not None else np.asarray(x).ndim - 1
    xb, batched = as_tensor(x, dd, "x")
    k = split_count(xb.shape[1], frac)
    keep, skip = xb[:, :k].copy(), xb[:, k:].copy()
    return (keep, skip) if batched else (keep[0], skip[0])


def concat(keep, skip, d: int | None = None):
    dd = d if d is not None else np.asarray(keep).ndim - 1
    kb, batched = as_tensor(keep, dd, "keep")
    sb, sbatched = as_tensor(skip, dd, "skip")
    if sbatched != batched or kb.shape[0] != sb.shape[0] or kb.shape[2:] != sb.shape[2:]:
        raise ShapeError("split halves disagree in batch or spatial extents")
    x = np.concatenate([kb, sb], axis=1)
    return x if batched else x[0]
