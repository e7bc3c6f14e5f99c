"""Learnable invertible down- and upsampling.

A ResampleOp carries one raw sigma-by-sigma parameter matrix per input
channel (optionally one shared matrix). Each matrix is mapped to a special
orthogonal matrix by exponentiating its skew-symmetric part and reordered
into a stride-matched filter bank; downsampling applies the resulting
orthogonal convolution per channel, and upsampling is its adjoint, which
for an orthogonal operator is also its inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .linalg import matrix_exp, matrix_exp_frechet, reorder_to_kernel, reorder_to_matrix, skew
from .rng import make_rng
from .tensor import StrideSpec, as_tensor, conv_block, conv_block_transpose, conv_kernel_adjoint

THETA_INIT_STD = 0.05  # keeps exp(skew(theta)) near a benign orthogonal map


@dataclass
class ResampleOp:
    """Invertible resampling operator over C channels.

    ``thetas`` has shape (1, sigma, sigma) when shared, else (C, sigma, sigma).
    ``mode`` records the orientation the operator plays inside a network;
    the forward/adjoint maps themselves are exposed separately below.
    """

    stride: StrideSpec
    channels: int
    thetas: np.ndarray
    mode: str = "down"
    shared: bool = False
    trainable: bool = field(default=True)

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        sigma = self.stride.sigma
        want = (1 if self.shared else self.channels, sigma, sigma)
        if self.thetas.shape != want:
            raise ShapeError(f"thetas must have shape {want}, got {self.thetas.shape}")
        if self.mode not in ("down", "up"):
            raise ShapeError(f"mode must be 'down' or 'up', got {self.mode!r}")
        if self.channels < 1:
            raise ShapeError("channel count must be positive")

    @classmethod
    def initialize(cls, stride, channels, seed_or_rng=0, mode="down", shared=False,
                   std=THETA_INIT_STD):
        s = stride if isinstance(stride, StrideSpec) else StrideSpec(tuple(stride))
        rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) else make_rng(seed_or_rng)
        n = 1 if shared else channels
        thetas = std * rng.standard_normal((n, s.sigma, s.sigma))
        return cls(stride=s, channels=channels, thetas=thetas, mode=mode, shared=shared)

    @classmethod
    def pixel_shuffle(cls, stride, channels, mode="down"):
        """Fixed operator with theta = 0; exp gives the identity matrix."""
        s = stride if isinstance(stride, StrideSpec) else StrideSpec(tuple(stride))
        thetas = np.zeros((1, s.sigma, s.sigma))
        return cls(stride=s, channels=channels, thetas=thetas, mode=mode, shared=True,
                   trainable=False)

    def theta(self, c: int) -> np.ndarray:
        return self.thetas[0 if self.shared else c]

    def kernels(self) -> list[np.ndarray]:
        """One orthogonal filter bank per channel (a single one if shared)."""
        mats = [matrix_exp(skew(t)) for t in self.thetas]
        if self.shared:
            mats = mats * self.channels
        return [reorder_to_kernel(m, self.stride) for m in mats]


def _split_channels(x, op: ResampleOp, want: int, name: str):
    xb, batched = as_tensor(x, op.stride.d, name)
    if xb.shape[1] != want:
        raise ShapeError(f"{name} has {xb.shape[1]} channels, operator expects {want}")
    return xb, batched


def down_forward(op: ResampleOp, x) -> np.ndarray:
    """C x N -> (sigma C) x (N / s); channel block i is the convolution of channel i."""
    xb, batched = _split_channels(x, op, op.channels, "x")
    ks = op.kernels()
    blocks = [conv_block(ks[c], xb[:, c : c + 1], op.stride) for c in range(op.channels)]
    y = np.concatenate(blocks, axis=1)
    return y if batched else y[0]


def up_forward(op: ResampleOp, y) -> np.ndarray:
    """(sigma C) x (N / s) -> C x N; exact inverse of ``down_forward``."""
    sigma = op.stride.sigma
    yb, batched = as_tensor(y, op.stride.d, "y")
    if yb.shape[1] % sigma != 0:
        raise ShapeError(f"channel count {yb.shape[1]} is not divisible by sigma = {sigma}")
    if yb.shape[1] != sigma * op.channels:
        raise ShapeError(
            f"expected {sigma * op.channels} channels for a {op.channels}-channel operator, "
            f"got {yb.shape[1]}"
        )
    ks = op.kernels()
    blocks = [
        conv_block_transpose(ks[c], yb[:, c * sigma : (c + 1) * sigma], op.stride)
        for c in range(op.channels)
    ]
    x = np.concatenate(blocks, axis=1)
    return x if batched else x[0]


def grad_theta(op: ResampleOp, x, g) -> np.ndarray:
    """Gradient of <down_forward(op, x), g> with respect to the raw thetas.

    Per channel: reorder the kernel-space adjoint back into a matrix, push it
    through the derivative of the exponential at S^T, and skew-symmetrize.
    Returns an array shaped like ``op.thetas`` (shared mode sums channels).
    """
    sigma = op.stride.sigma
    xb, _ = _split_channels(x, op, op.channels, "x")
    gb, _ = as_tensor(g, op.stride.d, "g")
    if gb.shape[1] != sigma * op.channels:
        raise ShapeError(
            f"g has {gb.shape[1]} channels, expected {sigma * op.channels}"
        )
    out = np.zeros_like(op.thetas)
    for c in range(op.channels):
        gk = conv_kernel_adjoint(gb[:, c * sigma : (c + 1) * sigma], xb[:, c : c + 1], op.stride)
        gmat = reorder_to_matrix(gk)
        s_c = skew(op.theta(c))
        f = matrix_exp_frechet(s_c.T, gmat)
        out[0 if op.shared else c] += f - f.T
    return out


def grad_theta_up(op: ResampleOp, y_in, grad_out) -> np.ndarray:
    """Gradient of <up_forward(op, y_in), grad_out> with respect to the thetas.

    Since up is the adjoint of down, <U y, g> = <y, D g>, so this is
    ``grad_theta`` with the roles of input and cotangent exchanged.
    """
    return grad_theta(op, grad_out, y_in)


def grad_input(op: ResampleOp, g) -> np.ndarray:
    """Adjoint of ``down_forward`` in its input: identical to ``up_forward``."""
    return up_forward(op, g)
