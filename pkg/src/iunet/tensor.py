"""Channel-first float64 tensors and the three convolution primitives.

Layout contract: an activation is a numpy array of shape (C, N1, ..., Nd),
row-major, float64. Every operation also accepts a leading batch axis
(B, C, N1, ..., Nd) and then applies itself per sample; reductions over the
batch (kernel gradients) sum in fixed order.

The stride-equals-kernel convolution is a reshape into non-overlapping
patches followed by a single sigma-by-sigma matrix product. This is the
same block-diagonal factorization the tests use as an oracle, and it makes
the transpose convolution the exact adjoint by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .linalg import reorder_to_kernel, reorder_to_matrix


@dataclass(frozen=True)
class StrideSpec:
    """Per-axis strides of a resampling operator; kernel extents match them."""

    s: tuple[int, ...]

    def __post_init__(self):
        ext = tuple(int(v) for v in self.s)
        object.__setattr__(self, "s", ext)
        if not 1 <= len(ext) <= 3:
            raise ShapeError(f"spatial dimensionality must be 1, 2 or 3, got {len(ext)}")
        if any(v < 1 for v in ext):
            raise ShapeError(f"stride extents must be positive, got {ext}")
        if self.sigma < 2:
            raise ShapeError(f"channel multiplier must be at least 2, got stride {ext}")

    @property
    def d(self) -> int:
        return len(self.s)

    @property
    def sigma(self) -> int:
        return int(np.prod(self.s))


def as_tensor(x, d: int, name: str = "tensor") -> tuple[np.ndarray, bool]:
    """Coerce to float64 and report whether a batch axis is present.

    Ambiguity between (C, N...) and (B, C, N...) is resolved by the known
    spatial dimensionality d.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == d + 1:
        return a[None], False
    if a.ndim == d + 2:
        return a, True
    raise ShapeError(
        f"{name} must have shape (C, N1..N{d}) or (B, C, N1..N{d}), got {a.shape}"
    )


def _check_kernel(k, s: StrideSpec) -> np.ndarray:
    a = np.asarray(k, dtype=np.float64)
    want = (s.sigma, 1) + s.s
    if a.shape != want:
        raise ShapeError(f"kernel must have shape {want}, got {a.shape}")
    return a


def _check_divisible(spatial: tuple[int, ...], s: StrideSpec):
    if len(spatial) != s.d:
        raise ShapeError(f"expected {s.d} spatial axes, got extents {spatial}")
    for n, v in zip(spatial, s.s):
        if n % v != 0:
            raise ShapeError(
                f"spatial extents {spatial} are not divisible by stride {s.s}; "
                "inputs are never padded implicitly"
            )


def _to_patches(xc: np.ndarray, s: StrideSpec) -> np.ndarray:
    """(B, N1..Nd) -> (sigma, B*M) with columns = row-major-vectorized blocks."""
    b = xc.shape[0]
    coarse = tuple(n // v for n, v in zip(xc.shape[1:], s.s))
    shape = (b,)
    for n, v in zip(coarse, s.s):
        shape += (n, v)
    z = xc.reshape(shape)
    # -> (s1..sd, B, coarse1..coarsed)
    order = [2 * i + 2 for i in range(s.d)] + [0] + [2 * i + 1 for i in range(s.d)]
    z = z.transpose(order)
    return z.reshape(s.sigma, b * int(np.prod(coarse)))


def _from_patches(p: np.ndarray, b: int, spatial: tuple[int, ...], s: StrideSpec) -> np.ndarray:
    """Inverse of ``_to_patches``; returns (B, N1..Nd)."""
    coarse = tuple(n // v for n, v in zip(spatial, s.s))
    z = p.reshape(s.s + (b,) + coarse)
    order = [s.d] + [v for i in range(s.d) for v in (s.d + 1 + i, i)]
    z = z.transpose(order)
    return z.reshape((b,) + spatial)


def conv_block(k, x, s: StrideSpec) -> np.ndarray:
    """Stride-equals-kernel convolution of a single-channel tensor.

    Each output pixel vector is A @ (vectorized patch) where A is the kernel
    reordered back into a matrix; windows never overlap.
    """
    kk = _check_kernel(k, s)
    xb, batched = as_tensor(x, s.d, "x")
    if xb.shape[1] != 1:
        raise ShapeError(f"conv_block input must have one channel, got {xb.shape[1]}")
    _check_divisible(xb.shape[2:], s)
    b = xb.shape[0]
    coarse = tuple(n // v for n, v in zip(xb.shape[2:], s.s))
    a = kk.reshape(s.sigma, s.sigma)
    y = (a @ _to_patches(xb[:, 0], s)).reshape((s.sigma, b) + coarse)
    y = np.ascontiguousarray(np.moveaxis(y, 1, 0))
    return y if batched else y[0]


def conv_block_transpose(k, y, s: StrideSpec) -> np.ndarray:
    """Exact adjoint of ``conv_block``; its inverse when the kernel is orthogonal."""
    kk = _check_kernel(k, s)
    yb, batched = as_tensor(y, s.d, "y")
    if yb.shape[1] != s.sigma:
        raise ShapeError(f"expected {s.sigma} channels, got {yb.shape[1]}")
    b = yb.shape[0]
    spatial = tuple(n * v for n, v in zip(yb.shape[2:], s.s))
    a = kk.reshape(s.sigma, s.sigma)
    ymat = np.moveaxis(yb, 1, 0).reshape(s.sigma, -1)
    x = _from_patches(a.T @ ymat, b, spatial, s)[:, None]
    return x if batched else x[0]


def conv_kernel_adjoint(g, x, s: StrideSpec) -> np.ndarray:
    """Adjoint of K -> conv_block(K, x) in the kernel variable.

    Returns the kernel-shaped gradient of <conv_block(K, x), g>; for batched
    inputs the per-sample contributions are summed.
    """
    xb, _ = as_tensor(x, s.d, "x")
    gb, _ = as_tensor(g, s.d, "g")
    if xb.shape[1] != 1:
        raise ShapeError(f"conv_kernel_adjoint input must have one channel, got {xb.shape[1]}")
    _check_divisible(xb.shape[2:], s)
    coarse = tuple(n // v for n, v in zip(xb.shape[2:], s.s))
    if gb.shape != (xb.shape[0], s.sigma) + coarse:
        raise ShapeError(
            f"g has shape {gb.shape}, expected {(xb.shape[0], s.sigma) + coarse}"
        )
    gmat = np.moveaxis(gb, 1, 0).reshape(s.sigma, -1)
    grad_a = gmat @ _to_patches(xb[:, 0], s).T
    return reorder_to_kernel(grad_a, s)


def _conv3_windows(x: np.ndarray, d: int) -> np.ndarray:
    """(B, C, N...) -> (B*M, C*3^d) window matrix of the zero-padded input."""
    pad = np.pad(x, ((0, 0), (0, 0)) + ((1, 1),) * d)
    win = sliding_window_view(pad, (3,) * d, axis=tuple(range(2, 2 + d)))
    b, c = x.shape[0], x.shape[1]
    m = int(np.prod(x.shape[2:]))
    # win axes: (B, C, N..., 3...); fold to (B, M, C, K) then (B*M, C*K)
    win = win.reshape(b, c, m, 3**d)
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * m, c * 3**d)


def same_conv3(w, x) -> np.ndarray:
    """Zero-padded stride-1 convolution with 3^d kernels, preserving extents."""
    wk = np.asarray(w, dtype=np.float64)
    d = wk.ndim - 2
    if d < 1 or wk.shape[2:] != (3,) * d:
        raise ShapeError(f"weights must have shape (C_out, C_in, 3...), got {wk.shape}")
    xb, batched = as_tensor(x, d, "x")
    if xb.shape[1] != wk.shape[1]:
        raise ShapeError(f"input has {xb.shape[1]} channels, weights expect {wk.shape[1]}")
    b = xb.shape[0]
    spatial = xb.shape[2:]
    wmat = wk.reshape(wk.shape[0], -1)
    ymat = _conv3_windows(xb, d) @ wmat.T  # (B*M, C_out)
    y = ymat.reshape((b,) + spatial + (wk.shape[0],))
    y = np.ascontiguousarray(np.moveaxis(y, -1, 1))
    return y if batched else y[0]


def same_conv3_backward(w, x, g) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of <same_conv3(W, x), g> with respect to W and x.

    The weight gradient sums over the batch; the input gradient is per sample.
    """
    wk = np.asarray(w, dtype=np.float64)
    d = wk.ndim - 2
    xb, batched = as_tensor(x, d, "x")
    gb, gbatched = as_tensor(g, d, "g")
    if gbatched != batched or gb.shape != (xb.shape[0], wk.shape[0]) + xb.shape[2:]:
        raise ShapeError(
            f"g has shape {np.asarray(g).shape}, expected output shape of same_conv3"
        )
    b = xb.shape[0]
    spatial = xb.shape[2:]
    m = int(np.prod(spatial))
    k = 3**d
    wmat = wk.reshape(wk.shape[0], -1)
    gmat = np.moveaxis(gb, 1, -1).reshape(b * m, wk.shape[0])  # (B*M, C_out)

    grad_w = (gmat.T @ _conv3_windows(xb, d)).reshape(wk.shape)

    gwin = gmat @ wmat  # (B*M, C_in*K)
    gwin = gwin.reshape(b, m, xb.shape[1], k).transpose(0, 2, 3, 1)
    gwin = gwin.reshape((b, xb.shape[1], k) + spatial)
    grad_pad = np.zeros((b, xb.shape[1]) + tuple(n + 2 for n in spatial))
    for idx in range(k):
        off = np.unravel_index(idx, (3,) * d)
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + n) for o, n in zip(off, spatial)
        )
        grad_pad[sl] += gwin[:, :, idx]
    crop = (slice(None), slice(None)) + tuple(slice(1, 1 + n) for n in spatial)
    grad_x = grad_pad[crop]
    return grad_w, grad_x if batched else grad_x[0]


def save_tensor(path, arr):
    """Raw little-endian float64 payload plus a JSON shape sidecar."""
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    with open(path, "wb") as f:
        f.write(a.astype("<f8").tobytes())
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(
            {"shape": list(a.shape), "dtype": "f64", "layout": "channel-first-row-major"},
            f,
        )


def load_tensor(path) -> np.ndarray:
    with open(str(path) + ".json", "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("dtype") != "f64":
        raise ValueError(f"unsupported tensor dtype {meta.get('dtype')!r}")
    shape = tuple(int(v) for v in meta["shape"])
    raw = np.fromfile(path, dtype="<f8")
    if raw.size != int(np.prod(shape)):
        raise ValueError(
            f"payload holds {raw.size} values but sidecar shape {shape} needs {int(np.prod(shape))}"
        )
    return raw.reshape(shape)
