"""Small dense-matrix kernel behind the orthogonal resampling operators.

Everything here works on sigma-by-sigma float64 matrices, where sigma is the
channel multiplier of a resampling stride (4 for 2D stride 2, 8 for 3D).
The matrix exponential and its directional derivative are plain truncated
power series: the series converge for every matrix, and for the norms that
occur in practice (||S||_F <= 10) the truncation error stays below 1e-12.
No scaling-and-squaring is applied, so accuracy degrades for larger norms.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

# Series terms stop once ||term||_F <= SERIES_RTOL * ||accumulated||_F,
# with a hard cap. 40 terms cover the skew case up to ||S||_F = 10:
# the spectral radius is then at most 10/sqrt(2), and rho^41/41! < 1e-12.
SERIES_RTOL = 1e-16
SERIES_MAX_TERMS = 40


def _as_square(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def skew(theta) -> np.ndarray:
    """Skew-symmetric part theta - theta^T of an unconstrained square matrix.

    The map is onto the skew-symmetric matrices and kills every symmetric
    component, so any two parameters differing by a symmetric matrix produce
    the same output.
    """
    t = _as_square(theta, "theta")
    return t - t.T


def matrix_exp(s) -> np.ndarray:
    """Truncated power series sum_k S^k / k! of the matrix exponential."""
    a = _as_square(s, "S")
    acc = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, SERIES_MAX_TERMS + 1):
        term = term @ a / k
        acc = acc + term
        if np.linalg.norm(term) <= SERIES_RTOL * np.linalg.norm(acc):
            break
    return acc


def matrix_exp_frechet(s, h) -> np.ndarray:
    """Directional derivative of the matrix exponential at S in direction H.

    Evaluates sum_{k>=1} M_k / k! with M_1 = H and M_k = M_{k-1} S + S^{k-1} H,
    truncated like ``matrix_exp``. The result is linear in H.
    """
    a = _as_square(s, "S")
    b = _as_square(h, "H")
    if a.shape != b.shape:
        raise ShapeError(f"S and H must have equal shapes, got {a.shape} and {b.shape}")
    m_k = b.copy()
    acc = b.copy()  # k = 1 term, M_1 / 1!
    s_pow = np.eye(a.shape[0])  # S^{k-1}, here k = 1
    fact = 1.0
    for k in range(2, SERIES_MAX_TERMS + 1):
        s_pow = s_pow @ a
        m_k = m_k @ a + s_pow @ b
        fact *= k
        term = m_k / fact
        acc = acc + term
        if np.linalg.norm(term) <= SERIES_RTOL * np.linalg.norm(acc):
            break
    return acc


def _stride_tuple(s) -> tuple[int, ...]:
    # Accepts a StrideSpec or any sequence of ints.
    ext = tuple(int(v) for v in getattr(s, "s", s))
    if not ext or any(v < 1 for v in ext):
        raise ShapeError(f"invalid stride extents {ext}")
    return ext


def reorder_to_kernel(a, s) -> np.ndarray:
    """Reorder a sigma-by-sigma matrix into a filter bank of shape (sigma, 1, *s).

    Filter i is row i of the matrix reshaped row-major into the stride box,
    so the identity matrix yields the one-hot pixel-shuffle filters.
    """
    ext = _stride_tuple(s)
    m = _as_square(a, "A")
    sigma = int(np.prod(ext))
    if m.shape[0] != sigma:
        raise ShapeError(
            f"matrix size {m.shape[0]} does not match channel multiplier {sigma} of stride {ext}"
        )
    return np.ascontiguousarray(m).reshape((sigma, 1) + ext)


def reorder_to_matrix(kernel) -> np.ndarray:
    """Inverse of ``reorder_to_kernel``: flatten each filter back into a row."""
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim < 3 or k.shape[1] != 1:
        raise ShapeError(f"kernel must have shape (sigma, 1, s1, ..., sd), got {k.shape}")
    sigma = k.shape[0]
    if int(np.prod(k.shape[2:])) != sigma:
        raise ShapeError(
            f"kernel spatial volume {np.prod(k.shape[2:])} must equal its filter count {sigma}"
        )
    return np.ascontiguousarray(k).reshape(sigma, sigma)
