"""Synthetic datasets, image metrics and PGM I/O for the desk-scale tasks.

Foam phantoms are solid disks riddled with non-overlapping circular holes
(material 1, holes and background 0). Degradation is a separable Gaussian
blur followed by additive Gaussian noise. All generators draw from the
counter-based generator in :mod:`iunet.rng`, so outputs are a pure function
of their seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, ShapeError
from .rng import make_rng


@dataclass
class FoamPhantom2D:
    image: np.ndarray  # (size, size) float64 in {0, 1}
    disk_center: tuple
    disk_radius: float
    holes: list  # (cy, cx, r)
    seed: int


def gen_foam2d(seed: int, size: int, hole_count: int) -> FoamPhantom2D:
    """Reproducible foam phantom; hole placement by rejection sampling."""
    rng = make_rng(seed)
    disk_r = size * (0.38 + 0.05 * rng.uniform())
    center = size / 2.0 + rng.uniform(-0.02, 0.02, size=2) * size
    holes = []
    budget = 200 + 80 * hole_count
    attempts = 0
    while len(holes) < hole_count:
        if attempts >= budget:
            raise GenerationError(
                f"could not place {hole_count} holes in a {size}x{size} phantom "
                f"after {attempts} attempts"
            )
        attempts += 1
        r = size * (0.02 + 0.05 * rng.uniform())
        ang = rng.uniform(0.0, 2.0 * math.pi)
        rad = (disk_r - r - 1.0) * math.sqrt(rng.uniform())
        cy = center[0] + rad * math.sin(ang)
        cx = center[1] + rad * math.cos(ang)
        if rad < 0:
            continue
        if any((cy - hy) ** 2 + (cx - hx) ** 2 < (r + hr + 1.0) ** 2
               for hy, hx, hr in holes):
            continue
        holes.append((cy, cx, r))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = ((yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= disk_r**2).astype(np.float64)
    for hy, hx, hr in holes:
        img[(yy - hy) ** 2 + (xx - hx) ** 2 <= hr**2] = 0.0
    return FoamPhantom2D(image=img, disk_center=tuple(center), disk_radius=disk_r,
                         holes=holes, seed=seed)


def gaussian_blur(img, radius: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; sigma = radius / 2."""
    a = np.asarray(img, dtype=np.float64)
    if radius <= 0:
        return a.copy()
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(xs**2) / (2.0 * (radius / 2.0) ** 2))
    w /= w.sum()
    out = a
    for axis in range(a.ndim):
        moved = np.moveaxis(out, axis, -1)
        padded = np.pad(moved, [(0, 0)] * (a.ndim - 1) + [(radius, radius)], mode="reflect")
        acc = np.zeros_like(moved)
        for k, wk in enumerate(w):
            acc += wk * padded[..., k : k + moved.shape[-1]]
        out = np.moveaxis(acc, -1, axis)
    return out


@dataclass
class NoisySample:
    clean: np.ndarray
    degraded: np.ndarray
    seed: int


def degrade(clean, noise_sigma: float, blur_radius: int, seed: int) -> NoisySample:
    """Gaussian blur then additive Gaussian noise, deterministic per seed."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    c = np.asarray(clean, dtype=np.float64)
    rng = make_rng(seed)
    out = gaussian_blur(c, blur_radius)
    if noise_sigma > 0:
        out = out + noise_sigma * rng.standard_normal(c.shape)
    return NoisySample(clean=c, degraded=out, seed=seed)


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give math.inf."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gen_mixture(seed: int, count: int, shape=(2, 4, 4), offset=2.0,
                comp_std=0.5, jitter_std=0.5) -> np.ndarray:
    """Two-component 2D Gaussian mixture embedded as channel-first tensors.

    One mixture coordinate is broadcast across all positions of each channel
    with i.i.d. per-pixel jitter on top; components sit at +-offset on both
    coordinates with equal weights, so every coordinate of the embedded
    tensor has mean zero.
    """
    if len(shape) < 1 or shape[0] != 2:
        raise ShapeError(f"mixture tensors need two channels, got shape {shape}")
    rng = make_rng(seed)
    comp = rng.integers(0, 2, size=count) * 2 - 1  # -1 or +1
    uv = offset * comp[:, None] + comp_std * rng.standard_normal((count, 2))
    x = jitter_std * rng.standard_normal((count,) + tuple(shape))
    spatial_axes = (1,) * (len(shape) - 1)
    x[:, 0] += uv[:, 0].reshape((count,) + spatial_axes)
    x[:, 1] += uv[:, 1].reshape((count,) + spatial_axes)
    return x


def write_pgm(path, img) -> None:
    """8-bit binary PGM of an image whose values are clipped to [0, 1]."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"PGM export needs a 2D image, got shape {a.shape}")
    q = np.clip(np.rint(np.clip(a, 0.0, 1.0) * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM back into floats in [0, 1]."""
    with open(path, "rb") as f:
        data = f.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"unsupported PGM magic {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM files are supported")
    pos += 1  # single whitespace after the header
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return raw.reshape(height, width).astype(np.float64) / 255.0
