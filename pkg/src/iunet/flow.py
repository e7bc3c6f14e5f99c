"""Normalizing-flow likelihoods, sampling and training on invertible networks.

The flow direction maps data to latents; the exact log-likelihood is the
base log-density at the latent plus the accumulated log-determinant, which
for these networks is a sum over the coupling layers alone (resampling,
splitting and concatenation are orthogonal and contribute nothing).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericsError, ShapeError
from .net import IUNet
from .optim import Adam
from .resample import ResampleOp, down_forward, up_forward
from .rng import make_rng

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class BaseDistribution:
    """Standard normal over a fixed event shape."""

    shape: tuple

    @property
    def n(self) -> int:
        return int(np.prod(self.shape))

    def log_prob(self, z) -> np.ndarray:
        zb = np.asarray(z, dtype=np.float64)
        lead = zb.ndim - len(self.shape)
        if zb.shape[lead:] != tuple(self.shape):
            raise ShapeError(f"latent shape {zb.shape} does not end with {self.shape}")
        flat = zb.reshape(zb.shape[:lead] + (-1,))
        return -0.5 * (flat**2).sum(axis=-1) - 0.5 * self.n * LOG_2PI

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.standard_normal((count,) + tuple(self.shape))


@dataclass
class FlowModel:
    """Invertible network plus base density, with an optional fixed
    orthogonal pre-shuffle that trades resolution for channels up front."""

    net: IUNet
    input_shape: tuple
    pre_shuffle: ResampleOp | None = None
    base: BaseDistribution = field(init=False)

    def __post_init__(self):
        if self.net.expand_in_w is not None or self.net.expand_out_w is not None:
            raise ConfigurationError("flows need a fully invertible network")
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != self.net.config.d + 1:
            raise ShapeError(
                f"input_shape {self.input_shape} must be (C, N1..N{self.net.config.d})"
            )
        if self.pre_shuffle is not None:
            if self.pre_shuffle.trainable or np.any(self.pre_shuffle.thetas != 0.0):
                raise ConfigurationError(
                    "the pre-transform must be a fixed permutation (theta = 0)"
                )
        self.base = BaseDistribution(self.latent_shape())

    def latent_shape(self) -> tuple:
        c, *spatial = self.input_shape
        if self.pre_shuffle is not None:
            s = self.pre_shuffle.stride
            if c != self.pre_shuffle.channels:
                raise ShapeError("pre-shuffle channel count does not match input shape")
            c = c * s.sigma
            spatial = [n // v for n, v in zip(spatial, s.s)]
        if c != self.net.core_in_channels:
            raise ConfigurationError(
                f"network expects {self.net.core_in_channels} channels, data provides {c}"
            )
        return (c,) + tuple(spatial)

    def transform(self, x):
        """Data-to-latent pass; returns (z, logdet) per sample."""
        h = down_forward(self.pre_shuffle, x) if self.pre_shuffle is not None else x
        return self.net.forward(h)

    def inverse_transform(self, z):
        h = self.net.inverse(z)
        return up_forward(self.pre_shuffle, h) if self.pre_shuffle is not None else h


def log_likelihood(model: FlowModel, x):
    """Exact log-likelihood under the flow; returns (ll, logdet).

    Scalars for a single sample, per-sample arrays for a batched input.
    """
    z, logdet = model.transform(x)
    if not np.all(np.isfinite(z)):
        raise NumericsError("non-finite activations in the flow forward pass")
    ll = model.base.log_prob(z) + logdet
    return ll, logdet


def sample(model: FlowModel, count: int, seed: int) -> np.ndarray:
    """Draw latents from the base and invert; deterministic given the seed."""
    rng = make_rng(seed)
    z = model.base.sample(rng, count)
    x = model.inverse_transform(z)
    z_back, _ = model.transform(x)
    err = np.linalg.norm(z_back - z) / max(np.linalg.norm(z), 1e-30)
    if not np.isfinite(err) or err > 1e-6:
        raise NumericsError(f"inverse pass diverged: round-trip error {err:.3e}")
    return x


def nll_bits_per_dim(ll, n: int):
    """Negative log-likelihood in bits per dimension."""
    if n < 1:
        raise ShapeError("dimension must be at least 1")
    return -np.asarray(ll, dtype=np.float64) / (n * np.log(2.0))


@dataclass
class FlowTrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    lr_decay: float = 1.0  # final lr as a fraction of the initial, linear ramp
    batch_size: int | None = None  # None runs full-batch steps
    seed: int = 0
    val_fraction: float = 0.1


@dataclass
class FlowTrainResult:
    rows: list  # dicts: epoch, mean_train_nll_bits, mean_val_nll_bits, wall_time_s
    aborted: bool = False


def _mean_nll_bits(model, data) -> float:
    ll, _ = log_likelihood(model, data)
    return float(np.mean(nll_bits_per_dim(ll, model.base.n)))


def train_flow(model: FlowModel, dataset, cfg: FlowTrainConfig) -> FlowTrainResult:
    """Maximum-likelihood training with memory-efficient backpropagation.

    Epoch 0 logs the untouched model; on a non-finite epoch the parameters
    revert to the last finite epoch and training aborts.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != len(model.input_shape) + 1 or data.shape[1:] != model.input_shape:
        raise ShapeError(
            f"dataset shape {data.shape} must be (count, {', '.join(map(str, model.input_shape))})"
        )
    rng = make_rng(cfg.seed)
    n_total = data.shape[0]
    n_val = int(round(cfg.val_fraction * n_total))
    perm = rng.permutation(n_total)
    val, train = data[perm[:n_val]], data[perm[n_val:]]
    if train.shape[0] == 0:
        raise ConfigurationError("validation split leaves no training samples")

    params = model.net.parameters()
    opt = Adam(params, lr=cfg.learning_rate)
    t_start = time.perf_counter()

    def eval_row(epoch):
        return {
            "epoch": epoch,
            "mean_train_nll_bits": _mean_nll_bits(model, train),
            "mean_val_nll_bits": _mean_nll_bits(model, val) if n_val else float("nan"),
            "wall_time_s": time.perf_counter() - t_start,
        }

    rows = [eval_row(0)]
    snap = opt.snapshot()
    batch = cfg.batch_size or train.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        if cfg.epochs > 1:
            frac = (epoch - 1) / (cfg.epochs - 1)
            opt.lr = cfg.learning_rate * (1.0 - frac * (1.0 - cfg.lr_decay))
        order = rng.permutation(train.shape[0])
        for start in range(0, train.shape[0], batch):
            xb = train[order[start : start + batch]]
            b = xb.shape[0]
            if model.pre_shuffle is not None:
                hb = down_forward(model.pre_shuffle, xb)
            else:
                hb = xb
            z, _ = model.net.forward(hb)
            report = model.net.backward_memeff(hb, z / b, grad_logdet=-1.0 / b)
            opt.step(report.grads)
        row = eval_row(epoch)
        if not np.isfinite(row["mean_train_nll_bits"]):
            opt.restore(snap)
            rows.append(row)
            return FlowTrainResult(rows=rows, aborted=True)
        rows.append(row)
        snap = opt.snapshot()
    return FlowTrainResult(rows=rows)
