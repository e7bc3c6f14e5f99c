"""Invertible multiscale network: assembly, forward/inverse, gradient engines.

The network narrows spatially while widening in channels: at every scale a
coupling stack transforms the activation, a channel split sends one portion
to the skip path, and the kept portion is resampled down by an orthogonal
operator. The right column mirrors this with upsampling and concatenation.
The invertible core never changes the total number of scalars.

Two gradient engines produce identical parameter gradients:

* conventional: the forward pass records every block input on a tape and
  the backward pass replays it (activation memory grows with depth);
* memory-efficient: nothing is taped; the backward pass reconstructs each
  block's input from its output through the block inverse, so only the skip
  tensors and a constant-size working set are ever held.

Both engines meter their activation memory through an ``ActivationLedger``
(logical bytes, not allocator RSS) and report it in a ``GradReport``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericsError, ShapeError, UsageError
from .layers import (
    CouplingLayer,
    _coupling_inverse_ld,
    coupling_backward,
    coupling_forward,
    coupling_inverse,
    split_count,
)
from .resample import ResampleOp, down_forward, grad_theta, grad_theta_up, up_forward
from .rng import make_rng
from .tensor import as_tensor, same_conv3, same_conv3_backward

GUARD_TOL = 1e-4  # relative round-trip error above which reconstruction aborts


@dataclass
class IUNetConfig:
    """Architecture description, validated when a network is built.

    ``base_channels`` is the width of the invertible core. When
    ``in_channels`` / ``out_channels`` are set, plain (non-invertible) linear
    convolutions map the data into and out of that width; they are excluded
    from all invertibility claims.
    """

    d: int
    scales: int
    base_channels: int
    stride: tuple = (2, 2)
    split_fraction: object = 0.5
    couplings_per_block: int = 2
    coupling: str = "additive"
    norm_scheme: str = "layer"
    group_size: int | None = None
    clamp: float = 2.0
    leak: float = 0.01
    share_theta: bool = True
    theta_std: float = 0.05
    downsample_before_split: bool = False
    in_channels: int | None = None
    out_channels: int | None = None

    def strides(self) -> list[tuple[int, ...]]:
        s = self.stride
        if s and isinstance(s[0], (list, tuple)):
            out = [tuple(int(v) for v in e) for e in s]
        else:
            out = [tuple(int(v) for v in s)] * max(self.scales - 1, 0)
        if len(out) != self.scales - 1:
            raise ConfigurationError(f"need {self.scales - 1} stride specs, got {len(out)}")
        return out

    def split_fractions(self) -> list:
        f = self.split_fraction
        out = list(f) if isinstance(f, (list, tuple)) else [f] * max(self.scales - 1, 0)
        if len(out) != self.scales - 1:
            raise ConfigurationError(
                f"need {self.scales - 1} split fractions, got {len(out)}"
            )
        return out

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "scales": self.scales,
            "base_channels": self.base_channels,
            "stride": [list(s) for s in self.strides()],
            "split_fraction": [v if isinstance(v, str) else float(v)
                               for v in self.split_fractions()],
            "couplings_per_block": self.couplings_per_block,
            "coupling": self.coupling,
            "norm_scheme": self.norm_scheme,
            "group_size": self.group_size,
            "clamp": self.clamp,
            "leak": self.leak,
            "share_theta": self.share_theta,
            "theta_std": self.theta_std,
            "downsample_before_split": self.downsample_before_split,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IUNetConfig":
        return cls(**d)


def channel_ladder(cfg: IUNetConfig) -> tuple[list[int], list[int]]:
    """Core channels per scale and the kept-channel count at each transition.

    The channel count multiplies by (split fraction * channel multiplier)
    between consecutive scales, whichever order split and downsampling run in.
    """
    channels = [cfg.base_channels]
    keeps = []
    strides = cfg.strides()
    fracs = cfg.split_fractions()
    for i in range(cfg.scales - 1):
        sigma = int(np.prod(strides[i]))
        c = channels[i]
        try:
            if cfg.downsample_before_split:
                k = split_count(sigma * c, fracs[i])
                nxt = k
            else:
                k = split_count(c, fracs[i])
                nxt = sigma * k
        except ConfigurationError as e:
            raise ConfigurationError(f"scale {i + 1}: {e}") from None
        keeps.append(k)
        channels.append(nxt)
    for i, c in enumerate(channels):
        if c < 2 or c % 2 != 0:
            raise ConfigurationError(
                f"scale {i + 1}: coupling blocks need an even channel count >= 2, got {c}"
            )
    return channels, keeps


@dataclass
class GradReport:
    """Parameter gradients plus activation-memory accounting for one pass."""

    grads: dict
    peak_stored_activation_bytes: int
    stored_tensor_count: int
    wall_time_s: float
    mode: str


class ActivationLedger:
    """Counts logical bytes of activation tensors an engine keeps alive.

    Only arrays retained beyond the op currently executing are registered;
    transient op-internal buffers are excluded, equally for both engines.
    """

    def __init__(self):
        self._held = {}
        self.current_bytes = 0
        self.peak_bytes = 0
        self.current_count = 0
        self.peak_count = 0

    def hold(self, key, arr):
        if key in self._held:
            self.drop(key)
        self._held[key] = arr.nbytes
        self.current_bytes += arr.nbytes
        self.current_count += 1
        self.peak_bytes = max(self.peak_bytes, self.current_bytes)
        self.peak_count = max(self.peak_count, self.current_count)

    def drop(self, key):
        nbytes = self._held.pop(key)
        self.current_bytes -= nbytes
        self.current_count -= 1


class Tape:
    """Execution-ordered record of block inputs from a conventional forward."""

    def __init__(self, ledger: ActivationLedger):
        self.entries = []  # (kind, key, stored input array)
        self.ledger = ledger
        self.y = None
        self.logdet = None
        self.batched = False
        self.consumed = False

    def record(self, kind, key, arr):
        self.entries.append((kind, key, arr))
        self.ledger.hold(("tape", len(self.entries) - 1), arr)

    def pop(self, kind, key):
        if not self.entries:
            raise UsageError("tape exhausted; forward and backward walks disagree")
        got_kind, got_key, arr = self.entries.pop()
        self.ledger.drop(("tape", len(self.entries)))
        if (got_kind, got_key) != (kind, key):
            raise UsageError(
                f"tape order mismatch: expected {(kind, key)}, found {(got_kind, got_key)}"
            )
        return arr


class _TapeSource:
    """Reverse-walk input provider backed by stored activations."""

    def __init__(self, tape: Tape):
        self.tape = tape

    def pop_block(self, kind, key):
        return self.tape.pop(kind, key)

    def reverse_concat(self, i, keep):
        pass

    def reverse_split(self, i):
        pass

    def current_output(self):
        return None

    def finish(self):
        pass


class _ReconstructSource:
    """Reverse-walk input provider that inverts each block from its output.

    Maintains the current activation value alongside the gradient walk and
    checks every block's round trip; a relative error above ``tol`` aborts
    with the offending block named.
    """

    def __init__(self, net, y_core, skips, x_core_in, ledger, tol=GUARD_TOL, check=True):
        self.net = net
        self.skips = skips  # scale index -> stored skip tensor
        self.x_core_in = x_core_in
        self.ledger = ledger
        self.tol = tol
        self.check = check
        self.cur = y_core
        ledger.hold("cur_value", y_core)

    def _guard(self, name, y_out, y_redone):
        if not self.check:
            return
        scale = max(float(np.linalg.norm(y_out)), 1e-30)
        err = float(np.linalg.norm(y_redone - y_out)) / scale
        if not np.isfinite(err) or err > self.tol:
            raise NumericsError(
                f"activation reconstruction diverged at block {name}: "
                f"relative round-trip error {err:.3e} exceeds {self.tol:.1e}"
            )

    def _set_cur(self, arr):
        self.cur = arr
        self.ledger.hold("cur_value", arr)

    def pop_block(self, kind, key):
        y = self.cur
        if kind == "cpl":
            side, i, j = key
            layer = (self.net.phi_l if side == "l" else self.net.phi_r)[i][j]
            x_in = coupling_inverse(layer, y)
            self._guard(f"phi_{side}[{i}][{j}]", y, coupling_forward(layer, x_in)[0])
        elif kind == "down":
            op = self.net.down[key]
            x_in = up_forward(op, y)
            self._guard(f"down[{key}]", y, down_forward(op, x_in))
        elif kind == "up":
            op = self.net.up[key]
            x_in = down_forward(op, y)
            self._guard(f"up[{key}]", y, up_forward(op, x_in))
        else:
            raise UsageError(f"block kind {kind!r} has no inverse to reconstruct through")
        self._set_cur(x_in)
        return x_in

    def reverse_concat(self, i, keep):
        # Drop the skip portion of the value; the stored tensor is re-attached
        # at the corresponding split.
        self._set_cur(np.ascontiguousarray(self.cur[:, :keep]))

    def reverse_split(self, i):
        self._set_cur(np.concatenate([self.cur, self.skips.pop(i)], axis=1))
        self.ledger.drop(("skip", i))

    def current_output(self):
        return self.cur

    def finish(self):
        self._guard("input", self.x_core_in, self.cur)
        self.ledger.drop("cur_value")


class IUNet:
    """Assembled invertible network with addressable parameters."""

    def __init__(self, config, phi_l, phi_r, down, up, expand_in_w=None, expand_out_w=None):
        self.config = config
        self.phi_l = phi_l
        self.phi_r = phi_r
        self.down = down
        self.up = up
        self.expand_in_w = expand_in_w
        self.expand_out_w = expand_out_w
        self.channels, self.keeps = channel_ladder(config)

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> dict:
        """Live parameter arrays keyed by stable path names."""
        params = {}
        for i in range(self.config.scales - 1):
            params[f"down.{i}.theta"] = self.down[i].thetas
            params[f"up.{i}.theta"] = self.up[i].thetas
        for side, blocks in (("phi_l", self.phi_l), ("phi_r", self.phi_r)):
            for i, block in enumerate(blocks):
                for j, layer in enumerate(block):
                    base = f"{side}.{i}.{j}"
                    params[f"{base}.conv_w"] = layer.subnet.conv_w
                    params[f"{base}.norm_gamma"] = layer.subnet.norm.gamma
                    params[f"{base}.norm_beta"] = layer.subnet.norm.beta
        if self.expand_in_w is not None:
            params["expand_in.w"] = self.expand_in_w
        if self.expand_out_w is not None:
            params["expand_out.w"] = self.expand_out_w
        return params

    @property
    def core_in_channels(self) -> int:
        return self.channels[0]

    def spatial_multiple(self) -> tuple[int, ...]:
        mult = [1] * self.config.d
        for s in self.config.strides():
            mult = [a * b for a, b in zip(mult, s)]
        return tuple(mult)

    def _check_input(self, xb):
        want = self.config.in_channels or self.core_in_channels
        if xb.shape[1] != want:
            raise ShapeError(f"input has {xb.shape[1]} channels, network expects {want}")
        for n, mlt in zip(xb.shape[2:], self.spatial_multiple()):
            if n % mlt != 0:
                raise ShapeError(
                    f"spatial extents {xb.shape[2:]} must be divisible by "
                    f"{self.spatial_multiple()}"
                )

    # -- forward / inverse --------------------------------------------------

    def forward(self, x):
        """Run the network; returns (y, logdet). logdet is per-sample when batched."""
        y, logdet, _, _, batched = self._forward_batched(x)
        return (y, logdet) if batched else (y[0], float(logdet[0]))

    def forward_tape(self, x):
        """Like ``forward`` but records the tape for ``backward_conventional``."""
        ledger = ActivationLedger()
        tape = Tape(ledger)
        y, logdet, _, _, batched = self._forward_batched(x, tape=tape, ledger=ledger)
        tape.y = y
        tape.logdet = logdet
        tape.batched = batched
        if batched:
            return y, logdet, tape
        return y[0], float(logdet[0]), tape

    def _forward_batched(self, x, tape=None, ledger=None, keep_skips=False):
        """Forward over a batched array; returns (y, logdet, skips, y_core, batched)."""
        xb, batched = as_tensor(x, self.config.d, "x")
        self._check_input(xb)
        hold = ledger.hold if ledger is not None else (lambda *_: None)
        drop = ledger.drop if ledger is not None else (lambda *_: None)
        record = tape.record if tape is not None else (lambda *_: None)

        h = xb
        hold("cur", h)
        if self.expand_in_w is not None:
            record("conv_in", (), h)
            h = same_conv3(self.expand_in_w, h)
            hold("cur", h)
        logdet = np.zeros(xb.shape[0])
        skips = {}
        m = self.config.scales

        def run_block(side, i):
            nonlocal h, logdet
            blocks = self.phi_l if side == "l" else self.phi_r
            for j, layer in enumerate(blocks[i]):
                record("cpl", (side, i, j), h)
                h, ld = coupling_forward(layer, h)
                logdet = logdet + ld
                hold("cur", h)

        for i in range(m - 1):
            run_block("l", i)
            k = self.keeps[i]
            if self.config.downsample_before_split:
                record("down", i, h)
                z = down_forward(self.down[i], h)
                h, c = np.ascontiguousarray(z[:, :k]), np.ascontiguousarray(z[:, k:])
            else:
                keep, c = np.ascontiguousarray(h[:, :k]), np.ascontiguousarray(h[:, k:])
                record("down", i, keep)
                h = down_forward(self.down[i], keep)
            skips[i] = c
            hold(("skip", i), c)
            hold("cur", h)
        run_block("l", m - 1)
        run_block("r", m - 1)
        for i in range(m - 2, -1, -1):
            if self.config.downsample_before_split:
                h = np.concatenate([h, skips[i]], axis=1)
                record("up", i, h)
                h = up_forward(self.up[i], h)
            else:
                record("up", i, h)
                h = up_forward(self.up[i], h)
                h = np.concatenate([h, skips[i]], axis=1)
            if not keep_skips:
                drop(("skip", i))
                del skips[i]
            hold("cur", h)
            run_block("r", i)
        y_core = h
        if self.expand_out_w is not None:
            if keep_skips:
                hold("core_out", y_core)
            record("conv_out", (), h)
            h = same_conv3(self.expand_out_w, h)
            hold("cur", h)
        return h, logdet, skips, y_core, batched

    def inverse(self, y):
        """Invert the invertible core; rejects networks with expansion convs."""
        x, _ = self._inverse_ld(y)
        return x

    def _inverse_ld(self, y):
        if self.expand_in_w is not None or self.expand_out_w is not None:
            raise ConfigurationError(
                "networks with channel-expansion convolutions are not invertible"
            )
        yb, batched = as_tensor(y, self.config.d, "y")
        if yb.shape[1] != self.core_in_channels:
            raise ShapeError(
                f"output has {yb.shape[1]} channels, network expects {self.core_in_channels}"
            )
        h = yb
        logdet = np.zeros(yb.shape[0])
        m = self.config.scales
        skips = {}

        def invert_block(side, i):
            nonlocal h, logdet
            blocks = self.phi_l if side == "l" else self.phi_r
            for j in range(len(blocks[i]) - 1, -1, -1):
                h, ld = _coupling_inverse_ld(blocks[i][j], h)
                logdet = logdet + ld

        for i in range(m - 1):
            invert_block("r", i)
            k = self.keeps[i]
            if self.config.downsample_before_split:
                z = down_forward(self.up[i], h)
                skips[i] = np.ascontiguousarray(z[:, k:])
                h = np.ascontiguousarray(z[:, :k])
            else:
                skips[i] = np.ascontiguousarray(h[:, k:])
                h = down_forward(self.up[i], np.ascontiguousarray(h[:, :k]))
        invert_block("r", m - 1)
        invert_block("l", m - 1)
        for i in range(m - 2, -1, -1):
            if self.config.downsample_before_split:
                h = up_forward(self.down[i], np.concatenate([h, skips.pop(i)], axis=1))
            else:
                h = up_forward(self.down[i], h)
                h = np.concatenate([h, skips.pop(i)], axis=1)
            invert_block("l", i)
        if batched:
            return h, logdet
        return h[0], float(logdet[0])

    # -- gradient engines ---------------------------------------------------

    def backward_conventional(self, tape, grad_out, grad_logdet=0.0):
        """Reverse sweep over the stored tape; returns a GradReport."""
        if tape is None or not isinstance(tape, Tape):
            raise UsageError("backward_conventional needs the tape from forward_tape")
        if tape.consumed:
            raise UsageError("tape was already consumed by a previous backward pass")
        t0 = time.perf_counter()
        gb, _ = as_tensor(grad_out, self.config.d, "grad_out")
        if gb.shape != tape.y.shape:
            raise ShapeError(
                f"grad_out shape {gb.shape} does not match output {tape.y.shape}"
            )
        src = _TapeSource(tape)
        grads, _ = self._reverse_walk(gb, grad_logdet, src, tape.ledger, core_only=False)
        tape.consumed = True
        return GradReport(
            grads=grads,
            peak_stored_activation_bytes=tape.ledger.peak_bytes,
            stored_tensor_count=tape.ledger.peak_count,
            wall_time_s=time.perf_counter() - t0,
            mode="conventional",
        )

    def backward_memeff(self, x_in, grad_out, grad_logdet=0.0, check=True, tol=GUARD_TOL):
        """Tapeless gradients: forward once keeping only skip tensors, then
        walk backward reconstructing block inputs by local inversion."""
        t0 = time.perf_counter()
        ledger = ActivationLedger()
        xb, _ = as_tensor(x_in, self.config.d, "x_in")
        gb, _ = as_tensor(grad_out, self.config.d, "grad_out")
        ledger.hold("x_in", xb)
        y, _, skips, y_core, _ = self._forward_batched(xb, ledger=ledger, keep_skips=True)
        if gb.shape != y.shape:
            raise ShapeError(f"grad_out shape {gb.shape} does not match output {y.shape}")
        ledger.drop("cur")

        grads = {}
        g = gb
        if self.expand_out_w is not None:
            gw, g = same_conv3_backward(self.expand_out_w, y_core, g)
            grads["expand_out.w"] = gw
            ledger.drop("core_out")
        x_core = same_conv3(self.expand_in_w, xb) if self.expand_in_w is not None else xb
        src = _ReconstructSource(self, y_core, skips, x_core, ledger, tol=tol, check=check)
        core_grads, g = self._reverse_walk(g, grad_logdet, src, ledger, core_only=True)
        grads.update(core_grads)
        if self.expand_in_w is not None:
            gw, _ = same_conv3_backward(self.expand_in_w, xb, g)
            grads["expand_in.w"] = gw
        ledger.drop("x_in")
        return GradReport(
            grads=grads,
            peak_stored_activation_bytes=ledger.peak_bytes,
            stored_tensor_count=ledger.peak_count,
            wall_time_s=time.perf_counter() - t0,
            mode="memory-efficient",
        )

    def _reverse_walk(self, grad_out, grad_logdet, src, ledger, core_only):
        """Shared reverse sweep; ``src`` supplies every block's input activation.

        Returns (parameter gradients, gradient w.r.t. the walked segment's input).
        """
        grads = {}
        pending_gc = {}
        m = self.config.scales
        g = grad_out
        ledger.hold("grad", g)

        def add(path, value):
            grads[path] = grads[path] + value if path in grads else value

        def set_g(arr):
            nonlocal g
            g = arr
            ledger.hold("grad", arr)

        if self.expand_out_w is not None and not core_only:
            x_in = src.pop_block("conv_out", ())
            gw, gg = same_conv3_backward(self.expand_out_w, x_in, g)
            add("expand_out.w", gw)
            set_g(gg)

        def backward_block(side, i):
            blocks = self.phi_l if side == "l" else self.phi_r
            name = "phi_l" if side == "l" else "phi_r"
            for j in range(len(blocks[i]) - 1, -1, -1):
                layer = blocks[i][j]
                x_in = src.pop_block("cpl", (side, i, j))
                gg, pg = coupling_backward(layer, src.current_output(), g, x_in, grad_logdet)
                set_g(gg)
                base = f"{name}.{i}.{j}"
                add(f"{base}.conv_w", pg["conv_w"])
                add(f"{base}.norm_gamma", pg["norm_gamma"])
                add(f"{base}.norm_beta", pg["norm_beta"])

        for i in range(m - 1):
            backward_block("r", i)
            k = self.keeps[i]
            if self.config.downsample_before_split:
                x_in = src.pop_block("up", i)
                add(f"up.{i}.theta", grad_theta_up(self.up[i], x_in, g))
                set_g(down_forward(self.up[i], g))
                gc = np.ascontiguousarray(g[:, k:])
                pending_gc[i] = gc
                ledger.hold(("gskip", i), gc)
                src.reverse_concat(i, k)
                set_g(np.ascontiguousarray(g[:, :k]))
            else:
                gc = np.ascontiguousarray(g[:, k:])
                pending_gc[i] = gc
                ledger.hold(("gskip", i), gc)
                src.reverse_concat(i, k)
                set_g(np.ascontiguousarray(g[:, :k]))
                x_in = src.pop_block("up", i)
                add(f"up.{i}.theta", grad_theta_up(self.up[i], x_in, g))
                set_g(down_forward(self.up[i], g))
        backward_block("r", m - 1)
        backward_block("l", m - 1)
        for i in range(m - 2, -1, -1):
            if self.config.downsample_before_split:
                set_g(np.concatenate([g, pending_gc.pop(i)], axis=1))
                ledger.drop(("gskip", i))
                src.reverse_split(i)
                x_in = src.pop_block("down", i)
                add(f"down.{i}.theta", grad_theta(self.down[i], x_in, g))
                set_g(up_forward(self.down[i], g))
            else:
                x_in = src.pop_block("down", i)
                add(f"down.{i}.theta", grad_theta(self.down[i], x_in, g))
                set_g(up_forward(self.down[i], g))
                set_g(np.concatenate([g, pending_gc.pop(i)], axis=1))
                ledger.drop(("gskip", i))
                src.reverse_split(i)
            backward_block("l", i)
        if self.expand_in_w is not None and not core_only:
            x_in = src.pop_block("conv_in", ())
            gw, gg = same_conv3_backward(self.expand_in_w, x_in, g)
            add("expand_in.w", gw)
            set_g(gg)
        src.finish()
        ledger.drop("grad")
        return grads, g


def build(cfg: IUNetConfig, seed: int = 0) -> IUNet:
    """Deterministically initialize a network from a seed.

    Coupling normalizations start at zero gain, so the invertible core is the
    identity map; each up operator starts equal to the inverse of its down
    partner (the parameters are independent afterwards).
    """
    if cfg.scales < 1:
        raise ConfigurationError("need at least one scale")
    if cfg.coupling not in ("additive", "affine"):
        raise ConfigurationError(f"unknown coupling kind {cfg.coupling!r}")
    strides = cfg.strides()
    for i, s in enumerate(strides):
        if len(s) != cfg.d:
            raise ConfigurationError(
                f"scale {i + 1}: stride {s} does not match dimensionality {cfg.d}"
            )
    channels, keeps = channel_ladder(cfg)
    rng = make_rng(seed)
    phi_l, phi_r = [], []
    for i in range(cfg.scales):
        blocks = []
        for _side in range(2):
            blocks.append(
                [
                    CouplingLayer.build(
                        cfg.coupling,
                        channels[i],
                        cfg.d,
                        rng,
                        swap=(j % 2 == 1),
                        norm_scheme=cfg.norm_scheme,
                        group_size=cfg.group_size,
                        clamp=cfg.clamp,
                        leak=cfg.leak,
                    )
                    for j in range(cfg.couplings_per_block)
                ]
            )
        phi_l.append(blocks[0])
        phi_r.append(blocks[1])
    down, up = [], []
    for i in range(cfg.scales - 1):
        op_channels = channels[i] if cfg.downsample_before_split else keeps[i]
        d_op = ResampleOp.initialize(
            strides[i], op_channels, rng, mode="down", shared=cfg.share_theta,
            std=cfg.theta_std,
        )
        # Start as the exact inverse of the down operator so the whole core is
        # the identity map at initialization; trained independently afterwards.
        u_op = ResampleOp(
            stride=d_op.stride,
            channels=op_channels,
            thetas=d_op.thetas.copy(),
            mode="up",
            shared=cfg.share_theta,
        )
        down.append(d_op)
        up.append(u_op)
    expand_in_w = expand_out_w = None
    if cfg.in_channels is not None:
        fan = cfg.in_channels * 3**cfg.d
        expand_in_w = rng.standard_normal(
            (cfg.base_channels, cfg.in_channels) + (3,) * cfg.d
        ) / np.sqrt(fan)
    if cfg.out_channels is not None:
        fan = cfg.base_channels * 3**cfg.d
        expand_out_w = rng.standard_normal(
            (cfg.out_channels, cfg.base_channels) + (3,) * cfg.d
        ) / np.sqrt(fan)
    return IUNet(cfg, phi_l, phi_r, down, up, expand_in_w, expand_out_w)
