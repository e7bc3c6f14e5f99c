"""Self-check suites behind the ``verify`` CLI command.

Each group bundles fast, seeded invariant checks for one module. A check
either returns quietly or raises; the runner prints one line per check and
reports failure through its exit status. ``FAULTS`` is a test hook: adding
a fault name makes the matching check corrupt its own inputs, which must
then be caught (used to prove the harness can fail).
"""

from __future__ import annotations

import math
import tempfile

import numpy as np

from . import checkpoint, linalg
from .data import degrade, gen_foam2d, psnr, read_pgm, write_pgm
from .errors import ShapeError
from .flow import FlowModel, log_likelihood, nll_bits_per_dim, sample
from .layers import (
    CouplingLayer,
    NormParams,
    concat,
    coupling_backward,
    coupling_forward,
    coupling_inverse,
    normalize,
    split,
)
from .net import IUNetConfig, build
from .resample import ResampleOp, down_forward, grad_theta, up_forward
from .rng import make_rng
from .tensor import StrideSpec, conv_block, conv_block_transpose, conv_kernel_adjoint

FAULTS = set()  # e.g. {"nonfinite-theta"}

HAAR_THETA = (np.pi / 4.0) * np.array(
    [[0, 0, -1, -1], [0, 0, 1, 1], [0, 0, 0, 0], [0, 0, 0, 0]], dtype=np.float64
)
HAAR_MATRIX = 0.5 * np.array(
    [[1, 1, -1, -1], [1, 1, 1, 1], [1, -1, 1, -1], [1, -1, -1, 1]], dtype=np.float64
)


def _assert(cond, msg):
    if not cond:
        raise AssertionError(msg)


# -- linalg ------------------------------------------------------------------


def check_haar_golden():
    m = linalg.matrix_exp(linalg.skew(HAAR_THETA))
    _assert(np.abs(m - HAAR_MATRIX).max() <= 1e-12, "Haar matrix mismatch")


def check_orthogonality():
    rng = make_rng(101)
    for stride in [(2,), (3,), (2, 2), (3, 3), (2, 2, 2)]:
        sigma = int(np.prod(stride))
        for _ in range(10):
            theta = 0.5 * rng.standard_normal((sigma, sigma))
            if "nonfinite-theta" in FAULTS:
                theta[0, 0] = np.nan
            m = linalg.matrix_exp(linalg.skew(theta))
            _assert(
                np.linalg.norm(m.T @ m - np.eye(sigma)) <= 1e-10,
                f"exp(skew) not orthogonal for stride {stride}",
            )
            _assert(abs(np.linalg.det(m) - 1.0) <= 1e-10, "determinant drifted from +1")


def check_exp_identities():
    rng = make_rng(102)
    s = linalg.skew(rng.standard_normal((4, 4)))
    _assert(
        np.linalg.norm(linalg.matrix_exp(s) @ linalg.matrix_exp(-s) - np.eye(4)) <= 1e-10,
        "exp(S) exp(-S) != I",
    )
    h1, h2, g = (rng.standard_normal((4, 4)) for _ in range(3))
    lin = linalg.matrix_exp_frechet(s, 2.0 * h1 - 3.0 * h2)
    parts = 2.0 * linalg.matrix_exp_frechet(s, h1) - 3.0 * linalg.matrix_exp_frechet(s, h2)
    _assert(np.linalg.norm(lin - parts) <= 1e-12, "derivative of exp is not linear in H")
    lhs = float(np.sum(linalg.matrix_exp_frechet(s, h1) * g))
    rhs = float(np.sum(h1 * linalg.matrix_exp_frechet(s.T, g)))
    _assert(abs(lhs - rhs) <= 1e-10, "adjoint identity of the exp derivative failed")


# -- tensor --------------------------------------------------------------------


def _naive_conv(kernel, x, s: StrideSpec):
    coarse = tuple(n // v for n, v in zip(x.shape[1:], s.s))
    y = np.zeros((s.sigma,) + coarse)
    for i in range(s.sigma):
        for pos in np.ndindex(*coarse):
            sl = tuple(slice(p * v, (p + 1) * v) for p, v in zip(pos, s.s))
            y[(i,) + pos] = np.sum(kernel[i, 0] * x[(0,) + sl])
    return y


def check_conv_against_naive():
    rng = make_rng(103)
    for stride in [(2,), (2, 2), (3, 2), (2, 2, 2)]:
        s = StrideSpec(stride)
        n = tuple(2 * v for v in stride)
        x = rng.standard_normal((1,) + n)
        k = rng.standard_normal((s.sigma, 1) + stride)
        _assert(
            np.abs(conv_block(k, x, s) - _naive_conv(k, x, s)).max() <= 1e-12,
            f"conv_block deviates from the sliding-window oracle for stride {stride}",
        )


def check_conv_adjoints():
    rng = make_rng(104)
    for stride in [(2,), (2, 2), (2, 2, 2)]:
        s = StrideSpec(stride)
        n = tuple(2 * v for v in stride)
        x = rng.standard_normal((1,) + n)
        k = rng.standard_normal((s.sigma, 1) + stride)
        y = rng.standard_normal(conv_block(k, x, s).shape)
        lhs = float(np.sum(conv_block(k, x, s) * y))
        rhs = float(np.sum(x * conv_block_transpose(k, y, s)))
        _assert(abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)), "transpose is not the adjoint")
        gk = conv_kernel_adjoint(y, x, s)
        _assert(abs(float(np.sum(gk * k)) - lhs) <= 1e-10, "kernel adjoint inconsistent")


def check_divisibility_rejected():
    s = StrideSpec((2, 2))
    k = np.zeros((4, 1, 2, 2))
    try:
        conv_block(k, np.zeros((1, 5, 4)), s)
    except ShapeError:
        return
    raise AssertionError("non-divisible input was not rejected")


# -- resample ------------------------------------------------------------------


def check_resample_roundtrip():
    rng = make_rng(105)
    for stride, c in [((2,), 2), ((2, 2), 3), ((2, 2, 2), 1)]:
        op = ResampleOp.initialize(stride, c, rng, std=0.4, shared=False)
        x = rng.standard_normal((c,) + tuple(4 * v for v in stride))
        y = down_forward(op, x)
        _assert(
            np.linalg.norm(up_forward(op, y) - x) <= 1e-11 * np.linalg.norm(x),
            f"resampling round trip failed for stride {stride}",
        )
        _assert(
            abs(np.linalg.norm(y) - np.linalg.norm(x)) <= 1e-12 * np.linalg.norm(x),
            "downsampling is not norm-preserving",
        )


def check_resample_gradient():
    rng = make_rng(106)
    op = ResampleOp.initialize((2, 2), 1, rng, std=0.3, shared=False)
    x = rng.standard_normal((1, 4, 4))
    t = rng.standard_normal((4, 2, 2))
    g = down_forward(op, x) - t
    got = grad_theta(op, x, g)
    eps = 1e-6
    fd = np.zeros_like(op.thetas)
    for idx in np.ndindex(*op.thetas.shape):
        plus = op.thetas.copy()
        plus[idx] += eps
        minus = op.thetas.copy()
        minus[idx] -= eps
        op_p = ResampleOp(op.stride, op.channels, plus)
        op_m = ResampleOp(op.stride, op.channels, minus)
        lp = 0.5 * np.sum((down_forward(op_p, x) - t) ** 2)
        lm = 0.5 * np.sum((down_forward(op_m, x) - t) ** 2)
        fd[idx] = (lp - lm) / (2 * eps)
    _assert(
        np.linalg.norm(got - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12),
        "theta gradient deviates from finite differences",
    )


def check_resample_unit_determinant():
    op = ResampleOp.initialize((2, 2), 1, make_rng(107), std=0.5, shared=False)
    basis = np.eye(4)
    jac = np.column_stack(
        [down_forward(op, basis[:, j].reshape(1, 2, 2)).ravel() for j in range(4)]
    )
    sign, slog = np.linalg.slogdet(jac)
    _assert(sign > 0 and abs(slog) <= 1e-10, "resampling operator determinant is not +1")


# -- layers --------------------------------------------------------------------


def check_coupling_roundtrip():
    rng = make_rng(108)
    for kind in ("additive", "affine"):
        layer = CouplingLayer.build(kind, 4, 2, rng)
        layer.subnet.conv_w += 0.3 * rng.standard_normal(layer.subnet.conv_w.shape)
        layer.subnet.norm.gamma += 0.8
        x = rng.standard_normal((4, 4, 4))
        y, logdet = coupling_forward(layer, x)
        _assert(
            np.linalg.norm(coupling_inverse(layer, y) - x) <= 1e-11 * np.linalg.norm(x),
            f"{kind} coupling round trip failed",
        )
        if kind == "additive":
            _assert(logdet == 0.0, "additive coupling logdet must vanish")


def check_coupling_identity_init():
    rng = make_rng(109)
    x = rng.standard_normal((4, 4, 4))
    for kind in ("additive", "affine"):
        layer = CouplingLayer.build(kind, 4, 2, make_rng(5))
        y, logdet = coupling_forward(layer, x)
        _assert(np.array_equal(y, x) and logdet == 0.0, "zero-gain layer is not the identity")


def check_coupling_gradients():
    rng = make_rng(110)
    layer = CouplingLayer.build("affine", 4, 2, rng)
    layer.subnet.conv_w += 0.3 * rng.standard_normal(layer.subnet.conv_w.shape)
    layer.subnet.norm.gamma += 0.8
    x = rng.standard_normal((4, 4, 4))
    gy = rng.standard_normal((4, 4, 4))
    y, _ = coupling_forward(layer, x)
    gx, _ = coupling_backward(layer, y, gy, x, grad_logdet=0.5)
    eps = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        a = x.copy()
        a[idx] += eps
        b = x.copy()
        b[idx] -= eps
        ya, la = coupling_forward(layer, a)
        yb, lb = coupling_forward(layer, b)
        fd[idx] = (np.sum(ya * gy) + 0.5 * la - np.sum(yb * gy) - 0.5 * lb) / (2 * eps)
    _assert(
        np.linalg.norm(gx - fd) <= 1e-5 * np.linalg.norm(fd),
        "coupling input gradient deviates from finite differences",
    )


def check_split_concat():
    rng = make_rng(111)
    x = rng.standard_normal((4, 3, 3))
    keep, skip = split(x, 0.25)
    _assert(keep.shape[0] == 1 and skip.shape[0] == 3, "quarter split is wrong")
    _assert(np.array_equal(concat(keep, skip), x), "split/concat is not bitwise identity")


def check_normalization():
    rng = make_rng(112)
    p = NormParams(np.ones(4), np.zeros(4), "group", 2)
    x = 1e3 * rng.standard_normal((4, 6, 6))
    flat = normalize(p, x).reshape(2, -1)
    _assert(np.abs(flat.mean(axis=1)).max() <= 1e-10, "group mean is not zero")
    _assert(np.abs(flat.var(axis=1) - 1.0).max() <= 1e-10, "group variance is not one")
    zero = normalize(NormParams.zero_init(4), x)
    _assert(np.all(zero == 0.0), "zero-gain normalization must output the bias")


# -- iunet -----------------------------------------------------------------


def _perturbed_net(cfg, seed=3):
    net = build(cfg, seed=seed)
    rng = make_rng(seed + 1)
    for name, p in net.parameters().items():
        if name.endswith("norm_gamma"):
            p += 0.6
        else:
            p += 0.2 * rng.standard_normal(p.shape)
    return net


def check_net_identity_init():
    cfg = IUNetConfig(d=2, scales=3, base_channels=4)
    net = build(cfg, seed=1)
    x = make_rng(113).standard_normal((4, 8, 8))
    y, logdet = net.forward(x)
    _assert(
        np.linalg.norm(y - x) <= 1e-15 * np.linalg.norm(x) and logdet == 0.0,
        "freshly built network is not the identity",
    )


def check_net_roundtrip():
    cfg = IUNetConfig(d=2, scales=3, base_channels=4, coupling="affine")
    net = _perturbed_net(cfg)
    x = make_rng(114).standard_normal((4, 8, 8))
    y, _ = net.forward(x)
    _assert(
        np.linalg.norm(net.inverse(y) - x) <= 1e-8 * np.linalg.norm(x),
        "network inverse does not undo forward",
    )


def check_engine_equivalence():
    cfg = IUNetConfig(d=2, scales=2, base_channels=4, coupling="affine")
    net = _perturbed_net(cfg, seed=6)
    rng = make_rng(115)
    x = rng.standard_normal((4, 4, 4))
    y, _, tape = net.forward_tape(x)
    g = rng.standard_normal(y.shape)
    conv = net.backward_conventional(tape, g, grad_logdet=0.2)
    me = net.backward_memeff(x, g, grad_logdet=0.2)
    for key, val in conv.grads.items():
        err = np.linalg.norm(me.grads[key] - val) / max(np.linalg.norm(val), 1e-30)
        _assert(err <= 1e-9, f"engines disagree on {key} ({err:.2e})")
    _assert(
        conv.peak_stored_activation_bytes >= me.peak_stored_activation_bytes,
        "conventional backprop should not store less than the reconstructing engine",
    )


def check_checkpoint_roundtrip():
    cfg = IUNetConfig(d=2, scales=2, base_channels=4, coupling="affine")
    net = _perturbed_net(cfg, seed=8)
    x = make_rng(116).standard_normal((4, 4, 4))
    with tempfile.TemporaryDirectory() as td:
        path = td + "/net.iunt"
        checkpoint.save(net, path)
        reloaded = checkpoint.load(path)
    _assert(
        np.array_equal(net.forward(x)[0], reloaded.forward(x)[0]),
        "checkpoint round trip changed the network",
    )


# -- flow ------------------------------------------------------------------


def _toy_flow(seed=1):
    cfg = IUNetConfig(d=2, scales=2, base_channels=2, couplings_per_block=2,
                      coupling="affine")
    return FlowModel(net=build(cfg, seed=seed), input_shape=(2, 4, 4))


def check_flow_identity_likelihood():
    model = _toy_flow()
    ll, logdet = log_likelihood(model, np.zeros((2, 4, 4)))
    want = -(32 / 2.0) * math.log(2.0 * math.pi)
    _assert(abs(ll - want) <= 1e-12 and logdet == 0.0, "density at the origin is wrong")
    _assert(abs(nll_bits_per_dim(-32 * math.log(2.0), 32) - 1.0) <= 1e-12,
            "bits-per-dim conversion is wrong")


def check_flow_logdet_oracle():
    model = _toy_flow()
    rng = make_rng(117)
    for name, p in model.net.parameters().items():
        if name.endswith("norm_gamma"):
            p += 0.7
        else:
            p += 0.2 * rng.standard_normal(p.shape)
    x = rng.standard_normal((2, 4, 4))
    _, logdet = log_likelihood(model, x)
    eps = 1e-5
    n = x.size
    jac = np.zeros((n, n))
    for j in range(n):
        a = x.ravel().copy()
        b = x.ravel().copy()
        a[j] += eps
        b[j] -= eps
        za, _ = model.transform(a.reshape(x.shape))
        zb, _ = model.transform(b.reshape(x.shape))
        jac[:, j] = (za - zb).ravel() / (2 * eps)
    sign, slog = np.linalg.slogdet(jac)
    _assert(sign > 0 and abs(logdet - slog) <= 1e-4,
            f"accumulated logdet {logdet:.6f} != brute force {slog:.6f}")


def check_flow_sampling():
    model = _toy_flow()
    a = sample(model, 4, seed=7)
    b = sample(model, 4, seed=7)
    _assert(np.array_equal(a, b), "sampling is not deterministic in the seed")
    z, _ = model.transform(a)
    zz = make_rng(7).standard_normal((4, 2, 4, 4))
    _assert(np.linalg.norm(z - zz) <= 1e-8 * np.linalg.norm(zz),
            "identity model samples must be the base draws")


# -- data ------------------------------------------------------------------


def check_psnr_values():
    _assert(math.isinf(psnr(np.ones((3, 3)), np.ones((3, 3)))), "identical PSNR marker")
    got = psnr(np.array([[0.0, 0.0], [0.0, 0.0]]), np.array([[1.0, 0.0], [0.0, 0.0]]))
    _assert(abs(got - 10.0 * math.log10(4.0)) <= 1e-12, "PSNR closed form")


def check_foam_determinism():
    a = gen_foam2d(5, 48, 10)
    b = gen_foam2d(5, 48, 10)
    _assert(np.array_equal(a.image, b.image), "foam generation is not deterministic")
    _assert(0.0 < a.image.mean() < 1.0, "foam mean out of range")


def check_degrade_monotone():
    img = gen_foam2d(6, 48, 8).image
    lo = psnr(degrade(img, 0.05, 1, 3).degraded, img)
    hi = psnr(degrade(img, 0.2, 1, 3).degraded, img)
    _assert(lo > hi, "PSNR should fall as noise grows")


def check_pgm_roundtrip():
    img = gen_foam2d(7, 32, 4).image
    with tempfile.TemporaryDirectory() as td:
        write_pgm(td + "/x.pgm", img)
        back = read_pgm(td + "/x.pgm")
    _assert(np.abs(back - img).max() <= 1.0 / 255.0, "PGM round trip lost more than 1 LSB")


GROUPS = {
    "linalg": [
        ("haar-golden", check_haar_golden),
        ("orthogonality", check_orthogonality),
        ("exp-identities", check_exp_identities),
    ],
    "tensor": [
        ("conv-vs-naive", check_conv_against_naive),
        ("adjoint-identities", check_conv_adjoints),
        ("divisibility-errors", check_divisibility_rejected),
    ],
    "resample": [
        ("roundtrip", check_resample_roundtrip),
        ("theta-gradient", check_resample_gradient),
        ("unit-determinant", check_resample_unit_determinant),
    ],
    "layers": [
        ("coupling-roundtrip", check_coupling_roundtrip),
        ("identity-init", check_coupling_identity_init),
        ("coupling-gradient", check_coupling_gradients),
        ("split-concat", check_split_concat),
        ("normalization", check_normalization),
    ],
    "iunet": [
        ("identity-init", check_net_identity_init),
        ("inverse-roundtrip", check_net_roundtrip),
        ("engine-equivalence", check_engine_equivalence),
        ("checkpoint-roundtrip", check_checkpoint_roundtrip),
    ],
    "flow": [
        ("identity-likelihood", check_flow_identity_likelihood),
        ("logdet-oracle", check_flow_logdet_oracle),
        ("sampling", check_flow_sampling),
    ],
    "data": [
        ("psnr-values", check_psnr_values),
        ("foam-determinism", check_foam_determinism),
        ("degrade-monotone", check_degrade_monotone),
        ("pgm-roundtrip", check_pgm_roundtrip),
    ],
}


def run(group: str | None = None, emit=print) -> bool:
    """Run one group or all; returns True when every check passed."""
    names = [group] if group else list(GROUPS)
    ok = True
    for name in names:
        for check_name, fn in GROUPS[name]:
            try:
                fn()
            except Exception as e:  # report and keep going
                ok = False
                emit(f"FAIL  {name}.{check_name}: {e}")
            else:
                emit(f"pass  {name}.{check_name}")
    return ok
