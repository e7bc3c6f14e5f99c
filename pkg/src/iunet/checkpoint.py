"""Binary checkpoint files for assembled networks.

Layout: magic ``IUNT``, version u32, length-prefixed JSON config blob, then
one record per parameter (length-prefixed path, u8 rank, u32 dims, raw
little-endian float64 payload), sorted by path. Everything little-endian.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import CheckpointError
from .net import IUNet, IUNetConfig, build

MAGIC = b"IUNT"
VERSION = 1


def save(net: IUNet, path) -> None:
    params = net.parameters()
    blob = json.dumps(net.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.astype("<f8").tobytes())


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def _read_params(f) -> dict:
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(f, 1))
        shape = tuple(
            struct.unpack("<I", _read_exact(f, 4))[0] for _ in range(rank)
        )
        size = int(np.prod(shape)) if shape else 1
        payload = _read_exact(f, 8 * size)
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if f.read(1):
        raise CheckpointError("trailing bytes after the last parameter record")
    return params


def _read_header(f) -> dict:
    if _read_exact(f, 4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack("<I", _read_exact(f, 4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack("<I", _read_exact(f, 4))
    try:
        return json.loads(_read_exact(f, blob_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt config blob: {e}") from None


def _apply(net: IUNet, params: dict) -> IUNet:
    target = net.parameters()
    if set(target) != set(params):
        missing = sorted(set(target) ^ set(params))
        raise CheckpointError(f"parameter sets differ, first offenders: {missing[:4]}")
    for name, arr in params.items():
        if target[name].shape != arr.shape:
            raise CheckpointError(
                f"parameter {name} has shape {arr.shape}, expected {target[name].shape}"
            )
        target[name][...] = arr
    return net


def load(path) -> IUNet:
    """Rebuild a network from the embedded config and stored parameters."""
    with open(path, "rb") as f:
        cfg_dict = _read_header(f)
        params = _read_params(f)
    net = build(IUNetConfig.from_dict(cfg_dict), seed=0)
    return _apply(net, params)


def load_into(net: IUNet, path) -> IUNet:
    """Load parameters into an existing network; configs must match exactly."""
    with open(path, "rb") as f:
        cfg_dict = _read_header(f)
        if cfg_dict != net.config.to_dict():
            raise CheckpointError(
                "checkpoint config does not match target network config"
            )
        params = _read_params(f)
    return _apply(net, params)
