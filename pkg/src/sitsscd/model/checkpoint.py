"""Binary checkpoint format.

Layout (all integers little-endian u32 unless noted)::

    b"SCDW" | version u8 | json length | ModelConfig JSON (utf-8)
    then per parameter, in name order:
    name length | name (utf-8) | ndim | dims... | float32 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .config import ModelConfig
from .network import TemporalAttentionUNet

MAGIC = b"SCDW"
VERSION = 1


def dumps_checkpoint(config: ModelConfig, params: dict) -> bytes:
    blob = config.to_json().encode()
    parts = [MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(blob)), blob]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        key = name.encode()
        parts.append(struct.pack("<I", len(key)))
        parts.append(key)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads_checkpoint(buf: bytes) -> tuple[ModelConfig, dict]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"checkpoint truncated while reading {what}", pos)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    (version,) = struct.unpack("<B", take(1, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    (n,) = struct.unpack("<I", take(4, "config length"))
    try:
        config = ModelConfig.from_dict(json.loads(take(n, "config").decode()))
    except (ValueError, TypeError) as exc:
        raise FormatError(f"invalid config block: {exc}", 9) from exc
    params = {}
    while pos < len(buf):
        (klen,) = struct.unpack("<I", take(4, "name length"))
        name = take(klen, "name").decode()
        (ndim,) = struct.unpack("<I", take(4, "ndim"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        count = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(take(4 * count, f"payload of {name}"), dtype="<f4")
        params[name] = data.reshape(dims).astype(np.float32)
    return config, params


def save_checkpoint(path, config: ModelConfig, params: dict) -> None:
    Path(path).write_bytes(dumps_checkpoint(config, params))


def load_checkpoint(path) -> tuple[ModelConfig, dict]:
    return loads_checkpoint(Path(path).read_bytes())


def load_model(path) -> TemporalAttentionUNet:
    config, params = load_checkpoint(path)
    expected = TemporalAttentionUNet(config).params
    if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in expected):
        raise FormatError("checkpoint parameters do not match its model config")
    return TemporalAttentionUNet(config, params)
