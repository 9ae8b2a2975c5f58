"""``USTR`` model checkpoints and the line-delimited training log.

Layout (little-endian):

    magic  b"USTR"
    u32    version (1)
    u32    length of the hyperparameter block
    bytes  UTF-8 JSON {"model": ModelConfig, "train": TrainConfig, ...}
    u32    number of arrays
    per array: u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims,
               prod(dims) x f64 values (C order)
"""
import json
import struct

import numpy as np

from .config import ModelConfig
from .errors import CorruptionError, FormatError

MAGIC = b"USTR"
VERSION = 1
_U32 = struct.Struct("<I")


def encode_checkpoint(params, model_config, extra=None):
    meta = {"model": model_config.to_dict(), **(extra or {})}
    block = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _U32.pack(VERSION), _U32.pack(len(block)), block, _U32.pack(len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)) + raw + _U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"truncated checkpoint while reading {what}", offset=len(self.buf))
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return _U32.unpack(self.take(4, what))[0]


def decode_checkpoint(buf):
    """Returns (params, ModelConfig, metadata dict)."""
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("not a USTR checkpoint (bad magic)")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    n = r.u32("hyperparameter length")
    start = r.pos
    try:
        meta = json.loads(r.take(n, "hyperparameters").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"unreadable hyperparameter block: {exc}", offset=start) from None
    count = r.u32("array count")
    params = {}
    for _ in range(count):
        name = r.take(r.u32("name length"), "array name").decode("utf-8")
        ndim = r.u32("ndim")
        shape = tuple(r.u32("dimension") for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64))
        data = r.take(8 * size, f"array {name}")
        params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CorruptionError(f"{len(buf) - r.pos} trailing bytes", offset=r.pos)
    return params, ModelConfig.from_dict(meta["model"]), meta


def save_checkpoint(path, params, model_config, extra=None):
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(params, model_config, extra))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def write_log(path, records):
    """One JSON object per line, keys sorted."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_log(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
