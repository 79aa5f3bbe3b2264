"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"NICK"  u32 version  u32 n_params
    n_params x { u32 name_len, utf-8 name, u32 ndim, ndim x u32 dim, float32 values }
    u8 has_optimizer
    [ u64 t, f64 lr, f64 beta1, f64 beta2, f64 eps,
      n_params x float32 first moments, n_params x float32 second moments ]
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .optim import OptimizerState

MAGIC = b"NICK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _write_array(buf: io.BytesIO, arr: np.ndarray) -> None:
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def dumps(params: dict[str, np.ndarray], state: OptimizerState | None = None) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        _write_array(buf, arr)
    if state is None:
        buf.write(b"\x00")
    else:
        if len(state.m) != len(params) or len(state.v) != len(params):
            raise CheckpointError("optimizer state does not match the parameter list")
        buf.write(b"\x01")
        buf.write(struct.pack("<Q4d", state.t, state.lr, state.beta1, state.beta2, state.eps))
        for arr in state.m:
            _write_array(buf, arr)
        for arr in state.v:
            _write_array(buf, arr)
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)


def loads(data: bytes) -> tuple[dict[str, np.ndarray], OptimizerState | None]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, n_params = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I")
        params[name] = r.floats(shape)
    (flag,) = r.unpack("<B")
    state = None
    if flag:
        t, lr, beta1, beta2, eps = r.unpack("<Q4d")
        m = [r.floats(a.shape) for a in params.values()]
        v = [r.floats(a.shape) for a in params.values()]
        state = OptimizerState(m=m, v=v, t=t, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return params, state


def save_checkpoint(path: str | os.PathLike, params: dict[str, np.ndarray],
                    state: OptimizerState | None = None) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    payload = dumps(params, state)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], OptimizerState | None]:
    return loads(Path(path).read_bytes())
