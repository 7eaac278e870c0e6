"""Binary container for tensor trains and operators.

Layout (little-endian): magic ``b"QTT1"``, u64 core count, then per core a
u64 rank followed by the u64 shape entries and the row-major complex128 data.
An optional trailing JSON block carries metadata.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .tt import MatrixProductOperator, TensorTrain

MAGIC = b"QTT1"


def write_cores(stream: BinaryIO, cores, meta: dict | None = None) -> None:
    stream.write(MAGIC)
    stream.write(struct.pack("<Q", len(cores)))
    for c in cores:
        c = np.ascontiguousarray(c, dtype="<c16")
        stream.write(struct.pack("<Q", c.ndim))
        stream.write(struct.pack(f"<{c.ndim}Q", *c.shape))
        stream.write(c.tobytes(order="C"))
    blob = json.dumps(meta or {}, sort_keys=True).encode()
    stream.write(struct.pack("<Q", len(blob)))
    stream.write(blob)


def read_cores(stream: BinaryIO) -> tuple[list[np.ndarray], dict]:
    if stream.read(4) != MAGIC:
        raise ValueError("not a QTT1 container")
    (count,) = struct.unpack("<Q", stream.read(8))
    cores = []
    for _ in range(count):
        (ndim,) = struct.unpack("<Q", stream.read(8))
        shape = struct.unpack(f"<{ndim}Q", stream.read(8 * ndim))
        nbytes = 16 * int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(stream.read(nbytes), dtype="<c16")
        cores.append(data.reshape(shape).astype(np.complex128))
    tail = stream.read(8)
    meta = {}
    if len(tail) == 8:
        (n,) = struct.unpack("<Q", tail)
        meta = json.loads(stream.read(n).decode()) if n else {}
    return cores, meta


def to_bytes(obj: TensorTrain | MatrixProductOperator, meta: dict | None = None) -> bytes:
    buf = io.BytesIO()
    meta = dict(meta or {})
    meta.setdefault("kind", "mpo" if isinstance(obj, MatrixProductOperator) else "tt")
    write_cores(buf, obj.cores, meta)
    return buf.getvalue()


def from_bytes(data: bytes) -> TensorTrain | MatrixProductOperator:
    cores, _ = read_cores(io.BytesIO(data))
    if cores and cores[0].ndim == 4:
        return MatrixProductOperator(tuple(cores))
    return TensorTrain(tuple(cores))


def save(path: str | Path, obj: TensorTrain | MatrixProductOperator) -> None:
    Path(path).write_bytes(to_bytes(obj))


def load(path: str | Path) -> TensorTrain | MatrixProductOperator:
    return from_bytes(Path(path).read_bytes())
