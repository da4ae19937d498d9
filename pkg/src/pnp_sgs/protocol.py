"""PNPD framing for out-of-process denoisers.

All integers are little-endian u32, payloads are little-endian float32 in
``(C, H, W)`` C-order.

request:  b"PNPD" version=1 type=1 t_start t_stop ndim=3 C H W payload
response: b"PNPD" version=1 type=2 ndim=3 C H W payload
          b"PNPD" version=1 type=3 err_len message(utf-8)
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import ProtocolError

MAGIC = b"PNPD"
VERSION = 1
MSG_REQUEST = 1
MSG_OK = 2
MSG_ERROR = 3

_U32 = struct.Struct("<I")
_F32 = np.dtype("<f4")


def encode_request(u: np.ndarray, t_start: int, t_stop: int) -> bytes:
    u = np.ascontiguousarray(u, dtype=_F32)
    if u.ndim != 3:
        raise ProtocolError(f"payload must be 3-D (C, H, W), got {u.shape}")
    head = MAGIC + struct.pack("<8I", VERSION, MSG_REQUEST, t_start, t_stop, 3, *u.shape)
    return head + u.tobytes()


def encode_ok(u: np.ndarray) -> bytes:
    u = np.ascontiguousarray(u, dtype=_F32)
    return MAGIC + struct.pack("<6I", VERSION, MSG_OK, 3, *u.shape) + u.tobytes()


def encode_error(message: str) -> bytes:
    raw = message.encode("utf-8")
    return MAGIC + struct.pack("<3I", VERSION, MSG_ERROR, len(raw)) + raw


def _read_u32(read) -> int:
    return _U32.unpack(read(4))[0]


def _read_header(read, expected_types) -> int:
    magic = read(4)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = _read_u32(read)
    if version != VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    msg_type = _read_u32(read)
    if msg_type not in expected_types:
        raise ProtocolError(f"unexpected message type {msg_type}")
    return msg_type


def _read_tensor(read) -> np.ndarray:
    ndim = _read_u32(read)
    if ndim != 3:
        raise ProtocolError(f"tensor rank must be 3, got {ndim}")
    dims = tuple(_read_u32(read) for _ in range(3))
    n = dims[0] * dims[1] * dims[2]
    return np.frombuffer(read(4 * n), dtype=_F32).reshape(dims).copy()


def read_request(read):
    """Parse a request using ``read(n) -> bytes``; returns ``(u, t_start, t_stop)``."""
    _read_header(read, (MSG_REQUEST,))
    t_start = _read_u32(read)
    t_stop = _read_u32(read)
    return _read_tensor(read), t_start, t_stop


def read_response(read) -> np.ndarray:
    msg_type = _read_header(read, (MSG_OK, MSG_ERROR))
    if msg_type == MSG_ERROR:
        n = _read_u32(read)
        raise ProtocolError("denoiser reported error: " + read(n).decode("utf-8", "replace"))
    return _read_tensor(read)


def exact_reader(stream):
    """Wrap a binary stream so short reads raise :class:`ProtocolError`."""
    def read(n):
        chunks, got = [], 0
        while got < n:
            b = stream.read(n - got)
            if not b:
                raise ProtocolError(f"stream closed after {got} of {n} bytes")
            chunks.append(b)
            got += len(b)
        return b"".join(chunks)
    return read
