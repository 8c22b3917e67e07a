"""
Length-prefixed binary frames.

A frame is a big-endian u32 length followed by that many bytes. Structured
frames carry a versioned msgpack record ``{"v": 1, "t": kind, "b": body}``.
"""

import socket
import struct

import msgpack

from apps.core.exception import AppException

WIRE_VERSION = 1
MAX_FRAME_BYTES = 64 * 1024 * 1024

_LENGTH = struct.Struct(">I")


class WireException(AppException):
    default_error_code = "WIRE_ERROR"


def encode_record(kind: str, body) -> bytes:
    return msgpack.packb({"v": WIRE_VERSION, "t": kind, "b": body}, use_bin_type=True)


def decode_record(data: bytes) -> tuple[str, object]:
    record = msgpack.unpackb(data, raw=False)
    if not isinstance(record, dict) or record.get("v") != WIRE_VERSION:
        raise WireException(f"Unsupported record: {record!r:.80}", error_code="UNSUPPORTED_RECORD")
    return record["t"], record["b"]


def frame(data: bytes) -> bytes:
    return _LENGTH.pack(len(data)) + data


def read_exact(sock: socket.socket, n: int) -> bytes | None:
    """Read exactly n bytes; None when the peer closed before the first byte."""
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            if remaining == n:
                return None
            raise WireException("Connection closed mid-frame", error_code="SHORT_READ")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_raw_frame(sock: socket.socket) -> bytes | None:
    """Returns the frame body (without the length prefix), or None on clean EOF."""
    header = read_exact(sock, _LENGTH.size)
    if header is None:
        return None
    (length,) = _LENGTH.unpack(header)
    if length > MAX_FRAME_BYTES:
        raise WireException(f"Frame of {length} bytes exceeds limit", error_code="FRAME_TOO_LARGE")
    if length == 0:
        return b""
    body = read_exact(sock, length)
    if body is None:
        raise WireException("Connection closed mid-frame", error_code="SHORT_READ")
    return body


def send_record(sock: socket.socket, kind: str, body) -> None:
    sock.sendall(frame(encode_record(kind, body)))


def recv_record(sock: socket.socket) -> tuple[str, object] | None:
    data = read_raw_frame(sock)
    if data is None:
        return None
    return decode_record(data)
