# apps/streaming/workload/models.py

import enum
import struct

import numpy as np

HEADER_VERSION = 1
HEADER = struct.Struct("<HHIQdQ")
HEADER_BYTES = HEADER.size  # 32


# ===== Enums =====

class PayloadFormat(str, enum.Enum):
    """How a workload packages its payload bytes"""
    BINARY = "binary"
    OPAQUE_HDF5_LIKE = "opaque-hdf5-like"


class MessageKind(str, enum.Enum):
    """Role of a message in a messaging pattern"""
    REQUEST = "request"
    REPLY = "reply"
    CONTROL = "control"


_KIND_CODES = {MessageKind.REQUEST: 1, MessageKind.REPLY: 2, MessageKind.CONTROL: 3}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


# ===== Message =====

class MessageHeader:
    __slots__ = ("version", "kind", "producer_id", "seq", "publish_ts", "origin")

    def __init__(self, version, kind, producer_id, seq, publish_ts, origin):
        self.version = version
        self.kind = kind
        self.producer_id = producer_id
        self.seq = seq
        self.publish_ts = publish_ts
        self.origin = origin

    @classmethod
    def unpack(cls, payload: bytes) -> "MessageHeader":
        version, code, producer_id, seq, publish_ts, origin = HEADER.unpack_from(payload)
        return cls(version, _CODE_KINDS[code], producer_id, seq, publish_ts, origin)


def synthesize_body(seed: int, producer_id: int, seq: int, size: int) -> bytes:
    """Pseudo-random bytes keyed by (seed, producer_id, seq)."""
    if size <= 0:
        return b""
    return np.random.default_rng([seed, producer_id, seq]).bytes(size)


class Message:
    """
    A streamed message. The first 32 payload bytes are the header; the rest is
    the body, synthesized on first access when the message was created lazily.

    ``origin`` is the producer id for requests and the replying consumer id for replies.
    """

    __slots__ = ("producer_id", "seq", "kind", "created_at", "size", "origin", "_seed", "_body")

    def __init__(
        self,
        producer_id: int,
        seq: int,
        kind: MessageKind,
        size: int,
        seed: int | None = None,
        created_at: float = 0.0,
        origin: int | None = None,
        body: bytes | None = None,
    ):
        if size < HEADER_BYTES:
            raise ValueError(f"message size {size} is smaller than the {HEADER_BYTES}-byte header")
        self.producer_id = producer_id
        self.seq = seq
        self.kind = kind
        self.size = size
        self.created_at = created_at
        self.origin = producer_id if origin is None else origin
        self._seed = seed
        self._body = body

    @property
    def msg_id(self) -> tuple[int, int]:
        return (self.producer_id, self.seq)

    @property
    def header(self) -> bytes:
        return HEADER.pack(
            HEADER_VERSION,
            _KIND_CODES[self.kind],
            self.producer_id,
            self.seq,
            self.created_at,
            self.origin,
        )

    @property
    def body(self) -> bytes:
        return self.materialize()._body

    def materialize(self) -> "Message":
        if self._body is None:
            body_size = self.size - HEADER_BYTES
            if self._seed is None:
                self._body = bytes(body_size)
            else:
                self._body = synthesize_body(self._seed, self.producer_id, self.seq, body_size)
        return self

    @property
    def payload(self) -> bytes:
        return self.header + self.body

    @property
    def materialized(self) -> bool:
        return self._body is not None

    def stamp(self, publish_ts: float) -> "Message":
        self.created_at = publish_ts
        return self

    @classmethod
    def from_payload(cls, payload: bytes) -> "Message":
        header = MessageHeader.unpack(payload)
        return cls(
            producer_id=header.producer_id,
            seq=header.seq,
            kind=header.kind,
            size=len(payload),
            created_at=header.publish_ts,
            origin=header.origin,
            body=bytes(payload[HEADER_BYTES:]),
        )

    def __repr__(self) -> str:
        return f"Message({self.kind.value} p{self.producer_id}#{self.seq}, {self.size}B)"
