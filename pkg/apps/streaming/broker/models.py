# apps/streaming/broker/models.py

import enum
from collections import OrderedDict, deque
from typing import NamedTuple

from apps.streaming.workload.models import Message


# ===== Enums =====

class QueueKind(str, enum.Enum):
    """Memory class of a queue (payload queues share 80% of the budget, control queues 20%)"""
    PAYLOAD = "payload"
    CONTROL = "control"


class OverflowPolicy(str, enum.Enum):
    REJECT_PUBLISH = "reject-publish"


class ExchangeKind(str, enum.Enum):
    DIRECT = "direct"
    FANOUT = "fanout"


class PublishResult(str, enum.Enum):
    """Publisher confirm outcome"""
    CONFIRM = "confirm"
    REJECT = "reject"


DEFAULT_EXCHANGE = ""


# ===== Broker state =====

class Exchange:
    def __init__(self, name: str, kind: ExchangeKind):
        self.name = name
        self.kind = kind
        # direct: routing_key -> [queue names]; fanout: queue names under key ""
        self.bindings: dict[str, list[str]] = {}

    def bind(self, queue: str, routing_key: str = "") -> None:
        key = routing_key if self.kind == ExchangeKind.DIRECT else ""
        targets = self.bindings.setdefault(key, [])
        if queue not in targets:
            targets.append(queue)

    def route(self, routing_key: str) -> list[str]:
        if self.kind == ExchangeKind.FANOUT:
            return list(self.bindings.get("", []))
        return list(self.bindings.get(routing_key, []))


class ConsumerHandle:
    """A consumer registration on one queue."""

    def __init__(self, handle_id: int, consumer_id: int, queue: str, prefetch: int):
        self.handle_id = handle_id
        self.consumer_id = consumer_id
        self.queue = queue
        self.prefetch = prefetch
        self.active = True
        self.delivered = 0
        self.next_tag = 1
        self.outstanding: OrderedDict[int, Message] = OrderedDict()

    @property
    def unacked(self) -> int:
        return len(self.outstanding)

    @property
    def eligible(self) -> bool:
        return self.active and len(self.outstanding) < self.prefetch

    @property
    def last_tag(self) -> int | None:
        return next(reversed(self.outstanding)) if self.outstanding else None

    def __repr__(self) -> str:
        return f"ConsumerHandle(c{self.consumer_id}@{self.queue}, unacked={self.unacked}/{self.prefetch})"


class QueueState:
    def __init__(self, spec):
        self.spec = spec
        self.messages: deque[Message] = deque()
        self.ready_bytes = 0
        self.unacked_bytes = 0
        self.rotation: deque[ConsumerHandle] = deque()
        self.confirmed = 0
        self.settled = 0
        self.rejected = 0

    @property
    def bytes(self) -> int:
        return self.ready_bytes + self.unacked_bytes

    @property
    def depth(self) -> int:
        return len(self.messages)

    def has_room(self, size: int) -> bool:
        return self.bytes + size <= self.spec.capacity_bytes


class Delivery(NamedTuple):
    handle: ConsumerHandle
    message: Message
    tag: int
