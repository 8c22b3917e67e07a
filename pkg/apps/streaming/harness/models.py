# apps/streaming/harness/models.py

import enum
from dataclasses import dataclass, field
from typing import Any, Optional


# ===== Enums =====

class Pattern(str, enum.Enum):
    """Messaging patterns driven by producers and consumers"""
    WORK_SHARING = "work_sharing"
    WORK_SHARING_FEEDBACK = "work_sharing_feedback"
    BROADCAST_GATHER = "broadcast_gather"
    BROADCAST = "broadcast"  # fan-out without the gather leg

    @property
    def is_broadcast(self) -> bool:
        return self in (Pattern.BROADCAST, Pattern.BROADCAST_GATHER)

    @property
    def has_reply(self) -> bool:
        return self in (Pattern.WORK_SHARING_FEEDBACK, Pattern.BROADCAST_GATHER)


class RunStatus(str, enum.Enum):
    OK = "ok"
    INFEASIBLE = "infeasible"
    FAILED = "failed"


# ===== Plans & records =====

@dataclass(frozen=True)
class QueuePlan:
    work_queues: list[str] = field(default_factory=list)
    reply_queues: dict[int, str] = field(default_factory=dict)
    reply_exchange: Optional[str] = None
    fanout_request: Optional[str] = None
    broadcast_queues: dict[int, str] = field(default_factory=dict)
    gather_queue: Optional[str] = None
    gather_exchange: Optional[str] = None

    @property
    def payload_queues(self) -> list[str]:
        return self.work_queues + list(self.broadcast_queues.values())

    @property
    def control_queues(self) -> list[str]:
        queues = list(self.reply_queues.values())
        if self.gather_queue:
            queues.append(self.gather_queue)
        return queues


@dataclass(frozen=True, slots=True)
class MessageEvent:
    producer_id: int
    seq: int
    consumer_id: int
    publish_ts: float
    deliver_ts: float
    reply_ts: Optional[float] = None

    @property
    def msg_id(self) -> tuple[int, int]:
        return (self.producer_id, self.seq)


@dataclass
class RunRecord:
    """Everything one experiment run observed; input to the metrics module."""
    config: Any
    events: list[MessageEvent]
    duration: float
    rejected_publishes: int
    per_consumer_counts: dict[int, int]
    confirmed: int
    consumers_ready_ts: float = 0.0
    virtual: bool = True
    seed: int = 0
    repetition: int = 0
    path_delay: float = 0.0
    broker_stats: Optional[dict] = None
    tunnel_traffic: list[int] = field(default_factory=list)
