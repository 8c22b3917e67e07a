# apps/streaming/broker/schema.py

from pydantic import Field

from apps.core.schema import CustomBaseModel
from apps.streaming.broker.models import OverflowPolicy, QueueKind


class QueueSpec(CustomBaseModel):
    name: str = Field(..., min_length=1)
    capacity_bytes: int = Field(..., gt=0)
    overflow_policy: OverflowPolicy = OverflowPolicy.REJECT_PUBLISH
    kind: QueueKind = QueueKind.PAYLOAD


class QueueStats(CustomBaseModel):
    depth: int
    bytes: int
    unacked: int
    consumers: int
    confirmed: int
    rejected: int
    settled: int


class BrokerStats(CustomBaseModel):
    """Snapshot of queue depths and settlement counters"""
    queues: dict[str, QueueStats]
    confirmed: int
    rejected: int
    settled: int
