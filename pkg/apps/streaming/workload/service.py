# apps/streaming/workload/service.py

import logging
import threading

from apps.core.exception import ConflictException, NotFoundException
from apps.streaming.workload.models import Message, MessageKind, PayloadFormat
from apps.streaming.workload.schema import WorkloadProfile

logger = logging.getLogger(__name__)

KiB = 1024
MiB = 1024 * KiB

BUILTIN_PROFILES = (
    WorkloadProfile(
        name="dstream",
        payload_bytes=8 * 2 * KiB,
        events_per_message=8,
        per_event_bytes=2 * KiB,
        payload_format=PayloadFormat.BINARY,
        target_rate_bps=32e9,
    ),
    WorkloadProfile(
        name="lstream",
        payload_bytes=1 * MiB,
        events_per_message=1,
        payload_format=PayloadFormat.OPAQUE_HDF5_LIKE,
        target_rate_bps=30e9,
    ),
    WorkloadProfile(
        name="generic",
        payload_bytes=4 * MiB,
        events_per_message=1,
        payload_format=PayloadFormat.BINARY,
        target_rate_bps=25e9,
    ),
)


class ProfileRegistry:
    """Built-in workloads plus user-defined profiles loaded from config files."""

    def __init__(self):
        self._lock = threading.Lock()
        self._profiles: dict[str, WorkloadProfile] = {p.name: p for p in BUILTIN_PROFILES}

    def register(self, profile: WorkloadProfile) -> WorkloadProfile:
        with self._lock:
            existing = self._profiles.get(profile.name)
            if existing is not None and existing != profile:
                raise ConflictException(
                    f"Profile '{profile.name}' is already registered with different values",
                    error_code="PROFILE_CONFLICT",
                )
            self._profiles[profile.name] = profile
        logger.debug(f"Registered workload profile {profile.name}")
        return profile

    def lookup(self, name: str) -> WorkloadProfile:
        profile = self._profiles.get(name)
        if profile is None:
            raise NotFoundException(f"Unknown workload profile '{name}'", error_code="UNKNOWN_PROFILE")
        return profile

    def names(self) -> list[str]:
        return sorted(self._profiles)

    def copy(self) -> "ProfileRegistry":
        clone = ProfileRegistry()
        clone._profiles = dict(self._profiles)
        return clone


registry = ProfileRegistry()


def profile_lookup(name: str, profiles: ProfileRegistry | None = None) -> WorkloadProfile:
    return (profiles or registry).lookup(name)


def generate_message(profile: WorkloadProfile, producer_id: int, seq: int, seed: int) -> Message:
    """
    Build request ``seq`` of ``producer_id`` with its payload materialized.

    Args:
        profile: workload supplying the payload size
        producer_id: producer index
        seq: per-producer sequence number (>= 0)
        seed: experiment seed

    Returns:
        Message whose payload bytes depend only on the arguments
    """
    return virtual_message(profile, producer_id, seq, seed).materialize()


def virtual_message(profile: WorkloadProfile, producer_id: int, seq: int, seed: int) -> Message:
    if seq < 0:
        raise ValueError("seq must be >= 0")
    return Message(
        producer_id=producer_id,
        seq=seq,
        kind=MessageKind.REQUEST,
        size=profile.payload_bytes,
        seed=seed,
    )


def reply_message(request: Message, consumer_id: int, size: int, created_at: float = 0.0) -> Message:
    """Reply to ``request``: same msg_id, origin set to the replying consumer."""
    return Message(
        producer_id=request.producer_id,
        seq=request.seq,
        kind=MessageKind.REPLY,
        size=size,
        created_at=created_at,
        origin=consumer_id,
    )


def pacing_interval(profile: WorkloadProfile, producer_count: int) -> float:
    """Seconds between consecutive sends of one producer so that all producers meet the target rate."""
    if producer_count < 1:
        raise ValueError("producer_count must be >= 1")
    return profile.payload_bytes * 8 * producer_count / profile.target_rate_bps
