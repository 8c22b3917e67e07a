# apps/streaming/harness/schema.py

from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator, model_validator

from apps.core.exception import AppException
from apps.core.schema import CustomBaseModel
from apps.settings import settings
from apps.streaming.harness.models import Pattern
from apps.streaming.netpath.models import Architecture, ProxyKind, TransportMode
from apps.streaming.netpath.schema import HopOverride, PathOptions
from apps.streaming.netpath.service import build_path
from apps.streaming.workload.models import HEADER_BYTES


class ExperimentConfig(CustomBaseModel):
    """One experiment: architecture, pattern, workload, scale and broker parameters."""
    label: Optional[str] = None
    architecture: Architecture = Architecture.DTS
    proxy_kind: Optional[ProxyKind] = None
    num_conn: int = Field(1, ge=1)
    pattern: Pattern = Pattern.WORK_SHARING
    workload: str = "dstream"
    producers: Optional[int] = Field(None, ge=1, description="Defaults to consumers (1 for broadcast patterns)")
    consumers: int = Field(1, ge=1)
    message_count: int = Field(1000, ge=1, description="Total requests, split evenly among producers")
    duration: Optional[float] = Field(None, gt=0, description="Stop publishing after this many seconds")
    prefetch: int = Field(64, ge=1)
    work_queue_count: int = Field(2, ge=1)
    transport: TransportMode = TransportMode.SIM
    seed: int = Field(0, ge=0)
    repetitions: int = Field(3, ge=1)
    memory_budget: int = Field(default_factory=lambda: settings.BROKER_MEMORY_BUDGET, gt=0)
    ack_batch: int = Field(16, ge=1)
    reply_window: int = Field(1, ge=1)
    reply_bytes: int = Field(HEADER_BYTES, ge=HEADER_BYTES)
    processing_time: Optional[float] = Field(None, ge=0)
    hops: dict[str, HopOverride] = Field(default_factory=dict)
    mss_consumers_via_load_balancer: bool = False
    credential: Optional[str] = None

    @field_validator("message_count")
    @classmethod
    def validate_message_count(cls, v):
        if v > settings.MAX_MESSAGES_PER_RUN:
            raise ValueError(f"message_count {v} exceeds the per-run limit of {settings.MAX_MESSAGES_PER_RUN}")
        return v

    @model_validator(mode="after")
    def check_consistency(self):
        if self.pattern.is_broadcast and self.producers not in (None, 1):
            raise ValueError(f"{self.pattern.value} runs with a single producer")
        if self.message_count < self.effective_producers:
            raise ValueError("message_count must give every producer at least one message")

        try:
            build_path(self.architecture, self.path_options())
        except AppException as e:
            raise ValueError(e.message)
        return self

    @property
    def effective_producers(self) -> int:
        if self.producers is not None:
            return self.producers
        return 1 if self.pattern.is_broadcast else self.consumers

    def path_options(self) -> PathOptions:
        return PathOptions(
            proxy_kind=self.proxy_kind,
            num_conn=self.num_conn,
            overrides=self.hops,
            mss_consumers_via_load_balancer=self.mss_consumers_via_load_balancer,
        )

    def canonical_name(self) -> str:
        return f"{self.architecture.value}_{self.pattern.value}_{self.workload}_c{self.consumers}"

    def run_label(self) -> str:
        return self.label or self.canonical_name()

    def run_dir(self) -> Path:
        """Output directory relative to the output root; labelled runs nest under the canonical name."""
        if self.label:
            return Path(self.canonical_name()) / self.label
        return Path(self.canonical_name())

    def echo(self) -> dict:
        """Stable, JSON-ready description of the configuration."""
        data = self.model_dump(mode="json", exclude={"repetitions", "seed", "label"})
        data["producers"] = self.effective_producers
        return data
