# apps/streaming/metrics/schema.py

from dataclasses import dataclass
from typing import Optional

from pydantic import Field, model_validator

from apps.core.schema import CustomBaseModel
from apps.streaming.harness.models import RunStatus

PERCENTILES = (10, 25, 50, 75, 90, 95, 99)


@dataclass(frozen=True, slots=True)
class RttSample:
    msg_id: tuple[int, int]
    rtt: float

    def __post_init__(self):
        if not self.rtt > 0:
            raise ValueError(f"RTT of {self.msg_id} must be positive, got {self.rtt}")


class ThroughputSample(CustomBaseModel):
    """Aggregate consumer-side message rate. Merged samples hold per-field means."""
    messages: float = Field(..., ge=0)
    span: float = Field(..., gt=0)
    rate: float = Field(..., ge=0)


class RttStats(CustomBaseModel):
    median: float
    percentiles: dict[str, float]
    cdf: list[tuple[float, float]]

    @model_validator(mode="after")
    def check_percentiles(self):
        if self.percentiles.get("p50") != self.median:
            raise ValueError("p50 must equal the median")
        return self


class OverheadRatios(CustomBaseModel):
    """Ratios above 1.0 mean worse than the baseline."""
    throughput_overhead: float = Field(..., ge=0)
    rtt_overhead: float = Field(..., ge=0)
    baseline_label: Optional[str] = None


class MetricsReport(CustomBaseModel):
    label: str
    status: RunStatus = RunStatus.OK
    config: dict
    throughput: Optional[ThroughputSample] = None
    rtt_median: Optional[float] = None
    rtt_percentiles: dict[str, float] = Field(default_factory=dict)
    cdf: list[tuple[float, float]] = Field(default_factory=list)
    latency_median: Optional[float] = None
    gather_rtt_median: Optional[float] = None
    per_consumer_counts: dict[str, float] = Field(default_factory=dict)
    rejected_publishes: float = 0
    confirmed: float = 0
    path_delay: Optional[float] = None
    virtual: bool = True
    overhead_vs_baseline: Optional[OverheadRatios] = None
    repetition_mean_over: int = Field(1, ge=0)

    # infeasible / failed runs
    reason: Optional[str] = None
    hop: Optional[str] = None
    limit: Optional[int] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == RunStatus.OK
