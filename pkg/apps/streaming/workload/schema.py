# apps/streaming/workload/schema.py

from typing import Optional

from pydantic import Field, model_validator

from apps.core.schema import CustomBaseModel
from apps.streaming.workload.models import HEADER_BYTES, PayloadFormat


class WorkloadProfile(CustomBaseModel):
    """Payload size, packaging and aggregate target rate of one streaming workload"""
    name: str = Field(..., min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    payload_bytes: int = Field(..., ge=HEADER_BYTES, description="Bytes per message, header included")
    events_per_message: int = Field(1, ge=1)
    payload_format: PayloadFormat = PayloadFormat.BINARY
    target_rate_bps: float = Field(..., gt=0, description="Aggregate bits/second across all producers")
    per_event_bytes: Optional[int] = Field(None, gt=0)
    processing_time: float = Field(0.0, ge=0, description="Consumer processing seconds per message")

    @model_validator(mode="after")
    def check_event_packaging(self):
        if self.per_event_bytes is not None:
            expected = self.events_per_message * self.per_event_bytes
            if self.payload_bytes != expected:
                raise ValueError(
                    f"payload_bytes {self.payload_bytes} != events_per_message x per_event_bytes ({expected})"
                )
        return self
