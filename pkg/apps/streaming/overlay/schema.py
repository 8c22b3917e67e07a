# apps/streaming/overlay/schema.py

from typing import List, Optional

from pydantic import Field, field_validator, model_validator

from apps.core.schema import CustomBaseModel
from apps.streaming.overlay.models import Direction


class SessionRequest(CustomBaseModel):
    """User-client request to a control server (inbound on the consumer side, outbound on the producer side)"""
    direction: Direction
    remote_endpoint: str = Field("127.0.0.1", min_length=1, description="Peer facility address (remote_ip)")
    control_endpoint: str = Field("127.0.0.1:5000", min_length=1, description="Control server address (s2cs)")
    receiver_ports: List[int] = Field(default_factory=lambda: [5074])
    num_conn: int = Field(1, ge=1)
    credential: str = ""
    uid: Optional[str] = None

    @field_validator("receiver_ports")
    @classmethod
    def validate_ports(cls, v):
        for port in v:
            if not 1 <= port <= 65535:
                raise ValueError(f"port {port} out of range")
        return v

    @model_validator(mode="after")
    def check_uid(self):
        if self.direction == Direction.OUTBOUND and not self.uid:
            raise ValueError("outbound requests must carry the uid of a prior inbound request")
        return self

    @property
    def control_host(self) -> str:
        return self.control_endpoint.rsplit(":", 1)[0]


class SessionResponse(CustomBaseModel):
    uid: str
    endpoint: str
