# apps/streaming/netpath/schema.py

from typing import Optional

from pydantic import Field, model_validator

from apps.core.schema import CustomBaseModel
from apps.streaming.netpath.models import Architecture, Balance, ProxyKind, Side


class HopSpec(CustomBaseModel):
    """One network segment between a client and the broker"""
    name: str = Field(..., min_length=1)
    latency: float = Field(..., ge=0, description="One-way seconds")
    bandwidth_bps: float = Field(..., gt=0)
    tls_overhead: float = Field(0.0, ge=0, description="Seconds added per message when TLS terminates here")
    conn_limit: Optional[int] = Field(None, ge=1)
    balance: Balance = Balance.SINGLE_FLOW

    def transit(self, size: int) -> float:
        return self.latency + size * 8 / self.bandwidth_bps + self.tls_overhead

    def control_transit(self) -> float:
        return self.latency + self.tls_overhead


class HopOverride(CustomBaseModel):
    latency: Optional[float] = Field(None, ge=0)
    bandwidth_bps: Optional[float] = Field(None, gt=0)
    tls_overhead: Optional[float] = Field(None, ge=0)
    conn_limit: Optional[int] = Field(None, ge=1)
    balance: Optional[Balance] = None

    def apply(self, hop: HopSpec) -> HopSpec:
        changes = self.model_dump(exclude_none=True)
        return hop.model_copy(update=changes) if changes else hop


class PathOptions(CustomBaseModel):
    proxy_kind: Optional[ProxyKind] = None
    num_conn: int = Field(1, ge=1)
    overrides: dict[str, HopOverride] = Field(default_factory=dict)
    mss_consumers_via_load_balancer: bool = False


class PathModel(CustomBaseModel):
    """
    Ordered hop chain of one architecture.

    ``hops`` is the producer-side data path ending at the broker. Consumers
    inside the facility reach the broker through ``consumer_route``, a suffix
    of ``hops`` named by hop.
    """
    architecture: Architecture
    hops: list[HopSpec]
    num_conn: int = Field(1, ge=1)
    proxy_kind: Optional[ProxyKind] = None
    consumer_route: list[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_routes(self):
        names = [hop.name for hop in self.hops]
        unknown = [name for name in self.consumer_route if name not in names]
        if unknown:
            raise ValueError(f"consumer_route names unknown hops: {unknown}")
        return self

    def hop(self, name: str) -> HopSpec:
        for hop in self.hops:
            if hop.name == name:
                return hop
        raise KeyError(name)

    def route(self, side: Side) -> list[HopSpec]:
        if Side(side) == Side.PRODUCER:
            return list(self.hops)
        return [self.hop(name) for name in self.consumer_route]

    def entry_hop(self, side: Side) -> HopSpec | None:
        route = self.route(side)
        return route[0] if route else None
