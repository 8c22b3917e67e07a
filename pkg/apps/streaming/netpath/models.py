# apps/streaming/netpath/models.py

import enum
import itertools
import threading
from dataclasses import dataclass, field


# ===== Enums =====

class Architecture(str, enum.Enum):
    """Cross-facility streaming architectures"""
    DTS = "DTS"  # direct streaming over node-level ports
    PRS = "PRS"  # proxied streaming through a local/remote proxy tunnel
    MSS = "MSS"  # managed service streaming through load balancer + ingress


class ProxyKind(str, enum.Enum):
    STUNNEL_LIKE = "stunnel-like"
    HAPROXY_LIKE = "haproxy-like"


class Balance(str, enum.Enum):
    SINGLE_FLOW = "single-flow"
    ROUND_ROBIN = "round-robin"


class TransportMode(str, enum.Enum):
    SIM = "sim"
    LOOPBACK = "loopback"


class Side(str, enum.Enum):
    """Which client chain a message travels: producers outside, consumers inside the facility"""
    PRODUCER = "producer"
    CONSUMER = "consumer"


# ===== Hop names =====

NODE_PORT = "node-port"
LOCAL_PROXY = "local-proxy"
REMOTE_PROXY = "remote-proxy"
LOAD_BALANCER = "load-balancer"
INGRESS = "ingress"


# ===== Connections =====

@dataclass
class Connection:
    hop: str
    conn_id: int
    in_flight: int = 0
    live: bool = True


@dataclass
class HopState:
    """Mutable per-hop runtime state: live connections and the shared rate limiter."""
    name: str
    conn_limit: int | None
    connections: dict[int, Connection] = field(default_factory=dict)
    busy_until: float = 0.0
    bytes_carried: int = 0
    messages_carried: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)
    _ids: itertools.count = field(default_factory=lambda: itertools.count(1))

    @property
    def live(self) -> int:
        return len(self.connections)

    def next_conn_id(self) -> int:
        return next(self._ids)
