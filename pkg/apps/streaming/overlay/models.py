# apps/streaming/overlay/models.py

import enum
import threading
from dataclasses import dataclass, field


# ===== Enums =====

class Direction(str, enum.Enum):
    INBOUND = "inbound"
    OUTBOUND = "outbound"


class SessionState(str, enum.Enum):
    HALF_OPEN = "half-open"
    ESTABLISHED = "established"
    RELEASED = "released"


DEFAULT_CONTROL_PORT = 5000
DEFAULT_DATA_PORTS = (5100, 5110)


# ===== Port pool =====

class PortPool:
    """Data ports of one control server; allocations are unique among live sessions."""

    def __init__(self, control_port: int = DEFAULT_CONTROL_PORT, data_ports: tuple[int, int] = DEFAULT_DATA_PORTS):
        low, high = data_ports
        if low > high:
            raise ValueError(f"empty data port range {low}-{high}")
        self.control_port = control_port
        self.data_ports = (low, high)
        self._free = set(range(low, high + 1))
        self._used: set[int] = set()

    @property
    def size(self) -> int:
        return self.data_ports[1] - self.data_ports[0] + 1

    @property
    def available(self) -> int:
        return len(self._free)

    def allocate(self) -> int | None:
        if not self._free:
            return None
        port = min(self._free)
        self._free.remove(port)
        self._used.add(port)
        return port

    def reserve(self, port: int) -> None:
        self._free.discard(port)
        self._used.add(port)

    def release(self, port: int) -> None:
        if port in self._used:
            self._used.remove(port)
            self._free.add(port)

    def in_use(self) -> set[int]:
        return set(self._used)


# ===== Session =====

@dataclass
class Session:
    uid: str
    num_conn: int
    consumer_host: str
    consumer_port: int
    receiver_ports: list[int]
    remote_endpoint: str
    producer_host: str | None = None
    producer_port: int | None = None
    connection_map: list[tuple[str, str]] = field(default_factory=list)
    traffic: list[int] = field(default_factory=list)
    state: SessionState = SessionState.HALF_OPEN
    _next_conn: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def consumer_proxy(self) -> str:
        return f"{self.consumer_host}:{self.consumer_port}"

    @property
    def producer_proxy(self) -> str | None:
        if self.producer_port is None:
            return None
        return f"{self.producer_host}:{self.producer_port}"

    def next_connection(self) -> int:
        with self._lock:
            index = self._next_conn
            self._next_conn = (index + 1) % self.num_conn
            self.traffic[index] += 1
            return index

    def to_dict(self) -> dict:
        return {
            "uid": self.uid,
            "num_conn": self.num_conn,
            "consumer_host": self.consumer_host,
            "consumer_port": self.consumer_port,
            "receiver_ports": list(self.receiver_ports),
            "remote_endpoint": self.remote_endpoint,
            "producer_host": self.producer_host,
            "producer_port": self.producer_port,
            "connection_map": [list(pair) for pair in self.connection_map],
            "traffic": list(self.traffic),
            "state": self.state.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Session":
        return cls(
            uid=data["uid"],
            num_conn=data["num_conn"],
            consumer_host=data["consumer_host"],
            consumer_port=data["consumer_port"],
            receiver_ports=list(data["receiver_ports"]),
            remote_endpoint=data["remote_endpoint"],
            producer_host=data.get("producer_host"),
            producer_port=data.get("producer_port"),
            connection_map=[tuple(pair) for pair in data.get("connection_map", [])],
            traffic=list(data.get("traffic", [])),
            state=SessionState(data["state"]),
        )
