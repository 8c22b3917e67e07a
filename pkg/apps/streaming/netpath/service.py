# apps/streaming/netpath/service.py

import logging

from apps.core.exception import InfeasibleConfigurationException, InvalidRequestException, NotFoundException
from apps.streaming.netpath.clock import Clock
from apps.streaming.netpath.models import (
    INGRESS,
    LOAD_BALANCER,
    LOCAL_PROXY,
    NODE_PORT,
    REMOTE_PROXY,
    Architecture,
    Balance,
    Connection,
    HopState,
    ProxyKind,
    Side,
)
from apps.streaming.netpath.schema import HopSpec, PathModel, PathOptions

logger = logging.getLogger(__name__)

GBPS = 1e9
MS = 1e-3

STUNNEL_CONN_LIMIT = 16
HAPROXY_MAX_CONN = 4


class ConnectionLimitExceeded(InfeasibleConfigurationException):
    default_error_code = "CONNECTION_LIMIT_EXCEEDED"

    def __init__(self, hop: str, limit: int):
        super().__init__(
            f"Hop '{hop}' supports at most {limit} simultaneous connections",
            reason="connection-limit",
        )
        self.hop = hop
        self.limit = limit

    def to_dict(self) -> dict:
        return {**super().to_dict(), "hop": self.hop, "limit": self.limit}


def _hop(name: str, latency: float, tls: float, **extra) -> HopSpec:
    return HopSpec(name=name, latency=latency, bandwidth_bps=1 * GBPS, tls_overhead=tls, **extra)


def default_hops(architecture: Architecture, proxy_kind: ProxyKind | None = None) -> list[HopSpec]:
    """Documented placeholder hop parameters on 1 Gbps links."""
    if architecture == Architecture.DTS:
        return [_hop(NODE_PORT, 0.2 * MS, 0.05 * MS)]
    if architecture == Architecture.PRS:
        if proxy_kind == ProxyKind.STUNNEL_LIKE:
            extra = {"conn_limit": STUNNEL_CONN_LIMIT, "balance": Balance.SINGLE_FLOW}
        else:
            extra = {"balance": Balance.ROUND_ROBIN}
        return [
            _hop(LOCAL_PROXY, 0.3 * MS, 0.05 * MS, **extra),
            _hop(REMOTE_PROXY, 0.3 * MS, 0.05 * MS, **extra),
        ]
    return [
        _hop(LOAD_BALANCER, 0.5 * MS, 0.05 * MS),
        _hop(INGRESS, 0.5 * MS, 0.0),
    ]


def build_path(architecture: Architecture, options: PathOptions | None = None) -> PathModel:
    """
    Canonical hop chain for ``architecture`` with per-hop overrides applied.

    Args:
        architecture: DTS, PRS or MSS
        options: proxy kind (PRS only), num_conn and hop overrides

    Returns:
        PathModel whose ``hops`` end at the broker
    """
    architecture = Architecture(architecture)
    options = options or PathOptions()
    proxy_kind = options.proxy_kind

    if architecture == Architecture.PRS:
        proxy_kind = proxy_kind or ProxyKind.HAPROXY_LIKE
    elif proxy_kind is not None:
        raise InvalidRequestException(
            f"proxy_kind only applies to PRS, not {architecture.value}", error_code="INVALID_PATH_OPTION"
        )

    hops = default_hops(architecture, proxy_kind)
    names = [hop.name for hop in hops]
    unknown = sorted(set(options.overrides) - set(names))
    if unknown:
        raise InvalidRequestException(
            f"Overrides name hops not on the {architecture.value} path: {unknown}",
            error_code="INVALID_PATH_OPTION",
        )
    hops = [options.overrides[hop.name].apply(hop) if hop.name in options.overrides else hop for hop in hops]

    if options.num_conn > 1:
        if architecture != Architecture.PRS:
            raise InvalidRequestException(
                f"num_conn > 1 is only valid for PRS, not {architecture.value}", error_code="INVALID_PATH_OPTION"
            )
        if proxy_kind == ProxyKind.STUNNEL_LIKE or any(h.balance != Balance.ROUND_ROBIN for h in hops):
            raise InvalidRequestException(
                "num_conn > 1 requires round-robin proxy hops (stunnel-like proxies carry one flow)",
                error_code="INVALID_PATH_OPTION",
            )
        if options.num_conn > HAPROXY_MAX_CONN:
            raise InvalidRequestException(
                f"num_conn must be between 1 and {HAPROXY_MAX_CONN}", error_code="INVALID_PATH_OPTION"
            )

    if architecture == Architecture.DTS:
        consumer_route = [NODE_PORT]
    elif architecture == Architecture.PRS:
        consumer_route = [REMOTE_PROXY]
    elif options.mss_consumers_via_load_balancer:
        consumer_route = [LOAD_BALANCER, INGRESS]
    else:
        consumer_route = [INGRESS]

    return PathModel(
        architecture=architecture,
        hops=hops,
        num_conn=options.num_conn,
        proxy_kind=proxy_kind,
        consumer_route=consumer_route,
    )


def one_way_delay(path: PathModel, msg_size: int, side: Side = Side.PRODUCER) -> float:
    """Closed-form delay through one side's chain, without queueing."""
    return sum(hop.transit(msg_size) for hop in path.route(side))


def control_delay(path: PathModel, side: Side = Side.PRODUCER) -> float:
    return sum(hop.control_transit() for hop in path.route(side))


def rtt_lower_bound(path: PathModel) -> float:
    """Latency and TLS cost of request and reply legs through both chains."""
    return 2 * (control_delay(path, Side.PRODUCER) + control_delay(path, Side.CONSUMER))


def traverse(path: PathModel, msg_size: int, clock: Clock, side: Side = Side.PRODUCER) -> float:
    return clock.now() + one_way_delay(path, msg_size, side)


class PathState:
    """Live connections and shared rate-limiter state for one PathModel."""

    def __init__(self, path: PathModel):
        self.path = path
        self.hops: dict[str, HopState] = {
            hop.name: HopState(name=hop.name, conn_limit=hop.conn_limit) for hop in path.hops
        }

    def acquire_connection(self, hop: str) -> Connection:
        state = self._state(hop)
        with state.lock:
            if state.conn_limit is not None and state.live >= state.conn_limit:
                raise ConnectionLimitExceeded(hop, state.conn_limit)
            connection = Connection(hop=hop, conn_id=state.next_conn_id())
            state.connections[connection.conn_id] = connection
        return connection

    def release_connection(self, connection: Connection) -> None:
        state = self._state(connection.hop)
        with state.lock:
            if state.connections.pop(connection.conn_id, None) is not None:
                connection.live = False

    def live_connections(self, hop: str) -> int:
        return self._state(hop).live

    def acquire_client(self, side: Side, num_conn: int | None = None) -> list[Connection]:
        """num_conn connections on the entry hop of ``side``'s chain; all or nothing."""
        entry = self.path.entry_hop(side)
        if entry is None:
            return []
        acquired: list[Connection] = []
        try:
            for _ in range(num_conn or self.path.num_conn):
                acquired.append(self.acquire_connection(entry.name))
        except ConnectionLimitExceeded:
            for connection in acquired:
                self.release_connection(connection)
            raise
        return acquired

    def _state(self, hop: str) -> HopState:
        state = self.hops.get(hop)
        if state is None:
            raise NotFoundException(f"Unknown hop '{hop}'", error_code="UNKNOWN_HOP")
        return state


def acquire_connection(state: PathState, hop: str) -> Connection:
    return state.acquire_connection(hop)


def release_connection(state: PathState, connection: Connection) -> None:
    state.release_connection(connection)
