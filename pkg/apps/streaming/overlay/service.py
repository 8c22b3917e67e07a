# apps/streaming/overlay/service.py

import logging
import random
import threading
import uuid
from pathlib import Path

import orjson

from apps.core.exception import ControlPlaneException
from apps.settings import settings
from apps.streaming.overlay.models import Direction, PortPool, Session, SessionState
from apps.streaming.overlay.schema import SessionRequest, SessionResponse

logger = logging.getLogger(__name__)


class ControlPlane:
    """
    Session broker between a consumer-side and a producer-side control server.

    Requests are applied one at a time under a lock. ``route_message`` may be
    called from any thread; each session guards its own connection counters.
    """

    def __init__(
        self,
        credentials: list[str] | None = None,
        consumer_pool: PortPool | None = None,
        producer_pool: PortPool | None = None,
        seed: int | None = None,
    ):
        self.credentials = set(settings.overlay_credentials if credentials is None else credentials)
        self.consumer_pool = consumer_pool or PortPool()
        self.producer_pool = producer_pool or PortPool()
        self._rng = random.Random(seed) if seed is not None else None
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # ===== Helpers =====

    def _new_uid(self) -> str:
        if self._rng is None:
            return str(uuid.uuid4())
        return str(uuid.UUID(int=self._rng.getrandbits(128), version=4))

    def _check_credential(self, credential: str) -> None:
        if not credential or not credential.strip() or credential not in self.credentials:
            raise ControlPlaneException("Credential rejected", error_code="CREDENTIAL_REJECTED")

    def _live(self, uid: str) -> Session:
        session = self._sessions.get(uid)
        if session is None or session.state == SessionState.RELEASED:
            raise ControlPlaneException(f"Unknown session uid '{uid}'", error_code="UNKNOWN_UID")
        return session

    # ===== Requests =====

    def inbound_request(self, req: SessionRequest) -> tuple[str, str]:
        """
        Allocate the consumer-side proxy and open a half-open session.

        Returns:
            (uid, consumer proxy endpoint)
        """
        if req.direction != Direction.INBOUND:
            raise ControlPlaneException("Expected an inbound request", error_code="INVALID_SESSION_REQUEST")
        with self._lock:
            self._check_credential(req.credential)
            port = self.consumer_pool.allocate()
            if port is None:
                raise ControlPlaneException(
                    f"Consumer-side data ports {self.consumer_pool.data_ports[0]}-"
                    f"{self.consumer_pool.data_ports[1]} exhausted",
                    error_code="POOL_EXHAUSTED",
                )
            uid = self._new_uid()
            while uid in self._sessions:
                uid = self._new_uid()
            session = Session(
                uid=uid,
                num_conn=req.num_conn,
                consumer_host=req.control_host,
                consumer_port=port,
                receiver_ports=list(req.receiver_ports),
                remote_endpoint=req.remote_endpoint,
            )
            self._sessions[uid] = session
            logger.debug(f"Session {uid} half-open, consumer proxy {session.consumer_proxy}")
            return uid, session.consumer_proxy

    def outbound_request(self, req: SessionRequest, uid: str | None = None) -> str:
        """Allocate the producer-side proxy, build the connection map and establish the tunnel."""
        if req.direction != Direction.OUTBOUND:
            raise ControlPlaneException("Expected an outbound request", error_code="INVALID_SESSION_REQUEST")
        uid = uid or req.uid
        with self._lock:
            self._check_credential(req.credential)
            session = self._live(uid)
            if session.state != SessionState.HALF_OPEN:
                raise ControlPlaneException(f"Session '{uid}' is already established", error_code="SESSION_ESTABLISHED")
            if req.num_conn != session.num_conn:
                raise ControlPlaneException(
                    f"num_conn {req.num_conn} does not match the inbound request ({session.num_conn})",
                    error_code="NUM_CONN_MISMATCH",
                )
            port = self.producer_pool.allocate()
            if port is None:
                raise ControlPlaneException("Producer-side data ports exhausted", error_code="POOL_EXHAUSTED")

            session.producer_host = req.control_host
            session.producer_port = port
            session.connection_map = [
                (f"{session.producer_proxy}/{i}", f"{session.consumer_proxy}/{i}") for i in range(session.num_conn)
            ]
            session.traffic = [0] * session.num_conn
            session.state = SessionState.ESTABLISHED
            logger.debug(f"Session {uid} established with {session.num_conn} connection(s)")
            return session.producer_proxy

    def release(self, uid: str) -> None:
        with self._lock:
            session = self._live(uid)
            self.consumer_pool.release(session.consumer_port)
            if session.producer_port is not None:
                self.producer_pool.release(session.producer_port)
            session.state = SessionState.RELEASED
            del self._sessions[uid]
            logger.debug(f"Session {uid} released")

    def establish(
        self,
        num_conn: int = 1,
        credential: str | None = None,
        remote_endpoint: str = "127.0.0.1",
    ) -> Session:
        credential = credential if credential is not None else next(iter(sorted(self.credentials)), "")
        uid, _ = self.inbound_request(
            SessionRequest(
                direction=Direction.INBOUND,
                remote_endpoint=remote_endpoint,
                num_conn=num_conn,
                credential=credential,
            )
        )
        self.outbound_request(
            SessionRequest(
                direction=Direction.OUTBOUND,
                remote_endpoint=remote_endpoint,
                num_conn=num_conn,
                credential=credential,
                uid=uid,
            )
        )
        return self.session(uid)

    # ===== Data plane =====

    def route_message(self, uid: str) -> int:
        """Round-robin connection index for the next message through ``uid``'s tunnel."""
        session = self._sessions.get(uid)
        if session is None or session.state != SessionState.ESTABLISHED:
            raise ControlPlaneException(f"Session '{uid}' is not established", error_code="SESSION_NOT_ESTABLISHED")
        return session.next_connection()

    def session(self, uid: str) -> Session:
        with self._lock:
            return self._live(uid)

    def live_sessions(self) -> list[Session]:
        with self._lock:
            return list(self._sessions.values())

    # ===== Persistence =====

    def to_state(self) -> dict:
        with self._lock:
            return {"sessions": [s.to_dict() for s in self._sessions.values()]}

    def load_state(self, state: dict) -> None:
        with self._lock:
            for data in state.get("sessions", []):
                session = Session.from_dict(data)
                self._sessions[session.uid] = session
                self.consumer_pool.reserve(session.consumer_port)
                if session.producer_port is not None:
                    self.producer_pool.reserve(session.producer_port)


def load_control_plane(path: str | Path | None = None) -> ControlPlane:
    path = Path(path or settings.SESSION_STATE_FILE)
    plane = ControlPlane()
    if path.exists():
        plane.load_state(orjson.loads(path.read_bytes()))
    return plane


def save_control_plane(plane: ControlPlane, path: str | Path | None = None) -> None:
    path = Path(path or settings.SESSION_STATE_FILE)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(plane.to_state(), option=orjson.OPT_INDENT_2))


def inbound_request(plane: ControlPlane, req: SessionRequest) -> SessionResponse:
    uid, endpoint = plane.inbound_request(req)
    return SessionResponse(uid=uid, endpoint=endpoint)


def outbound_request(plane: ControlPlane, req: SessionRequest, uid: str | None = None) -> SessionResponse:
    endpoint = plane.outbound_request(req, uid)
    return SessionResponse(uid=uid or req.uid, endpoint=endpoint)
