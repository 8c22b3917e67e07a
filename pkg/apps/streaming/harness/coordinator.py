# apps/streaming/harness/coordinator.py

import logging
import queue
import socket
import threading

from apps.core.exception import AppException, RunTimeoutException
from apps.core.wire import WireException, recv_record, send_record
from apps.streaming.netpath.loopback import LOOPBACK_HOST

logger = logging.getLogger(__name__)


class CoordinatorServer:
    """
    Local control socket of a loopback run.

    Workers send ``hello``; the coordinator answers with their ``plan`` once it
    is published for that role. Every later record a worker sends lands on one
    collection channel as ``(role, worker_id, kind, body)``.
    """

    def __init__(self):
        self.listener = socket.create_server((LOOPBACK_HOST, 0))
        self.address: tuple[str, int] = self.listener.getsockname()[:2]
        self.channel: queue.Queue = queue.Queue()
        self._plans: dict[str, dict] = {}
        self._plan_ready: dict[str, threading.Event] = {"producer": threading.Event(), "consumer": threading.Event()}
        self._sockets: list[socket.socket] = []
        self._closed = threading.Event()
        self._acceptor = threading.Thread(target=self._accept, name="coordinator-accept", daemon=True)

    def start(self) -> "CoordinatorServer":
        self._acceptor.start()
        return self

    def publish_plan(self, role: str, plan: dict) -> None:
        self._plans[role] = plan
        self._plan_ready[role].set()

    def _accept(self) -> None:
        while not self._closed.is_set():
            try:
                sock, _ = self.listener.accept()
            except OSError:
                return
            self._sockets.append(sock)
            threading.Thread(target=self._serve, args=(sock,), name="coordinator-worker", daemon=True).start()

    def _serve(self, sock: socket.socket) -> None:
        role, worker_id = "?", -1
        try:
            record = recv_record(sock)
            if record is None or record[0] != "hello":
                raise WireException("Expected hello from worker", error_code="PROTOCOL_ERROR")
            role, worker_id = record[1]["role"], record[1]["id"]
            self._plan_ready[role].wait()
            send_record(sock, "plan", self._plans[role])
            while True:
                record = recv_record(sock)
                if record is None:
                    break
                kind, body = record
                self.channel.put((role, worker_id, kind, body))
        except (OSError, AppException) as e:
            if not self._closed.is_set():
                logger.debug(f"Coordinator link to {role} {worker_id} ended: {e}")
                self.channel.put((role, worker_id, "error", {"message": str(e)}))

    def collect(self, timeout: float):
        try:
            return self.channel.get(timeout=max(timeout, 0.0))
        except queue.Empty:
            raise RunTimeoutException("Timed out waiting for workers")

    def close(self) -> None:
        self._closed.set()
        for event in self._plan_ready.values():
            event.set()
        for sock in [self.listener, *self._sockets]:
            try:
                sock.close()
            except OSError:
                pass


class CoordinatorLink:
    """Worker end of the coordinator socket."""

    def __init__(self, address: tuple[str, int], role: str, worker_id: int):
        self.sock = socket.create_connection(address)
        self.lock = threading.Lock()
        send_record(self.sock, "hello", {"role": role, "id": worker_id})

    def wait_plan(self) -> dict:
        record = recv_record(self.sock)
        if record is None or record[0] != "plan":
            raise WireException("Coordinator closed before sending a plan", error_code="PROTOCOL_ERROR")
        return record[1]

    def send(self, kind: str, body) -> None:
        with self.lock:
            send_record(self.sock, kind, body)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass
