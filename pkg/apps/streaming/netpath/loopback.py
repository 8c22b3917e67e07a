# apps/streaming/netpath/loopback.py

import logging
import queue
import socket
import threading
import time

from apps.core.wire import WireException, frame, read_raw_frame
from apps.streaming.netpath.models import Side
from apps.streaming.netpath.schema import HopSpec, PathModel
from apps.streaming.netpath.service import PathState

logger = logging.getLogger(__name__)

LOOPBACK_HOST = "127.0.0.1"
_EOF = object()


class TokenBucket:
    """
    Byte-rate limiter shared by every relay of one hop.

    Tokens drip at ``rate`` bytes per second up to ``capacity``. ``consume``
    may drive the balance negative; the caller then sleeps off the debt,
    so flows sharing the bucket split the hop bandwidth.
    """

    def __init__(self, rate_bps: float, capacity: int = 16 * 1024):
        self.rate = rate_bps / 8
        self.capacity = capacity
        self.tokens = 0.0
        self.last_drip = time.monotonic()
        self._lock = threading.Lock()

    def drip(self) -> None:
        now = time.monotonic()
        self.tokens = min(self.capacity, self.tokens + (now - self.last_drip) * self.rate)
        self.last_drip = now

    def consume(self, amount: int) -> float:
        """Take ``amount`` bytes; returns the seconds to wait before sending."""
        with self._lock:
            self.drip()
            self.tokens -= amount
            debt = -self.tokens
        return debt / self.rate if debt > 0 else 0.0


def _sleep_until(deadline: float) -> None:
    remaining = deadline - time.monotonic()
    if remaining > 0:
        time.sleep(remaining)


class _Pump:
    """One direction of one relay: rate-limit on read, delay line on write."""

    def __init__(self, hop: HopSpec, bucket: TokenBucket, src: socket.socket, dst: socket.socket, label: str):
        self.hop = hop
        self.bucket = bucket
        self.src = src
        self.dst = dst
        self.label = label
        self.line: queue.Queue = queue.Queue()
        self.threads = [
            threading.Thread(target=self._read, name=f"{label}-rx", daemon=True),
            threading.Thread(target=self._write, name=f"{label}-tx", daemon=True),
        ]

    def start(self) -> None:
        for thread in self.threads:
            thread.start()

    def _read(self) -> None:
        delay = self.hop.latency + self.hop.tls_overhead
        try:
            while True:
                data = read_raw_frame(self.src)
                if data is None:
                    break
                wait = self.bucket.consume(len(data) + 4)
                if wait:
                    time.sleep(wait)
                self.line.put((time.monotonic() + delay, data))
        except (OSError, WireException) as e:
            logger.debug(f"{self.label}: read ended ({e})")
        finally:
            self.line.put(_EOF)

    def _write(self) -> None:
        try:
            while True:
                item = self.line.get()
                if item is _EOF:
                    break
                due, data = item
                _sleep_until(due)
                self.dst.sendall(frame(data))
        except OSError as e:
            logger.debug(f"{self.label}: write ended ({e})")
        finally:
            try:
                self.dst.shutdown(socket.SHUT_WR)
            except OSError:
                pass


class HopRelay:
    """
    A relay process for one hop of one connection: accepts the downstream
    side, connects to ``upstream`` and forwards frames both ways.
    """

    def __init__(self, hop: HopSpec, bucket: TokenBucket, upstream: tuple[str, int], label: str):
        self.hop = hop
        self.bucket = bucket
        self.upstream = upstream
        self.label = label
        self.listener = socket.create_server((LOOPBACK_HOST, 0))
        self.address: tuple[str, int] = self.listener.getsockname()[:2]
        self._sockets: list[socket.socket] = [self.listener]
        self._pumps: list[_Pump] = []
        self._acceptor = threading.Thread(target=self._accept, name=f"{label}-accept", daemon=True)

    def start(self) -> "HopRelay":
        self._acceptor.start()
        return self

    def _accept(self) -> None:
        try:
            client, _ = self.listener.accept()
            server = socket.create_connection(self.upstream)
        except OSError as e:
            logger.debug(f"{self.label}: accept/connect failed ({e})")
            return
        for sock in (client, server):
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._sockets += [client, server]
        self._pumps = [
            _Pump(self.hop, self.bucket, client, server, f"{self.label}-up"),
            _Pump(self.hop, self.bucket, server, client, f"{self.label}-down"),
        ]
        for pump in self._pumps:
            pump.start()
        logger.debug(f"{self.label}: relaying {self.address} -> {self.upstream}")

    def close(self) -> None:
        for sock in self._sockets:
            try:
                sock.close()
            except OSError:
                pass


class LoopbackFabric:
    """Relay chains over 127.0.0.1 for one PathModel, one token bucket per hop."""

    def __init__(self, path: PathModel, state: PathState | None = None):
        self.path = path
        self.state = state or PathState(path)
        self.buckets = {hop.name: TokenBucket(hop.bandwidth_bps) for hop in path.hops}
        self.relays: list[HopRelay] = []
        self._lock = threading.Lock()

    def open_chain(self, side: Side, target: tuple[str, int], label: str) -> tuple[str, int]:
        """Start relays for ``side``'s route ending at ``target``; returns the address clients dial."""
        address = target
        chain = []
        for hop in reversed(self.path.route(side)):
            relay = HopRelay(hop, self.buckets[hop.name], address, f"{label}/{hop.name}").start()
            chain.append(relay)
            address = relay.address
        with self._lock:
            self.relays.extend(chain)
        return address

    def close(self) -> None:
        with self._lock:
            relays, self.relays = self.relays, []
        for relay in relays:
            relay.close()
