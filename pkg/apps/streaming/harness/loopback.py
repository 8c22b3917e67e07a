# apps/streaming/harness/loopback.py

import contextvars
import functools
import heapq
import logging
import queue
import socket
import threading
import time
from collections import Counter
from typing import Callable

from apps.core.exception import AppException, FatalInvariantViolation, RunTimeoutException
from apps.core.wire import recv_record, send_record
from apps.settings import settings
from apps.streaming.broker.models import PublishResult
from apps.streaming.broker.service import Broker
from apps.streaming.harness.coordinator import CoordinatorLink, CoordinatorServer
from apps.streaming.harness.exception import MisroutedReplyError, MissingReplyError
from apps.streaming.harness.models import MessageEvent, Pattern, RunRecord
from apps.streaming.harness.patterns import (
    consumer_queues,
    declare_plan,
    expected_copies,
    message_share,
    plan_from_dict,
    plan_queues,
    plan_to_dict,
    producer_reply_queue,
    reply_route,
    request_route,
)
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.netpath.clock import WallClock
from apps.streaming.netpath.loopback import LOOPBACK_HOST, LoopbackFabric
from apps.streaming.netpath.models import Architecture, Side
from apps.streaming.netpath.service import PathState, build_path, one_way_delay
from apps.streaming.overlay.service import ControlPlane
from apps.streaming.workload.models import Message
from apps.streaming.workload.schema import WorkloadProfile
from apps.streaming.workload.service import pacing_interval, reply_message, virtual_message

logger = logging.getLogger(__name__)

PRODUCER = "producer"
CONSUMER = "consumer"
_POLL = 0.05


class _Link:
    """One client connection; writes are serialized, reads belong to a single reader."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.lock = threading.Lock()

    def send(self, kind: str, body) -> None:
        with self.lock:
            send_record(self.sock, kind, body)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


# ===== Broker gateway =====

class Gateway:
    """
    Network face of the in-process broker. One thread per inbound link applies
    publishes, acks and subscriptions; a single dispatcher thread pushes
    deliveries to each owner's first link in broker order.
    """

    def __init__(self, broker: Broker):
        self.broker = broker
        self.listener = socket.create_server((LOOPBACK_HOST, 0))
        self.address: tuple[str, int] = self.listener.getsockname()[:2]
        self.links: dict[tuple[str, int, int], _Link] = {}
        self.handles = {}
        self.handle_owner: dict[int, tuple[str, int]] = {}
        self.errors: list[str] = []
        self._lock = threading.Lock()
        self._kick = threading.Event()
        self._closed = threading.Event()
        self._threads = [
            threading.Thread(target=self._accept, name="gateway-accept", daemon=True),
            threading.Thread(target=self._dispatch_loop, name="gateway-dispatch", daemon=True),
        ]

    def start(self) -> "Gateway":
        for thread in self._threads:
            thread.start()
        return self

    def _accept(self) -> None:
        while not self._closed.is_set():
            try:
                sock, _ = self.listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            threading.Thread(target=self._serve, args=(sock,), name="gateway-link", daemon=True).start()

    def _serve(self, sock: socket.socket) -> None:
        link = _Link(sock)
        try:
            record = recv_record(sock)
            if record is None or record[0] != "hello":
                return
            role, worker_id, conn = record[1]["role"], record[1]["id"], record[1]["conn"]
            with self._lock:
                self.links[(role, worker_id, conn)] = link
            while True:
                record = recv_record(sock)
                if record is None:
                    break
                kind, body = record
                if kind == "pub":
                    msg = Message.from_payload(body["data"])
                    with self._lock:
                        result = self.broker.publish(body["ex"], body["rk"], msg)
                    link.send("confirm", {"tag": body["tag"], "ok": result == PublishResult.CONFIRM})
                    if result == PublishResult.CONFIRM:
                        self._kick.set()
                elif kind == "ack":
                    with self._lock:
                        self.broker.ack_batch(self.handles[body["h"]], body["tag"])
                    self._kick.set()
                elif kind == "sub":
                    with self._lock:
                        handle = self.broker.register_consumer(body["queue"], body["prefetch"], consumer_id=worker_id)
                        self.handles[handle.handle_id] = handle
                        self.handle_owner[handle.handle_id] = (role, worker_id)
                    link.send("subscribed", {"queue": body["queue"], "h": handle.handle_id})
                    self._kick.set()
        except (OSError, AppException, AssertionError) as e:
            if not self._closed.is_set():
                self.errors.append(f"gateway link: {e}")
                logger.warning(f"Gateway link failed: {e}", exc_info=True)

    def _dispatch_loop(self) -> None:
        while not self._closed.is_set():
            self._kick.wait(_POLL)
            self._kick.clear()
            try:
                with self._lock:
                    deliveries = self.broker.deliver_next()
                    owners = [self.handle_owner[d.handle.handle_id] for d in deliveries]
                for delivery, (role, worker_id) in zip(deliveries, owners):
                    self.links[(role, worker_id, 0)].send(
                        "deliver",
                        {"h": delivery.handle.handle_id, "tag": delivery.tag, "data": delivery.message.payload},
                    )
            except (OSError, AppException, AssertionError) as e:
                if not self._closed.is_set():
                    self.errors.append(f"gateway dispatch: {e}")
                    logger.warning(f"Gateway dispatch failed: {e}", exc_info=True)
                return

    def stats(self):
        with self._lock:
            return self.broker.stats()

    def send_stop(self, role: str, worker_id: int) -> None:
        self.links[(role, worker_id, 0)].send("stop", {})

    def close(self) -> None:
        self._closed.set()
        self._kick.set()
        with self._lock:
            links = list(self.links.values())
        for sock in [self.listener] + [link.sock for link in links]:
            try:
                sock.close()
            except OSError:
                pass


# ===== Workers =====

class _Worker(threading.Thread):
    role = ""

    def __init__(self, worker_id: int, coordinator: tuple[str, int], clock: WallClock):
        super().__init__(name=f"{self.role}-{worker_id}", daemon=True)
        self.worker_id = worker_id
        self.coordinator = coordinator
        self.clock = clock
        self.links: list[_Link] = []
        self.inbox: queue.Queue = queue.Queue()
        self._context = contextvars.copy_context()

    def run(self) -> None:
        self._context.run(self._run)

    def _run(self) -> None:
        coordinator = None
        try:
            coordinator = CoordinatorLink(self.coordinator, self.role, self.worker_id)
            plan = coordinator.wait_plan()
            self.config = ExperimentConfig.model_validate(plan["config"])
            self.profile = WorkloadProfile.model_validate(plan["profile"])
            self.plan = plan_from_dict(plan["plan"])
            for conn, address in enumerate(plan["entries"][str(self.worker_id)]):
                sock = socket.create_connection(tuple(address))
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                link = _Link(sock)
                link.send("hello", {"role": self.role, "id": self.worker_id, "conn": conn})
                self.links.append(link)
                threading.Thread(target=self._read, args=(link,), name=f"{self.name}-rx{conn}", daemon=True).start()
            coordinator.send("result", self.work(coordinator))
        except Exception as e:
            logger.debug(f"{self.name} failed", exc_info=True)
            if coordinator is not None:
                try:
                    coordinator.send("error", {"message": f"{type(e).__name__}: {e}"})
                except OSError:
                    pass
        finally:
            for link in self.links:
                link.close()
            if coordinator is not None:
                coordinator.close()

    def _read(self, link: _Link) -> None:
        try:
            while True:
                record = recv_record(link.sock)
                if record is None:
                    break
                self.inbox.put(record)
        except (OSError, AppException):
            pass
        self.inbox.put(("closed", {}))

    def _next(self, timeout: float):
        try:
            kind, body = self.inbox.get(timeout=max(timeout, 0.0))
        except queue.Empty:
            return None, None
        if kind == "closed":
            raise AppException(f"{self.name}: link closed by peer", error_code="LINK_CLOSED")
        return kind, body

    def _subscribe(self, queues: list[str]) -> None:
        for name in queues:
            self.links[0].send("sub", {"queue": name, "prefetch": self.config.prefetch})
        pending = set(queues)
        deadline = time.monotonic() + settings.RUN_TIMEOUT
        while pending:
            kind, body = self._next(deadline - time.monotonic())
            if kind is None:
                raise RunTimeoutException(f"{self.name}: subscription timed out")
            if kind == "subscribed":
                pending.discard(body["queue"])

    def work(self, coordinator: CoordinatorLink) -> dict:
        raise NotImplementedError


class LoopbackProducer(_Worker):
    """
    Paced publisher. Through a PRS tunnel every frame takes the link the
    session assigns (``route``); otherwise links are used round robin.
    """
    role = PRODUCER

    def __init__(
        self,
        worker_id: int,
        coordinator: tuple[str, int],
        clock: WallClock,
        route: Callable[[], int] | None = None,
    ):
        super().__init__(worker_id, coordinator, clock)
        self.route = route

    def work(self, coordinator: CoordinatorLink) -> dict:
        config, profile = self.config, self.profile
        pattern = config.pattern
        producers = config.effective_producers
        share = message_share(config.message_count, producers, self.worker_id)
        interval = pacing_interval(profile, producers)
        window = settings.LOOPBACK_CONFIRM_WINDOW

        reply_queue = producer_reply_queue(self.plan, self.worker_id)
        if reply_queue is not None:
            self._subscribe([reply_queue])

        publish_ts: dict[int, float] = {}
        replies: dict[tuple[int, int], float] = {}
        unconfirmed: dict[int, int] = {}
        backoff: dict[int, float] = {}
        resend: list[tuple[float, int]] = []
        gather_pending: dict[int, int] = {}
        outstanding = 0
        next_seq = 0
        next_tag = 0
        next_send = self.clock.now()
        started = next_send
        rr = 0
        link_frames = [0] * len(self.links)
        confirmed = 0
        rejected = 0
        stopped = False

        def publish(seq: int) -> None:
            nonlocal next_tag, rr
            msg = virtual_message(profile, self.worker_id, seq, config.seed).stamp(publish_ts[seq])
            exchange, routing_key = request_route(self.plan, seq)
            unconfirmed[next_tag] = seq
            index = self.route() if self.route is not None else rr % len(self.links)
            self.links[index].send("pub", {"ex": exchange, "rk": routing_key, "tag": next_tag, "data": msg.payload})
            link_frames[index] += 1
            next_tag += 1
            rr += 1

        while True:
            now = self.clock.now()
            if config.duration is not None and now - started >= config.duration:
                stopped = True
            room = len(unconfirmed) < window
            if resend and resend[0][0] <= now and room:
                _, seq = heapq.heappop(resend)
                publish(seq)
                continue
            may_send = (
                not stopped
                and next_seq < share
                and room
                and (not pattern.has_reply or outstanding < config.reply_window)
            )
            if may_send and now >= next_send:
                seq = next_seq
                next_seq += 1
                publish_ts[seq] = now
                next_send = now + interval
                if pattern.has_reply:
                    outstanding += 1
                    if pattern == Pattern.BROADCAST_GATHER:
                        gather_pending[seq] = config.consumers
                publish(seq)
                continue

            sent_all = stopped or next_seq >= share
            if sent_all and not unconfirmed and not resend and outstanding == 0:
                break

            timeout = _POLL
            if may_send:
                timeout = min(timeout, next_send - now)
            if resend:
                timeout = min(timeout, resend[0][0] - now)
            kind, body = self._next(timeout)
            if kind == "confirm":
                seq = unconfirmed.pop(body["tag"])
                if body["ok"]:
                    confirmed += 1
                else:
                    rejected += 1
                    delay = backoff.get(seq, settings.PUBLISH_BACKOFF_INITIAL)
                    backoff[seq] = min(delay * 2, settings.PUBLISH_BACKOFF_CAP)
                    heapq.heappush(resend, (self.clock.now() + delay, seq))
            elif kind == "deliver":
                reply = Message.from_payload(body["data"])
                arrived = self.clock.now()
                if reply.producer_id != self.worker_id:
                    raise MisroutedReplyError(
                        f"Reply for p{reply.producer_id}#{reply.seq} reached p{self.worker_id}"
                    )
                replies[(reply.seq, reply.origin)] = arrived
                self.links[0].send("ack", {"h": body["h"], "tag": body["tag"]})
                if pattern == Pattern.BROADCAST_GATHER:
                    gather_pending[reply.seq] -= 1
                    if gather_pending[reply.seq]:
                        continue
                    del gather_pending[reply.seq]
                outstanding -= 1

        return {
            "publish": [[seq, ts] for seq, ts in sorted(publish_ts.items())],
            "replies": [[seq, cid, ts] for (seq, cid), ts in sorted(replies.items())],
            "confirmed": confirmed,
            "rejected": rejected,
            "link_frames": link_frames,
        }


class LoopbackConsumer(_Worker):
    role = CONSUMER

    def work(self, coordinator: CoordinatorLink) -> dict:
        config, profile = self.config, self.profile
        processing_time = profile.processing_time if config.processing_time is None else config.processing_time
        self._subscribe(consumer_queues(self.plan, self.worker_id))
        coordinator.send("ready", {})

        deliveries: list[list] = []
        pending: dict[int, list[int]] = {}  # handle -> [last tag, count]
        unacked: Counter = Counter()
        unconfirmed: dict[int, tuple] = {}
        resend: list[tuple[float, int, tuple]] = []
        next_tag = 0
        rr = 0
        rejected = 0

        def ack(handle_id: int) -> None:
            tag, count = pending.pop(handle_id)
            self.links[0].send("ack", {"h": handle_id, "tag": tag})
            unacked[handle_id] -= count

        def publish_reply(reply_args: tuple) -> None:
            nonlocal next_tag, rr
            exchange, routing_key, payload = reply_args
            unconfirmed[next_tag] = reply_args
            self.links[rr % len(self.links)].send(
                "pub", {"ex": exchange, "rk": routing_key, "tag": next_tag, "data": payload}
            )
            next_tag += 1
            rr += 1

        while True:
            if pending and self.inbox.empty():
                for handle_id in list(pending):
                    ack(handle_id)
            now = self.clock.now()
            while resend and resend[0][0] <= now:
                _, _, reply_args = heapq.heappop(resend)
                publish_reply(reply_args)
            timeout = _POLL if not resend else min(_POLL, resend[0][0] - now)

            kind, body = self._next(timeout)
            if kind == "stop":
                break
            if kind == "deliver":
                request = Message.from_payload(body["data"])
                deliveries.append([request.producer_id, request.seq, self.clock.now()])
                if processing_time > 0:
                    time.sleep(processing_time)
                if config.pattern.has_reply:
                    reply = reply_message(request, self.worker_id, config.reply_bytes, created_at=self.clock.now())
                    exchange, routing_key = reply_route(self.plan, request.producer_id)
                    publish_reply((exchange, routing_key, reply.payload))
                handle_id = body["h"]
                entry = pending.setdefault(handle_id, [body["tag"], 0])
                entry[0] = body["tag"]
                entry[1] += 1
                unacked[handle_id] += 1
                if entry[1] >= config.ack_batch or unacked[handle_id] >= config.prefetch:
                    ack(handle_id)
            elif kind == "confirm":
                reply_args = unconfirmed.pop(body["tag"], None)
                if reply_args is not None and not body["ok"]:
                    rejected += 1
                    heapq.heappush(resend, (self.clock.now() + settings.PUBLISH_BACKOFF_INITIAL, body["tag"], reply_args))

        for handle_id in list(pending):
            ack(handle_id)
        return {"deliveries": deliveries, "rejected": rejected}


# ===== Coordinator =====

class LoopbackExperiment:
    """One run over real 127.0.0.1 sockets with wall-clock timestamps."""

    def __init__(
        self,
        config: ExperimentConfig,
        profile: WorkloadProfile,
        plane: ControlPlane | None = None,
        repetition: int = 0,
    ):
        self.config = config
        self.profile = profile
        self.repetition = repetition
        self.plane = plane
        self.session = None
        self.path = build_path(config.architecture, config.path_options())
        self.path_state = PathState(self.path)
        self.broker = Broker(config.memory_budget)
        self.plan = plan_queues(config)
        self.clock = WallClock()
        self.producers = config.effective_producers
        self.deadline = time.monotonic() + settings.RUN_TIMEOUT

    def _collect(self, server: CoordinatorServer, role: str, kind: str, count: int) -> dict[int, dict]:
        results: dict[int, dict] = {}
        while len(results) < count:
            if self.gateway.errors:
                raise AppException(self.gateway.errors[0], error_code="LOOPBACK_FAILED")
            worker_role, worker_id, record_kind, body = server.collect(self.deadline - time.monotonic())
            if record_kind == "error":
                raise AppException(f"{worker_role} {worker_id}: {body['message']}", error_code="LOOPBACK_FAILED")
            if worker_role == role and record_kind == kind:
                results[worker_id] = body
        return results

    def _wait_quiescent(self) -> None:
        while True:
            stats = self.gateway.stats()
            if all(q.depth == 0 and q.unacked == 0 for q in stats.queues.values()):
                return
            if time.monotonic() > self.deadline:
                raise RunTimeoutException("Broker did not drain before the run deadline")
            time.sleep(0.01)

    def run(self) -> RunRecord:
        config = self.config
        declare_plan(self.broker, self.plan)
        connections = []
        fabric = LoopbackFabric(self.path, self.path_state)
        self.gateway = Gateway(self.broker)
        server = CoordinatorServer()
        try:
            if config.architecture == Architecture.PRS:
                if self.plane is None:
                    self.plane = ControlPlane(seed=config.seed)
                self.session = self.plane.establish(num_conn=config.num_conn, credential=config.credential)

            for _ in range(config.consumers):
                connections += self.path_state.acquire_client(Side.CONSUMER)
            for _ in range(self.producers):
                connections += self.path_state.acquire_client(Side.PRODUCER)

            self.gateway.start()
            server.start()
            base = {
                "config": config.model_dump(mode="json"),
                "profile": self.profile.model_dump(mode="json"),
                "plan": plan_to_dict(self.plan),
            }

            consumer_entries = {
                str(cid): [
                    list(fabric.open_chain(Side.CONSUMER, self.gateway.address, f"c{cid}.{conn}"))
                    for conn in range(self.path.num_conn)
                ]
                for cid in range(config.consumers)
            }
            server.publish_plan(CONSUMER, {**base, "entries": consumer_entries})
            for cid in range(config.consumers):
                LoopbackConsumer(cid, server.address, self.clock).start()
            self._collect(server, CONSUMER, "ready", config.consumers)
            consumers_ready_ts = self.clock.now()

            producer_entries = {
                str(pid): [
                    list(fabric.open_chain(Side.PRODUCER, self.gateway.address, f"p{pid}.{conn}"))
                    for conn in range(self.path.num_conn)
                ]
                for pid in range(self.producers)
            }
            server.publish_plan(PRODUCER, {**base, "entries": producer_entries})
            route = functools.partial(self.plane.route_message, self.session.uid) if self.session is not None else None
            for pid in range(self.producers):
                LoopbackProducer(pid, server.address, self.clock, route=route).start()
            producer_results = self._collect(server, PRODUCER, "result", self.producers)

            self._wait_quiescent()
            for cid in range(config.consumers):
                self.gateway.send_stop(CONSUMER, cid)
            consumer_results = self._collect(server, CONSUMER, "result", config.consumers)
            duration = self.clock.now()

            return self._record(producer_results, consumer_results, consumers_ready_ts, duration)
        finally:
            server.close()
            self.gateway.close()
            fabric.close()
            for connection in connections:
                self.path_state.release_connection(connection)
            if self.session is not None:
                self.plane.release(self.session.uid)

    def _record(self, producer_results, consumer_results, consumers_ready_ts: float, duration: float) -> RunRecord:
        config = self.config
        self.broker.check_conservation()

        publish_ts: dict[tuple[int, int], float] = {}
        replies: dict[tuple[int, int, int], float] = {}
        confirmed = rejected = 0
        for pid, result in producer_results.items():
            confirmed += result["confirmed"]
            rejected += result["rejected"]
            for seq, ts in result["publish"]:
                publish_ts[(pid, seq)] = ts
            for seq, cid, ts in result["replies"]:
                replies[(pid, seq, cid)] = ts

        deliveries: dict[tuple[int, int, int], float] = {}
        for cid, result in consumer_results.items():
            for pid, seq, ts in result["deliveries"]:
                key = (pid, seq, cid)
                if key in deliveries:
                    raise FatalInvariantViolation(f"Duplicate delivery {key}", error_code="DUPLICATE_DELIVERY")
                deliveries[key] = ts

        copies = expected_copies(config)
        if len(deliveries) != confirmed * copies:
            raise FatalInvariantViolation(
                f"{confirmed} confirmed x {copies} copies but {len(deliveries)} deliveries",
                error_code="MESSAGE_LOSS",
            )
        if config.pattern.has_reply and set(replies) != set(deliveries):
            raise MissingReplyError(f"{len(set(deliveries) - set(replies))} replies missing")

        if self.session is not None:
            link_frames = [sum(column) for column in zip(*(r["link_frames"] for r in producer_results.values()))]
            if link_frames != self.session.traffic:
                raise FatalInvariantViolation(
                    f"Tunnel counters {self.session.traffic} disagree with frames sent per link {link_frames}",
                    error_code="TUNNEL_ACCOUNTING",
                )

        events = [
            MessageEvent(
                producer_id=pid,
                seq=seq,
                consumer_id=cid,
                publish_ts=publish_ts[(pid, seq)],
                deliver_ts=ts,
                reply_ts=replies[(pid, seq, cid)] if config.pattern.has_reply else None,
            )
            for (pid, seq, cid), ts in sorted(deliveries.items())
        ]
        counts = Counter(event.consumer_id for event in events)
        return RunRecord(
            config=config,
            events=events,
            duration=duration,
            rejected_publishes=rejected,
            per_consumer_counts={cid: counts.get(cid, 0) for cid in range(config.consumers)},
            confirmed=confirmed,
            consumers_ready_ts=consumers_ready_ts,
            virtual=False,
            seed=config.seed,
            repetition=self.repetition,
            path_delay=one_way_delay(self.path, self.profile.payload_bytes, Side.PRODUCER),
            broker_stats=self.broker.stats().model_dump(mode="json"),
            tunnel_traffic=list(self.session.traffic) if self.session is not None else [],
        )
