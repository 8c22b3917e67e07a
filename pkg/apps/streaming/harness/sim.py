# apps/streaming/harness/sim.py

import logging
import time
from collections import Counter, defaultdict

import simpy
from simpy.core import Infinity

from apps.core.exception import FatalInvariantViolation, RunTimeoutException
from apps.settings import settings
from apps.streaming.broker.models import Delivery, PublishResult
from apps.streaming.broker.service import Broker
from apps.streaming.harness.exception import MisroutedReplyError, MissingReplyError
from apps.streaming.harness.models import MessageEvent, Pattern, RunRecord
from apps.streaming.harness.patterns import (
    consumer_queues,
    declare_plan,
    expected_copies,
    message_share,
    plan_queues,
    producer_reply_queue,
    reply_route,
    request_route,
)
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.netpath.models import Architecture, Side
from apps.streaming.netpath.service import PathState, build_path, one_way_delay
from apps.streaming.netpath.sim import SimTransport
from apps.streaming.overlay.service import ControlPlane
from apps.streaming.workload.models import Message
from apps.streaming.workload.schema import WorkloadProfile
from apps.streaming.workload.service import pacing_interval, reply_message, virtual_message

logger = logging.getLogger(__name__)

_TIMEOUT_CHECK_EVERY = 4096


class SimExperiment:
    """
    One run on a virtual clock. Producers are simpy processes; the broker,
    consumers and hops react to timeout callbacks, so the whole run is a
    single deterministic event stream.
    """

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
        self.seed = config.seed
        self.pattern = config.pattern
        self.producers = config.effective_producers
        self.processing_time = (
            profile.processing_time if config.processing_time is None else config.processing_time
        )

        self.env = simpy.Environment()
        self.path = build_path(config.architecture, config.path_options())
        self.path_state = PathState(self.path)
        self.transport = SimTransport(self.env, self.path, self.path_state)
        self.broker = Broker(config.memory_budget)
        self.plan = plan_queues(config)
        self.plane = plane
        self.session = None
        self._own_session = False

        self.connections = []
        self.owners: dict[int, tuple[Side, int]] = {}
        self.inbound: dict[int, int] = defaultdict(int)
        self.pending_ack: dict[int, tuple[int, int]] = {}
        self.busy_until: dict[int, float] = defaultdict(float)

        self.publish_ts: dict[tuple[int, int], float] = {}
        self.deliveries: dict[tuple[int, int, int], float] = {}
        self.replies: dict[tuple[int, int, int], float] = {}
        self.outstanding = [0] * self.producers
        self.gather_pending: dict[tuple[int, int], int] = {}
        self.window_waiters: dict[int, simpy.Event] = {}

        self.confirmed = 0
        self.rejected = 0
        self.consumers_ready_ts = 0.0

    # ===== Setup =====

    def setup(self) -> None:
        config = self.config
        declare_plan(self.broker, self.plan)

        if config.architecture == Architecture.PRS:
            if self.plane is None:
                self.plane = ControlPlane(seed=self.seed)
            self.session = self.plane.establish(num_conn=config.num_conn, credential=config.credential)
            self._own_session = True

        # consumers start first
        for cid in range(config.consumers):
            self.connections += self.path_state.acquire_client(Side.CONSUMER)
            for queue in consumer_queues(self.plan, cid):
                handle = self.broker.register_consumer(queue, config.prefetch, consumer_id=cid)
                self.owners[handle.handle_id] = (Side.CONSUMER, cid)
        self.consumers_ready_ts = self.env.now

        for pid in range(self.producers):
            self.connections += self.path_state.acquire_client(Side.PRODUCER)
            queue = producer_reply_queue(self.plan, pid)
            if queue is not None:
                handle = self.broker.register_consumer(queue, config.prefetch, consumer_id=pid)
                self.owners[handle.handle_id] = (Side.PRODUCER, pid)

    def teardown(self) -> None:
        for connection in self.connections:
            self.path_state.release_connection(connection)
        self.connections = []
        if self.session is not None and self._own_session:
            self.plane.release(self.session.uid)

    # ===== Broker side =====

    def _dispatch(self) -> None:
        for delivery in self.broker.deliver_next():
            handle_id = delivery.handle.handle_id
            side, owner = self.owners[handle_id]
            self.inbound[handle_id] += 1
            target = self._on_delivery if side == Side.CONSUMER else self._on_reply
            self.transport.send(side, delivery.message.size, False, target, owner, delivery)

    def _on_publish(self, msg: Message, exchange: str, routing_key: str, done: simpy.Event) -> None:
        result = self.broker.publish(exchange, routing_key, msg)
        if result == PublishResult.CONFIRM:
            self._dispatch()
        self.transport.send_control(Side.PRODUCER, False, done.succeed, result)

    def _on_ack(self, handle, tag: int) -> None:
        self.broker.ack_batch(handle, tag)
        self._dispatch()

    def _settle(self, delivery: Delivery) -> None:
        """Acknowledge cumulatively per the batching rule."""
        handle = delivery.handle
        handle_id = handle.handle_id
        self.inbound[handle_id] -= 1
        _, count = self.pending_ack.get(handle_id, (0, 0))
        count += 1
        if (
            count >= self.config.ack_batch
            or handle.unacked >= handle.prefetch
            or self.inbound[handle_id] == 0
        ):
            self.pending_ack.pop(handle_id, None)
            side = self.owners[handle_id][0]
            self.transport.send_control(side, True, self._on_ack, handle, delivery.tag)
        else:
            self.pending_ack[handle_id] = (delivery.tag, count)

    # ===== Consumers =====

    def _on_delivery(self, consumer_id: int, delivery: Delivery) -> None:
        msg = delivery.message
        self.deliveries[(msg.producer_id, msg.seq, consumer_id)] = self.env.now
        if self.processing_time > 0:
            start = max(self.env.now, self.busy_until[consumer_id])
            self.busy_until[consumer_id] = start + self.processing_time
            self.transport.call_at(start + self.processing_time, self._processed, consumer_id, delivery)
        else:
            self._processed(consumer_id, delivery)

    def _processed(self, consumer_id: int, delivery: Delivery) -> None:
        # reply, then ack
        if self.pattern.has_reply:
            request = delivery.message
            reply = reply_message(request, consumer_id, self.config.reply_bytes, created_at=self.env.now)
            exchange, routing_key = reply_route(self.plan, request.producer_id)
            self._send_reply(consumer_id, reply, exchange, routing_key, settings.PUBLISH_BACKOFF_INITIAL)
        self._settle(delivery)

    def _send_reply(self, consumer_id: int, reply: Message, exchange: str, routing_key: str, backoff: float) -> None:
        self.transport.send(
            Side.CONSUMER, reply.size, True, self._on_reply_publish, consumer_id, reply, exchange, routing_key, backoff
        )

    def _on_reply_publish(self, consumer_id, reply, exchange, routing_key, backoff) -> None:
        if self.broker.publish(exchange, routing_key, reply) == PublishResult.CONFIRM:
            self._dispatch()
            return
        retry_at = self.transport.control_arrival(Side.CONSUMER, False) + backoff
        next_backoff = min(backoff * 2, settings.PUBLISH_BACKOFF_CAP)
        self.transport.call_at(retry_at, self._send_reply, consumer_id, reply, exchange, routing_key, next_backoff)

    # ===== Producers =====

    def _on_reply(self, producer_id: int, delivery: Delivery) -> None:
        reply = delivery.message
        if reply.producer_id != producer_id:
            raise MisroutedReplyError(
                f"Reply for p{reply.producer_id}#{reply.seq} from c{reply.origin} reached p{producer_id}"
            )
        key = (reply.producer_id, reply.seq, reply.origin)
        if key in self.replies:
            raise FatalInvariantViolation(f"Duplicate reply {key}", error_code="DUPLICATE_REPLY")
        self.replies[key] = self.env.now
        self._settle(delivery)

        msg_id = (reply.producer_id, reply.seq)
        if self.pattern == Pattern.BROADCAST_GATHER:
            self.gather_pending[msg_id] -= 1
            if self.gather_pending[msg_id]:
                return
            del self.gather_pending[msg_id]
        self.outstanding[producer_id] -= 1
        waiter = self.window_waiters.pop(producer_id, None)
        if waiter is not None:
            waiter.succeed()

    def _producer(self, producer_id: int):
        config = self.config
        env = self.env
        share = message_share(config.message_count, self.producers, producer_id)
        interval = pacing_interval(self.profile, self.producers)
        started = env.now

        for seq in range(share):
            if config.duration is not None and env.now - started >= config.duration:
                break
            if self.pattern.has_reply:
                while self.outstanding[producer_id] >= config.reply_window:
                    waiter = env.event()
                    self.window_waiters[producer_id] = waiter
                    yield waiter

            t0 = env.now
            msg = virtual_message(self.profile, producer_id, seq, self.seed).stamp(t0)
            exchange, routing_key = request_route(self.plan, seq)
            self.publish_ts[msg.msg_id] = t0
            if self.pattern.has_reply:
                self.outstanding[producer_id] += 1
                if self.pattern == Pattern.BROADCAST_GATHER:
                    self.gather_pending[msg.msg_id] = config.consumers
            backoff = settings.PUBLISH_BACKOFF_INITIAL
            while True:
                if self.session is not None:
                    self.plane.route_message(self.session.uid)
                done = env.event()
                self.transport.send(Side.PRODUCER, msg.size, True, self._on_publish, msg, exchange, routing_key, done)
                result = yield done
                if result == PublishResult.CONFIRM:
                    break
                self.rejected += 1
                yield env.timeout(backoff)
                backoff = min(backoff * 2, settings.PUBLISH_BACKOFF_CAP)
            self.confirmed += 1

            wait = t0 + interval - env.now
            if wait > 0:
                yield env.timeout(wait)

    # ===== Run =====

    def run(self) -> RunRecord:
        try:
            self.setup()
            for pid in range(self.producers):
                self.env.process(self._producer(pid))
            self._run_loop()
            return self._record()
        finally:
            self.teardown()

    def _run_loop(self) -> None:
        deadline = time.monotonic() + settings.RUN_TIMEOUT
        env = self.env
        steps = 0
        while env.peek() != Infinity:
            env.step()
            steps += 1
            if steps % _TIMEOUT_CHECK_EVERY == 0 and time.monotonic() > deadline:
                raise RunTimeoutException(
                    f"Run exceeded {settings.RUN_TIMEOUT}s wall-clock at virtual t={env.now:.6f}"
                )

    def _record(self) -> RunRecord:
        config = self.config
        self.broker.check_conservation()

        copies = expected_copies(config)
        if len(self.deliveries) != self.confirmed * copies:
            raise FatalInvariantViolation(
                f"{self.confirmed} confirmed x {copies} copies but {len(self.deliveries)} deliveries",
                error_code="MESSAGE_LOSS",
            )
        if self.pattern.has_reply and len(self.replies) != len(self.deliveries):
            missing = sorted(set(self.deliveries) - set(self.replies))[:5]
            raise MissingReplyError(f"{len(self.deliveries) - len(self.replies)} replies missing, e.g. {missing}")

        events = [
            MessageEvent(
                producer_id=pid,
                seq=seq,
                consumer_id=cid,
                publish_ts=self.publish_ts[(pid, seq)],
                deliver_ts=deliver_ts,
                reply_ts=self.replies[(pid, seq, cid)] if self.pattern.has_reply else None,
            )
            for (pid, seq, cid), deliver_ts in sorted(self.deliveries.items())
        ]
        counts = Counter(event.consumer_id for event in events)
        return RunRecord(
            config=config,
            events=events,
            duration=self.env.now,
            rejected_publishes=self.rejected,
            per_consumer_counts={cid: counts.get(cid, 0) for cid in range(config.consumers)},
            confirmed=self.confirmed,
            consumers_ready_ts=self.consumers_ready_ts,
            virtual=True,
            seed=self.seed,
            repetition=self.repetition,
            path_delay=one_way_delay(self.path, self.profile.payload_bytes, Side.PRODUCER),
            broker_stats=self.broker.stats().model_dump(mode="json"),
            tunnel_traffic=list(self.session.traffic) if self.session is not None else [],
        )
