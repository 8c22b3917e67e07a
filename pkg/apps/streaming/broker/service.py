# apps/streaming/broker/service.py

import logging
import threading

from apps.core.exception import (
    ConflictException,
    FatalInvariantViolation,
    InvalidRequestException,
    NotFoundException,
)
from apps.settings import settings
from apps.streaming.broker.models import (
    DEFAULT_EXCHANGE,
    ConsumerHandle,
    Delivery,
    Exchange,
    ExchangeKind,
    PublishResult,
    QueueKind,
    QueueState,
)
from apps.streaming.broker.schema import BrokerStats, QueueSpec, QueueStats
from apps.streaming.workload.models import Message

logger = logging.getLogger(__name__)

# Share of the memory budget per queue kind, as a (numerator, denominator) pair.
BUDGET_SHARE = {QueueKind.PAYLOAD: (4, 5), QueueKind.CONTROL: (1, 5)}


class UnroutableException(InvalidRequestException):
    default_error_code = "UNROUTABLE"


def payload_queue_capacity(memory_budget: int, payload_queues: int) -> int:
    """Equal split of the payload share of the budget."""
    numerator, denominator = BUDGET_SHARE[QueueKind.PAYLOAD]
    return memory_budget * numerator // (denominator * payload_queues)


def control_queue_capacity(memory_budget: int, control_queues: int) -> int:
    numerator, denominator = BUDGET_SHARE[QueueKind.CONTROL]
    return memory_budget * numerator // (denominator * control_queues)


class Broker:
    """
    In-process message broker with bounded reject-publish queues, direct and
    fanout exchanges, prefetch-limited round-robin dispatch and cumulative acks.

    Every public operation holds one re-entrant lock, so operations from any
    thread apply atomically and in submission order.
    """

    def __init__(self, memory_budget: int | None = None):
        self.memory_budget = memory_budget or settings.BROKER_MEMORY_BUDGET
        self._lock = threading.RLock()
        self._queues: dict[str, QueueState] = {}
        self._exchanges: dict[str, Exchange] = {}
        self._handles: dict[int, ConsumerHandle] = {}
        self._next_handle = 1
        self.confirmed = 0
        self.rejected = 0
        self.settled = 0

    # ===== Declarations =====

    def declare_queue(self, spec: QueueSpec) -> QueueSpec:
        with self._lock:
            existing = self._queues.get(spec.name)
            if existing is not None:
                if existing.spec != spec:
                    raise ConflictException(
                        f"Queue '{spec.name}' already declared with a different spec",
                        error_code="QUEUE_NAME_CONFLICT",
                    )
                return existing.spec

            numerator, denominator = BUDGET_SHARE[spec.kind]
            allocated = sum(
                q.spec.capacity_bytes for q in self._queues.values() if q.spec.kind == spec.kind
            )
            if (allocated + spec.capacity_bytes) * denominator > self.memory_budget * numerator:
                raise InvalidRequestException(
                    f"Queue '{spec.name}' ({spec.capacity_bytes} B) exceeds the {spec.kind.value} "
                    f"share of the {self.memory_budget} B budget ({allocated} B already allocated)",
                    error_code="BUDGET_EXCEEDED",
                )
            self._queues[spec.name] = QueueState(spec)
            logger.debug(f"Declared {spec.kind.value} queue {spec.name} ({spec.capacity_bytes} B)")
            return spec

    def declare_exchange(self, name: str, kind: ExchangeKind) -> Exchange:
        with self._lock:
            if name == DEFAULT_EXCHANGE:
                raise ConflictException("The default exchange cannot be redeclared", error_code="EXCHANGE_CONFLICT")
            existing = self._exchanges.get(name)
            if existing is not None:
                if existing.kind != kind:
                    raise ConflictException(
                        f"Exchange '{name}' already declared as {existing.kind.value}",
                        error_code="EXCHANGE_CONFLICT",
                    )
                return existing
            exchange = Exchange(name, kind)
            self._exchanges[name] = exchange
            return exchange

    def bind(self, exchange: str, queue: str, routing_key: str = "") -> None:
        with self._lock:
            target = self._get_exchange(exchange)
            if queue not in self._queues:
                raise InvalidRequestException(
                    f"Cannot bind undeclared queue '{queue}' to '{exchange}'", error_code="INVALID_BINDING"
                )
            target.bind(queue, routing_key)

    # ===== Publishing =====

    def publish(self, exchange: str, routing_key: str, msg: Message) -> PublishResult:
        """
        Route ``msg`` and enqueue it on every matched queue, or on none.

        Returns:
            PublishResult.CONFIRM when enqueued everywhere, PublishResult.REJECT
            when any matched queue lacks room (no queue changes)
        """
        with self._lock:
            targets = [self._queues[name] for name in self._route(exchange, routing_key)]
            if not all(q.has_room(msg.size) for q in targets):
                for q in targets:
                    q.rejected += 1
                self.rejected += 1
                logger.debug(f"Rejected {msg!r} on '{exchange}'/'{routing_key}'")
                return PublishResult.REJECT

            for q in targets:
                q.messages.append(msg)
                q.ready_bytes += msg.size
                q.confirmed += 1
            self.confirmed += 1
            return PublishResult.CONFIRM

    def _route(self, exchange: str, routing_key: str) -> list[str]:
        if exchange == DEFAULT_EXCHANGE:
            if routing_key not in self._queues:
                raise UnroutableException(f"No queue named '{routing_key}' on the default exchange")
            return [routing_key]
        targets = self._get_exchange(exchange).route(routing_key)
        if not targets:
            raise UnroutableException(f"No binding on '{exchange}' matches routing key '{routing_key}'")
        return targets

    # ===== Consumers =====

    def register_consumer(self, queue: str, prefetch: int, consumer_id: int | None = None) -> ConsumerHandle:
        with self._lock:
            state = self._get_queue(queue)
            if prefetch < 1:
                raise InvalidRequestException(
                    f"prefetch must be >= 1, got {prefetch}", error_code="INVALID_PREFETCH"
                )
            handle_id = self._next_handle
            self._next_handle += 1
            handle = ConsumerHandle(
                handle_id=handle_id,
                consumer_id=handle_id if consumer_id is None else consumer_id,
                queue=queue,
                prefetch=prefetch,
            )
            self._handles[handle_id] = handle
            state.rotation.append(handle)
            return handle

    def cancel_consumer(self, handle: ConsumerHandle) -> int:
        """Remove ``handle`` from rotation; its unacked deliveries return to the queue head."""
        with self._lock:
            state = self._get_queue(handle.queue)
            if not handle.active:
                return 0
            handle.active = False
            state.rotation.remove(handle)
            requeued = list(handle.outstanding.values())
            for msg in reversed(requeued):
                state.messages.appendleft(msg)
                state.unacked_bytes -= msg.size
                state.ready_bytes += msg.size
            handle.outstanding.clear()
            self._handles.pop(handle.handle_id, None)
            return len(requeued)

    def deliver_next(self) -> list[Delivery]:
        """Dispatch every ready message that has an eligible consumer."""
        deliveries: list[Delivery] = []
        with self._lock:
            for state in self._queues.values():
                if state.messages and state.rotation:
                    self._dispatch_queue(state, deliveries)
        return deliveries

    def deliver_queue(self, queue: str) -> list[Delivery]:
        deliveries: list[Delivery] = []
        with self._lock:
            state = self._get_queue(queue)
            if state.messages and state.rotation:
                self._dispatch_queue(state, deliveries)
        return deliveries

    def _dispatch_queue(self, state: QueueState, out: list[Delivery]) -> None:
        rotation = state.rotation
        while state.messages:
            for index, handle in enumerate(rotation):
                if handle.eligible:
                    break
            else:
                return
            if index:
                del rotation[index]
            else:
                rotation.popleft()
            rotation.append(handle)

            msg = state.messages.popleft()
            state.ready_bytes -= msg.size
            state.unacked_bytes += msg.size
            tag = handle.next_tag
            handle.next_tag += 1
            handle.outstanding[tag] = msg
            handle.delivered += 1
            if handle.unacked > handle.prefetch:
                raise FatalInvariantViolation(f"{handle!r} over its prefetch", error_code="PREFETCH_EXCEEDED")
            out.append(Delivery(handle, msg, tag))

    def ack_batch(self, handle: ConsumerHandle, up_to: int) -> int:
        """Settle every outstanding delivery of ``handle`` with tag <= ``up_to``; returns the count."""
        with self._lock:
            if up_to not in handle.outstanding:
                raise NotFoundException(
                    f"Delivery tag {up_to} is not outstanding for {handle!r}", error_code="UNKNOWN_DELIVERY_TAG"
                )
            state = self._queues[handle.queue]
            count = 0
            while handle.outstanding:
                tag = next(iter(handle.outstanding))
                if tag > up_to:
                    break
                msg = handle.outstanding.pop(tag)
                state.unacked_bytes -= msg.size
                state.settled += 1
                count += 1
            self.settled += count
            return count

    # ===== Introspection =====

    def queue_depth(self, queue: str) -> int:
        with self._lock:
            return self._get_queue(queue).depth

    def queue_bytes(self, queue: str) -> int:
        with self._lock:
            return self._get_queue(queue).bytes

    def queue_spec(self, queue: str) -> QueueSpec:
        return self._get_queue(queue).spec

    def stats(self) -> BrokerStats:
        with self._lock:
            queues = {
                name: QueueStats(
                    depth=state.depth,
                    bytes=state.bytes,
                    unacked=sum(h.unacked for h in state.rotation),
                    consumers=len(state.rotation),
                    confirmed=state.confirmed,
                    rejected=state.rejected,
                    settled=state.settled,
                )
                for name, state in self._queues.items()
            }
            return BrokerStats(
                queues=queues, confirmed=self.confirmed, rejected=self.rejected, settled=self.settled
            )

    def check_conservation(self) -> None:
        """Confirmed copies = ready + unacked + settled, per queue."""
        with self._lock:
            for name, state in self._queues.items():
                unacked = sum(h.unacked for h in state.rotation)
                if state.confirmed != state.depth + unacked + state.settled:
                    raise FatalInvariantViolation(
                        f"Queue '{name}': confirmed={state.confirmed} depth={state.depth} "
                        f"unacked={unacked} settled={state.settled}",
                        error_code="CONSERVATION_VIOLATED",
                    )

    def _get_queue(self, name: str) -> QueueState:
        state = self._queues.get(name)
        if state is None:
            raise NotFoundException(f"Unknown queue '{name}'", error_code="UNKNOWN_QUEUE")
        return state

    def _get_exchange(self, name: str) -> Exchange:
        exchange = self._exchanges.get(name)
        if exchange is None:
            raise NotFoundException(f"Unknown exchange '{name}'", error_code="UNKNOWN_EXCHANGE")
        return exchange
