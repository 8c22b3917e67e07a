# apps/streaming/harness/patterns.py

from apps.core.exception import InvalidRequestException
from apps.streaming.broker.models import DEFAULT_EXCHANGE, ExchangeKind, QueueKind
from apps.streaming.broker.schema import QueueSpec
from apps.streaming.broker.service import Broker, control_queue_capacity, payload_queue_capacity
from apps.streaming.harness.models import Pattern, QueuePlan
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.workload.schema import WorkloadProfile

REPLY_EXCHANGE = "replies"
BROADCAST_EXCHANGE = "broadcast"
GATHER_EXCHANGE = "gather"
GATHER_QUEUE = "gather"


def work_queue_name(index: int) -> str:
    return f"work.{index}"


def reply_queue_name(producer_id: int) -> str:
    return f"reply.p{producer_id}"


def broadcast_queue_name(consumer_id: int) -> str:
    return f"bcast.c{consumer_id}"


def plan_queues(config: ExperimentConfig) -> QueuePlan:
    """Queues and exchanges the coordinator announces to producers and consumers."""
    pattern = config.pattern
    if pattern == Pattern.WORK_SHARING:
        return QueuePlan(work_queues=[work_queue_name(i) for i in range(config.work_queue_count)])
    if pattern == Pattern.WORK_SHARING_FEEDBACK:
        return QueuePlan(
            work_queues=[work_queue_name(i) for i in range(config.work_queue_count)],
            reply_queues={pid: reply_queue_name(pid) for pid in range(config.effective_producers)},
            reply_exchange=REPLY_EXCHANGE,
        )
    if pattern.is_broadcast:
        gather = pattern == Pattern.BROADCAST_GATHER
        return QueuePlan(
            fanout_request=BROADCAST_EXCHANGE,
            broadcast_queues={cid: broadcast_queue_name(cid) for cid in range(config.consumers)},
            gather_queue=GATHER_QUEUE if gather else None,
            gather_exchange=GATHER_EXCHANGE if gather else None,
        )
    raise InvalidRequestException(f"Unsupported pattern {pattern}", error_code="INVALID_CONFIG")


def check_queue_capacity(config: ExperimentConfig, profile: WorkloadProfile) -> None:
    """Every planned queue must hold at least one of the messages routed to it."""
    plan = plan_queues(config)
    payload_capacity = payload_queue_capacity(config.memory_budget, len(plan.payload_queues))
    if payload_capacity < profile.payload_bytes:
        raise InvalidRequestException(
            f"memory_budget {config.memory_budget} leaves {payload_capacity} bytes per payload queue, "
            f"below one {profile.name} message ({profile.payload_bytes} bytes)",
            error_code="INVALID_CONFIG",
        )
    if plan.control_queues:
        control_capacity = control_queue_capacity(config.memory_budget, len(plan.control_queues))
        if control_capacity < config.reply_bytes:
            raise InvalidRequestException(
                f"memory_budget {config.memory_budget} leaves {control_capacity} bytes per control queue, "
                f"below one reply ({config.reply_bytes} bytes)",
                error_code="INVALID_CONFIG",
            )


def declare_plan(broker: Broker, plan: QueuePlan) -> None:
    """Declare every queue and exchange of ``plan``; capacities split the 80/20 budget evenly."""
    payload_capacity = payload_queue_capacity(broker.memory_budget, len(plan.payload_queues))
    for name in plan.payload_queues:
        broker.declare_queue(QueueSpec(name=name, capacity_bytes=payload_capacity, kind=QueueKind.PAYLOAD))

    if plan.control_queues:
        control_capacity = control_queue_capacity(broker.memory_budget, len(plan.control_queues))
        for name in plan.control_queues:
            broker.declare_queue(QueueSpec(name=name, capacity_bytes=control_capacity, kind=QueueKind.CONTROL))

    if plan.reply_exchange:
        broker.declare_exchange(plan.reply_exchange, ExchangeKind.DIRECT)
        for pid, queue in plan.reply_queues.items():
            broker.bind(plan.reply_exchange, queue, routing_key=str(pid))
    if plan.fanout_request:
        broker.declare_exchange(plan.fanout_request, ExchangeKind.FANOUT)
        for queue in plan.broadcast_queues.values():
            broker.bind(plan.fanout_request, queue)
    if plan.gather_exchange:
        broker.declare_exchange(plan.gather_exchange, ExchangeKind.FANOUT)
        broker.bind(plan.gather_exchange, plan.gather_queue)


def request_route(plan: QueuePlan, seq: int) -> tuple[str, str]:
    """(exchange, routing key) of request ``seq``; work queues alternate by sequence number."""
    if plan.fanout_request:
        return plan.fanout_request, ""
    return DEFAULT_EXCHANGE, plan.work_queues[seq % len(plan.work_queues)]


def reply_route(plan: QueuePlan, producer_id: int) -> tuple[str, str]:
    if plan.gather_exchange:
        return plan.gather_exchange, ""
    return plan.reply_exchange, str(producer_id)


def consumer_queues(plan: QueuePlan, consumer_id: int) -> list[str]:
    if plan.broadcast_queues:
        return [plan.broadcast_queues[consumer_id]]
    return list(plan.work_queues)


def producer_reply_queue(plan: QueuePlan, producer_id: int) -> str | None:
    if plan.gather_queue:
        return plan.gather_queue
    return plan.reply_queues.get(producer_id)


def message_share(message_count: int, producers: int, producer_id: int) -> int:
    """Equal split; the first ``message_count % producers`` producers send one extra."""
    base, extra = divmod(message_count, producers)
    return base + (1 if producer_id < extra else 0)


def expected_copies(config: ExperimentConfig) -> int:
    """Deliveries per confirmed request."""
    return config.consumers if config.pattern.is_broadcast else 1


def plan_to_dict(plan: QueuePlan) -> dict:
    """msgpack-ready form of ``plan`` (integer map keys become strings)."""
    return {
        "work_queues": list(plan.work_queues),
        "reply_queues": {str(pid): queue for pid, queue in plan.reply_queues.items()},
        "reply_exchange": plan.reply_exchange,
        "fanout_request": plan.fanout_request,
        "broadcast_queues": {str(cid): queue for cid, queue in plan.broadcast_queues.items()},
        "gather_queue": plan.gather_queue,
        "gather_exchange": plan.gather_exchange,
    }


def plan_from_dict(data: dict) -> QueuePlan:
    return QueuePlan(
        work_queues=list(data["work_queues"]),
        reply_queues={int(pid): queue for pid, queue in data["reply_queues"].items()},
        reply_exchange=data["reply_exchange"],
        fanout_request=data["fanout_request"],
        broadcast_queues={int(cid): queue for cid, queue in data["broadcast_queues"].items()},
        gather_queue=data["gather_queue"],
        gather_exchange=data["gather_exchange"],
    )
