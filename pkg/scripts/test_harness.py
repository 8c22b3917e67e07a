"""
Tests for experiment planning and simulated runs of every pattern

Usage: pytest scripts/test_harness.py
"""

from collections import defaultdict
from pathlib import Path

import pytest
from pydantic import ValidationError

from apps.core.exception import InvalidRequestException
from apps.streaming.harness.models import Pattern
from apps.streaming.harness.patterns import (
    check_queue_capacity,
    message_share,
    plan_from_dict,
    plan_queues,
    plan_to_dict,
    request_route,
)
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.harness.service import run_experiment, run_repetitions
from apps.streaming.metrics.service import build_report
from apps.streaming.netpath.models import Architecture, ProxyKind
from apps.streaming.netpath.service import ConnectionLimitExceeded, build_path, one_way_delay
from apps.streaming.overlay.service import ControlPlane
from apps.streaming.workload.service import profile_lookup

GIB = 1024**3


# ===== Planning =====

def test_plan_work_sharing():
    plan = plan_queues(ExperimentConfig(pattern=Pattern.WORK_SHARING, consumers=4))
    assert plan.work_queues == ["work.0", "work.1"]
    assert plan.control_queues == []
    assert [request_route(plan, seq)[1] for seq in range(4)] == ["work.0", "work.1", "work.0", "work.1"]


def test_plan_feedback_has_one_reply_queue_per_producer():
    plan = plan_queues(ExperimentConfig(pattern=Pattern.WORK_SHARING_FEEDBACK, consumers=4))
    assert plan.reply_queues == {pid: f"reply.p{pid}" for pid in range(4)}
    assert plan.reply_exchange == "replies"


def test_plan_broadcast_gather_and_round_trip():
    plan = plan_queues(ExperimentConfig(pattern=Pattern.BROADCAST_GATHER, consumers=3))
    assert plan.broadcast_queues == {0: "bcast.c0", 1: "bcast.c1", 2: "bcast.c2"}
    assert plan.gather_queue == "gather"
    assert plan_from_dict(plan_to_dict(plan)) == plan


def test_plan_broadcast_without_gather():
    plan = plan_queues(ExperimentConfig(pattern=Pattern.BROADCAST, consumers=2))
    assert plan.gather_queue is None
    assert plan.fanout_request == "broadcast"


def test_message_share_splits_remainder_to_first_producers():
    shares = [message_share(10, 4, pid) for pid in range(4)]
    assert shares == [3, 3, 2, 2]
    assert sum(shares) == 10


# ===== Configuration =====

def test_config_defaults_producers():
    assert ExperimentConfig(pattern=Pattern.WORK_SHARING, consumers=8).effective_producers == 8
    assert ExperimentConfig(pattern=Pattern.BROADCAST_GATHER, consumers=8).effective_producers == 1
    assert ExperimentConfig(consumers=8, producers=2).effective_producers == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"pattern": Pattern.BROADCAST_GATHER, "producers": 2},
        {"message_count": 128_001},
        {"consumers": 4, "message_count": 3},
        {"architecture": Architecture.DTS, "proxy_kind": ProxyKind.STUNNEL_LIKE},
        {"architecture": Architecture.PRS, "proxy_kind": ProxyKind.STUNNEL_LIKE, "num_conn": 2},
        {"prefetch": 0},
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(ValidationError):
        ExperimentConfig(**kwargs)


def test_run_label():
    assert ExperimentConfig(consumers=4).run_label() == "DTS_work_sharing_dstream_c4"
    assert ExperimentConfig(label="mine").run_label() == "mine"


def test_run_dir_nests_labels_under_the_canonical_name():
    assert ExperimentConfig(consumers=4).run_dir() == Path("DTS_work_sharing_dstream_c4")
    assert ExperimentConfig(consumers=4, label="dts").run_dir() == Path("DTS_work_sharing_dstream_c4") / "dts"


@pytest.mark.parametrize(
    "kwargs",
    [
        {"workload": "generic", "memory_budget": 4 * 1024**2, "message_count": 1},
        {"pattern": Pattern.BROADCAST, "consumers": 64, "memory_budget": 1024**2},
        {"pattern": Pattern.WORK_SHARING_FEEDBACK, "consumers": 8, "memory_budget": 40_960, "reply_bytes": 4096},
    ],
)
def test_queues_too_small_for_one_message_are_rejected(kwargs):
    config = ExperimentConfig(repetitions=1, **kwargs)
    with pytest.raises(InvalidRequestException) as exc:
        run_experiment(config)
    assert exc.value.error_code == "INVALID_CONFIG"
    assert exc.value.exit_code == 2


def test_queue_holding_exactly_one_message_is_accepted():
    # 40960 * 4/5 split over two work queues is one dstream message each
    profile = profile_lookup("dstream")
    check_queue_capacity(ExperimentConfig(memory_budget=40_960), profile)


# ===== Simulated runs =====

def sim_config(**kwargs) -> ExperimentConfig:
    kwargs.setdefault("repetitions", 1)
    return ExperimentConfig(**kwargs)


@pytest.mark.parametrize("consumers", [2, 8, 64])
def test_work_sharing_is_fair(consumers):
    """Round-robin dispatch hands every consumer M/C messages."""
    config = sim_config(
        pattern=Pattern.WORK_SHARING,
        consumers=consumers,
        message_count=128_000,
        prefetch=65_535,
        memory_budget=8 * GIB,
    )
    record = run_experiment(config)
    assert len(record.events) == 128_000
    expected = 128_000 // consumers
    for count in record.per_consumer_counts.values():
        assert abs(count - expected) <= 1


def test_feedback_replies_reach_their_own_producer():
    config = sim_config(pattern=Pattern.WORK_SHARING_FEEDBACK, consumers=8, message_count=8000)
    record = run_experiment(config)

    assert len(record.events) == 8000
    by_producer = defaultdict(set)
    for event in record.events:
        assert event.reply_ts is not None
        assert event.reply_ts > event.deliver_ts > event.publish_ts
        by_producer[event.producer_id].add(event.seq)
    assert {pid: seqs for pid, seqs in by_producer.items()} == {pid: set(range(1000)) for pid in range(8)}


@pytest.mark.parametrize("consumers", [1, 4, 64])
def test_broadcast_gather_delivers_every_message_to_every_consumer(consumers):
    config = sim_config(pattern=Pattern.BROADCAST_GATHER, consumers=consumers, message_count=100)
    record = run_experiment(config)

    assert len(record.events) == 100 * consumers
    per_consumer = defaultdict(list)
    for event in record.events:
        assert event.reply_ts is not None
        per_consumer[event.consumer_id].append(event)
    for cid in range(consumers):
        ordered = sorted(per_consumer[cid], key=lambda event: event.deliver_ts)
        assert [event.seq for event in ordered] == list(range(100))


def test_broadcast_without_gather():
    record = run_experiment(sim_config(pattern=Pattern.BROADCAST, consumers=3, message_count=10))
    assert len(record.events) == 30
    assert all(event.reply_ts is None for event in record.events)


@pytest.mark.parametrize("consumers", [32, 64])
def test_stunnel_beyond_connection_limit_is_infeasible(consumers):
    config = sim_config(architecture=Architecture.PRS, proxy_kind=ProxyKind.STUNNEL_LIKE, consumers=consumers)
    with pytest.raises(ConnectionLimitExceeded) as exc:
        run_experiment(config)
    assert exc.value.reason == "connection-limit"
    assert exc.value.limit == 16


def test_stunnel_at_connection_limit_runs():
    config = sim_config(
        architecture=Architecture.PRS, proxy_kind=ProxyKind.STUNNEL_LIKE, consumers=16, message_count=160
    )
    record = run_experiment(config)
    assert len(record.events) == 160


def test_infeasible_run_releases_shared_session():
    plane = ControlPlane(credentials=["tok"], seed=0)
    config = sim_config(
        architecture=Architecture.PRS, proxy_kind=ProxyKind.STUNNEL_LIKE, consumers=32, credential="tok"
    )
    with pytest.raises(ConnectionLimitExceeded):
        run_experiment(config, plane=plane)
    assert plane.live_sessions() == []


def test_rtt_ordering_across_architectures():
    medians = {}
    for architecture in Architecture:
        config = sim_config(
            architecture=architecture, pattern=Pattern.WORK_SHARING_FEEDBACK, consumers=8, message_count=800
        )
        medians[architecture] = build_report(run_experiment(config)).rtt_median

    assert medians[Architecture.DTS] <= medians[Architecture.PRS] < medians[Architecture.MSS]
    delays = [one_way_delay(build_path(a), 16384) for a in Architecture]
    assert delays == sorted(delays)
    assert len(set(delays)) == 3


def test_consumers_register_before_first_publish():
    record = run_experiment(sim_config(pattern=Pattern.WORK_SHARING_FEEDBACK, consumers=4, message_count=40))
    assert all(event.publish_ts >= record.consumers_ready_ts for event in record.events)


def test_same_seed_same_record():
    config = sim_config(pattern=Pattern.WORK_SHARING_FEEDBACK, consumers=4, message_count=400, seed=7)
    first, second = run_experiment(config), run_experiment(config)
    assert first.events == second.events
    assert first.duration == second.duration
    assert first.rejected_publishes == second.rejected_publishes


def test_full_queues_reject_without_losing_messages():
    config = sim_config(
        pattern=Pattern.WORK_SHARING,
        producers=4,
        consumers=1,
        message_count=200,
        prefetch=1,
        memory_budget=81_920,
    )
    record = run_experiment(config)
    assert record.rejected_publishes > 0
    assert record.confirmed == 200
    assert len(record.events) == 200


def test_duration_stops_publishing():
    config = sim_config(consumers=1, message_count=10_000, duration=0.002)
    record = run_experiment(config)
    assert 0 < len(record.events) < 10_000
    assert len(record.events) == record.confirmed


def test_processing_time_is_included_in_rtt():
    config = sim_config(pattern=Pattern.WORK_SHARING_FEEDBACK, consumers=1, message_count=5, processing_time=0.001)
    record = run_experiment(config)
    assert all(event.reply_ts - event.publish_ts > 0.001 for event in record.events)


def test_prs_tunnel_spreads_messages_over_connections():
    config = sim_config(architecture=Architecture.PRS, num_conn=2, consumers=2, message_count=100)
    record = run_experiment(config)
    assert record.tunnel_traffic == [50, 50]


def test_repetitions_use_consecutive_seeds():
    records = run_repetitions(sim_config(consumers=2, message_count=20, repetitions=3, seed=10))
    assert [(r.seed, r.repetition) for r in records] == [(10, 0), (11, 1), (12, 2)]
