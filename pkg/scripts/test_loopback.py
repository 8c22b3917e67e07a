"""
Tests for the wire codec, the run coordinator and loopback-socket runs

Usage: pytest scripts/test_loopback.py
"""

import socket
import struct

import msgpack
import pytest

from apps.core.exception import RunTimeoutException
from apps.core.wire import WireException, frame, read_raw_frame, recv_record, send_record
from apps.streaming.harness.coordinator import CoordinatorLink, CoordinatorServer
from apps.streaming.harness.loopback import _Link
from apps.streaming.harness.models import Pattern
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.harness.service import run_experiment
from apps.streaming.metrics.service import build_report
from apps.streaming.netpath.models import Architecture, ProxyKind, TransportMode
from apps.streaming.netpath.service import ConnectionLimitExceeded, build_path, rtt_lower_bound
from apps.streaming.overlay.service import ControlPlane
from apps.streaming.workload.service import profile_lookup


# ===== Wire =====

def test_records_cross_a_socket():
    a, b = socket.socketpair()
    with a, b:
        send_record(a, "pub", {"tag": 3, "data": b"\x00\x01"})
        send_record(a, "ack", {"h": 1, "tag": 9})
        assert recv_record(b) == ("pub", {"tag": 3, "data": b"\x00\x01"})
        assert recv_record(b) == ("ack", {"h": 1, "tag": 9})
        a.shutdown(socket.SHUT_WR)
        assert recv_record(b) is None


def test_unknown_record_version():
    a, b = socket.socketpair()
    with a, b:
        a.sendall(frame(msgpack.packb({"v": 99, "t": "x", "b": None})))
        with pytest.raises(WireException) as exc:
            recv_record(b)
        assert exc.value.error_code == "UNSUPPORTED_RECORD"


def test_truncated_and_oversized_frames():
    a, b = socket.socketpair()
    with a, b:
        a.sendall(struct.pack(">I", 10) + b"abc")
        a.shutdown(socket.SHUT_WR)
        with pytest.raises(WireException) as exc:
            read_raw_frame(b)
        assert exc.value.error_code == "SHORT_READ"

    a, b = socket.socketpair()
    with a, b:
        a.sendall(struct.pack(">I", 1 << 30))
        with pytest.raises(WireException) as exc:
            read_raw_frame(b)
        assert exc.value.error_code == "FRAME_TOO_LARGE"


# ===== Coordinator =====

def test_coordinator_hands_out_plans_and_collects_results():
    server = CoordinatorServer().start()
    try:
        link = CoordinatorLink(server.address, "consumer", 3)
        server.publish_plan("consumer", {"queues": ["work.0"]})
        assert link.wait_plan() == {"queues": ["work.0"]}
        link.send("ready", {})
        assert server.collect(timeout=5) == ("consumer", 3, "ready", {})
        link.close()
    finally:
        server.close()


def test_coordinator_collect_times_out():
    server = CoordinatorServer().start()
    try:
        with pytest.raises(RunTimeoutException):
            server.collect(timeout=0.05)
    finally:
        server.close()


# ===== Loopback runs =====

def loopback_config(**kwargs) -> ExperimentConfig:
    return ExperimentConfig(transport=TransportMode.LOOPBACK, repetitions=1, **kwargs)


def test_loopback_work_sharing():
    record = run_experiment(loopback_config(consumers=2, message_count=40))
    assert not record.virtual
    assert len(record.events) == 40
    assert sum(record.per_consumer_counts.values()) == 40
    assert record.broker_stats["settled"] == 40


def test_loopback_rtt_respects_path_floor():
    """Real-socket feedback runs never beat the analytic RTT or the hop bandwidth."""
    config = loopback_config(pattern=Pattern.WORK_SHARING_FEEDBACK, workload="generic", consumers=4, message_count=200)
    record = run_experiment(config)
    path = build_path(Architecture.DTS)

    assert len(record.events) == 200
    floor = rtt_lower_bound(path)
    assert all(event.reply_ts - event.publish_ts > floor for event in record.events)

    report = build_report(record)
    payload_bits = profile_lookup("generic").payload_bytes * 8
    assert report.throughput.rate * payload_bits <= path.hop("node-port").bandwidth_bps
    assert not report.virtual


def test_loopback_broadcast_gather():
    record = run_experiment(loopback_config(pattern=Pattern.BROADCAST_GATHER, consumers=3, message_count=10))
    assert len(record.events) == 30
    assert all(event.reply_ts is not None for event in record.events)
    assert build_report(record).gather_rtt_median is not None


def test_loopback_prs_tunnel_connections():
    config = loopback_config(architecture=Architecture.PRS, num_conn=2, consumers=2, message_count=20)
    record = run_experiment(config)
    assert len(record.events) == 20
    assert record.tunnel_traffic == [10, 10]


def test_loopback_prs_tunnel_counts_every_frame_sent():
    """Resent publishes cross the tunnel too, each on the connection the session assigned."""
    config = loopback_config(
        architecture=Architecture.PRS,
        num_conn=2,
        producers=3,
        consumers=1,
        message_count=30,
        prefetch=1,
        memory_budget=40_960,
    )
    record = run_experiment(config)
    assert len(record.events) == 30
    assert sum(record.tunnel_traffic) == record.confirmed + record.rejected_publishes
    assert max(record.tunnel_traffic) - min(record.tunnel_traffic) <= 1


def test_loopback_producers_send_on_the_routed_link(monkeypatch):
    frames = []
    original = _Link.send

    def send(self, kind, body):
        if kind == "pub":
            frames.append(self)
        original(self, kind, body)

    monkeypatch.setattr(_Link, "send", send)
    plane = ControlPlane(credentials=["tok"], seed=0)
    config = loopback_config(
        architecture=Architecture.PRS, num_conn=2, producers=1, consumers=1, message_count=6, credential="tok"
    )
    record = run_experiment(config, plane=plane)

    # one producer: frames alternate between its two links in session order
    assert len(frames) == 6
    assert frames[0] is not frames[1]
    assert frames[::2] == [frames[0]] * 3
    assert record.tunnel_traffic == [3, 3]


def test_loopback_infeasible_before_any_socket_work():
    config = loopback_config(architecture=Architecture.PRS, proxy_kind=ProxyKind.STUNNEL_LIKE, consumers=32)
    with pytest.raises(ConnectionLimitExceeded):
        run_experiment(config)
