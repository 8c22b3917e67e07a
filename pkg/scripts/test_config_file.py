"""
Tests for the experiment config file format

Usage: pytest scripts/test_config_file.py
"""

import pytest

from apps.cli.config_file import ConfigParseException, dump_config, parse_config, parse_duration, parse_size
from apps.cli.sweep import SweepSpec, parse_values
from apps.core.exception import ConflictException, InvalidRequestException, NotFoundException
from apps.streaming.harness.models import Pattern
from apps.streaming.netpath.models import Architecture, ProxyKind

FULL = """
# custom workload and a slower node port
[profile tiny]
payload_bytes = 4 KiB
target_rate_bps = 1e9
processing_time = 50 us

[hop node-port]
latency = 250 us
bandwidth_bps = 1e8

[experiment small]
architecture = DTS
pattern = work_sharing_feedback
workload = tiny
consumers = 4
message_count = 400
memory_budget = 64 MiB
seed = 3

[experiment big]
consumers = 8   # inline comment
repetitions = 1
"""


@pytest.mark.parametrize(
    "text,expected",
    [("250 us", 250e-6), ("2 ms", 0.002), ("0.5 s", 0.5), ("1.5", 1.5), ("2.5e-05 s", 2.5e-5)],
)
def test_parse_duration(text, expected):
    assert parse_duration(text) == pytest.approx(expected)


@pytest.mark.parametrize("text,expected", [("16384", 16384), ("16 KiB", 16384), ("1 MiB", 1 << 20), ("2 GiB", 2 << 30)])
def test_parse_size(text, expected):
    assert parse_size(text) == expected


@pytest.mark.parametrize("text", ["fast", "2 hours", "-1 s"])
def test_bad_duration(text):
    with pytest.raises(ConfigParseException) as exc:
        parse_duration(text)
    assert exc.value.error_code == "CONFIG_PARSE_ERROR"
    assert exc.value.exit_code == 2


def test_parse_full_file():
    config_file = parse_config(FULL)
    small, big = config_file.experiments

    assert small.label == "small"
    assert small.pattern == Pattern.WORK_SHARING_FEEDBACK
    assert small.workload == "tiny"
    assert small.memory_budget == 64 << 20
    assert small.seed == 3
    assert small.hops["node-port"].latency == pytest.approx(250e-6)
    assert config_file.profiles.lookup("tiny").payload_bytes == 4096

    assert big.label == "big"
    assert big.consumers == 8
    assert big.hops == small.hops


def test_seed_override_applies_to_every_experiment():
    config_file = parse_config(FULL, seed_override=9)
    assert [config.seed for config in config_file.experiments] == [9, 9]


def test_unknown_key():
    with pytest.raises(InvalidRequestException) as exc:
        parse_config("[experiment]\nconsumers = 2\nconsumer = 3\n")
    assert exc.value.error_code == "UNKNOWN_KEY"


@pytest.mark.parametrize(
    "text",
    [
        "[experiment]\n[experiment]\n",
        "[profile tiny]\npayload_bytes = 4 KiB\ntarget_rate_bps = 1e9\n",
        "[network]\nspeed = 1\n",
        "consumers = 2\n",
        "[profile]\npayload_bytes = 4 KiB\n[experiment]\n",
    ],
)
def test_malformed_files(text):
    with pytest.raises(ConfigParseException):
        parse_config(text)


def test_invalid_values():
    with pytest.raises(InvalidRequestException) as exc:
        parse_config("[experiment]\nconsumers = 0\n")
    assert exc.value.error_code == "INVALID_CONFIG"

    with pytest.raises(InvalidRequestException) as exc:
        parse_config("[experiment]\narchitecture = DTS\nproxy_kind = stunnel-like\n")
    assert exc.value.error_code == "INVALID_CONFIG"


def test_unknown_workload():
    with pytest.raises(NotFoundException):
        parse_config("[experiment]\nworkload = nothing\n")


def test_profile_cannot_redefine_builtin():
    with pytest.raises(ConflictException):
        parse_config("[profile dstream]\npayload_bytes = 4 KiB\ntarget_rate_bps = 1e9\n[experiment]\n")


def test_dump_reads_back_unchanged():
    config_file = parse_config(FULL)
    text = dump_config(config_file.experiments, config_file.profiles)
    again = parse_config(text)
    assert again.experiments == config_file.experiments
    assert again.profiles.lookup("tiny") == config_file.profiles.lookup("tiny")


def test_dump_single_prs_experiment():
    config = parse_config("[experiment]\narchitecture = PRS\nproxy_kind = stunnel-like\nconsumers = 16\n").experiments[0]
    text = dump_config(config)
    assert "proxy_kind = stunnel-like" in text
    assert parse_config(text).experiments == [config]
    assert config.architecture == Architecture.PRS
    assert config.proxy_kind == ProxyKind.STUNNEL_LIKE


# ===== Sweeps =====

def test_parse_sweep_values():
    assert parse_values(None) == [1, 2, 4, 8, 16, 32, 64]
    assert parse_values("1..8") == [1, 2, 4, 8]
    assert parse_values("3,5,7") == [3, 5, 7]
    with pytest.raises(InvalidRequestException):
        parse_values("0..4")
    with pytest.raises(InvalidRequestException):
        parse_values("a,b")


def test_sweep_points_follow_consumers():
    base = parse_config("[experiment]\nmessage_count = 64\n").experiments[0]
    spec = SweepSpec(base=base, values=[1, 2, 4])
    points = list(spec.points())
    assert [(value, config.consumers, config.effective_producers) for value, config in points] == [
        (1, 1, 1),
        (2, 2, 2),
        (4, 4, 4),
    ]
    assert spec.combined_label() == "sweep_DTS_work_sharing_dstream_consumers"


def test_sweep_points_get_distinct_directories():
    base = parse_config("[experiment]\nconsumers = 2\nmessage_count = 64\n").experiments[0]
    prefetch = SweepSpec(base=base, field="prefetch", values=[1, 2, 4])
    assert [config.label for _, config in prefetch.points()] == ["prefetch1", "prefetch2", "prefetch4"]
    assert len({config.run_dir() for _, config in prefetch.points()}) == 3

    assert [config.label for _, config in SweepSpec(base=base, values=[1, 2]).points()] == [None, None]

    labelled = parse_config("[experiment big]\nmessage_count = 64\n").experiments[0]
    spec = SweepSpec(base=labelled, field="ack_batch", values=[1, 8])
    assert [config.label for _, config in spec.points()] == ["big_ack_batch1", "big_ack_batch8"]


def test_sweep_rejects_unordered_values():
    base = parse_config("[experiment]\n").experiments[0]
    with pytest.raises(ValueError):
        SweepSpec(base=base, values=[4, 2])
    with pytest.raises(ValueError):
        SweepSpec(base=base, field="workload")
