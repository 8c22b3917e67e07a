"""
Tests for the streamsim command line: run, sweep, session and report

Usage: pytest scripts/test_cli.py
"""

import logging

import orjson
import pytest
from click.testing import CliRunner

from apps.cli.commands import cli
from apps.cli.config_file import parse_config
from apps.streaming.metrics.report import CDF_FILE, REPORT_FILE, SUMMARY_FILE, write_report_json
from apps.streaming.metrics.schema import MetricsReport, ThroughputSample

FEEDBACK = """
[experiment]
pattern = work_sharing_feedback
consumers = 2
message_count = 50
repetitions = 2
"""

SWEEP = """
[experiment]
message_count = 64
repetitions = 1
"""

STUNNEL = """
[experiment]
architecture = PRS
proxy_kind = stunnel-like
message_count = 64
repetitions = 1
"""


@pytest.fixture(autouse=True)
def detach_log_handlers():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_streamsim", False):
            root.removeHandler(handler)


@pytest.fixture
def runner():
    return CliRunner()


def write_config(tmp_path, text, name="exp.conf"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ===== run =====

def test_run_writes_artifacts(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run", write_config(tmp_path, FEEDBACK), "--out", str(out)])
    assert result.exit_code == 0, result.output

    run_dir = out / "DTS_work_sharing_feedback_dstream_c2"
    for name in (REPORT_FILE, SUMMARY_FILE, CDF_FILE):
        assert (run_dir / name).exists()
    report = orjson.loads((run_dir / REPORT_FILE).read_bytes())
    assert report["status"] == "ok"
    assert report["repetition_mean_over"] == 2
    assert len(report["cdf"]) == 100
    assert "msg/s" in result.stdout


def test_run_infeasible_exits_3(runner, tmp_path):
    out = tmp_path / "out"
    config = STUNNEL + "consumers = 32\n"
    result = runner.invoke(cli, ["run", write_config(tmp_path, config), "--out", str(out)])
    assert result.exit_code == 3

    report = orjson.loads((out / "PRS_work_sharing_dstream_c32" / REPORT_FILE).read_bytes())
    assert report["status"] == "infeasible"
    assert report["reason"] == "connection-limit"
    assert report["hop"] == "remote-proxy"
    assert report["limit"] == 16
    assert "connection-limit" in result.stderr


def test_run_unknown_key_exits_2_without_outputs(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ["run", write_config(tmp_path, FEEDBACK + "speed = 9\n"), "--out", str(out)])
    assert result.exit_code == 2
    assert "UNKNOWN_KEY" in result.stderr
    assert not out.exists()


def test_run_labelled_experiment_nests_under_canonical_dir(runner, tmp_path):
    out = tmp_path / "out"
    config = FEEDBACK.replace("[experiment]", "[experiment dts]").replace("repetitions = 2", "repetitions = 1")
    result = runner.invoke(cli, ["run", write_config(tmp_path, config), "--out", str(out)])
    assert result.exit_code == 0, result.output

    report = orjson.loads((out / "DTS_work_sharing_feedback_dstream_c2" / "dts" / REPORT_FILE).read_bytes())
    assert report["label"] == "dts"
    assert not (out / "dts").exists()


def test_run_undersized_queues_exit_2_without_outputs(runner, tmp_path):
    out = tmp_path / "out"
    config = "[experiment]\nworkload = generic\nmemory_budget = 4 MiB\nmessage_count = 1\nrepetitions = 1\n"
    result = runner.invoke(cli, ["run", write_config(tmp_path, config), "--out", str(out)])
    assert result.exit_code == 2
    assert "INVALID_CONFIG" in result.stderr
    assert not out.exists()


def test_run_missing_file_exits_2(runner, tmp_path):
    result = runner.invoke(cli, ["run", str(tmp_path / "missing.conf")])
    assert result.exit_code == 2


def test_run_unknown_experiment_label(runner, tmp_path):
    result = runner.invoke(cli, ["run", write_config(tmp_path, FEEDBACK), "--experiment", "nope"])
    assert result.exit_code == 2


def test_dump_effective_config_reads_back(runner, tmp_path):
    text = FEEDBACK + "\n[hop node-port]\nlatency = 1 ms\n"
    path = write_config(tmp_path, text)
    result = runner.invoke(cli, ["run", path, "--dump-effective-config"])
    assert result.exit_code == 0, result.output
    assert parse_config(result.stdout).experiments == parse_config(text).experiments


def test_seed_environment_override(runner, tmp_path):
    result = runner.invoke(
        cli, ["run", write_config(tmp_path, FEEDBACK), "--dump-effective-config"], env={"STREAMSIM_SEED": "7"}
    )
    assert result.exit_code == 0, result.output
    assert parse_config(result.stdout).experiments[0].seed == 7


# ===== sweep =====

def test_sweep_writes_combined_summary(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ["sweep", write_config(tmp_path, SWEEP), "--values", "1..8", "--out", str(out)])
    assert result.exit_code == 0, result.output

    combined = out / "sweep_DTS_work_sharing_dstream_consumers" / SUMMARY_FILE
    lines = combined.read_text().splitlines()
    assert len(lines) == 5
    assert [line.split(",")[1] for line in lines[1:]] == ["1", "2", "4", "8"]
    for consumers in (1, 2, 4, 8):
        assert (out / f"DTS_work_sharing_dstream_c{consumers}" / REPORT_FILE).exists()


def test_sweep_is_byte_identical_across_runs(runner, tmp_path):
    """Two sweeps with the same seed write identical summary and CDF files."""
    path = write_config(tmp_path, SWEEP.replace("[experiment]", "[experiment]\npattern = work_sharing_feedback"))
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        result = runner.invoke(cli, ["sweep", path, "--values", "1,2,4", "--out", str(out)])
        assert result.exit_code == 0, result.output
        outputs.append(out)

    a, b = outputs
    combined = "sweep_DTS_work_sharing_feedback_dstream_consumers"
    assert (a / combined / SUMMARY_FILE).read_bytes() == (b / combined / SUMMARY_FILE).read_bytes()
    for consumers in (1, 2, 4):
        run_dir = f"DTS_work_sharing_feedback_dstream_c{consumers}"
        assert (a / run_dir / CDF_FILE).read_bytes() == (b / run_dir / CDF_FILE).read_bytes()


def test_sweep_flags_infeasible_points(runner, tmp_path):
    out = tmp_path / "out"
    result = runner.invoke(cli, ["sweep", write_config(tmp_path, STUNNEL), "--values", "8,16,32", "--out", str(out)])
    assert result.exit_code == 0, result.output

    lines = (out / "sweep_PRS_work_sharing_dstream_consumers" / SUMMARY_FILE).read_text().splitlines()
    header = lines[0].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
    assert [(row["sweep_value"], row["status"]) for row in rows] == [("8", "ok"), ("16", "ok"), ("32", "infeasible")]
    assert rows[2]["reason"] == "connection-limit"


def test_sweep_other_field_writes_one_report_per_value(runner, tmp_path):
    out = tmp_path / "out"
    base = SWEEP.replace("[experiment]", "[experiment]\nconsumers = 2")
    result = runner.invoke(
        cli, ["sweep", write_config(tmp_path, base), "--field", "prefetch", "--values", "1,2,4", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output

    run_dir = out / "DTS_work_sharing_dstream_c2"
    assert sorted(path.name for path in run_dir.iterdir()) == ["prefetch1", "prefetch2", "prefetch4"]
    for prefetch in (1, 2, 4):
        report = orjson.loads((run_dir / f"prefetch{prefetch}" / REPORT_FILE).read_bytes())
        assert report["label"] == f"prefetch{prefetch}"
        assert report["config"]["prefetch"] == prefetch

    lines = (out / "sweep_DTS_work_sharing_dstream_prefetch" / SUMMARY_FILE).read_text().splitlines()
    assert len(lines) == 4


def test_sweep_undersized_point_exits_2_before_running(runner, tmp_path):
    out = tmp_path / "out"
    base = "[experiment]\npattern = broadcast\nmemory_budget = 1 MiB\nmessage_count = 8\nrepetitions = 1\n"
    result = runner.invoke(cli, ["sweep", write_config(tmp_path, base), "--values", "1,64", "--out", str(out)])
    assert result.exit_code == 2
    assert "INVALID_CONFIG" in result.stderr
    assert not out.exists()


def test_sweep_rejects_bad_field(runner, tmp_path):
    result = runner.invoke(cli, ["sweep", write_config(tmp_path, SWEEP), "--field", "workload"])
    assert result.exit_code == 2


# ===== session =====

def test_session_lifecycle(runner, tmp_path):
    state = str(tmp_path / "sessions.json")
    result = runner.invoke(cli, ["session", "inbound-request", "--num_conn", "2", "--state-file", state])
    assert result.exit_code == 0, result.output
    uid, endpoint = result.stdout.split()
    assert endpoint == "127.0.0.1:5100"

    result = runner.invoke(
        cli, ["session", "outbound-request", "--uid", uid, "--num_conn", "2", "--state-file", state]
    )
    assert result.exit_code == 0, result.output
    assert result.stdout.strip() == "127.0.0.1:5100"

    assert runner.invoke(cli, ["session", "release", uid, "--state-file", state]).exit_code == 0
    again = runner.invoke(cli, ["session", "release", uid, "--state-file", state])
    assert again.exit_code == 4
    assert "UNKNOWN_UID" in again.stderr


def test_session_outbound_unknown_uid(runner, tmp_path):
    state = str(tmp_path / "sessions.json")
    result = runner.invoke(cli, ["session", "outbound-request", "--uid", "bogus", "--state-file", state])
    assert result.exit_code == 4


def test_session_bad_credential(runner, tmp_path):
    state = str(tmp_path / "sessions.json")
    result = runner.invoke(cli, ["session", "inbound-request", "--credential", "wrong", "--state-file", state])
    assert result.exit_code == 4
    assert "CREDENTIAL_REJECTED" in result.stderr


def test_session_invalid_num_conn(runner, tmp_path):
    state = str(tmp_path / "sessions.json")
    result = runner.invoke(cli, ["session", "inbound-request", "--num_conn", "0", "--state-file", state])
    assert result.exit_code == 2


# ===== report =====

def _report(tmp_path, name, rate, rtt):
    report = MetricsReport(
        label=name,
        config={"pattern": "work_sharing_feedback", "workload": "dstream", "producers": 8, "consumers": 8},
        throughput=ThroughputSample(messages=rate, span=1.0, rate=rate),
        rtt_median=rtt,
        latency_median=rtt / 2,
    )
    return str(write_report_json(tmp_path / f"{name}.json", report))


def test_report_overhead(runner, tmp_path):
    baseline = _report(tmp_path, "DTS", 39_000, 0.002)
    other = _report(tmp_path, "MSS", 15_600, 0.004)
    out = tmp_path / "overhead.csv"
    result = runner.invoke(cli, ["report", other, "--baseline", baseline, "--out", str(out), "--in-place"])
    assert result.exit_code == 0, result.output
    assert "throughput overhead 2.500" in result.stdout
    assert "rtt overhead 2.000" in result.stdout
    assert out.exists()

    stored = orjson.loads((tmp_path / "MSS.json").read_bytes())
    assert stored["overhead_vs_baseline"]["baseline_label"] == "DTS"


def test_report_mismatched_scale(runner, tmp_path):
    baseline = _report(tmp_path, "DTS", 39_000, 0.002)
    path = tmp_path / "other.json"
    data = orjson.loads((tmp_path / "DTS.json").read_bytes())
    data["config"]["consumers"] = 4
    path.write_bytes(orjson.dumps(data))
    result = runner.invoke(cli, ["report", str(path), "--baseline", baseline])
    assert result.exit_code == 2
    assert "MISMATCHED_CONFIG" in result.stderr
