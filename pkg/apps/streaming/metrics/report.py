# apps/streaming/metrics/report.py

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

import orjson

from apps.core.exception import InvalidRequestException
from apps.streaming.metrics.schema import PERCENTILES, MetricsReport

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.csv"
CDF_FILE = "cdf.csv"

CONFIG_COLUMNS = ("architecture", "proxy_kind", "num_conn", "pattern", "workload", "producers", "consumers", "transport")
SUMMARY_COLUMNS = (
    "label",
    "status",
    *CONFIG_COLUMNS,
    "messages",
    "span_seconds",
    "rate_msgs_per_sec",
    "rtt_median",
    *(f"rtt_p{p}" for p in PERCENTILES),
    "gather_rtt_median",
    "latency_median",
    "rejected_publishes",
    "throughput_overhead",
    "rtt_overhead",
    "repetitions",
    "reason",
)
CDF_COLUMNS = ("rtt_seconds", "cum_fraction")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_row(report: MetricsReport) -> list[str]:
    throughput = report.throughput
    overhead = report.overhead_vs_baseline
    values = [
        report.label,
        report.status.value,
        *(report.config.get(key) for key in CONFIG_COLUMNS),
        throughput.messages if throughput else None,
        throughput.span if throughput else None,
        throughput.rate if throughput else None,
        report.rtt_median,
        *(report.rtt_percentiles.get(f"p{p}") for p in PERCENTILES),
        report.gather_rtt_median,
        report.latency_median,
        report.rejected_publishes if report.ok else None,
        overhead.throughput_overhead if overhead else None,
        overhead.rtt_overhead if overhead else None,
        report.repetition_mean_over,
        report.reason,
    ]
    return [_cell(value) for value in values]


def write_report_json(path: str | Path, report: MetricsReport) -> Path:
    path = Path(path)
    path.write_bytes(
        orjson.dumps(report.model_dump(mode="json"), option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
    )
    return path


def load_report(path: str | Path) -> MetricsReport:
    try:
        return MetricsReport.model_validate(orjson.loads(Path(path).read_bytes()))
    except orjson.JSONDecodeError as e:
        raise InvalidRequestException(f"{path} is not a JSON report: {e}", error_code="CONFIG_PARSE_ERROR")


def write_summary_csv(
    path: str | Path,
    reports: Iterable[MetricsReport],
    sweep_field: str | None = None,
    sweep_values: Sequence | None = None,
) -> Path:
    """One row per report; a sweep prepends the swept field and its value."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        header = list(SUMMARY_COLUMNS)
        if sweep_field is not None:
            header = ["sweep_field", "sweep_value", *header]
        writer.writerow(header)
        for index, report in enumerate(reports):
            row = summary_row(report)
            if sweep_field is not None:
                row = [sweep_field, _cell(sweep_values[index]), *row]
            writer.writerow(row)
    return path


def write_cdf_csv(path: str | Path, report: MetricsReport) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\r\n")
        writer.writerow(CDF_COLUMNS)
        for value, fraction in report.cdf:
            writer.writerow([_cell(value), _cell(fraction)])
    return path


def write_artifacts(out_dir: str | Path, report: MetricsReport) -> list[Path]:
    """report.json, summary.csv and cdf.csv for one configuration."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [
        write_report_json(out_dir / REPORT_FILE, report),
        write_summary_csv(out_dir / SUMMARY_FILE, [report]),
        write_cdf_csv(out_dir / CDF_FILE, report),
    ]
    logger.info(f"Wrote {report.label} artifacts to {out_dir}")
    return written
