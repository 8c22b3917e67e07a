# apps/streaming/metrics/service.py

import logging
import math
from collections import defaultdict
from typing import Sequence

import numpy as np

from apps.core.exception import InfeasibleConfigurationException, InvalidRequestException
from apps.streaming.harness.models import Pattern, RunRecord, RunStatus
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.metrics.schema import (
    PERCENTILES,
    MetricsReport,
    OverheadRatios,
    RttSample,
    RttStats,
    ThroughputSample,
)

logger = logging.getLogger(__name__)

SCALE_KEYS = ("pattern", "workload", "producers", "consumers")


class MismatchedConfigException(InvalidRequestException):
    default_error_code = "MISMATCHED_CONFIG"


# ===== Samples =====

def rtt_samples(record: RunRecord) -> list[RttSample]:
    """Per-reply RTT (reply back at the producer minus publish) of every delivery."""
    return [
        RttSample(msg_id=event.msg_id, rtt=event.reply_ts - event.publish_ts)
        for event in record.events
        if event.reply_ts is not None
    ]


def gather_rtt_samples(record: RunRecord) -> list[RttSample]:
    """Gather-complete RTT: publish until the last reply of that message."""
    last_reply: dict[tuple[int, int], float] = {}
    published: dict[tuple[int, int], float] = {}
    for event in record.events:
        if event.reply_ts is None:
            continue
        published[event.msg_id] = event.publish_ts
        last_reply[event.msg_id] = max(last_reply.get(event.msg_id, event.reply_ts), event.reply_ts)
    return [RttSample(msg_id=msg_id, rtt=last_reply[msg_id] - published[msg_id]) for msg_id in sorted(last_reply)]


def latency_samples(record: RunRecord) -> list[float]:
    return [event.deliver_ts - event.publish_ts for event in record.events]


def _sorted(values: Sequence[float]) -> np.ndarray:
    return np.sort(np.asarray(values, dtype=np.float64), kind="stable")


def _rank(n: int, percent: int) -> int:
    """Lower-interpolation rank; _rank(n, 50) is index ceil(n/2) - 1."""
    return (n - 1) * percent // 100


def lower_median(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise InvalidRequestException("No samples to take a median of", error_code="EMPTY_SAMPLES")
    ordered = _sorted(values)
    return float(ordered[_rank(len(ordered), 50)])


# ===== Operations =====

def compute_throughput(record: RunRecord) -> ThroughputSample:
    """Settled deliveries over first publish to last delivery."""
    if not record.events:
        raise InvalidRequestException("Run record has no deliveries", error_code="EMPTY_RECORD")
    first_publish = min(event.publish_ts for event in record.events)
    last_deliver = max(event.deliver_ts for event in record.events)
    span = last_deliver - first_publish
    if span <= 0:
        raise InvalidRequestException(f"Degenerate measurement span {span}", error_code="EMPTY_RECORD")
    messages = len(record.events)
    return ThroughputSample(messages=messages, span=span, rate=messages / span)


def compute_rtt_stats(samples: Sequence[RttSample]) -> RttStats:
    if not samples:
        raise InvalidRequestException("No RTT samples", error_code="EMPTY_SAMPLES")
    ordered = _sorted([sample.rtt for sample in samples])
    n = len(ordered)
    percentiles = {f"p{p}": float(ordered[_rank(n, p)]) for p in PERCENTILES}
    cdf = [(float(value), (i + 1) / n) for i, value in enumerate(ordered)]
    return RttStats(median=percentiles["p50"], percentiles=percentiles, cdf=cdf)


def _check_comparable(report: MetricsReport, other: MetricsReport, keys: Sequence[str]) -> None:
    for key in keys:
        if report.config.get(key) != other.config.get(key):
            raise MismatchedConfigException(
                f"'{report.label}' and '{other.label}' differ in {key}: "
                f"{report.config.get(key)!r} != {other.config.get(key)!r}"
            )


def compute_overhead(report: MetricsReport, baseline: MetricsReport) -> OverheadRatios:
    """
    ``baseline.rate / report.rate`` and ``report.rtt_median / baseline.rtt_median``.

    Patterns without a reply leg compare one-way latency medians instead of RTT.
    """
    if not (report.ok and baseline.ok):
        raise MismatchedConfigException("Overhead needs two successful reports")
    _check_comparable(report, baseline, SCALE_KEYS)

    if report.rtt_median is not None and baseline.rtt_median is not None:
        ours, theirs = report.rtt_median, baseline.rtt_median
    else:
        ours, theirs = report.latency_median, baseline.latency_median
    if not theirs or ours is None:
        raise MismatchedConfigException(f"Baseline '{baseline.label}' has a degenerate median")
    if not report.throughput.rate:
        raise MismatchedConfigException(f"Report '{report.label}' has zero throughput")

    return OverheadRatios(
        throughput_overhead=baseline.throughput.rate / report.throughput.rate,
        rtt_overhead=ours / theirs,
        baseline_label=baseline.label,
    )


def with_overhead(report: MetricsReport, baseline: MetricsReport) -> MetricsReport:
    return report.model_copy(update={"overhead_vs_baseline": compute_overhead(report, baseline)})


def build_report(record: RunRecord) -> MetricsReport:
    config: ExperimentConfig = record.config
    throughput = compute_throughput(record)

    rtt = None
    gather_median = None
    if config.pattern.has_reply:
        rtt = compute_rtt_stats(rtt_samples(record))
        if config.pattern == Pattern.BROADCAST_GATHER:
            gather_median = compute_rtt_stats(gather_rtt_samples(record)).median

    return MetricsReport(
        label=config.run_label(),
        config=config.echo(),
        throughput=throughput,
        rtt_median=rtt.median if rtt else None,
        rtt_percentiles=rtt.percentiles if rtt else {},
        cdf=rtt.cdf if rtt else [],
        latency_median=lower_median(latency_samples(record)),
        gather_rtt_median=gather_median,
        per_consumer_counts={str(cid): count for cid, count in sorted(record.per_consumer_counts.items())},
        rejected_publishes=record.rejected_publishes,
        confirmed=record.confirmed,
        path_delay=record.path_delay,
        virtual=record.virtual,
    )


def _mean(values: Sequence[float]) -> float:
    """Arithmetic mean, exact when every value is equal."""
    base = values[0]
    return base + math.fsum(value - base for value in values) / len(values)


def _mean_optional(values: Sequence[float | None]) -> float | None:
    if any(value is None for value in values):
        return None
    return _mean(values)


def merge_repetitions(reports: Sequence[MetricsReport]) -> MetricsReport:
    """
    Average repetitions of one configuration. Rates, medians and percentiles
    are arithmetic means; the CDF pools every sample of every repetition.
    """
    if not reports:
        raise InvalidRequestException("No reports to merge", error_code="EMPTY_RECORD")
    first = reports[0]
    for report in reports[1:]:
        if report.config != first.config:
            raise MismatchedConfigException(f"Cannot merge '{report.label}' into '{first.label}': config differs")
    if not all(report.ok for report in reports):
        raise MismatchedConfigException("Only successful repetitions can be merged")

    counts: dict[str, list[float]] = defaultdict(list)
    for report in reports:
        for cid, count in report.per_consumer_counts.items():
            counts[cid].append(count)

    pooled = _sorted([value for report in reports for value, _ in report.cdf])
    n = len(pooled)
    cdf = [(float(value), (i + 1) / n) for i, value in enumerate(pooled)]

    throughput = ThroughputSample(
        messages=_mean([r.throughput.messages for r in reports]),
        span=_mean([r.throughput.span for r in reports]),
        rate=_mean([r.throughput.rate for r in reports]),
    )
    merged = MetricsReport(
        label=first.label,
        config=first.config,
        throughput=throughput,
        rtt_median=_mean_optional([r.rtt_median for r in reports]),
        rtt_percentiles={
            key: _mean([r.rtt_percentiles[key] for r in reports]) for key in first.rtt_percentiles
        },
        cdf=cdf,
        latency_median=_mean_optional([r.latency_median for r in reports]),
        gather_rtt_median=_mean_optional([r.gather_rtt_median for r in reports]),
        per_consumer_counts={cid: _mean(values) for cid, values in sorted(counts.items(), key=lambda kv: int(kv[0]))},
        rejected_publishes=_mean([r.rejected_publishes for r in reports]),
        confirmed=_mean([r.confirmed for r in reports]),
        path_delay=first.path_delay,
        virtual=first.virtual,
        repetition_mean_over=sum(r.repetition_mean_over for r in reports),
    )
    logger.debug(f"Merged {len(reports)} repetitions of {first.label}: rate {throughput.rate:.1f} msg/s")
    return merged


def infeasible_report(config: ExperimentConfig, exc: InfeasibleConfigurationException) -> MetricsReport:
    """Stub for a configuration that could not run (no data point)."""
    return MetricsReport(
        label=config.run_label(),
        status=RunStatus.INFEASIBLE,
        config=config.echo(),
        reason=exc.reason,
        hop=getattr(exc, "hop", None),
        limit=getattr(exc, "limit", None),
        error=exc.message,
        repetition_mean_over=0,
    )


def failed_report(config: ExperimentConfig, error: str) -> MetricsReport:
    return MetricsReport(
        label=config.run_label(),
        status=RunStatus.FAILED,
        config=config.echo(),
        error=error,
        repetition_mean_over=0,
    )
