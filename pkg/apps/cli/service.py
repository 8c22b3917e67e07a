# apps/cli/service.py

import logging
from pathlib import Path
from typing import Iterable

from apps.cli.sweep import SweepSpec
from apps.core.exception import AppException, FatalInvariantViolation, InfeasibleConfigurationException
from apps.streaming.harness.patterns import check_queue_capacity
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.harness.service import run_repetitions
from apps.streaming.metrics.report import SUMMARY_FILE, write_artifacts, write_summary_csv
from apps.streaming.metrics.schema import MetricsReport
from apps.streaming.metrics.service import build_report, failed_report, infeasible_report, merge_repetitions
from apps.streaming.workload.service import ProfileRegistry, profile_lookup

logger = logging.getLogger(__name__)


def validate_experiments(configs: Iterable[ExperimentConfig], profiles: ProfileRegistry | None = None) -> None:
    """Reject unknown workloads and undersized queues before any run starts."""
    for config in configs:
        check_queue_capacity(config, profile_lookup(config.workload, profiles))
def experiment_report(config: ExperimentConfig, profiles: ProfileRegistry | None = None) -> MetricsReport:
    """Merged report over every repetition; infeasible configurations yield a stub."""
    try:
        records = run_repetitions(config, profiles=profiles)
    except InfeasibleConfigurationException as e:
        return infeasible_report(config, e)
    return merge_repetitions([build_report(record) for record in records])


def run_and_write(
    config: ExperimentConfig, out_root: str | Path, profiles: ProfileRegistry | None = None
) -> MetricsReport:
    report = experiment_report(config, profiles)
    write_artifacts(Path(out_root) / config.run_dir(), report)
    return report


def run_sweep(
    spec: SweepSpec, out_root: str | Path, profiles: ProfileRegistry | None = None
) -> tuple[list[MetricsReport], Path]:
    """
    One report per swept value plus a combined summary ordered by value.
    A failing point is recorded as a failed row and the sweep moves on.
    """
    out_root = Path(out_root)
    reports = []
    for value, config in spec.points():
        logger.info(f"Sweep point {spec.field}={value}")
        try:
            report = run_and_write(config, out_root, profiles)
        except (AppException, FatalInvariantViolation) as e:
            logger.warning(f"Sweep point {spec.field}={value} failed: {e}", exc_info=True)
            report = failed_report(config, f"{e.error_code}: {e.message}")
            write_artifacts(out_root / config.run_dir(), report)
        reports.append(report)

    combined_dir = out_root / spec.combined_label()
    combined_dir.mkdir(parents=True, exist_ok=True)
    combined = write_summary_csv(combined_dir / SUMMARY_FILE, reports, sweep_field=spec.field, sweep_values=spec.values)
    return reports, combined
