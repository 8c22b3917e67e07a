# apps/cli/commands.py

import functools
import logging
import sys
from pathlib import Path

import click
from pydantic import ValidationError

from apps.cli.config_file import dump_config, load_config_file
from apps.cli.service import run_and_write, run_sweep, validate_experiments
from apps.cli.sweep import SweepSpec, parse_values
from apps.core.exception import AppException, FatalInvariantViolation, InvalidRequestException
from apps.core.logging import configure_logging
from apps.settings import AppConfig
from apps.streaming.harness.models import RunStatus
from apps.streaming.metrics.report import load_report, write_report_json, write_summary_csv
from apps.streaming.metrics.service import with_overhead
from apps.streaming.overlay.models import Direction
from apps.streaming.overlay.schema import SessionRequest
from apps.streaming.overlay.service import (
    inbound_request,
    load_control_plane,
    outbound_request,
    save_control_plane,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def handle_errors(func):
    """Map application errors to the stable exit-code contract."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except AppException as e:
            click.echo(f"error [{e.error_code}]: {e.message}", err=True)
            sys.exit(e.exit_code)
        except ValidationError as e:
            click.echo(f"error [INVALID_CONFIG]: {e.errors()[0]['msg']}", err=True)
            sys.exit(EXIT_CONFIG)
        except FatalInvariantViolation as e:
            click.echo(f"error [{e.error_code}]: {e.message}", err=True)
            sys.exit(EXIT_FAILED)

    return wrapper


@click.group()
@click.option("--log-level", default=None, help="Overrides STREAMSIM_LOG_LEVEL")
@click.pass_context
def cli(ctx, log_level):
    """Cross-facility streaming architecture harness."""
    app_config = AppConfig()
    configure_logging(log_level or app_config.LOG_LEVEL)
    ctx.obj = app_config


# ===== run / sweep =====

@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output root directory")
@click.option("--experiment", "only", default=None, help="Run only the experiment with this label")
@click.option("--dump-effective-config", is_flag=True, help="Print the effective configuration and exit")
@click.pass_obj
@handle_errors
def run(app_config: AppConfig, config_path, out_dir, only, dump_effective_config):
    """Run every experiment of CONFIG_PATH and write report.json, summary.csv and cdf.csv."""
    config_file = load_config_file(config_path, seed_override=app_config.SEED)
    experiments = config_file.experiments
    if only is not None:
        experiments = [config for config in experiments if config.label == only]
        if not experiments:
            raise InvalidRequestException(f"No experiment labelled '{only}'", error_code="UNKNOWN_EXPERIMENT")

    if dump_effective_config:
        click.echo(dump_config(experiments, config_file.profiles), nl=False)
        return

    validate_experiments(experiments, config_file.profiles)
    out_root = Path(out_dir or app_config.OUT_DIR)
    exit_code = EXIT_OK
    for config in experiments:
        report = run_and_write(config, out_root, config_file.profiles)
        if report.status == RunStatus.INFEASIBLE:
            click.echo(
                f"infeasible [{report.reason}]: {report.label}: {report.error}", err=True
            )
            exit_code = EXIT_INFEASIBLE
        else:
            click.echo(
                f"{report.label}: {report.throughput.rate:.1f} msg/s"
                + (f", median RTT {report.rtt_median * 1e3:.3f} ms" if report.rtt_median is not None else "")
            )
    sys.exit(exit_code)


@cli.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.option("--field", default="consumers", show_default=True, help="Experiment field to sweep")
@click.option("--values", default=None, help="Comma list or low..high (powers of two); default 1..64")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output root directory")
@click.option("--experiment", "only", default=None, help="Sweep the experiment with this label")
@click.pass_obj
@handle_errors
def sweep(app_config: AppConfig, config_path, field, values, out_dir, only):
    """Scale one experiment along FIELD and write a combined summary.csv."""
    config_file = load_config_file(config_path, seed_override=app_config.SEED)
    experiments = config_file.experiments
    if only is not None:
        experiments = [config for config in experiments if config.label == only]
    if len(experiments) != 1:
        raise InvalidRequestException("sweep needs exactly one experiment (use --experiment)", error_code="INVALID_CONFIG")

    try:
        spec = SweepSpec(base=experiments[0], field=field, values=parse_values(values))
    except ValidationError as e:
        raise InvalidRequestException(e.errors()[0]["msg"], error_code="INVALID_CONFIG") from None
    validate_experiments((config for _, config in spec.points()), config_file.profiles)
    reports, combined = run_sweep(spec, out_dir or app_config.OUT_DIR, config_file.profiles)

    for value, report in zip(spec.values, reports):
        click.echo(f"{spec.field}={value}: {report.status.value}")
    click.echo(f"combined summary: {combined}")
    failed = any(report.status == RunStatus.FAILED for report in reports)
    sys.exit(EXIT_FAILED if failed else EXIT_OK)


# ===== session =====

@cli.group()
def session():
    """Overlay session requests against the control-plane state file."""


def _state_file(app_config: AppConfig, state_file):
    return state_file or app_config.SESSION_STATE_FILE


def _ports(text: str) -> list[int]:
    try:
        return [int(port) for port in text.split(",") if port.strip()]
    except ValueError:
        raise InvalidRequestException(f"Invalid receiver ports '{text}'", error_code="INVALID_CONFIG")


@session.command("inbound-request")
@click.option("--remote_ip", default="127.0.0.1", show_default=True, help="Producer-facility address")
@click.option("--s2cs", default="127.0.0.1:5000", show_default=True, help="Consumer-side control server")
@click.option("--receiver_ports", default="5074", show_default=True, help="Comma-separated consumer ports")
@click.option("--num_conn", default=1, type=int, show_default=True)
@click.option("--credential", default=None, help="Defaults to the first STREAMSIM_OVERLAY_CREDENTIALS entry")
@click.option("--state-file", default=None, help="Overrides STREAMSIM_SESSION_STATE_FILE")
@click.pass_obj
@handle_errors
def session_inbound(app_config: AppConfig, remote_ip, s2cs, receiver_ports, num_conn, credential, state_file):
    """Allocate the consumer-side proxy; prints the uid then the endpoint."""
    req = SessionRequest(
        direction=Direction.INBOUND,
        remote_endpoint=remote_ip,
        control_endpoint=s2cs,
        receiver_ports=_ports(receiver_ports),
        num_conn=num_conn,
        credential=credential or _default_credential(app_config),
    )
    path = _state_file(app_config, state_file)
    plane = load_control_plane(path)
    response = inbound_request(plane, req)
    save_control_plane(plane, path)
    click.echo(response.uid)
    click.echo(response.endpoint)


@session.command("outbound-request")
@click.option("--uid", required=True, help="uid printed by inbound-request")
@click.option("--remote_ip", default="127.0.0.1", show_default=True, help="Consumer proxy address")
@click.option("--s2cs", default="127.0.0.1:5000", show_default=True, help="Producer-side control server")
@click.option("--receiver_ports", default="5074", show_default=True)
@click.option("--num_conn", default=1, type=int, show_default=True)
@click.option("--credential", default=None)
@click.option("--state-file", default=None)
@click.pass_obj
@handle_errors
def session_outbound(app_config: AppConfig, uid, remote_ip, s2cs, receiver_ports, num_conn, credential, state_file):
    """Allocate the producer-side proxy and establish the tunnel; prints the endpoint."""
    req = SessionRequest(
        direction=Direction.OUTBOUND,
        remote_endpoint=remote_ip,
        control_endpoint=s2cs,
        receiver_ports=_ports(receiver_ports),
        num_conn=num_conn,
        credential=credential or _default_credential(app_config),
        uid=uid,
    )
    path = _state_file(app_config, state_file)
    plane = load_control_plane(path)
    response = outbound_request(plane, req)
    save_control_plane(plane, path)
    click.echo(response.endpoint)


@session.command("release")
@click.argument("uid")
@click.option("--state-file", default=None)
@click.pass_obj
@handle_errors
def session_release(app_config: AppConfig, uid, state_file):
    """Tear down a session and return its ports to the pools."""
    path = _state_file(app_config, state_file)
    plane = load_control_plane(path)
    plane.release(uid)
    save_control_plane(plane, path)
    click.echo(f"released {uid}")


def _default_credential(app_config: AppConfig) -> str:
    credentials = app_config.overlay_credentials
    return credentials[0] if credentials else ""


# ===== report =====

@cli.command()
@click.argument("report_paths", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--baseline", required=True, type=click.Path(exists=True, dir_okay=False), help="Baseline report.json")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write a summary CSV here")
@click.option("--in-place", is_flag=True, help="Store the overhead ratios back into each report.json")
@handle_errors
def report(report_paths, baseline, out_path, in_place):
    """Overhead of one or more reports relative to a baseline report."""
    baseline_report = load_report(baseline)
    reports = []
    for path in report_paths:
        updated = with_overhead(load_report(path), baseline_report)
        ratios = updated.overhead_vs_baseline
        click.echo(
            f"{updated.label}: throughput overhead {ratios.throughput_overhead:.3f}, "
            f"rtt overhead {ratios.rtt_overhead:.3f}"
        )
        if in_place:
            write_report_json(path, updated)
        reports.append(updated)
    if out_path:
        write_summary_csv(out_path, reports)


def main() -> None:
    cli(prog_name="streamsim")


