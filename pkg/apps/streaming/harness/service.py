# apps/streaming/harness/service.py

import logging

from apps.context import get_current_run, set_current_run
from apps.core.exception import InfeasibleConfigurationException
from apps.streaming.harness.loopback import LoopbackExperiment
from apps.streaming.harness.models import RunRecord
from apps.streaming.harness.patterns import check_queue_capacity
from apps.streaming.harness.schema import ExperimentConfig
from apps.streaming.harness.sim import SimExperiment
from apps.streaming.netpath.models import TransportMode
from apps.streaming.overlay.service import ControlPlane
from apps.streaming.workload.service import ProfileRegistry, profile_lookup

logger = logging.getLogger(__name__)


def run_experiment(
    config: ExperimentConfig,
    profiles: ProfileRegistry | None = None,
    plane: ControlPlane | None = None,
    repetition: int = 0,
) -> RunRecord:
    """
    Run one repetition of ``config`` on its transport.

    Consumers are registered before the first publish. Infeasible
    configurations (a hop connection limit) and queues too small for one
    message raise before any message moves.
    """
    profile = profile_lookup(config.workload, profiles)
    check_queue_capacity(config, profile)
    previous = get_current_run()
    set_current_run(f"{config.run_label()}#{repetition}")
    try:
        logger.info(
            f"Starting {config.transport.value} run: {config.architecture.value} {config.pattern.value} "
            f"{config.workload} P={config.effective_producers} C={config.consumers} M={config.message_count} "
            f"seed={config.seed}"
        )
        if config.transport == TransportMode.LOOPBACK:
            experiment = LoopbackExperiment(config, profile, plane=plane, repetition=repetition)
        else:
            experiment = SimExperiment(config, profile, plane=plane, repetition=repetition)
        try:
            record = experiment.run()
        except InfeasibleConfigurationException as e:
            logger.info(f"Infeasible configuration: {e.message}")
            raise
        logger.info(
            f"Finished: {len(record.events)} deliveries, {record.confirmed} confirmed, "
            f"{record.rejected_publishes} rejected publishes, duration {record.duration:.6f}s"
        )
        return record
    finally:
        set_current_run(previous)


def run_repetitions(
    config: ExperimentConfig,
    profiles: ProfileRegistry | None = None,
    plane: ControlPlane | None = None,
) -> list[RunRecord]:
    """``config.repetitions`` runs seeded ``seed``, ``seed + 1``, ..."""
    records = []
    for repetition in range(config.repetitions):
        run_config = config.model_copy(update={"seed": config.seed + repetition})
        records.append(run_experiment(run_config, profiles=profiles, plane=plane, repetition=repetition))
    return records
