import logging

from apps.context import get_current_run

LOG_FORMAT = "%(asctime)s %(levelname)s [%(run)s] %(name)s: %(message)s"


class RunContextFilter(logging.Filter):
    """Stamps every record with the label of the experiment run being executed."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.run = get_current_run() or "-"
        return True


def configure_logging(level: str | int = "INFO") -> None:
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_streamsim", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler()
    handler._streamsim = True
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler.addFilter(RunContextFilter())
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
