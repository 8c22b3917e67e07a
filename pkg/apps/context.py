# apps/context.py
from contextvars import ContextVar

current_run_ctx: ContextVar[str | None] = ContextVar("current_run", default=None)


def set_current_run(label: str | None):
    current_run_ctx.set(label)


def get_current_run() -> str | None:
    return current_run_ctx.get()
