# apps/streaming/netpath/clock.py

import time

import simpy

from apps.core.exception import AppException


class ClockException(AppException):
    default_error_code = "CLOCK_ADVANCE_ON_WALL_CLOCK"


class VirtualClock:
    """
    Virtual time in seconds, advanced only by the event loop.

    When bound to a simpy environment the environment owns time and
    ``advance`` runs the loop forward; otherwise the clock keeps its own counter.
    """

    virtual = True

    def __init__(self, env: simpy.Environment | None = None, start: float = 0.0):
        self.env = env
        self._now = start

    def now(self) -> float:
        return self.env.now if self.env is not None else self._now

    def advance(self, duration: float) -> None:
        if duration < 0:
            raise ValueError("Cannot advance clock by negative duration")
        if self.env is not None:
            self.env.run(until=self.env.now + duration)
        else:
            self._now += duration


class WallClock:
    """Real monotonic time in seconds since construction."""

    virtual = False

    def __init__(self):
        self._origin = time.monotonic()

    def now(self) -> float:
        return time.monotonic() - self._origin

    def advance(self, duration: float) -> None:
        raise ClockException("A wall clock cannot be advanced")


Clock = VirtualClock | WallClock


def clock_now(clock: Clock) -> float:
    return clock.now()


def clock_advance(clock: Clock, duration: float) -> None:
    clock.advance(duration)
