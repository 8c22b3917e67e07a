# apps/streaming/netpath/sim.py

import simpy

from apps.streaming.netpath.models import Side
from apps.streaming.netpath.schema import PathModel
from apps.streaming.netpath.service import PathState


class SimTransport:
    """
    Moves messages along hop chains on a simpy clock.

    Each hop is store-and-forward with one rate limiter shared by every flow
    and both directions: a message occupies the hop for size*8/bandwidth
    after the hop's previous reservation ends, then pays latency and TLS.
    Reservations are taken in send order when the message enters the chain.
    Control frames (confirms, acks) pay latency and TLS only.
    """

    def __init__(self, env: simpy.Environment, path: PathModel, state: PathState):
        self.env = env
        self.path = path
        self.state = state
        self._routes = {
            (side, upstream): self._hops(side, upstream) for side in Side for upstream in (True, False)
        }

    def _hops(self, side: Side, upstream: bool):
        route = self.path.route(side)
        if not upstream:
            route = list(reversed(route))
        return [(hop, self.state.hops[hop.name]) for hop in route]

    def reserve(self, side: Side, size: int, upstream: bool) -> float:
        """Arrival time of a ``size``-byte message entering the chain now."""
        t = self.env.now
        for hop, state in self._routes[(side, upstream)]:
            start = t if t > state.busy_until else state.busy_until
            finish = start + size * 8 / hop.bandwidth_bps
            state.busy_until = finish
            state.bytes_carried += size
            state.messages_carried += 1
            t = finish + hop.latency + hop.tls_overhead
        return t

    def control_arrival(self, side: Side, upstream: bool) -> float:
        t = self.env.now
        for hop, _ in self._routes[(side, upstream)]:
            t += hop.latency + hop.tls_overhead
        return t

    def send(self, side: Side, size: int, upstream: bool, callback, *args) -> float:
        arrival = self.reserve(side, size, upstream)
        self.call_at(arrival, callback, *args)
        return arrival

    def send_control(self, side: Side, upstream: bool, callback, *args) -> float:
        arrival = self.control_arrival(side, upstream)
        self.call_at(arrival, callback, *args)
        return arrival

    def call_at(self, when: float, callback, *args) -> None:
        event = self.env.timeout(max(0.0, when - self.env.now))
        event.callbacks.append(lambda _event: callback(*args))
