"""Deterministic discrete-event kernel.

All simulation time is kept as integer nanoseconds so that every timing
constant of the system (20 us slots, 32 us DIFS, 25 ms consensus period)
is exactly representable and three-second runs accumulate no drift.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable

import numpy as np

# Time unit helpers (integer nanoseconds).
NS_PER_US = 1_000
NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def seconds_to_ns(seconds: float) -> int:
    """Convert seconds to the integer-nanosecond clock, rounding to nearest."""
    return int(round(seconds * NS_PER_S))


class EventKind(IntEnum):
    """Event classes, ordered by dispatch priority at equal timestamps.

    Frame ends are processed before slot ticks so CCA sees channel
    transitions before backoff counters move; frame starts come after
    ticks so decisions taken at a tick are based on the pre-tick channel;
    control-plane events run last.  Consensus deadlines precede update
    generation so the deadline of period k runs before period k+1 starts.
    """

    FRAME_END = 0
    SLOT_TICK = 1
    FRAME_START = 2
    CONSENSUS_DEADLINE = 3
    UPDATE_GENERATED = 4
    PLANT_STEP = 5
    JAMMER_ARM = 6
    INTERFERER_ARRIVAL = 7


@dataclass
class Event:
    """A scheduled simulation event; also serves as its own cancel handle."""

    time: int
    kind: EventKind
    fn: Callable[[], None]
    actor: str = ""
    detail: str = ""
    seq: int = -1
    cancelled: bool = field(default=False, compare=False)
    dispatched: bool = field(default=False, compare=False)


class SchedulingError(RuntimeError):
    """Raised when a handler violates the engine contract."""


class HandlerError(RuntimeError):
    """Raised when an event handler fails; names the offending event."""


class Engine:
    """Single-threaded event queue with a total (time, priority, seq) order."""

    def __init__(self, trace: bool = False):
        self.now: int = 0
        self._heap: list[tuple[int, int, int, Event]] = []
        self._seq = 0
        self.trace_rows: list[str] | None = [] if trace else None

    def schedule(self, time: int, kind: EventKind, fn: Callable[[], None],
                 actor: str = "", detail: str = "") -> Event:
        if time < self.now:
            raise SchedulingError(
                f"cannot schedule {kind.name} at {time} ns: clock is {self.now} ns")
        ev = Event(int(time), kind, fn, actor, detail, seq=self._seq)
        self._seq += 1
        heapq.heappush(self._heap, (ev.time, int(ev.kind), ev.seq, ev))
        return ev

    def cancel(self, ev: Event) -> bool:
        """Lazily cancel a pending event; False if already dispatched/cancelled."""
        if ev.dispatched or ev.cancelled:
            return False
        ev.cancelled = True
        return True

    def run_until(self, t_end: int) -> int:
        """Dispatch every pending event with time <= t_end; clock ends at t_end."""
        if t_end < self.now:
            raise SchedulingError(
                f"run_until({t_end}) is in the past: clock is {self.now}")
        while self._heap and self._heap[0][0] <= t_end:
            _, _, _, ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self.now = ev.time
            ev.dispatched = True
            if self.trace_rows is not None:
                self.trace_rows.append(
                    f"{ev.time}\t{ev.kind.name}\t{ev.actor}\t{ev.detail}")
            try:
                ev.fn()
            except Exception as exc:
                raise HandlerError(
                    f"handler failed for {ev.kind.name} actor={ev.actor!r} "
                    f"detail={ev.detail!r} at t={ev.time} ns") from exc
        self.now = t_end
        return self.now


# One independent RNG stream per stochastic actor.  Keeping the jammer and
# the interferer on their own streams means adding or removing an adversary
# does not perturb the agents' backoff draws between compared scenarios.
STREAM_AGENT_BASE = 1       # agent i's DCF station uses stream (BASE + i - 1)
STREAM_UI_STATION = 100
STREAM_UI_ARRIVALS = 101
STREAM_JAMMER = 102


def make_rng(seed: int, stream_id: int) -> np.random.Generator:
    """Deterministic, statistically independent generator for (seed, stream)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream_id,)))
