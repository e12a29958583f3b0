"""Slot-accurate 802.11 DCF broadcast channel.

Carrier sensing is per-receiver: a station's CCA reports busy while any
transmission it can hear is on the air (visibility lags the transmitter
by the propagation delay).  Broadcast rules apply throughout: no ACKs,
no retransmissions, fixed contention window, mandatory post-backoff after
every transmission, and a single-deep transmit slot (a fresh update that
arrives while one is pending is dropped, never queued).

Reception is binary: any positive temporal overlap with another frame the
receiver can hear corrupts the frame for that receiver, so a jamming
transmission audible only to a subset of agents corrupts their copies
while the rest decode normally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .engine import NS_PER_S, NS_PER_US, Engine, Event, EventKind


class MacConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MacParams:
    slot_ns: int = 20 * NS_PER_US
    difs_ns: int = 32 * NS_PER_US
    data_rate_bps: int = 1_000_000
    phy_ns: int = 96 * NS_PER_US
    mac_header_bits: int = 272
    cw: int = 32
    propagation_ns: int = 2 * NS_PER_US

    def validate(self) -> None:
        for name in ("slot_ns", "difs_ns", "data_rate_bps", "phy_ns", "cw"):
            if getattr(self, name) <= 0:
                raise MacConfigError(f"mac.{name} must be positive")
        if self.cw & (self.cw - 1):
            raise MacConfigError(f"mac.cw must be a power of two, got {self.cw}")


def frame_airtime_ns(payload_bytes: int, params: MacParams) -> int:
    """PHY preamble plus (header + payload) serialised at the data rate."""
    if payload_bytes <= 0:
        raise MacConfigError(f"payload_bytes must be > 0, got {payload_bytes}")
    bits = params.mac_header_bits + 8 * payload_bytes
    return params.phy_ns + int(round(bits * NS_PER_S / params.data_rate_bps))


class FrameKind(Enum):
    AGENT = "agent"
    INTERFERER = "interferer"
    JAM = "jam"


class Outcome(Enum):
    DECODED = "decoded"
    CORRUPTED = "corrupted"
    NOT_HEARD = "not_heard"


@dataclass
class Frame:
    """One on-air transmission.

    ``origin`` is the physical transmitter (fixes who can hear the frame);
    ``sender`` is the address written in the header, which the jammer
    spoofs to camouflage as the interferer.
    """

    origin: int
    sender: int
    kind: FrameKind
    start: int
    duration: int
    payload_bytes: int
    payload: object = None
    overlappers: list[tuple[int, FrameKind]] = field(default_factory=list)

    @property
    def end(self) -> int:
        return self.start + self.duration


class _State(Enum):
    IDLE = "idle"
    DEFER = "defer"
    BACKOFF = "backoff"
    TX = "tx"
    POST = "post"


@dataclass
class DcfStation:
    """Per-radio MAC state machine (agents and the fair interferer)."""

    id: int
    hears: frozenset[int]
    rng: np.random.Generator
    kind: FrameKind = FrameKind.AGENT
    state: _State = _State.IDLE
    counter: int = 0
    has_pending: bool = False
    pending: object = None
    pending_bytes: int = 0
    submitted_at: int = 0
    defer_event: Event | None = None
    defer_end: int = 0
    zero_tx_event: Event | None = None
    idle_anchor: int = 0          # latest visible end of any heard frame
    draws: list[int] = field(default_factory=list)

    def needs_ticks(self) -> bool:
        # A zero counter is event-driven (gate-open transmission); only
        # counters still decrementing ride the slot grid.
        if self.state is _State.POST:
            return True
        return self.state is _State.BACKOFF and self.counter > 0


class Channel:
    """Shared medium: frame lifecycle, CCA views, slot ticks, delivery."""

    def __init__(self, engine: Engine, params: MacParams, log_draws: bool = False):
        params.validate()
        self.engine = engine
        self.params = params
        self.stations: dict[int, DcfStation] = {}
        self.on_air: list[Frame] = []
        self.log_draws = log_draws
        self._tick_scheduled = False
        self.agent_ids: list[int] = []
        # Hooks wired by the upper layers.
        self.frame_start_hooks: list[Callable[[Frame], None]] = []
        self.delivery_hook: Callable[[int, object, int], None] | None = None
        self.on_station_free: dict[int, Callable[[], None]] = {}
        self.frame_trace: list[str] | None = None
        # Counters and the duplicate-transmission guard.
        self.frames_sent: dict[FrameKind, int] = {k: 0 for k in FrameKind}
        self.submit_drops = 0
        self.outcome_counts: dict[Outcome, int] = {o: 0 for o in Outcome}
        self.jam_corruptions = 0
        self._sent_seqs: set[tuple[int, int]] = set()

    def add_station(self, station: DcfStation) -> None:
        if station.id in self.stations:
            raise MacConfigError(f"duplicate station id {station.id}")
        self.stations[station.id] = station
        if station.kind is FrameKind.AGENT:
            self.agent_ids.append(station.id)
            self.agent_ids.sort()

    # ------------------------------------------------------------------
    # CCA views
    # ------------------------------------------------------------------

    def _visible_busy(self, st: DcfStation, t: int) -> bool:
        prop = self.params.propagation_ns
        return any(f.origin in st.hears and f.start + prop <= t
                   for f in self.on_air)

    def _busy_or_pre_visible(self, st: DcfStation, t: int) -> bool:
        # Used at submit: a frame already on the air interrupts the DIFS
        # defer even if its visibility edge has not reached this station,
        # as does the fading tail of a frame that just ended.
        return (st.idle_anchor > t
                or any(f.origin in st.hears for f in self.on_air))

    # ------------------------------------------------------------------
    # Submission paths
    # ------------------------------------------------------------------

    def submit(self, station_id: int, payload: object, payload_bytes: int) -> bool:
        """Hand a fresh payload to a station; False drops it (slot occupied)."""
        st = self.stations[station_id]
        now = self.engine.now
        if st.has_pending or st.state is _State.TX:
            self.submit_drops += 1
            return False
        st.has_pending = True
        st.pending = payload
        st.pending_bytes = payload_bytes
        st.submitted_at = now
        if payload is not None and hasattr(payload, "submitted_at"):
            payload.submitted_at = now
        if st.state is _State.POST:
            gate_open = (st.counter == 0
                         and not self._busy_or_pre_visible(st, now)
                         and now - st.idle_anchor >= self.params.difs_ns)
            if not gate_open:
                # Attach to the running post-backoff countdown.
                st.state = _State.BACKOFF
                if st.counter == 0:
                    self._arm_zero_tx(st)
                return True
            st.state = _State.IDLE   # stale drained post-backoff
        if self._busy_or_pre_visible(st, now):
            self._enter_backoff(st)
        else:
            st.state = _State.DEFER
            st.defer_end = now + self.params.difs_ns
            st.defer_event = self.engine.schedule(
                st.defer_end, EventKind.FRAME_START,
                lambda s=st: self._defer_complete(s),
                actor=f"sta{st.id}", detail="tx")
        return True

    def station_free(self, station_id: int) -> bool:
        st = self.stations[station_id]
        return not st.has_pending and st.state is not _State.TX

    def inject(self, origin: int, sender: int, kind: FrameKind,
               payload_bytes: int, at: int) -> None:
        """Schedule a raw transmission that bypasses DCF (jammer path)."""
        duration = frame_airtime_ns(payload_bytes, self.params)
        frame = Frame(origin=origin, sender=sender, kind=kind, start=at,
                      duration=duration, payload_bytes=payload_bytes)
        self.engine.schedule(at, EventKind.FRAME_START,
                             lambda f=frame: self._frame_start(f, dcf=False),
                             actor=f"sta{origin}", detail=kind.value)

    # ------------------------------------------------------------------
    # DCF machinery
    # ------------------------------------------------------------------

    def _draw_backoff(self, st: DcfStation) -> int:
        value = int(st.rng.integers(0, self.params.cw))
        if self.log_draws:
            st.draws.append(value)
        return value

    def _enter_backoff(self, st: DcfStation) -> None:
        st.counter = self._draw_backoff(st)
        st.state = _State.BACKOFF
        if st.counter == 0:
            self._arm_zero_tx(st)
        else:
            self._ensure_ticks()

    def _arm_zero_tx(self, st: DcfStation) -> None:
        """A zero backoff transmits at the gate-open instant: the first
        moment the channel has been idle for a full DIFS.  While another
        heard frame is on the air, the firing is deferred to its end."""
        if any(f.origin in st.hears for f in self.on_air):
            return                      # re-armed at that frame's end
        at = max(self.engine.now, st.idle_anchor + self.params.difs_ns)
        st.zero_tx_event = self.engine.schedule(
            at, EventKind.FRAME_START, lambda s=st: self._zero_tx_fire(s),
            actor=f"sta{st.id}", detail="tx")

    def _zero_tx_fire(self, st: DcfStation) -> None:
        st.zero_tx_event = None
        self._transmit_now(st)

    def _defer_complete(self, st: DcfStation) -> None:
        st.defer_event = None
        self._transmit_now(st)

    def _transmit_now(self, st: DcfStation) -> None:
        now = self.engine.now
        if self._visible_busy(st, now):
            raise AssertionError(
                f"station {st.id} began transmitting with busy CCA at {now}")
        frame = Frame(origin=st.id, sender=st.id, kind=st.kind, start=now,
                      duration=frame_airtime_ns(st.pending_bytes, self.params),
                      payload_bytes=st.pending_bytes, payload=st.pending)
        st.state = _State.TX
        self._frame_start(frame, dcf=True)

    def _frame_start(self, frame: Frame, dcf: bool) -> None:
        if frame.kind is FrameKind.AGENT and frame.payload is not None:
            key = (frame.sender, frame.payload.seq)
            if key in self._sent_seqs:
                raise AssertionError(
                    f"frame (sender={frame.sender}, seq={frame.payload.seq}) "
                    f"transmitted twice: broadcast forbids retransmission")
            self._sent_seqs.add(key)
        # Mutual overlap bookkeeping with everything already on the air.
        for g in self.on_air:
            g.overlappers.append((frame.origin, frame.kind))
            frame.overlappers.append((g.origin, g.kind))
        self.on_air.append(frame)
        self.frames_sent[frame.kind] += 1
        # Stations deferring towards a transmit see the channel go busy
        # before their DIFS completes: they fall back to random backoff.
        # Pending zero-backoff transmissions freeze the same way (keeping
        # their zero counter) and re-arm when the channel clears.
        prop = self.params.propagation_ns
        for sid in sorted(self.stations):
            st = self.stations[sid]
            if sid == frame.origin or frame.origin not in st.hears:
                continue
            if (st.state is _State.DEFER
                    and frame.start + prop <= st.defer_end):
                self.engine.cancel(st.defer_event)
                st.defer_event = None
                self._enter_backoff(st)
            elif (st.zero_tx_event is not None
                    and frame.start + prop <= st.zero_tx_event.time):
                self.engine.cancel(st.zero_tx_event)
                st.zero_tx_event = None
        for hook in self.frame_start_hooks:
            hook(frame)
        self.engine.schedule(frame.end, EventKind.FRAME_END,
                             lambda f=frame, d=dcf: self._frame_end(f, d),
                             actor=f"sta{frame.origin}", detail=frame.kind.value)

    def _frame_end(self, frame: Frame, dcf: bool) -> None:
        self.on_air.remove(frame)
        visible_end = frame.end + self.params.propagation_ns
        for sid in sorted(self.stations):
            st = self.stations[sid]
            if frame.origin in st.hears or sid == frame.origin:
                st.idle_anchor = max(st.idle_anchor, visible_end)
        # Channel clearing re-arms any frozen zero-backoff transmissions.
        for sid in sorted(self.stations):
            st = self.stations[sid]
            if (st.state is _State.BACKOFF and st.counter == 0
                    and st.zero_tx_event is None):
                self._arm_zero_tx(st)
        outcomes = None
        if frame.kind is FrameKind.AGENT:
            outcomes = self._deliver(frame)
        if self.frame_trace is not None:
            self._trace_frame(frame, outcomes)
        if dcf:
            st = self.stations[frame.origin]
            st.has_pending = False
            st.pending = None
            st.pending_bytes = 0
            st.state = _State.POST
            st.counter = self._draw_backoff(st)
            self._ensure_ticks()
            callback = self.on_station_free.get(frame.origin)
            if callback is not None:
                callback()

    def _deliver(self, frame: Frame) -> dict[int, Outcome]:
        """Per-receiver reception outcome at the end of the airtime."""
        outcomes: dict[int, Outcome] = {}
        for rid in self.agent_ids:
            if rid == frame.origin:
                continue
            r = self.stations[rid]
            # A receiver's own transmission counts as interference: the
            # radio is half duplex, so a frame it overlapped is lost to it
            # just as it is lost to everyone else in the collision.
            corrupters = [(origin, kind) for origin, kind in frame.overlappers
                          if origin in r.hears or origin == rid]
            if frame.origin not in r.hears:
                outcomes[rid] = Outcome.NOT_HEARD
            elif corrupters:
                outcomes[rid] = Outcome.CORRUPTED
                if all(kind is FrameKind.JAM for _, kind in corrupters):
                    self.jam_corruptions += 1
            else:
                outcomes[rid] = Outcome.DECODED
                if self.delivery_hook is not None:
                    self._check_delay_decomposition(frame)
                    self.delivery_hook(rid, frame.payload, frame.end)
            self.outcome_counts[outcomes[rid]] += 1
        return outcomes

    def _check_delay_decomposition(self, frame: Frame) -> None:
        # Total delay must split exactly into artificial delay, contention
        # time and airtime (queueing and receive handoff are both zero).
        p = frame.payload
        if p is None or not hasattr(p, "generated_at"):
            return
        t_ad = p.submitted_at - p.generated_at
        t_dcf = frame.start - p.submitted_at
        total = frame.end - p.generated_at
        if t_dcf < 0 or total != t_ad + t_dcf + frame.duration:
            raise AssertionError(
                f"delay decomposition violated for sender {frame.sender}: "
                f"{total} != {t_ad} + {t_dcf} + {frame.duration}")

    def _trace_frame(self, frame: Frame, outcomes: dict[int, Outcome] | None) -> None:
        per_rx = ""
        if outcomes:
            per_rx = ";".join(f"{rid}:{outcomes[rid].value}"
                              for rid in sorted(outcomes))
        self.frame_trace.append(
            f"{frame.start},{frame.sender},{frame.kind.value},"
            f"{frame.duration},{per_rx}")

    # ------------------------------------------------------------------
    # Slot ticks
    # ------------------------------------------------------------------

    def _ensure_ticks(self) -> None:
        if self._tick_scheduled:
            return
        slot = self.params.slot_ns
        next_tick = (self.engine.now // slot + 1) * slot
        self.engine.schedule(next_tick, EventKind.SLOT_TICK, self._on_tick,
                             actor="mac")
        self._tick_scheduled = True

    def _on_tick(self) -> None:
        self._tick_scheduled = False
        now = self.engine.now
        difs = self.params.difs_ns
        any_counting = False
        for sid in sorted(self.stations):
            st = self.stations[sid]
            if not st.needs_ticks():
                continue
            if not self._visible_busy(st, now) and now - st.idle_anchor >= difs:
                if st.counter > 0:
                    st.counter -= 1
                if st.counter == 0:
                    if st.state is _State.BACKOFF:
                        # The transmission is its own event so CCA decisions
                        # taken at this tick stay order-independent.
                        self.engine.schedule(
                            now, EventKind.FRAME_START,
                            lambda s=st: self._transmit_now(s),
                            actor=f"sta{st.id}", detail="tx")
                        continue
                    st.state = _State.IDLE
                    continue
            any_counting = True
        if any_counting:
            self.engine.schedule(now + self.params.slot_ns, EventKind.SLOT_TICK,
                                 self._on_tick, actor="mac")
            self._tick_scheduled = True
