"""Channel adversaries: the Poisson interferer and the reactive jammer.

The interferer is a well-behaved co-channel 802.11 transmitter with
Poisson packet arrivals into an unbounded buffer; it contends fairly.

The jammer sniffs agent transmissions to estimate their broadcast period,
arms itself a fraction q of one estimated period after each strike, and
fires on the first agent frame it hears while armed - without carrier
sensing, since it does not respect the access rules.  Its frames copy the
interferer's size and sender address, so on the air they are
indistinguishable from benign interference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import NS_PER_S, Engine, Event, EventKind
from .mac import Channel, Frame, FrameKind


class AttackConfigError(ValueError):
    pass


@dataclass
class InterfererConfig:
    rate_per_s: float = 100.0
    payload_bytes: int = 512

    def validate(self) -> None:
        if not self.rate_per_s > 0:
            raise AttackConfigError(
                f"interferer.rate_per_s must be > 0, got {self.rate_per_s}")
        if self.payload_bytes <= 0:
            raise AttackConfigError("interferer.payload_bytes must be > 0")


class Interferer:
    """Poisson downlink traffic through a fair DCF station."""

    def __init__(self, engine: Engine, channel: Channel, station_id: int,
                 config: InterfererConfig, rng: np.random.Generator):
        config.validate()
        self.engine = engine
        self.channel = channel
        self.station_id = station_id
        self.config = config
        self.rng = rng
        self.backlog = 0          # arrivals waiting behind the pending slot
        self.arrivals = 0
        channel.on_station_free[station_id] = self._on_station_free

    def next_gap_ns(self) -> int:
        """One exponential inter-arrival gap on the integer clock."""
        return max(1, int(round(self.rng.exponential(1.0 / self.config.rate_per_s)
                                * NS_PER_S)))

    def start(self, at: int = 0) -> None:
        self.engine.schedule(at + self.next_gap_ns(), EventKind.INTERFERER_ARRIVAL,
                             self._on_arrival, actor="ui")

    def _on_arrival(self) -> None:
        self.arrivals += 1
        if self.channel.station_free(self.station_id):
            self.channel.submit(self.station_id, None, self.config.payload_bytes)
        else:
            self.backlog += 1
        self.engine.schedule(self.engine.now + self.next_gap_ns(),
                             EventKind.INTERFERER_ARRIVAL, self._on_arrival,
                             actor="ui")

    def _on_station_free(self) -> None:
        if self.backlog > 0 and self.channel.station_free(self.station_id):
            self.backlog -= 1
            self.channel.submit(self.station_id, None, self.config.payload_bytes)


@dataclass
class JammerConfig:
    attacked: tuple[int, ...] = (4, 5)
    q: float = 0.8
    payload_bytes: int = 512
    station_id: int = 0
    spoofed_sender: int = 0    # the interferer's address
    # Agents whose transmissions the jammer can sniff.  The default (None)
    # applies radio reciprocity: a transmitter too weak to reach the far
    # agents cannot reliably receive them either, so it sniffs exactly the
    # agents it attacks.
    sniffs: tuple[int, ...] | None = None

    def sniff_set(self) -> frozenset[int]:
        return frozenset(self.sniffs if self.sniffs is not None else self.attacked)

    def validate(self, n_agents: int) -> None:
        if not 0 < self.q <= 1:
            raise AttackConfigError(f"jammer.q must be in (0, 1], got {self.q}")
        if self.payload_bytes <= 0:
            raise AttackConfigError("jammer.payload_bytes must be > 0")
        if not self.attacked:
            raise AttackConfigError("jammer.attacked must name at least one agent")
        for a in self.attacked:
            if not 1 <= a <= n_agents:
                raise AttackConfigError(
                    f"jammer.attacked contains unknown agent {a}")
        for a in self.sniffs or ():
            if not 1 <= a <= n_agents:
                raise AttackConfigError(
                    f"jammer.sniffs contains unknown agent {a}")


@dataclass
class JammerState:
    tca_hat_ns: float | None = None
    armed: bool = False
    attack_started: bool = False
    last_seen: dict[int, int] = field(default_factory=dict)
    sample_sum: float = 0.0
    sample_count: int = 0
    jam_frames: int = 0
    bursts_observed: int = 0
    estimate_log: list[tuple[int, float]] = field(default_factory=list)


class Jammer:
    """Reactive jammer with period estimation and a q-corrected arming clock."""

    def __init__(self, engine: Engine, channel: Channel, config: JammerConfig,
                 prop_ns: int):
        self.engine = engine
        self.channel = channel
        self.config = config
        self.prop_ns = prop_ns
        self._sniffs = config.sniff_set()
        self.state = JammerState()
        self.trace: list[str] | None = None
        self._arm_event: Event | None = None
        self._arm_anchor = 0
        self._last_burst_period: int | None = None
        channel.frame_start_hooks.append(self.on_frame_start)

    def _trace(self, action: str) -> None:
        if self.trace is not None:
            est = self.state.tca_hat_ns
            self.trace.append(
                f"{self.engine.now},jammer,{action},"
                f"{'' if est is None else repr(est)}")

    def on_frame_start(self, frame: Frame) -> None:
        """Sniff agent frame starts within range; estimate, trigger, re-arm."""
        if frame.kind is not FrameKind.AGENT:
            return
        if frame.sender not in self._sniffs:
            return
        now = self.engine.now
        st = self.state
        sender = frame.sender
        previous = st.last_seen.get(sender)
        st.last_seen[sender] = now
        if previous is not None:
            st.sample_sum += now - previous
            st.sample_count += 1
            st.tca_hat_ns = st.sample_sum / st.sample_count
            st.estimate_log.append((now, st.tca_hat_ns))
            self._trace("observe")
            self._retime_pending_arm()
        if frame.payload is not None:
            period = getattr(frame.payload, "period", None)
            if period is not None and period != self._last_burst_period:
                self._last_burst_period = period
                st.bursts_observed += 1
        if not st.attack_started:
            st.attack_started = True
        if st.tca_hat_ns is not None and not st.armed and self._arm_event is None:
            # First estimate available: arm immediately so the next burst
            # is already covered.
            self._schedule_arm(now)
        if st.armed:
            self._fire(now)

    def _fire(self, now: int) -> None:
        st = self.state
        st.armed = False
        jam_start = now + self.prop_ns
        self.channel.inject(self.config.station_id, self.config.spoofed_sender,
                            FrameKind.JAM, self.config.payload_bytes, jam_start)
        st.jam_frames += 1
        self._trace("fire")
        self._arm_anchor = jam_start
        self._schedule_arm(jam_start + self._arm_delay_ns())

    def _arm_delay_ns(self) -> int:
        return int(round(self.config.q * self.state.tca_hat_ns))

    def _schedule_arm(self, at: int) -> None:
        at = max(at, self.engine.now)
        self._arm_event = self.engine.schedule(
            at, EventKind.JAMMER_ARM, self._on_arm, actor="jammer",
            detail=f"tca_hat={self.state.tca_hat_ns}")

    def _on_arm(self) -> None:
        self._arm_event = None
        self.state.armed = True
        self._trace("arm")

    def _retime_pending_arm(self) -> None:
        # The arming clock self-corrects: a pending arm is re-scheduled
        # from its anchor whenever the period estimate moves.
        if self._arm_event is None or self.state.armed:
            return
        target = max(self._arm_anchor + self._arm_delay_ns(), self.engine.now)
        if target != self._arm_event.time:
            self.engine.cancel(self._arm_event)
            self._schedule_arm(target)
