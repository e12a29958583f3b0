"""Agent-side transmission scheduling.

All agents are synchronised: every period starts with the agents
refreshing their states from the plant, each then hands its update to
the MAC after a deterministic per-agent artificial delay.  In baseline
mode the delay is one carrier-sense slot per agent index, which packs
the period's traffic into a short burst; in spread mode the delays
partition a window T_e so the transmissions are paced across it, which
is the anti-jamming countermeasure.  A common deadline one full period
later closes the exchange and runs the averaging step.
"""

from __future__ import annotations

from dataclasses import dataclass

from .consensus import ConsensusLayer, FaultRecord
from .engine import Engine, EventKind
from .mac import Channel
from .powergrid import Plant


class ProtocolConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SchedulingPolicy:
    mode: str = "baseline"            # "baseline" | "spread"
    sigma_ns: int = 20_000
    t_e_ns: int = 12_000_000
    t_ca_ns: int = 25_000_000
    n_agents: int = 6

    def validate(self) -> None:
        if self.mode not in ("baseline", "spread"):
            raise ProtocolConfigError(
                f"protocol.mode must be 'baseline' or 'spread', got {self.mode!r}")
        if self.t_ca_ns <= 0:
            raise ProtocolConfigError("consensus.t_ca must be > 0")
        if self.mode == "spread" and not 0 < self.t_e_ns <= self.t_ca_ns:
            raise ProtocolConfigError(
                f"protocol.t_e must be in (0, t_ca], got {self.t_e_ns} ns "
                f"with t_ca {self.t_ca_ns} ns")


def artificial_delay_ns(agent: int, policy: SchedulingPolicy) -> int:
    """Deterministic pre-MAC stagger for the given agent (1-based index)."""
    if not 1 <= agent <= policy.n_agents:
        raise ProtocolConfigError(
            f"agent index {agent} out of range 1..{policy.n_agents}")
    if policy.mode == "spread":
        return (agent - 1) * policy.t_e_ns // policy.n_agents
    return policy.sigma_ns * (agent - 1)


class UpdateScheduler:
    """Drives the periodic generate / submit / deadline cycle."""

    def __init__(self, engine: Engine, channel: Channel, plant: Plant,
                 consensus: ConsensusLayer, policy: SchedulingPolicy,
                 payload_bytes: int = 10):
        policy.validate()
        self.engine = engine
        self.channel = channel
        self.plant = plant
        self.consensus = consensus
        self.policy = policy
        self.payload_bytes = payload_bytes
        self.fault_records: list[FaultRecord] = []
        self.deadline_hooks = []      # called as hook(record) after each step
        self.on_states_changed = None  # called whenever agent states move
        self.period = 0

    def start(self, activation_ns: int) -> None:
        """Enable the secondary loop and launch period 0 at activation."""
        self.engine.schedule(activation_ns, EventKind.UPDATE_GENERATED,
                             self._activate, actor="protocol", detail="activate")

    def _activate(self) -> None:
        self.plant.state.secondary_enabled = True
        self.consensus.activate(self.plant.measurements())
        self.period = 0
        self._generate_and_submit(0)
        self._schedule_deadline(0)
        if self.on_states_changed is not None:
            self.on_states_changed()

    def _schedule_deadline(self, k: int) -> None:
        # T_u = T_ca: the deadline of period k falls on the start of period
        # k+1, and both call sites run exactly at a period boundary.
        self.engine.schedule(self.engine.now + self.policy.t_ca_ns,
                             EventKind.CONSENSUS_DEADLINE,
                             lambda: self._deadline(k), actor="protocol",
                             detail=f"k={k}")

    def _generate_and_submit(self, k: int) -> None:
        now = self.engine.now
        for i in sorted(self.consensus.agents):
            payload = self.consensus.generate_update(i, k, now)
            delay = artificial_delay_ns(i, self.policy)
            if delay == 0:
                self._submit(i, payload)
            else:
                self.engine.schedule(
                    now + delay, EventKind.UPDATE_GENERATED,
                    lambda a=i, p=payload: self._submit(a, p),
                    actor=f"agent{i}", detail=f"k={k}")

    def _submit(self, agent: int, payload) -> None:
        self.channel.submit(agent, payload, self.payload_bytes)

    def _deadline(self, k: int) -> None:
        record = self.consensus.step_all(k, self.plant.measurements())
        self.fault_records.append(record)
        for hook in self.deadline_hooks:
            hook(record)
        self.period = k + 1
        self._generate_and_submit(k + 1)
        self._schedule_deadline(k + 1)
        if self.on_states_changed is not None:
            self.on_states_changed()
