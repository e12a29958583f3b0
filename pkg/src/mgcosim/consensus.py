"""Per-agent distributed averaging with the discard-and-hold fault policy.

Every period each agent refreshes its state with the increment of its
local measurement, broadcasts the result, and at the common deadline
either applies the constant-weight averaging update (all neighbour
payloads present) or reverts to the value memorised at the last
successful period (anything missing).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class FaultClass(Enum):
    NONE = "none"
    COORDINATED = "coordinated"
    UNCOORDINATED = "uncoordinated"


@dataclass
class UpdatePayload:
    """On-air status update: 10 bytes on the wire (states + id + overhead)."""

    sender: int
    seq: int
    x: tuple[float, float]
    period: int
    generated_at: int = 0     # engine time, for delay accounting
    submitted_at: int = 0

    WIRE_BYTES = 10


@dataclass
class FaultRecord:
    period: int
    flags: dict[int, bool]
    classification: FaultClass


def classify_faults(flags: dict[int, bool]) -> FaultClass:
    """Coordinated iff every agent faulted, uncoordinated iff a strict
    non-empty subset did."""
    faulted = sum(1 for f in flags.values() if f)
    if faulted == 0:
        return FaultClass.NONE
    if faulted == len(flags):
        return FaultClass.COORDINATED
    return FaultClass.UNCOORDINATED


@dataclass
class AgentState:
    idx: int
    neighbor_set: frozenset[int]
    epsilon: float
    x: np.ndarray = field(default_factory=lambda: np.zeros(2))
    memory: np.ndarray = field(default_factory=lambda: np.zeros(2))
    base_measurement: np.ndarray = field(default_factory=lambda: np.zeros(2))
    received: dict[int, UpdatePayload] = field(default_factory=dict)
    next_seq: int = 0
    faulted_last: bool = False


class ConsensusLayer:
    """All agents of one run; each agent is touched only by its own events."""

    def __init__(self, n_agents: int, epsilon: float,
                 neighbors: dict[int, frozenset[int]] | None = None):
        if not 0 < epsilon:
            raise ValueError(f"epsilon must be > 0, got {epsilon}")
        self.n = n_agents
        self.epsilon = epsilon
        self.agents: dict[int, AgentState] = {}
        for i in range(1, n_agents + 1):
            nbrs = (neighbors[i] if neighbors is not None
                    else frozenset(j for j in range(1, n_agents + 1) if j != i))
            if i in nbrs:
                raise ValueError(f"agent {i} lists itself as a neighbour")
            self.agents[i] = AgentState(idx=i, neighbor_set=nbrs, epsilon=epsilon)
        self.late_updates = 0
        self.current_period = -1

    def activate(self, measurements: np.ndarray) -> None:
        """Initialise every agent's state to its own local measurement."""
        for i, agent in self.agents.items():
            m = np.asarray(measurements[i - 1], dtype=float)
            agent.x = m.copy()
            agent.memory = m.copy()
            agent.base_measurement = m.copy()
        self.current_period = 0

    def generate_update(self, agent_id: int, period: int,
                        now: int = 0) -> UpdatePayload:
        """Emit the agent's current state as this period's payload."""
        agent = self.agents[agent_id]
        payload = UpdatePayload(sender=agent_id, seq=agent.next_seq,
                                x=(float(agent.x[0]), float(agent.x[1])),
                                period=period, generated_at=now)
        agent.next_seq += 1
        return payload

    def receive(self, receiver: int, payload: UpdatePayload) -> None:
        """Store a decoded neighbour payload; newer sequence numbers win."""
        agent = self.agents[receiver]
        if payload.sender not in agent.neighbor_set:
            return
        if payload.period < self.current_period:
            self.late_updates += 1
        held = agent.received.get(payload.sender)
        if held is None or payload.seq > held.seq:
            agent.received[payload.sender] = payload

    def consensus_step(self, agent_id: int,
                       measurement: np.ndarray | None = None) -> bool:
        """Deadline update for one agent; returns True when it faulted.

        On success the weighted averaging update is applied together with
        the increment of the local measurement accumulated since the last
        success (dynamic-average tracking); the result is memorised.  On
        any missing neighbour payload everything received is discarded and
        the memorised value is restored, leaving the state fully stale.
        """
        agent = self.agents[agent_id]
        if all(j in agent.received for j in agent.neighbor_set):
            delta = np.zeros(2)
            for j in sorted(agent.neighbor_set):
                xj = np.asarray(agent.received[j].x)
                delta += xj - agent.x
            agent.x = agent.x + self.epsilon * delta
            if measurement is not None:
                m = np.asarray(measurement, dtype=float)
                agent.x = agent.x + (m - agent.base_measurement)
                agent.base_measurement = m.copy()
            agent.memory = agent.x.copy()
            fault = False
        else:
            agent.x = agent.memory.copy()
            fault = True
        agent.received.clear()
        agent.faulted_last = fault
        return fault

    def step_all(self, period: int,
                 measurements: np.ndarray | None = None) -> FaultRecord:
        """Synchronous deadline for every agent, then fault classification."""
        flags = {}
        for i in sorted(self.agents):
            m = measurements[i - 1] if measurements is not None else None
            flags[i] = self.consensus_step(i, m)
        self.current_period = period + 1
        return FaultRecord(period=period, flags=flags,
                           classification=classify_faults(flags))

    def states(self) -> np.ndarray:
        """(n, 2) array of the agents' current (i_l, v_dc) estimates."""
        return np.array([self.agents[i].x for i in sorted(self.agents)])
