"""mgcosim: co-simulation of distributed DC-microgrid voltage restoration
over a contended 802.11 broadcast channel, with reactive-jamming adversaries
and the spread-delay countermeasure."""

from .consensus import ConsensusLayer, FaultClass, UpdatePayload, classify_faults
from .engine import Engine, EventKind, make_rng
from .mac import Channel, DcfStation, FrameKind, MacParams, Outcome, frame_airtime_ns
from .powergrid import (GridTopology, Plant, PlantState, PrimaryParams,
                        SecondaryParams, solve_network)
from .protocol import SchedulingPolicy, artificial_delay_ns
from .scenario import (BatchResult, RunMetrics, ScenarioConfig, compare,
                       load_config, run_batch, run_once, wilson_interval)

__version__ = "0.1.0"
