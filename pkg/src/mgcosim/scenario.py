"""Experiment orchestration: configuration, single runs, batches, comparison.

A scenario is described by a flat sectioned INI document (see presets).
``run_once`` wires one co-simulation together and returns its metrics;
``run_batch`` sweeps seeds, optionally across worker processes, and emits
``runs.csv`` / ``envelope.csv`` / ``summary.txt`` plus figures;
``compare`` pairs two batch directories seed by seed.
"""

from __future__ import annotations

import configparser
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from io import StringIO
from pathlib import Path

import numpy as np

from .attack import Interferer, InterfererConfig, Jammer, JammerConfig
from .consensus import ConsensusLayer, FaultClass
from .engine import (NS_PER_S, STREAM_AGENT_BASE, STREAM_UI_ARRIVALS,
                     STREAM_UI_STATION, Engine, EventKind, make_rng,
                     seconds_to_ns)
from .mac import Channel, DcfStation, FrameKind, MacParams, Outcome
from .powergrid import GridTopology, Plant, PrimaryParams, SecondaryParams
from .protocol import SchedulingPolicy, UpdateScheduler, artificial_delay_ns

UI_STATION_ID = 100
JAMMER_STATION_ID = 101


class ConfigError(ValueError):
    """Invalid scenario configuration; names the offending section/key."""


@dataclass
class ScenarioConfig:
    # [scenario]
    run_length_s: float = 3.0
    activation_s: float = 1.0
    plant_dt_s: float = 1e-4
    base_seed: int = 1
    replicas: int = 1
    # [grid]
    n_units: int = 6
    line_resistance_ohm: float = 0.1
    load_resistance_ohm: float = 0.75
    load_steps: tuple[tuple[float, float], ...] = ()
    # [primary] / [secondary]
    primary: PrimaryParams = field(default_factory=PrimaryParams)
    secondary: SecondaryParams = field(default_factory=SecondaryParams)
    # [consensus]
    epsilon: float = 0.025
    t_ca_s: float = 0.025
    topology: str = "full_mesh"
    # [mac]
    mac: MacParams = field(default_factory=MacParams)
    payload_bytes: int = 10
    # [protocol]
    mode: str = "baseline"
    t_e_s: float = 0.012
    # adversaries (absent means clean channel)
    interferer: InterfererConfig | None = None
    jammer: JammerConfig | None = None

    def policy(self) -> SchedulingPolicy:
        return SchedulingPolicy(mode=self.mode, sigma_ns=self.mac.slot_ns,
                                t_e_ns=seconds_to_ns(self.t_e_s),
                                t_ca_ns=seconds_to_ns(self.t_ca_s),
                                n_agents=self.n_units)

    def validate(self) -> None:
        if self.run_length_s <= 0:
            raise ConfigError("scenario.run_length_s must be > 0")
        if not 0 < self.activation_s < self.run_length_s:
            raise ConfigError(
                "scenario.activation_s must lie inside the run length")
        if self.plant_dt_s <= 0:
            raise ConfigError("scenario.plant_dt_s must be > 0")
        if self.replicas < 1:
            raise ConfigError("scenario.replicas must be >= 1")
        if self.n_units < 2:
            raise ConfigError("grid.n_units must be >= 2")
        if self.epsilon <= 0:
            raise ConfigError(
                "consensus.epsilon must be > 0: a zero weight never mixes")
        if self.t_ca_s <= 0:
            raise ConfigError("consensus.t_ca_s must be > 0")
        if seconds_to_ns(self.t_ca_s) % seconds_to_ns(self.plant_dt_s):
            raise ConfigError(
                "consensus.t_ca_s must be an integer multiple of plant_dt_s")
        if self.topology not in ("full_mesh", "ring"):
            raise ConfigError(
                f"consensus.topology must be full_mesh or ring, got {self.topology!r}")
        if self.payload_bytes <= 0:
            raise ConfigError("mac.payload_bytes must be > 0")
        for t, ohm in self.load_steps:
            if t < 0 or ohm <= 0:
                raise ConfigError(f"grid.load_steps entry ({t}:{ohm}) invalid")
        self.primary.validate()
        self.secondary.validate()
        self.mac.validate()
        self.policy().validate()
        if self.interferer is not None:
            self.interferer.validate()
        if self.jammer is not None:
            self.jammer.validate(self.n_units)

    def neighbor_map(self) -> dict[int, frozenset[int]]:
        n = self.n_units
        if self.topology == "full_mesh":
            return {i: frozenset(j for j in range(1, n + 1) if j != i)
                    for i in range(1, n + 1)}
        return {i: frozenset({(i % n) + 1, ((i - 2) % n) + 1})
                for i in range(1, n + 1)}


# ----------------------------------------------------------------------
# Configuration document handling
# ----------------------------------------------------------------------

_SCHEMA: dict[str, dict[str, str]] = {
    "scenario": {"run_length_s": "float", "activation_s": "float",
                 "plant_dt_s": "float", "base_seed": "int", "replicas": "int"},
    "grid": {"n_units": "int", "line_resistance_ohm": "float",
             "load_resistance_ohm": "float", "load_steps": "steps"},
    "primary": {"r_d_ohm": "float", "k_pv": "float", "k_iv": "float",
                "k_pc": "float", "k_ic": "float"},
    "secondary": {"v_ref": "float", "k_psc": "float", "k_isc": "float",
                  "k_psv": "float", "k_isv": "float"},
    "consensus": {"epsilon": "float", "t_ca_s": "float", "topology": "str"},
    "mac": {"slot_us": "int", "difs_us": "int", "data_rate_bps": "int",
            "phy_us": "int", "mac_header_bits": "int", "contention_window": "int",
            "propagation_us": "int", "payload_bytes": "int"},
    "protocol": {"mode": "str", "t_e_s": "float"},
    "interferer": {"enabled": "bool", "rate_per_s": "float",
                   "payload_bytes": "int"},
    "jammer": {"enabled": "bool", "attacked": "ints", "q": "float",
               "payload_bytes": "int", "sniffs": "ints"},
}


def _parse_value(section: str, key: str, raw: str, kind: str):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return tuple(int(part) for part in raw.replace(" ", "").split(",")
                         if part)
        if kind == "steps":
            steps = []
            for part in raw.replace(" ", "").split(","):
                if not part:
                    continue
                t, ohm = part.split(":")
                steps.append((float(t), float(ohm)))
            return tuple(steps)
        return raw.strip()
    except (ValueError, TypeError) as exc:
        raise ConfigError(
            f"{section}.{key}: cannot parse {raw!r} as {kind}") from exc


def load_config(source: str | Path) -> ScenarioConfig:
    """Build a validated ScenarioConfig from an INI path or document text."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    text = Path(source).read_text() if isinstance(source, Path) else source
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration document: {exc}") from exc

    values: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        values[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            values[section][key] = _parse_value(section, key, raw,
                                                _SCHEMA[section][key])

    def get(section: str, key: str, default):
        return values.get(section, {}).get(key, default)

    cfg = ScenarioConfig()
    cfg.run_length_s = get("scenario", "run_length_s", cfg.run_length_s)
    cfg.activation_s = get("scenario", "activation_s", cfg.activation_s)
    cfg.plant_dt_s = get("scenario", "plant_dt_s", cfg.plant_dt_s)
    cfg.base_seed = get("scenario", "base_seed", cfg.base_seed)
    cfg.replicas = get("scenario", "replicas", cfg.replicas)
    cfg.n_units = get("grid", "n_units", cfg.n_units)
    cfg.line_resistance_ohm = get("grid", "line_resistance_ohm",
                                  cfg.line_resistance_ohm)
    cfg.load_resistance_ohm = get("grid", "load_resistance_ohm",
                                  cfg.load_resistance_ohm)
    cfg.load_steps = get("grid", "load_steps", cfg.load_steps)
    cfg.primary = PrimaryParams(
        r_d=get("primary", "r_d_ohm", 0.2),
        k_pv=get("primary", "k_pv", 4.0), k_iv=get("primary", "k_iv", 800.0),
        k_pc=get("primary", "k_pc", 1.0), k_ic=get("primary", "k_ic", 97.0))
    cfg.secondary = SecondaryParams(
        v_ref=get("secondary", "v_ref", 48.0),
        k_psc=get("secondary", "k_psc", 0.02),
        k_isc=get("secondary", "k_isc", 1.0),
        k_psv=get("secondary", "k_psv", 0.02),
        k_isv=get("secondary", "k_isv", 2.0))
    cfg.epsilon = get("consensus", "epsilon", cfg.epsilon)
    cfg.t_ca_s = get("consensus", "t_ca_s", cfg.t_ca_s)
    cfg.topology = get("consensus", "topology", cfg.topology)
    cfg.mac = MacParams(
        slot_ns=get("mac", "slot_us", 20) * 1000,
        difs_ns=get("mac", "difs_us", 32) * 1000,
        data_rate_bps=get("mac", "data_rate_bps", 1_000_000),
        phy_ns=get("mac", "phy_us", 96) * 1000,
        mac_header_bits=get("mac", "mac_header_bits", 272),
        cw=get("mac", "contention_window", 32),
        propagation_ns=get("mac", "propagation_us", 2) * 1000)
    cfg.payload_bytes = get("mac", "payload_bytes", 10)
    cfg.mode = get("protocol", "mode", cfg.mode)
    cfg.t_e_s = get("protocol", "t_e_s", cfg.t_e_s)
    if values.get("interferer", {}).get("enabled", False):
        cfg.interferer = InterfererConfig(
            rate_per_s=get("interferer", "rate_per_s", 100.0),
            payload_bytes=get("interferer", "payload_bytes", 512))
    if values.get("jammer", {}).get("enabled", False):
        cfg.jammer = JammerConfig(
            attacked=get("jammer", "attacked", (4, 5)),
            q=get("jammer", "q", 0.8),
            payload_bytes=get("jammer", "payload_bytes", 512),
            station_id=JAMMER_STATION_ID, spoofed_sender=UI_STATION_ID,
            sniffs=get("jammer", "sniffs", None))
    try:
        cfg.validate()
    except ConfigError:
        raise
    except ValueError as exc:   # per-module validators, uniform surface
        raise ConfigError(str(exc)) from exc
    return cfg


def dump_config(cfg: ScenarioConfig) -> str:
    """Canonical INI rendering of a resolved configuration."""
    out = StringIO()

    def sec(name: str, pairs: list[tuple[str, object]]) -> None:
        out.write(f"[{name}]\n")
        for k, v in pairs:
            out.write(f"{k} = {v}\n")
        out.write("\n")

    sec("scenario", [("run_length_s", cfg.run_length_s),
                     ("activation_s", cfg.activation_s),
                     ("plant_dt_s", cfg.plant_dt_s),
                     ("base_seed", cfg.base_seed),
                     ("replicas", cfg.replicas)])
    steps = ",".join(f"{t}:{r}" for t, r in cfg.load_steps)
    sec("grid", [("n_units", cfg.n_units),
                 ("line_resistance_ohm", cfg.line_resistance_ohm),
                 ("load_resistance_ohm", cfg.load_resistance_ohm),
                 ("load_steps", steps)])
    sec("primary", [("r_d_ohm", cfg.primary.r_d), ("k_pv", cfg.primary.k_pv),
                    ("k_iv", cfg.primary.k_iv), ("k_pc", cfg.primary.k_pc),
                    ("k_ic", cfg.primary.k_ic)])
    sec("secondary", [("v_ref", cfg.secondary.v_ref),
                      ("k_psc", cfg.secondary.k_psc),
                      ("k_isc", cfg.secondary.k_isc),
                      ("k_psv", cfg.secondary.k_psv),
                      ("k_isv", cfg.secondary.k_isv)])
    sec("consensus", [("epsilon", cfg.epsilon), ("t_ca_s", cfg.t_ca_s),
                      ("topology", cfg.topology)])
    sec("mac", [("slot_us", cfg.mac.slot_ns // 1000),
                ("difs_us", cfg.mac.difs_ns // 1000),
                ("data_rate_bps", cfg.mac.data_rate_bps),
                ("phy_us", cfg.mac.phy_ns // 1000),
                ("mac_header_bits", cfg.mac.mac_header_bits),
                ("contention_window", cfg.mac.cw),
                ("propagation_us", cfg.mac.propagation_ns // 1000),
                ("payload_bytes", cfg.payload_bytes)])
    sec("protocol", [("mode", cfg.mode), ("t_e_s", cfg.t_e_s)])
    if cfg.interferer is not None:
        sec("interferer", [("enabled", "true"),
                           ("rate_per_s", cfg.interferer.rate_per_s),
                           ("payload_bytes", cfg.interferer.payload_bytes)])
    if cfg.jammer is not None:
        pairs = [("enabled", "true"),
                 ("attacked", ",".join(map(str, cfg.jammer.attacked))),
                 ("q", cfg.jammer.q),
                 ("payload_bytes", cfg.jammer.payload_bytes)]
        if cfg.jammer.sniffs is not None:
            pairs.append(("sniffs", ",".join(map(str, cfg.jammer.sniffs))))
        sec("jammer", pairs)
    return out.getvalue()


# ----------------------------------------------------------------------
# Single-run execution
# ----------------------------------------------------------------------

@dataclass
class RunMetrics:
    seed: int
    steady_voltage: float
    steady_voltage_per_unit: np.ndarray
    error_pct: float
    exceed_5: bool
    exceed_10: bool
    converged: bool
    convergence_time_s: float
    validity_error_v: float
    agreement_current_a: float
    agreement_voltage_v: float
    sharing_spread_pct: float
    periods: int
    faults_none: int
    faults_coordinated: int
    faults_uncoordinated: int
    late_updates: int
    submit_drops: int
    agent_frames: int
    ui_frames: int
    jam_frames: int
    decoded: int
    corrupted: int
    tca_hat_final_ms: float
    trajectory_t: np.ndarray
    trajectory_v: np.ndarray           # (samples, units)
    estimate_log: list[tuple[int, float]]
    wall_s: float

    CSV_FIELDS = ("seed", "steady_voltage", "error_pct", "exceed_5",
                  "exceed_10", "converged", "convergence_time_s",
                  "validity_error_v", "agreement_current_a",
                  "agreement_voltage_v", "sharing_spread_pct", "periods",
                  "faults_none", "faults_coordinated", "faults_uncoordinated",
                  "late_updates", "submit_drops", "agent_frames", "ui_frames",
                  "jam_frames", "decoded", "corrupted", "tca_hat_final_ms")

    def csv_row(self) -> str:
        vals = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            if isinstance(v, bool):
                vals.append(str(int(v)))
            elif isinstance(v, float):
                vals.append(repr(v))
            else:
                vals.append(str(v))
        return ",".join(vals)


@dataclass
class RunTraces:
    events: list[str]
    frames: list[str]
    plant: list[str]
    consensus: list[str]
    adversary: list[str]


def run_once(cfg: ScenarioConfig, seed: int,
             collect_traces: bool = False) -> tuple[RunMetrics, RunTraces | None]:
    """Execute one co-simulation and reduce it to metrics."""
    cfg.validate()
    t0 = time.perf_counter()
    engine = Engine(trace=collect_traces)

    topology = GridTopology.ring_with_center_load(
        cfg.n_units, cfg.line_resistance_ohm, cfg.load_resistance_ohm)
    plant = Plant(topology, cfg.primary, cfg.secondary, cfg.plant_dt_s)
    consensus = ConsensusLayer(cfg.n_units, cfg.epsilon, cfg.neighbor_map())

    channel = Channel(engine, cfg.mac)
    if collect_traces:
        channel.frame_trace = []
    attacked = frozenset(cfg.jammer.attacked) if cfg.jammer else frozenset()
    agent_ids = list(range(1, cfg.n_units + 1))
    for i in agent_ids:
        hears = set(agent_ids) - {i}
        if cfg.interferer is not None:
            hears.add(UI_STATION_ID)
        if cfg.jammer is not None and i in attacked:
            hears.add(JAMMER_STATION_ID)
        channel.add_station(DcfStation(
            id=i, hears=frozenset(hears),
            rng=make_rng(seed, STREAM_AGENT_BASE + i - 1)))

    interferer = None
    if cfg.interferer is not None:
        channel.add_station(DcfStation(
            id=UI_STATION_ID, hears=frozenset(agent_ids),
            rng=make_rng(seed, STREAM_UI_STATION), kind=FrameKind.INTERFERER))
        interferer = Interferer(engine, channel, UI_STATION_ID,
                                cfg.interferer, make_rng(seed, STREAM_UI_ARRIVALS))
        interferer.start(0)

    jammer = None
    if cfg.jammer is not None:
        jammer = Jammer(engine, channel, cfg.jammer, cfg.mac.propagation_ns)
        if collect_traces:
            jammer.trace = []

    channel.delivery_hook = lambda rid, payload, t: consensus.receive(rid, payload)

    policy = cfg.policy()
    scheduler = UpdateScheduler(engine, channel, plant, consensus, policy,
                                payload_bytes=cfg.payload_bytes)

    # Cached estimate arrays so the plant step never rebuilds them; they
    # change only at activation and at deadlines (which also perform the
    # next period's measurement injection).
    est = {"i": np.zeros(cfg.n_units), "v": np.zeros(cfg.n_units)}

    def refresh_estimates() -> None:
        states = consensus.states()
        est["i"] = states[:, 0].copy()
        est["v"] = states[:, 1].copy()

    scheduler.on_states_changed = refresh_estimates

    consensus_trace: list[str] = []
    if collect_traces:
        def on_deadline(record) -> None:
            for i in sorted(consensus.agents):
                a = consensus.agents[i]
                consensus_trace.append(
                    f"{record.period},{i},{a.x[0]!r},{a.x[1]!r},"
                    f"{int(record.flags[i])},{record.classification.value}")

        scheduler.deadline_hooks.append(on_deadline)

    run_ns = seconds_to_ns(cfg.run_length_s)
    activation_ns = seconds_to_ns(cfg.activation_s)
    dt_ns = seconds_to_ns(cfg.plant_dt_s)
    sample_every = seconds_to_ns(cfg.t_ca_s) // dt_ns

    trajectory_t: list[float] = [0.0]
    trajectory_v: list[np.ndarray] = [plant.state.v_dc.copy()]
    steady_from_ns = int(run_ns * 0.9)
    steady_v: list[np.ndarray] = []
    steady_i: list[np.ndarray] = []
    plant_trace: list[str] = []
    step_index = 0

    def plant_step() -> None:
        nonlocal step_index
        step_index += 1
        plant.step(est["i"], est["v"])
        now = engine.now
        if step_index % sample_every == 0:
            trajectory_t.append(now / NS_PER_S)
            trajectory_v.append(plant.state.v_dc.copy())
        if now >= steady_from_ns:
            steady_v.append(plant.state.v_dc.copy())
            steady_i.append(plant.state.i_l.copy())
        if collect_traces:
            s = plant.state
            t_s = now / NS_PER_S
            for u in range(cfg.n_units):
                plant_trace.append(
                    f"{t_s!r},{u + 1},{s.i_l[u]!r},{s.v_dc[u]!r},"
                    f"{s.dv_i[u]!r},{s.dv_dc[u]!r}")
        nxt = now + dt_ns
        if nxt <= run_ns:
            engine.schedule(nxt, EventKind.PLANT_STEP, plant_step, actor="plant")

    engine.schedule(dt_ns, EventKind.PLANT_STEP, plant_step, actor="plant")

    for t_step, ohm in cfg.load_steps:
        engine.schedule(seconds_to_ns(t_step), EventKind.PLANT_STEP,
                        lambda g=1.0 / ohm: plant.set_load_conductance(g),
                        actor="plant", detail="load_step")

    scheduler.start(activation_ns)
    engine.run_until(run_ns)

    metrics = _reduce_metrics(cfg, seed, consensus, scheduler, channel, jammer,
                              np.array(trajectory_t), np.vstack(trajectory_v),
                              steady_v, steady_i,
                              time.perf_counter() - t0)
    traces = None
    if collect_traces:
        traces = RunTraces(
            events=engine.trace_rows or [],
            frames=channel.frame_trace or [],
            plant=plant_trace,
            consensus=consensus_trace,
            adversary=jammer.trace if jammer is not None else [])
    return metrics, traces


def _reduce_metrics(cfg, seed, consensus, scheduler, channel, jammer,
                    traj_t, traj_v, steady_v, steady_i, wall_s) -> RunMetrics:
    v_ref = cfg.secondary.v_ref
    per_unit_v = np.vstack(steady_v).mean(axis=0)
    per_unit_i = np.vstack(steady_i).mean(axis=0)
    steady_voltage = float(per_unit_v.mean())
    error_pct = abs(steady_voltage - v_ref) / v_ref * 100.0

    mean_i = per_unit_i.mean()
    sharing_spread = (float(np.abs(per_unit_i - mean_i).max() / abs(mean_i)) * 100.0
                      if mean_i else float("inf"))

    # P1: first sample time after activation from which every unit stays
    # inside +/-0.5% of its own steady value.
    band = 0.005 * np.abs(per_unit_v)
    inside = np.all(np.abs(traj_v - per_unit_v) <= band, axis=1)
    act_s = cfg.activation_s
    converged = False
    convergence_time = float("nan")
    if inside[-1]:
        idx = len(inside) - 1
        while idx > 0 and inside[idx - 1] and traj_t[idx - 1] >= act_s:
            idx -= 1
        converged = True
        convergence_time = float(traj_t[idx] - act_s)

    states = consensus.states()
    validity = float(np.abs(states[:, 1] - v_ref).max())
    agree_i = float(states[:, 0].max() - states[:, 0].min())
    agree_v = float(states[:, 1].max() - states[:, 1].min())

    counts = {FaultClass.NONE: 0, FaultClass.COORDINATED: 0,
              FaultClass.UNCOORDINATED: 0}
    for record in scheduler.fault_records:
        counts[record.classification] += 1

    tca_ms = float("nan")
    jam_frames = 0
    estimate_log: list[tuple[int, float]] = []
    if jammer is not None:
        jam_frames = jammer.state.jam_frames
        estimate_log = jammer.state.estimate_log
        if jammer.state.tca_hat_ns is not None:
            tca_ms = jammer.state.tca_hat_ns / 1e6

    return RunMetrics(
        seed=seed,
        steady_voltage=steady_voltage,
        steady_voltage_per_unit=per_unit_v,
        error_pct=float(error_pct),
        exceed_5=bool(error_pct > 5.0),
        exceed_10=bool(error_pct > 10.0),
        converged=converged,
        convergence_time_s=convergence_time,
        validity_error_v=validity,
        agreement_current_a=agree_i,
        agreement_voltage_v=agree_v,
        sharing_spread_pct=sharing_spread,
        periods=len(scheduler.fault_records),
        faults_none=counts[FaultClass.NONE],
        faults_coordinated=counts[FaultClass.COORDINATED],
        faults_uncoordinated=counts[FaultClass.UNCOORDINATED],
        late_updates=consensus.late_updates,
        submit_drops=channel.submit_drops,
        agent_frames=channel.frames_sent[FrameKind.AGENT],
        ui_frames=channel.frames_sent[FrameKind.INTERFERER],
        jam_frames=jam_frames,
        decoded=channel.outcome_counts[Outcome.DECODED],
        corrupted=channel.outcome_counts[Outcome.CORRUPTED],
        tca_hat_final_ms=tca_ms,
        trajectory_t=traj_t,
        trajectory_v=traj_v,
        estimate_log=estimate_log,
        wall_s=wall_s)


# ----------------------------------------------------------------------
# Batch execution
# ----------------------------------------------------------------------

@dataclass
class BatchResult:
    config: ScenarioConfig
    seeds: list[int]
    runs: list[RunMetrics]
    aborts: list[tuple[int, str]]
    out_dir: Path | None = None

    def exceedance(self, band: int) -> float:
        flag = "exceed_5" if band == 5 else "exceed_10"
        if not self.runs:
            return float("nan")
        return sum(getattr(r, flag) for r in self.runs) / len(self.runs)


def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial proportion."""
    if n == 0:
        return (float("nan"), float("nan"))
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, centre - half), min(1.0, centre + half))


def _batch_worker(args: tuple) -> tuple[int, RunMetrics | None, str | None]:
    cfg, seed, collect_traces, out_dir = args
    try:
        metrics, traces = run_once(cfg, seed, collect_traces=collect_traces)
        if collect_traces and out_dir is not None:
            _write_traces(Path(out_dir), seed, traces)
        return seed, metrics, None
    except Exception as exc:   # recorded and excluded, never silently lost
        return seed, None, f"{type(exc).__name__}: {exc}"


def _write_traces(out_dir: Path, seed: int, traces: RunTraces) -> None:
    run_dir = out_dir / "traces" / f"run_{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "events.tsv").write_text(
        "time_ns\tkind\tactor\tdetail\n" + "\n".join(traces.events) + "\n")
    (run_dir / "frames.csv").write_text(
        "start_ns,sender,kind,duration_ns,outcome_per_receiver\n"
        + "\n".join(traces.frames) + "\n")
    (run_dir / "plant.csv").write_text(
        "time_s,unit,i_l,v_dc,dv_i,dv_dc\n" + "\n".join(traces.plant) + "\n")
    (run_dir / "consensus.csv").write_text(
        "k,agent,il_hat,vdc_hat,fault,classification\n"
        + "\n".join(traces.consensus) + "\n")
    (run_dir / "adversary.csv").write_text(
        "time_ns,actor,action,tca_hat_ns\n" + "\n".join(traces.adversary) + "\n")


def run_batch(cfg: ScenarioConfig, out_dir: str | Path | None = None,
              seed: int | None = None, replicas: int | None = None,
              workers: int = 1, traces: bool = False, figures: bool = True,
              progress: bool = False) -> BatchResult:
    """Run the scenario over consecutive seeds and write the report files."""
    cfg = replace(cfg)
    if seed is not None:
        cfg.base_seed = seed
    if replicas is not None:
        cfg.replicas = replicas
    cfg.validate()
    seeds = list(range(cfg.base_seed, cfg.base_seed + cfg.replicas))
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    jobs = [(cfg, s, traces, str(out_path) if out_path else None) for s in seeds]
    results: dict[int, RunMetrics] = {}
    aborts: list[tuple[int, str]] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for s, metrics, err in pool.map(_batch_worker, jobs, chunksize=4):
                if err is None:
                    results[s] = metrics
                else:
                    aborts.append((s, err))
                if progress:
                    done = len(results) + len(aborts)
                    if done % 25 == 0 or done == len(jobs):
                        print(f"  {done}/{len(jobs)} runs complete", flush=True)
    else:
        for job in jobs:
            s, metrics, err = _batch_worker(job)
            if err is None:
                results[s] = metrics
            else:
                aborts.append((s, err))
            if progress:
                done = len(results) + len(aborts)
                if done % 25 == 0 or done == len(jobs):
                    print(f"  {done}/{len(jobs)} runs complete", flush=True)

    runs = [results[s] for s in seeds if s in results]
    batch = BatchResult(config=cfg, seeds=seeds, runs=runs,
                        aborts=sorted(aborts), out_dir=out_path)
    if out_path is not None:
        write_batch_outputs(batch, figures=figures)
    return batch


def write_batch_outputs(batch: BatchResult, figures: bool = True) -> None:
    out = batch.out_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(batch.config))
    header = ",".join(RunMetrics.CSV_FIELDS)
    rows = [r.csv_row() for r in batch.runs]
    (out / "runs.csv").write_text(header + "\n" + "\n".join(rows) + "\n")
    _write_envelope(batch, out / "envelope.csv")
    (out / "summary.txt").write_text(render_summary(batch))
    if figures:
        from . import report
        report.write_figures(batch, out)


def _envelope(batch: BatchResult) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    t = batch.runs[0].trajectory_t
    stacked = np.stack([r.trajectory_v.mean(axis=1) for r in batch.runs])
    return t, stacked.mean(axis=0), stacked.min(axis=0), stacked.max(axis=0)


def _write_envelope(batch: BatchResult, path: Path) -> None:
    if not batch.runs:
        path.write_text("time_s,v_mean,v_min,v_max\n")
        return
    t, mean, low, high = _envelope(batch)
    lines = ["time_s,v_mean,v_min,v_max"]
    for k in range(len(t)):
        lines.append(f"{t[k]!r},{mean[k]!r},{low[k]!r},{high[k]!r}")
    path.write_text("\n".join(lines) + "\n")


def render_summary(batch: BatchResult) -> str:
    cfg = batch.config
    runs = batch.runs
    n = len(runs)
    lines = ["scenario summary", "================"]
    adversaries = []
    if cfg.interferer is not None:
        adversaries.append("interferer")
    if cfg.jammer is not None:
        adversaries.append(f"jammer(attacked={','.join(map(str, cfg.jammer.attacked))})")
    lines.append(f"channel: {' + '.join(adversaries) if adversaries else 'clean'}")
    lines.append(f"scheduling: {cfg.mode}"
                 + (f" (t_e = {cfg.t_e_s} s)" if cfg.mode == "spread" else ""))
    lines.append(f"replicas: {n} (seeds {cfg.base_seed}.."
                 f"{cfg.base_seed + cfg.replicas - 1})")
    lines.append(f"aborted: {len(batch.aborts)}")
    for s, err in batch.aborts:
        lines.append(f"  seed {s}: {err}")
    if not runs:
        return "\n".join(lines) + "\n"
    for band in (5, 10):
        k = sum(getattr(r, f"exceed_{band}") for r in runs)
        lo, hi = wilson_interval(k, n)
        lines.append(f"P(|error| > {band}%) = {k / n:.4f}  "
                     f"[wilson95: {lo:.4f}, {hi:.4f}]  ({k}/{n})")
    sv = np.array([r.steady_voltage for r in runs])
    lines.append(f"steady voltage V: mean {sv.mean():.4f}, "
                 f"min {sv.min():.4f}, max {sv.max():.4f}")
    err = np.array([r.error_pct for r in runs])
    lines.append(f"|error| %: mean {err.mean():.4f}, max {err.max():.4f}")
    conv = [r.convergence_time_s for r in runs if r.converged]
    lines.append(f"converged (P1): {sum(r.converged for r in runs)}/{n}"
                 + (f", mean convergence {np.mean(conv):.4f} s" if conv else ""))
    lines.append(f"validity error (P2) V: max "
                 f"{max(r.validity_error_v for r in runs):.6f}")
    lines.append(f"agreement spread (P3) V: max "
                 f"{max(r.agreement_voltage_v for r in runs):.6f}")
    lines.append(f"faults: none {sum(r.faults_none for r in runs)}, "
                 f"coordinated {sum(r.faults_coordinated for r in runs)}, "
                 f"uncoordinated {sum(r.faults_uncoordinated for r in runs)}")
    total_updates = sum(r.agent_frames for r in runs)
    late = sum(r.late_updates for r in runs)
    lines.append(f"late updates: {late} of {total_updates} transmitted "
                 f"({late / total_updates:.6f})" if total_updates
                 else "late updates: 0")
    lines.append(f"submit drops (stale update in flight): "
                 f"{sum(r.submit_drops for r in runs)}")
    lines.append("metadata: steady window = final 10% of run; "
                 "convergence band = 0.5%; exceedance bands = 5%/10% of "
                 f"{cfg.secondary.v_ref} V")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# Batch comparison
# ----------------------------------------------------------------------

def load_runs_csv(path: Path) -> list[dict[str, str]]:
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def compare(dir_a: str | Path, dir_b: str | Path) -> str:
    """Paired-seed comparison of two batch directories."""
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    rows_a = load_runs_csv(dir_a / "runs.csv")
    rows_b = load_runs_csv(dir_b / "runs.csv")
    if len(rows_a) != len(rows_b):
        raise ConfigError(
            f"replica counts differ: {len(rows_a)} vs {len(rows_b)}")
    seeds_a = [r["seed"] for r in rows_a]
    seeds_b = [r["seed"] for r in rows_b]
    if seeds_a != seeds_b:
        raise ConfigError("seed lists differ: batches are not paired")
    _check_shared_config(dir_a, dir_b)

    n = len(rows_a)
    lines = [f"paired comparison over {n} seeds",
             f"A: {dir_a}", f"B: {dir_b}", ""]
    for band in (5, 10):
        key = f"exceed_{band}"
        ka = sum(int(r[key]) for r in rows_a)
        kb = sum(int(r[key]) for r in rows_b)
        lo_a, hi_a = wilson_interval(ka, n)
        lo_b, hi_b = wilson_interval(kb, n)
        verdict = "A > B" if ka > kb else ("A < B" if ka < kb else "A = B")
        disjoint = hi_b < lo_a or hi_a < lo_b
        lines.append(
            f"P(|error| > {band}%): A {ka / n:.4f} [{lo_a:.4f},{hi_a:.4f}]  "
            f"B {kb / n:.4f} [{lo_b:.4f},{hi_b:.4f}]  {verdict}"
            f"{', wilson intervals disjoint' if disjoint else ''}")
        flips = sum(1 for ra, rb in zip(rows_a, rows_b)
                    if ra[key] != rb[key])
        lines.append(f"  discordant pairs: {flips}")
    conv_a = [float(r["convergence_time_s"]) for r in rows_a
              if r["converged"] == "1"]
    conv_b = [float(r["convergence_time_s"]) for r in rows_b
              if r["converged"] == "1"]
    lines.append(f"converged: A {len(conv_a)}/{n}, B {len(conv_b)}/{n}")
    if conv_a and conv_b:
        lines.append(f"mean convergence time: A {np.mean(conv_a):.4f} s, "
                     f"B {np.mean(conv_b):.4f} s")
    return "\n".join(lines) + "\n"


_SHARED_SECTIONS = ("[grid]", "[primary]", "[secondary]", "[consensus]")


def _check_shared_config(dir_a: Path, dir_b: Path) -> None:
    def shared(path: Path) -> str:
        text = (path / "config.ini").read_text()
        keep, active = [], False
        for line in text.splitlines():
            if line.startswith("["):
                active = line.strip() in _SHARED_SECTIONS
            if active:
                keep.append(line)
        return "\n".join(keep)

    if shared(dir_a) != shared(dir_b):
        raise ConfigError(
            "batches do not share electrical/control configuration")
