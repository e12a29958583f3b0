"""Quasi-static electrical model of the islanded DC microgrid.

Each generating unit is an ideal voltage source behind a virtual droop
resistance; buses are joined by resistive lines with a resistive load at
the centre node.  The switching converters and their inner PI loops are
treated as ideally fast: their gains are carried in the configuration for
completeness but the network is solved algebraically at every plant step.
The secondary compensators (one current PI, one voltage PI per unit) are
integrated forward-Euler on a fixed step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KIRCHHOFF_TOL_A = 1e-9


class GridConfigError(ValueError):
    """Invalid electrical configuration (disconnected graph, bad values)."""


@dataclass
class PrimaryParams:
    """Droop layer: virtual resistance plus inner-loop gains (not simulated)."""

    r_d: float = 0.2         # ohm
    k_pv: float = 4.0
    k_iv: float = 800.0
    k_pc: float = 1.0
    k_ic: float = 97.0

    def validate(self) -> None:
        if not self.r_d > 0:
            raise GridConfigError(f"primary.r_d must be > 0, got {self.r_d}")


@dataclass
class SecondaryParams:
    """Voltage reference and the two secondary PI compensators per unit."""

    v_ref: float = 48.0      # volt
    k_psc: float = 0.02      # current loop, proportional
    k_isc: float = 1.0       # current loop, integral
    k_psv: float = 0.02      # voltage loop, proportional
    k_isv: float = 2.0       # voltage loop, integral

    def validate(self) -> None:
        if not self.v_ref > 0:
            raise GridConfigError(f"secondary.v_ref must be > 0, got {self.v_ref}")
        if self.k_isc < 0 or self.k_isv < 0:
            raise GridConfigError("secondary integral gains must be >= 0")


@dataclass
class GridTopology:
    """Resistive network: n DG buses, one load bus, symmetric conductances.

    ``line_conductance`` is an (n+1) x (n+1) symmetric matrix in siemens
    over the nodes [bus_1 .. bus_n, load]; ``load_conductance`` is the
    shunt at the load node and may change at scheduled times.
    """

    n_units: int
    line_conductance: np.ndarray
    load_conductance: float

    @staticmethod
    def ring_with_center_load(n_units: int, line_resistance: float,
                              load_resistance: float) -> "GridTopology":
        """Symmetric default layout: a ring of DG buses, each with a spoke
        of the same resistance to the central load bus."""
        if n_units < 2:
            raise GridConfigError(f"n_units must be >= 2, got {n_units}")
        if line_resistance <= 0 or load_resistance <= 0:
            raise GridConfigError("line and load resistances must be > 0")
        g = 1.0 / line_resistance
        m = np.zeros((n_units + 1, n_units + 1))
        load = n_units
        for i in range(n_units):
            j = (i + 1) % n_units
            m[i, j] += g
            m[j, i] += g
            m[i, load] += g
            m[load, i] += g
        return GridTopology(n_units, m, 1.0 / load_resistance)

    def validate(self) -> None:
        n = self.n_units
        m = self.line_conductance
        if m.shape != (n + 1, n + 1):
            raise GridConfigError(
                f"line_conductance must be {(n + 1, n + 1)}, got {m.shape}")
        if not np.allclose(m, m.T):
            raise GridConfigError("line_conductance must be symmetric")
        if np.any(m < 0):
            raise GridConfigError("line conductances must be non-negative")
        if self.load_conductance <= 0:
            raise GridConfigError("load_conductance must be > 0")
        # Connectivity of the electrical graph (BFS over positive conductances).
        seen = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in range(n + 1):
                if j not in seen and m[i, j] > 0:
                    seen.add(j)
                    frontier.append(j)
        if len(seen) != n + 1:
            raise GridConfigError("electrical graph is disconnected")


def solve_network(topology: GridTopology, primary: PrimaryParams,
                  references: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the resistive nodal equations for the given source references.

    Every DG is an ideal source ``references[i]`` behind ``r_d``.  Returns
    ``(i_l, v_dc)``: current out of each DG and the voltage at its bus.
    """
    n = topology.n_units
    a, rhs_scale = _nodal_system(topology, primary)
    b = np.zeros(n + 1)
    b[:n] = references * rhs_scale
    try:
        v = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise GridConfigError("singular conductance system") from exc
    _assert_kirchhoff(a, v, b)
    i_l = (references - v[:n]) / primary.r_d
    return i_l, v[:n].copy()


def _nodal_system(topology: GridTopology,
                  primary: PrimaryParams) -> tuple[np.ndarray, float]:
    n = topology.n_units
    m = topology.line_conductance
    a = -m.copy()
    np.fill_diagonal(a, m.sum(axis=1))
    g_d = 1.0 / primary.r_d
    for i in range(n):
        a[i, i] += g_d
    a[n, n] += topology.load_conductance
    return a, g_d


def _assert_kirchhoff(a: np.ndarray, v: np.ndarray, b: np.ndarray) -> None:
    residual = np.abs(a @ v - b).max()
    if residual > KIRCHHOFF_TOL_A:
        raise FloatingPointError(
            f"Kirchhoff residual {residual:.3e} A exceeds {KIRCHHOFF_TOL_A} A")


@dataclass
class PlantState:
    """Per-unit electrical state plus the secondary integrator states."""

    i_l: np.ndarray
    v_dc: np.ndarray
    int_i: np.ndarray
    int_v: np.ndarray
    dv_i: np.ndarray
    dv_dc: np.ndarray
    secondary_enabled: bool = False


class Plant:
    """Steps the grid on a fixed time grid, one solve per step.

    The consensus estimates enter through ``step(estimates)``; between
    steps the state is frozen.  With the secondary disabled the
    compensation terms are pinned to zero.
    """

    def __init__(self, topology: GridTopology, primary: PrimaryParams,
                 secondary: SecondaryParams, dt: float):
        topology.validate()
        primary.validate()
        secondary.validate()
        if dt <= 0:
            raise GridConfigError(f"plant dt must be > 0, got {dt}")
        self.topology = topology
        self.primary = primary
        self.secondary = secondary
        self.dt = dt
        n = topology.n_units
        self.state = PlantState(
            i_l=np.zeros(n), v_dc=np.zeros(n),
            int_i=np.zeros(n), int_v=np.zeros(n),
            dv_i=np.zeros(n), dv_dc=np.zeros(n))
        self._refresh_solver()
        # Primary-only operating point as the initial condition.
        refs = np.full(n, secondary.v_ref)
        self.state.i_l, self.state.v_dc = self._solve(refs)

    def _refresh_solver(self) -> None:
        a, self._rhs_scale = _nodal_system(self.topology, self.primary)
        self._a = a
        self._a_inv = np.linalg.inv(a)
        self._n = self.topology.n_units

    def set_load_conductance(self, g_load: float) -> None:
        if g_load <= 0:
            raise GridConfigError(f"load conductance must be > 0, got {g_load}")
        self.topology.load_conductance = g_load
        self._refresh_solver()

    def _solve(self, references: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = np.zeros(self._n + 1)
        b[:self._n] = references * self._rhs_scale
        v = self._a_inv @ b
        _assert_kirchhoff(self._a, v, b)
        return (references - v[:self._n]) / self.primary.r_d, v[:self._n]

    def compensation_step(self, unit: int, est_i_l: float, est_v_dc: float,
                          dt: float) -> tuple[float, float]:
        """Discrete PI evaluation of the two compensation terms for one unit.

        Current loop integrates (est_i_l - i_l); voltage loop integrates
        (v_ref - est_v_dc).  Integrator states persist in the plant state.
        """
        if dt <= 0:
            raise GridConfigError(f"dt must be > 0, got {dt}")
        if not np.isfinite(est_i_l) or not np.isfinite(est_v_dc):
            raise FloatingPointError("non-finite consensus estimate")
        s = self.state
        sec = self.secondary
        err_i = est_i_l - s.i_l[unit]
        err_v = sec.v_ref - est_v_dc
        s.int_i[unit] += sec.k_isc * err_i * dt
        s.int_v[unit] += sec.k_isv * err_v * dt
        dv_i = s.int_i[unit] + sec.k_psc * err_i
        dv_dc = s.int_v[unit] + sec.k_psv * err_v
        s.dv_i[unit] = dv_i
        s.dv_dc[unit] = dv_dc
        return dv_i, dv_dc

    def step(self, est_i_l: np.ndarray, est_v_dc: np.ndarray) -> None:
        """One plant step: compensators (vectorised) then the network solve."""
        s = self.state
        sec = self.secondary
        if s.secondary_enabled:
            if not (np.isfinite(est_i_l).all() and np.isfinite(est_v_dc).all()):
                raise FloatingPointError("non-finite consensus estimates")
            err_i = est_i_l - s.i_l
            err_v = sec.v_ref - est_v_dc
            s.int_i += sec.k_isc * err_i * self.dt
            s.int_v += sec.k_isv * err_v * self.dt
            s.dv_i = s.int_i + sec.k_psc * err_i
            s.dv_dc = s.int_v + sec.k_psv * err_v
            refs = sec.v_ref + s.dv_dc + s.dv_i
        else:
            refs = np.full(self._n, sec.v_ref)
        s.i_l, s.v_dc = self._solve(refs)
        if not (np.isfinite(s.i_l).all() and np.isfinite(s.v_dc).all()):
            raise FloatingPointError("plant state diverged to non-finite values")

    def measurements(self) -> np.ndarray:
        """(n, 2) array of per-unit (i_l, v_dc) as sampled by the agents."""
        return np.column_stack((self.state.i_l, self.state.v_dc))
