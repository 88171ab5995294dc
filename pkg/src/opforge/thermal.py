"""Explicit finite-volume heat conduction on a 2-D track slab.

The slab spans the scan direction (columns) and depth (rows). The beam moves
along the top surface; the bottom row exchanges heat with a substrate held at
ambient temperature, the top loses heat by convection and the lateral faces
are adiabatic. A cell counts toward the bead volume once it has reached the
melting temperature, and stays counted.

Internal time unit is the millisecond; conductivities given per second are
converted on entry.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .heat_source import ProcessParams, ScanPath, hybrid_source

MS_PER_S = 1e3


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaterialProps:
    rho: float = 7.95e-6      # kg/mm^3
    c: float = 500.0          # J/(kg K)
    k: float = 0.015          # W/(mm K)
    h_conv: float = 1e-5      # W/(mm^2 K)
    T_ambient: float = 293.0  # K
    T_melt: float = 1700.0    # K

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"material property {name} must be positive, got {value}")
        if self.T_melt <= self.T_ambient:
            raise ValueError("T_melt must exceed T_ambient")


@dataclass(frozen=True)
class GridSpec:
    nx: int = 96
    nz: int = 24
    dx: float = 0.05
    dz: float = 0.05
    scan_length: float = 2.0
    n_output_steps: int = 200
    thickness: float = 0.05   # out-of-plane extent of every cell, mm
    max_substeps: int = 100_000

    def __post_init__(self):
        if self.nx < 3 or self.nz < 3:
            raise ValueError("grid needs at least 3 cells per direction")
        if min(self.dx, self.dz, self.scan_length, self.thickness) <= 0:
            raise ValueError("grid sizes must be positive")
        if self.nx * self.dx < self.scan_length:
            raise ValueError("scan track does not fit on the grid")
        if self.n_output_steps < 1:
            raise ValueError("n_output_steps must be >= 1")

    @property
    def cell_volume(self):
        return self.dx * self.dz * self.thickness

    def scan_origin(self):
        """Beam start position; the track is centred along the slab."""
        return 0.5 * (self.nx * self.dx - self.scan_length)


@dataclass
class SimulationRecord:
    params: ProcessParams
    time_grid: np.ndarray
    v_bead: np.ndarray
    t_mp: np.ndarray
    melted: bool

    @property
    def v_bead_max(self):
        return float(np.max(self.v_bead))

    @property
    def t_mp_max(self):
        return float(np.max(self.t_mp))


@dataclass
class Diagnostics:
    """Per-output-step energy bookkeeping (J) and optional field history."""

    injected: np.ndarray
    convective_loss: np.ndarray
    substrate_loss: np.ndarray
    stored: np.ndarray            # sum rho c V (T - T_amb) at the end of each step
    dt: float
    substeps: int
    history: list = field(default_factory=list)


def stability_bound(mat, grid):
    """Explicit diffusion limit ``0.25 min(dx,dz)^2 rho c / k`` in ms."""
    return 0.25 * min(grid.dx, grid.dz) ** 2 * mat.rho * mat.c / mat.k * MS_PER_S


def stability_substeps(mat, grid, speed, safety=0.95):
    """Internal step (ms) and number of sub-steps per output step.

    The sub-step count is the smallest keeping the internal step below
    ``safety`` times :func:`stability_bound`.
    """
    out_dt = grid.scan_length / speed / grid.n_output_steps
    count = max(1, math.ceil(out_dt / (safety * stability_bound(mat, grid))))
    if count > grid.max_substeps:
        raise SimulationError(
            f"{count} sub-steps per output step exceeds the cap of {grid.max_substeps}; "
            "grid too fine or speed too low")
    return out_dt / count, count


def _cell_centres(grid):
    """3-D positions of the two heated surface rows (lateral, scan, vertical)."""
    xs = (np.arange(grid.nx) + 0.5) * grid.dx
    zs = -(np.arange(2) + 0.5) * grid.dz
    pts = np.zeros((2, grid.nx, 3))
    pts[..., 1] = xs[None, :]
    pts[..., 2] = zs[:, None]
    return pts


def surface_source(pp, grid, t0, dt, path=None):
    """Hybrid source on the top two cell rows for the step ``[t0, t0+dt]``."""
    path = path or ScanPath.along_y(pp.v, (0.0, grid.scan_origin(), 0.0))
    return hybrid_source(_cell_centres(grid), t0, dt, pp, path)


def run_simulation(pp, mat=None, grid=None, diagnostics=False, record_history=False,
                   source=hybrid_source):
    """Advance the slab over one full scan and return the two QoI series.

    ``t_mp[i]`` is the hottest grid temperature reached during output step
    ``i``; ``v_bead[i]`` is the volume of cells that have reached ``T_melt``
    at any sub-step up to the end of step ``i``. With ``diagnostics`` the
    energy ledger (and optionally every sub-step field) is returned too.
    ``source(points, t0, dt, pp, path)`` gives the power density in W/mm^3.
    """
    mat = mat or MaterialProps()
    grid = grid or GridSpec()
    dt, substeps = stability_substeps(mat, grid, pp.v)
    n_out = grid.n_output_steps
    path = ScanPath.along_y(pp.v, (0.0, grid.scan_origin(), 0.0))
    centres = _cell_centres(grid)

    vol = grid.cell_volume
    heat_cap = mat.rho * mat.c * vol                       # J/K per cell
    k_ms = mat.k / MS_PER_S                                # J/(ms mm K)
    gx = k_ms * grid.dz * grid.thickness / grid.dx         # J/(ms K)
    gz = k_ms * grid.dx * grid.thickness / grid.dz
    g_top = mat.h_conv / MS_PER_S * grid.dx * grid.thickness
    t_amb = mat.T_ambient

    T = np.full((grid.nz, grid.nx), t_amb)
    ever = np.zeros(T.shape, dtype=bool)
    power = np.empty_like(T)
    v_bead = np.empty(n_out)
    t_mp = np.empty(n_out)
    injected = np.zeros(n_out)
    conv = np.zeros(n_out)
    sub = np.zeros(n_out)
    stored = np.empty(n_out)
    history = [T.copy()] if record_history else []
    step = 0

    for i in range(n_out):
        hottest = -np.inf
        for _ in range(substeps):
            t0 = step * dt
            q = source(centres, t0, dt, pp, path) / MS_PER_S * vol   # J/ms per cell
            # conductive exchange, conservative form
            power.fill(0.0)
            fx = gx * (T[:, 1:] - T[:, :-1])
            power[:, :-1] += fx
            power[:, 1:] -= fx
            fz = gz * (T[1:, :] - T[:-1, :])
            power[:-1, :] += fz
            power[1:, :] -= fz
            bottom = gz * (t_amb - T[-1, :])
            top = g_top * (T[0, :] - t_amb)
            power[-1, :] += bottom
            power[0, :] -= top
            power[:2, :] += q
            T += power * (dt / heat_cap)
            step += 1

            injected[i] += q.sum() * dt
            conv[i] += top.sum() * dt
            sub[i] -= bottom.sum() * dt
            hottest = max(hottest, T.max())
            ever |= T >= mat.T_melt
            if record_history:
                history.append(T.copy())
        if not np.isfinite(hottest):
            raise SimulationError(f"non-finite temperature at output step {i}")
        t_mp[i] = hottest
        v_bead[i] = np.count_nonzero(ever) * vol
        stored[i] = heat_cap * np.sum(T - t_amb)

    record = SimulationRecord(
        params=pp,
        time_grid=np.arange(1, n_out + 1) * (dt * substeps),
        v_bead=v_bead,
        t_mp=t_mp,
        melted=bool(t_mp.max() >= mat.T_melt),
    )
    if diagnostics:
        return record, Diagnostics(injected, conv, sub, stored, dt, substeps, history)
    return record
