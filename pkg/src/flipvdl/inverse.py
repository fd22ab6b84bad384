"""Inverse flow model: measured areas -> flow rate -> pressure -> activation.

Sensors sit on the cell interfaces of a uniform staggered grid.  Flow rate
``q`` and scaled pressure ``p`` live on interfaces, the area ``alpha`` used
in the mass balance lives on cells (mean of the two bounding sensors).
Pressure is scaled by ``rho c^2`` so that only ``K/A_o`` and ``P_o - K``
from the calibration enter; the tube law then reads
``p = alpha / theta + (P_o - K) / (rho c^2)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibrate import TubeLawFit
from .ingest import GRID_SIZE, AnalysisWindow, resample_time

THETA_MIN = 0.05
THETA_MAX = 5.0
CLAMP_LIMIT = 0.2


class InverseError(ValueError):
    pass


@dataclass(frozen=True)
class StaggeredGrid:
    n_cells: int = GRID_SIZE - 1

    @property
    def n_interfaces(self) -> int:
        return self.n_cells + 1

    @property
    def d_chi(self) -> float:
        return 1.0 / self.n_cells

    @property
    def interfaces(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_interfaces)

    @property
    def cells(self) -> np.ndarray:
        x = self.interfaces
        return 0.5 * (x[1:] + x[:-1])


def _column(v, shape):
    v = np.asarray(v, dtype=float)
    if v.ndim < len(shape):
        v = v.reshape(v.shape + (1,) * (len(shape) - v.ndim))
    return np.broadcast_to(v, shape)


def thomas(lower, diag, upper, rhs):
    """Solve tridiagonal systems by forward elimination and back substitution.

    ``lower[0]`` and ``upper[-1]`` are ignored.  Coefficients have shape
    ``(n,)`` or ``(n, m)``; ``rhs`` has shape ``(n,)`` or ``(n, m)`` and the
    ``m`` columns are solved independently.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    a, b, c = (_column(v, rhs.shape) for v in (lower, diag, upper))
    cp = np.empty(rhs.shape)
    dp = np.empty(rhs.shape)
    if np.any(b[0] == 0):
        raise InverseError("zero pivot in tridiagonal solve")
    cp[0] = c[0] / b[0]
    dp[0] = rhs[0] / b[0]
    for i in range(1, n):
        denom = b[i] - a[i] * cp[i - 1]
        if np.any(denom == 0):
            raise InverseError(f"zero pivot in tridiagonal solve at row {i}")
        cp[i] = c[i] / denom
        dp[i] = (rhs[i] - a[i] * dp[i - 1]) / denom
    x = np.empty(rhs.shape)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def nodes_to_cells(alpha_nodes):
    alpha_nodes = np.asarray(alpha_nodes, dtype=float)
    return 0.5 * (alpha_nodes[1:] + alpha_nodes[:-1])


def _time_steps(tau):
    tau = np.asarray(tau, dtype=float)
    dtau = np.diff(tau)
    if np.any(dtau <= 0):
        raise InverseError("time levels must be strictly increasing")
    return dtau


def solve_flow_rate(alpha_cells, tau, grid: StaggeredGrid) -> np.ndarray:
    """Interface flow rate from the differentiated mass balance.

    For every interior interface ``i`` and time level ``k >= 1``::

        q_i - (q_{i+1} + q_{i-1}) / 2
            = dchi / (2 dtau) * (a_I - a_{I-1} - a_I^o + a_{I-1}^o)

    with ``q = 0`` on both end interfaces.  Level 0 has no predecessor and
    takes the flow rate of level 1.
    """
    alpha_cells = np.asarray(alpha_cells, dtype=float)
    n = grid.n_cells
    if alpha_cells.shape[0] != n:
        raise InverseError(f"expected {n} cells, got {alpha_cells.shape[0]}")
    n_t = alpha_cells.shape[1]
    q = np.zeros((n + 1, n_t))
    if n_t < 2:
        return q
    dtau = _time_steps(tau)
    jump = np.diff(alpha_cells, axis=0)  # a_I - a_{I-1} at interior interfaces
    rhs = grid.d_chi / (2.0 * dtau) * (jump[:, 1:] - jump[:, :-1])
    m = n - 1
    if m > 0:
        q[1:-1, 1:] = thomas(np.full(m, -0.5), np.ones(m), np.full(m, -0.5), rhs)
    q[:, 0] = q[:, 1]
    return q


def pressure_rhs(q, q_old, alpha_nodes, dtau, phi, grid: StaggeredGrid):
    """Right-hand side of the pressure system at interior interfaces (one level)."""
    dchi = grid.d_chi
    flux = q**2 / alpha_nodes
    g = q / alpha_nodes
    return (
        dchi / (2.0 * dtau) * (q[2:] - q[:-2] - q_old[2:] + q_old[:-2])
        + (flux[2:] + flux[:-2] - 2.0 * flux[1:-1])
        + 0.5 * phi * dchi * (g[2:] - g[:-2])
    )


def solve_pressure_field(q, alpha_cells, alpha_nodes, p_distal, phi, tau, grid: StaggeredGrid):
    """Scaled interface pressure from the differentiated momentum balance.

    Interior rows::

        (a_I + a_{I-1}) p_i - a_I p_{i+1} - a_{I-1} p_{i-1} = rhs_i

    closed by ``p = p_distal`` on the distal interface and ``p_0 = p_1``
    (zero gradient) on the proximal one.
    """
    q = np.asarray(q, dtype=float)
    alpha_cells = np.asarray(alpha_cells, dtype=float)
    alpha_nodes = np.asarray(alpha_nodes, dtype=float)
    p_distal = np.broadcast_to(np.asarray(p_distal, dtype=float), (q.shape[1],))
    n = grid.n_cells
    n_t = q.shape[1]
    bad = np.argwhere(alpha_cells <= 0)
    if bad.size:
        cell, level = bad[0]
        raise InverseError(f"collapsed cell {cell} at time level {level}: alpha <= 0")

    rhs = np.zeros((n, n_t))
    if n_t >= 2:
        dtau = _time_steps(tau)
        q_old = np.concatenate([q[:, :1], q[:, :-1]], axis=1)
        dt_all = np.concatenate([dtau[:1], dtau])
        rhs[1:] = pressure_rhs(q, q_old, alpha_nodes, dt_all, phi, grid)

    # unknowns p_0 .. p_{n-1}; row 0 enforces p_0 - p_1 = 0
    lower = np.zeros((n, n_t))
    diag = np.ones((n, n_t))
    upper = np.zeros((n, n_t))
    upper[0] = -1.0
    a_right = alpha_cells[1:]  # a_I for interfaces 1..n-1
    a_left = alpha_cells[:-1]  # a_{I-1}
    diag[1:] = a_right + a_left
    lower[1:] = -a_left
    upper[1:] = -a_right
    rhs[-1] += a_right[-1] * p_distal
    upper[-1] = 0.0
    p = np.empty((n + 1, n_t))
    p[:-1] = thomas(lower, diag, upper, rhs)
    p[-1] = p_distal
    return p


def recover_activation(pressure, area, fit: TubeLawFit, clamp=(THETA_MIN, THETA_MAX)):
    """Activation from the tube law: ``theta = (K/A_o) A / (P - (P_o - K))``.

    Returns ``(theta, mask)``; ``mask`` marks cells that were clamped or had
    a non-positive denominator.
    """
    pressure = np.asarray(pressure, dtype=float)
    area = np.asarray(area, dtype=float)
    denom = pressure - fit.po_minus_k
    bad = denom <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(bad, clamp[1], fit.k_over_ao * area / np.where(bad, 1.0, denom))
    clipped = np.clip(theta, *clamp)
    mask = bad | (clipped != theta)
    return clipped, mask


@dataclass
class MechanicsState:
    """Solved fields for one window; scaled quantities are non-dimensional."""

    tau: np.ndarray
    times: np.ndarray
    alpha: np.ndarray
    alpha_nodes: np.ndarray
    q: np.ndarray
    p: np.ndarray
    pressure: np.ndarray
    area: np.ndarray
    theta_native: np.ndarray
    theta: np.ndarray
    clamp_mask: np.ndarray
    grid: StaggeredGrid = field(default_factory=StaggeredGrid)
    fit_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def clamp_fraction(self) -> float:
        return float(np.mean(self.clamp_mask))

    @property
    def reliable(self) -> bool:
        return self.clamp_fraction <= CLAMP_LIMIT


def solve_window(window: AnalysisWindow, fit: TubeLawFit, grid: StaggeredGrid | None = None) -> MechanicsState:
    """Run the full inverse model on one analysis window."""
    grid = grid or StaggeredGrid(window.area.shape[0] - 1)
    if window.area.shape[0] != grid.n_interfaces:
        raise InverseError("sensor count does not match the grid")
    scale = fit.pressure_scale
    tau = (window.times - window.times[0]) / fit.time_scale
    alpha_nodes = window.area / fit.area_scale
    alpha_cells = nodes_to_cells(alpha_nodes)
    q = solve_flow_rate(alpha_cells, tau, grid)
    p = solve_pressure_field(q, alpha_cells, alpha_nodes, window.pd / scale, fit.gamma, tau, grid)
    pressure = p * scale
    theta_native, mask_native = recover_activation(pressure, window.area, fit)
    grid_t = window.grid_times()
    theta = resample_time(theta_native, window.times, grid_t)
    mask = resample_time(mask_native.astype(float), window.times, grid_t) > 0
    return MechanicsState(
        tau=tau,
        times=window.times.copy(),
        alpha=alpha_cells,
        alpha_nodes=alpha_nodes,
        q=q,
        p=p,
        pressure=pressure,
        area=window.area.copy(),
        theta_native=theta_native,
        theta=theta,
        clamp_mask=mask,
        grid=grid,
        fit_id=fit.fit_id,
        meta={"mask_native_fraction": float(np.mean(mask_native))},
    )


def check_mass_conservation(state) -> float:
    """Largest relative change of total cell area over the window."""
    alpha = state.alpha if hasattr(state, "alpha") else np.asarray(state)
    totals = alpha.sum(axis=0)
    return float(np.max(np.abs(totals - totals[0])) / abs(totals[0]))


_STATE_MATRICES = ("alpha", "alpha_nodes", "q", "p", "pressure", "area", "theta_native", "theta", "clamp_mask")


def write_state(state: MechanicsState, directory, extra: dict | None = None) -> list:
    """Persist a state as CSV matrices plus ``manifest.json``; returns file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for name in ("times", "tau") + _STATE_MATRICES:
        arr = np.atleast_2d(getattr(state, name)).astype(float)
        fname = f"{name}.csv"
        np.savetxt(directory / fname, arr, delimiter=",", fmt="%.17g")
        names.append(fname)
    manifest = {
        "grid": {"n_cells": state.grid.n_cells},
        "fit_id": state.fit_id,
        "clamp_fraction": state.clamp_fraction,
        "reliable": state.reliable,
        "files": names,
    }
    manifest.update(extra or {})
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return names + ["manifest.json"]


def read_state(directory) -> tuple[MechanicsState, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())

    def load(name):
        return np.loadtxt(directory / f"{name}.csv", delimiter=",", ndmin=2)

    mats = {name: load(name) for name in _STATE_MATRICES}
    state = MechanicsState(
        tau=load("tau")[0],
        times=load("times")[0],
        grid=StaggeredGrid(int(manifest["grid"]["n_cells"])),
        fit_id=manifest.get("fit_id", ""),
        **{k: (v > 0.5 if k == "clamp_mask" else v) for k, v in mats.items()},
    )
    return state, manifest
