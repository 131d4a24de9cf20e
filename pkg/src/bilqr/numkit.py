"""Shared numerical substrate: time grids, fixed-step RK4 integration,
piecewise-linear interpolation, the l1/max-column-sum norm pair, weighted
sup-norms, transition-matrix tables, and spectral radius.

Everything here is deterministic and pure: fixed-step classical RK4 only,
no adaptive stepping, so repeated runs produce bitwise-identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class BlowupError(RuntimeError):
    """Numerical blow-up: a non-finite value appeared mid-integration."""

    def __init__(self, message: str, node_index: int, t: float):
        super().__init__(message)
        self.node_index = node_index
        self.t = t


class TransitionInversionError(RuntimeError):
    """Transition inversion failure: a transition matrix is numerically singular."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, tf] with `steps` sub-intervals (steps + 1 nodes)."""

    t0: float
    tf: float
    steps: int

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"tf must exceed t0, got [{self.t0}, {self.tf}]")
        if self.steps < 2:
            raise ValueError(f"steps must be >= 2, got {self.steps}")
        object.__setattr__(self, "_nodes", np.linspace(self.t0, self.tf, self.steps + 1))

    @property
    def h(self) -> float:
        return (self.tf - self.t0) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes


@dataclass(frozen=True)
class GriddedTrajectory:
    """A vector- or matrix-valued function sampled on a uniform time grid.

    `values` has shape (steps + 1, *value_shape); interpolation between
    nodes is piecewise linear and exact at the nodes.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.shape[0] != self.grid.steps + 1:
            raise ValueError(
                f"expected {self.grid.steps + 1} samples, got {vals.shape[0]}"
            )

    @property
    def value_shape(self) -> tuple:
        return self.values.shape[1:]

    def at(self, t):
        """Piecewise-linear interpolation at scalar or array times."""
        g = self.grid
        t_arr = np.asarray(t, dtype=float)
        span = g.tf - g.t0
        tol = 1e-9 * span
        if np.any(t_arr < g.t0 - tol) or np.any(t_arr > g.tf + tol):
            raise ValueError(f"time {t} outside [{g.t0}, {g.tf}]")
        u = (t_arr - g.t0) / g.h
        i = np.clip(np.floor(u).astype(int), 0, g.steps - 1)
        theta = np.clip(u - i, 0.0, 1.0)
        lo = self.values[i]
        hi = self.values[i + 1]
        th = theta.reshape(theta.shape + (1,) * len(self.value_shape))
        return (1.0 - th) * lo + th * hi


def interp(traj: GriddedTrajectory, t):
    """Value of `traj` at time `t` (piecewise-linear, exact at nodes)."""
    return traj.at(t)


def _rk4_step(field, t: float, y: np.ndarray, h: float) -> np.ndarray:
    k1 = field(t, y)
    k2 = field(t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = field(t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = field(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_forward(
    field: Callable[[float, np.ndarray], np.ndarray],
    y0: np.ndarray,
    grid: TimeGrid,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GriddedTrajectory:
    """Classical fixed-step RK4 from values[0] = y0 up to tf.

    `project`, when given, is applied after every accepted step (used for
    constraint maintenance such as re-symmetrization).
    """
    y = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("initial value must be finite")
    nodes = grid.nodes
    out = np.empty((grid.steps + 1,) + y.shape, dtype=float)
    out[0] = y
    h = grid.h
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.steps):
            y = _rk4_step(field, nodes[i], y, h)
            if project is not None:
                y = project(y)
            if not np.all(np.isfinite(y)):
                raise BlowupError(
                    f"numerical blow-up at node {i + 1} (t={nodes[i + 1]:.6g})",
                    node_index=i + 1,
                    t=float(nodes[i + 1]),
                )
            out[i + 1] = y
    return GriddedTrajectory(grid, out)


def integrate_backward(
    field: Callable[[float, np.ndarray], np.ndarray],
    yT: np.ndarray,
    grid: TimeGrid,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
) -> GriddedTrajectory:
    """Classical fixed-step RK4 run in reversed time; values[-1] = yT."""
    y = np.asarray(yT, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("terminal value must be finite")
    nodes = grid.nodes
    out = np.empty((grid.steps + 1,) + y.shape, dtype=float)
    out[-1] = y
    h = -grid.h
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.steps - 1, -1, -1):
            y = _rk4_step(field, nodes[i + 1], y, h)
            if project is not None:
                y = project(y)
            if not np.all(np.isfinite(y)):
                raise BlowupError(
                    f"numerical blow-up at node {i} (t={nodes[i]:.6g})",
                    node_index=i,
                    t=float(nodes[i]),
                )
            out[i] = y
    return GriddedTrajectory(grid, out)


def vec_norm(v: np.ndarray) -> float:
    """Sum of absolute entries."""
    return float(np.sum(np.abs(v)))


def mat_norm(D: np.ndarray) -> float:
    """Maximum column sum of absolute entries."""
    return float(np.max(np.sum(np.abs(D), axis=0)))


def _node_norms(values: np.ndarray) -> np.ndarray:
    if values.ndim <= 1:
        return np.abs(values)
    if values.ndim == 2:
        return np.sum(np.abs(values), axis=1)
    return np.max(np.sum(np.abs(values), axis=1), axis=1)


def alpha_norm(traj: GriddedTrajectory, alpha: float, direction: str) -> float:
    """Weighted sup-norm over grid nodes.

    `direction` is "forward" for weight exp(-alpha (t - t0)) or "backward"
    for weight exp(-alpha (tf - t)).  At alpha = 0 this is the plain sup of
    the node-wise l1 (vector) or max-column-sum (matrix) norm.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    g = traj.grid
    if direction == "forward":
        weights = np.exp(-alpha * (g.nodes - g.t0))
    elif direction == "backward":
        weights = np.exp(-alpha * (g.tf - g.nodes))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return float(np.max(_node_norms(traj.values) * weights))


class TransitionTable:
    """Indexed family of transition matrices Phi(t_i, t_j) for a linear system.

    Phi(., t0) is integrated once with RK4; general pairs use
    Phi(t_i, t_j) = Phi(t_i, t0) Phi(t_j, t0)^{-1}.
    """

    _COND_LIMIT = 1e13

    def __init__(self, grid: TimeGrid, base: np.ndarray):
        self.grid = grid
        self._base = base  # (steps+1, n, n), Phi(t_i, t0)
        self._inv_cache: dict[int, np.ndarray] = {}

    def _inverse(self, j: int) -> np.ndarray:
        if j not in self._inv_cache:
            phi_j = self._base[j]
            if np.linalg.cond(phi_j) > self._COND_LIMIT:
                raise TransitionInversionError(
                    f"transition inversion failure at node {j} "
                    f"(t={self.grid.nodes[j]:.6g})"
                )
            self._inv_cache[j] = np.linalg.inv(phi_j)
        return self._inv_cache[j]

    def phi(self, i: int, j: int) -> np.ndarray:
        """Phi(t_i, t_j): maps data at node j to node i."""
        return self._base[i] @ self._inverse(j)

    def norm_table(self, indices: np.ndarray) -> np.ndarray:
        """Matrix of mat_norm(Phi(t_a, t_b)) over the given node indices."""
        indices = np.asarray(indices, dtype=int)
        inv = np.stack([self._inverse(j) for j in indices])
        table = np.empty((len(indices), len(indices)))
        for row, a in enumerate(indices):
            prods = self._base[a] @ inv  # (S, n, n)
            table[row] = np.max(np.sum(np.abs(prods), axis=1), axis=1)
        return table


def transition_table(Afield: Callable[[float], np.ndarray], grid: TimeGrid) -> TransitionTable:
    """Transition matrices of dPhi/dt = A(t) Phi with Phi(t0, t0) = I."""
    n = np.asarray(Afield(grid.t0)).shape[0]
    base = integrate_forward(lambda t, y: Afield(t) @ y, np.eye(n), grid)
    return TransitionTable(grid, base.values)


def spectral_radius(M: np.ndarray) -> float:
    """Largest eigenvalue magnitude."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("spectral_radius expects a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(M))))
