"""Iterative frozen-coefficient solver.

Each iteration freezes the state-dependent input map L(x) = B + sum x_j N_j
along the previous state trajectory and solves the resulting affine
linear-quadratic subproblem

    min (1/2) int u' R u dt + w ||x(tf) - xd||^2
    s.t. dx/dt = A x + L_prev(t) u + g

by one backward Riccati sweep, one backward affine sweep, one backward
scalar sweep, and one forward closed-loop propagation, then reconstructs
the costate p = K x + s and the control u = -R^-1 L(x)' p.  The loop stops
on an iterate-difference or target-distance rule.

At a fixed point the state satisfies the original bilinear dynamics under
the reconstructed control exactly, and the subproblem's value function
solves the dynamic-programming equation of the bilinear problem along the
converged pair, which is what the optimality diagnostics certify.  The
frozen quadratic weight L_prev R^-1 L_prev' is positive semidefinite, so
the backward Riccati flow cannot escape; the literal change-of-variables
weight B R^-1 B' - C R^-1 C' can be indefinite and makes the backward flow
escape in finite time on broadcast ensembles (it is kept as a diagnostic
quantity, see the model module).

Sweeps evaluate their coefficient fields at the RK4 stage times (nodes and
interval midpoints) once up front; the time-stepping loops then only index
the tabulated values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import BilinearFactors, BilinearProblem, bilinear_factors
from .numkit import (
    BlowupError,
    GriddedTrajectory,
    TimeGrid,
    integrate_forward,
)

__all__ = [
    "IterationState",
    "SolveOptions",
    "SolveResult",
    "RiccatiEscapeError",
    "BoundarySolveError",
    "riccati_sweep",
    "affine_sweep",
    "value_offset_sweep",
    "closed_loop_forward",
    "solve_frozen_boundary_value",
    "reconstruct_control",
    "iterate_once",
    "solve",
    "evaluate_cost",
    "simulate_bilinear",
    "value_function_initial",
]

STOP_RULES = ("diff", "target", "both")


class RiccatiEscapeError(RuntimeError):
    """Finite-escape of the backward Riccati flow.

    Signals that R is too small or the horizon too long for the frozen
    subproblem to stay bounded.
    """

    def __init__(self, message: str, node_index: int, t: float):
        super().__init__(message)
        self.node_index = node_index
        self.t = t


class BoundarySolveError(RuntimeError):
    """The frozen two-point boundary-value system is singular."""


@dataclass(frozen=True)
class IterationState:
    """One iterate: trajectories, cost, and the difference to its predecessor.

    K, s, q hold the gain/affine/offset sweeps of the frozen subproblem and
    satisfy p = K x + s node-wise.  When the backward Riccati flow has a
    finite escape (possible since the frozen quadratic weight may be
    indefinite), the iterate is computed through the linear boundary-value
    route instead and K, s, q are None (`via_sweeps` False); x, p, u, cost
    are always present.
    """

    k: int
    x: GriddedTrajectory
    p: GriddedTrajectory
    u: GriddedTrajectory
    K: GriddedTrajectory | None
    s: GriddedTrajectory | None
    q: GriddedTrajectory | None
    cost: float
    diff_x: float
    via_sweeps: bool = True


@dataclass(frozen=True)
class SolveOptions:
    """Solve controls.

    `relaxation` blends the frozen coefficient trajectory between iterations
    (1.0 is the plain fixed-point map; smaller values damp oscillatory
    transients).  `init_control` is a constant probe amplitude used to
    generate the initial state trajectory; a nonzero probe is needed when
    the uncontrolled flow sits on an invariant set of the iteration map
    (e.g. a coherence-transfer problem started in a dark state).
    """

    steps: int = 2000
    max_iters: int = 100
    stop_rule: str = "diff"
    tol: float = 1e-12
    alpha: float = 0.0
    record_diagnostics: bool = False
    diag_subsample: int = 10
    relaxation: float = 1.0
    init_control: float = 0.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"stop_rule must be one of {STOP_RULES}")
        if self.diag_subsample < 1:
            raise ValueError("diag_subsample must be >= 1")
        if not 0.0 < self.relaxation <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")


@dataclass(frozen=True)
class SolveResult:
    final: IterationState
    converged: bool
    iterations_used: int
    history: tuple  # (k, diff_x, cost) rows
    diagnostics: object = None


class TabulatedField:
    """Time-dependent matrix given by node values, blended linearly between."""

    def __init__(self, grid: TimeGrid, node_values: np.ndarray):
        self.grid = grid
        self.node_values = node_values

    def __call__(self, t: float) -> np.ndarray:
        g = self.grid
        u = (t - g.t0) / g.h
        i = min(max(int(u), 0), g.steps - 1)
        theta = min(max(u - i, 0.0), 1.0)
        if theta == 0.0:
            return self.node_values[i]
        return (1.0 - theta) * self.node_values[i] + theta * self.node_values[i + 1]

    def stage_tables(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.node_values
        return v, 0.5 * (v[:-1] + v[1:])


class ConstantField:
    """Time-independent matrix with the tabulated-field interface."""

    def __init__(self, grid: TimeGrid, value: np.ndarray):
        self.grid = grid
        self.value = np.asarray(value, dtype=float)

    def __call__(self, t: float) -> np.ndarray:
        return self.value

    def stage_tables(self) -> tuple[np.ndarray, np.ndarray]:
        T = self.grid.steps
        shape = self.value.shape
        return (
            np.broadcast_to(self.value, (T + 1,) + shape),
            np.broadcast_to(self.value, (T,) + shape),
        )


def _stage_tables(field: Callable[[float], np.ndarray], grid: TimeGrid):
    """Field values at the grid nodes and at the interval midpoints."""
    if isinstance(field, (TabulatedField, ConstantField)) and field.grid is grid:
        return field.stage_tables()
    nodes = grid.nodes
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    at_nodes = np.stack([np.asarray(field(t), dtype=float) for t in nodes])
    at_mids = np.stack([np.asarray(field(t), dtype=float) for t in mids])
    return at_nodes, at_mids


def _traj_stage_tables(traj: GriddedTrajectory):
    v = traj.values
    return v, 0.5 * (v[:-1] + v[1:])


class _CoefficientTables:
    """Frozen drift/gram matrices tabulated at the grid nodes."""

    def __init__(self, grid: TimeGrid, A_nodes: np.ndarray, O_nodes: np.ndarray):
        self.grid = grid
        self.A_nodes = A_nodes
        self.O_nodes = O_nodes
        self.afield = TabulatedField(grid, A_nodes)
        self.ofield = TabulatedField(grid, O_nodes)


def freeze_coefficients(
    prob: BilinearProblem,
    factors: BilinearFactors,
    X: np.ndarray,
    P: np.ndarray,
    grid: TimeGrid,
) -> _CoefficientTables:
    """Evaluate the change-of-variables drift and gram along (X, P) node-wise.

    These are the diagnostic coefficient matrices (see frozen_drift and
    frozen_gram); the iteration itself consumes freeze_iteration_fields.
    """
    Nm = factors.mats  # (n, n, m)
    Rinv = prob.Rinv
    lam = prob.B + np.einsum("tj,jki->tki", X, Nm)  # (T, n, m)
    # drift correction, column j: N_j (R^-1 L' p) + (L R^-1) (N_j' p)
    w = np.einsum("mi,tki,tk->tm", Rinv, lam, P)  # R^-1 L' p
    term1 = np.einsum("jki,ti->tkj", Nm, w)
    v = np.einsum("jki,tk->tji", Nm, P)  # N_j' p
    lr = lam @ Rinv
    term2 = np.einsum("tki,tji->tkj", lr, v)
    A_nodes = prob.A - (term1 + term2)

    C = lam - prob.B
    O_nodes = prob.B @ Rinv @ prob.B.T - np.einsum("tki,ij,tlj->tkl", C, Rinv, C)
    O_nodes = 0.5 * (O_nodes + np.transpose(O_nodes, (0, 2, 1)))
    return _CoefficientTables(grid, A_nodes, O_nodes)


class _IterationFields:
    """Subproblem coefficients of one iteration: constant drift A and the
    positive-semidefinite input gram L_prev R^-1 L_prev' at the nodes."""

    def __init__(self, grid: TimeGrid, A: np.ndarray, O_nodes: np.ndarray):
        self.grid = grid
        self.afield = ConstantField(grid, A)
        self.ofield = TabulatedField(grid, O_nodes)
        self.O_nodes = O_nodes


def freeze_iteration_fields(
    prob: BilinearProblem,
    factors: BilinearFactors,
    X: np.ndarray,
    grid: TimeGrid,
) -> _IterationFields:
    """Freeze the input map along X and form the subproblem coefficients."""
    lam = prob.B + np.einsum("tj,jki->tki", X, factors.mats)  # (T, n, m)
    O_nodes = np.einsum("tki,ij,tlj->tkl", lam, prob.Rinv, lam)
    O_nodes = 0.5 * (O_nodes + np.transpose(O_nodes, (0, 2, 1)))
    return _IterationFields(grid, prob.A, O_nodes)


def _check_finite(y: np.ndarray, node: int, t: float):
    if not np.all(np.isfinite(y)):
        raise BlowupError(
            f"numerical blow-up at node {node} (t={t:.6g})", node_index=node, t=t
        )


def riccati_sweep(
    Afield: Callable[[float], np.ndarray],
    Ofield: Callable[[float], np.ndarray],
    K_T: np.ndarray,
    grid: TimeGrid,
) -> GriddedTrajectory:
    """Backward sweep of dK/dt = -K A - A' K + K O K from K(tf) = K_T.

    The output is re-symmetrized after every step to suppress drift.
    """
    K_T = np.asarray(K_T, dtype=float)
    if np.max(np.abs(K_T - K_T.T)) > 1e-10 * max(1.0, np.max(np.abs(K_T))):
        raise ValueError("terminal Riccati matrix must be symmetric")
    A_n, A_m = _stage_tables(Afield, grid)
    O_n, O_m = _stage_tables(Ofield, grid)
    nodes = grid.nodes
    h = -grid.h

    def rhs(K, A, O):
        KA = K @ A
        return K @ (O @ K) - KA - KA.T

    out = np.empty((grid.steps + 1,) + K_T.shape)
    out[-1] = K = 0.5 * (K_T + K_T.T)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.steps - 1, -1, -1):
            k1 = rhs(K, A_n[i + 1], O_n[i + 1])
            k2 = rhs(K + (0.5 * h) * k1, A_m[i], O_m[i])
            k3 = rhs(K + (0.5 * h) * k2, A_m[i], O_m[i])
            k4 = rhs(K + h * k3, A_n[i], O_n[i])
            K = K + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            K = 0.5 * (K + K.T)
            if not np.all(np.isfinite(K)):
                raise RiccatiEscapeError(
                    f"Riccati escape at t={nodes[i]:.6g}; try increasing R",
                    node_index=i,
                    t=float(nodes[i]),
                )
            out[i] = K
    return GriddedTrajectory(grid, out)


def affine_sweep(
    Afield: Callable[[float], np.ndarray],
    Ofield: Callable[[float], np.ndarray],
    Ktraj: GriddedTrajectory,
    g: np.ndarray,
    s_T: np.ndarray,
    grid: TimeGrid,
) -> GriddedTrajectory:
    """Backward sweep of ds/dt = -[A' - K O] s - K g from s(tf) = s_T.

    K is interpolated linearly at the RK4 stage times.
    """
    g = np.asarray(g, dtype=float)
    A_n, A_m = _stage_tables(Afield, grid)
    O_n, O_m = _stage_tables(Ofield, grid)
    K_n, K_m = _traj_stage_tables(Ktraj)
    Kg_n = K_n @ g
    Kg_m = K_m @ g
    nodes = grid.nodes
    h = -grid.h

    def rhs(s, A, O, K, Kg):
        return K @ (O @ s) - A.T @ s - Kg

    out = np.empty((grid.steps + 1, len(g)))
    out[-1] = s = np.asarray(s_T, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.steps - 1, -1, -1):
            k1 = rhs(s, A_n[i + 1], O_n[i + 1], K_n[i + 1], Kg_n[i + 1])
            k2 = rhs(s + (0.5 * h) * k1, A_m[i], O_m[i], K_m[i], Kg_m[i])
            k3 = rhs(s + (0.5 * h) * k2, A_m[i], O_m[i], K_m[i], Kg_m[i])
            k4 = rhs(s + h * k3, A_n[i], O_n[i], K_n[i], Kg_n[i])
            s = s + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            _check_finite(s, i, float(nodes[i]))
            out[i] = s
    return GriddedTrajectory(grid, out)


def value_offset_sweep(
    Ofield: Callable[[float], np.ndarray],
    straj: GriddedTrajectory,
    g: np.ndarray,
    grid: TimeGrid,
) -> GriddedTrajectory:
    """Backward quadrature of dq/dt = s' O s - 2 s' g from q(tf) = 0.

    The integrand depends on time only, so RK4 reduces to a Simpson rule
    over each interval; the sweep is one reversed cumulative sum.
    """
    g = np.asarray(g, dtype=float)
    O_n, O_m = _stage_tables(Ofield, grid)
    s_n, s_m = _traj_stage_tables(straj)
    f_n = np.einsum("ti,tij,tj->t", s_n, O_n, s_n) - 2.0 * (s_n @ g)
    f_m = np.einsum("ti,tij,tj->t", s_m, O_m, s_m) - 2.0 * (s_m @ g)
    increments = (grid.h / 6.0) * (f_n[:-1] + 4.0 * f_m + f_n[1:])
    q = np.concatenate([-np.cumsum(increments[::-1])[::-1], [0.0]])
    return GriddedTrajectory(grid, q)


def closed_loop_forward(
    Afield: Callable[[float], np.ndarray],
    Ofield: Callable[[float], np.ndarray],
    Ktraj: GriddedTrajectory,
    straj: GriddedTrajectory,
    g: np.ndarray,
    x0: np.ndarray,
    grid: TimeGrid,
) -> GriddedTrajectory:
    """Forward sweep of dx/dt = (A - O K) x - O s + g from x(0) = x0."""
    g = np.asarray(g, dtype=float)
    A_n, A_m = _stage_tables(Afield, grid)
    O_n, O_m = _stage_tables(Ofield, grid)
    K_n, K_m = _traj_stage_tables(Ktraj)
    s_n, s_m = _traj_stage_tables(straj)
    Os_n = np.einsum("tij,tj->ti", O_n, s_n) - g
    Os_m = np.einsum("tij,tj->ti", O_m, s_m) - g
    nodes = grid.nodes
    h = grid.h

    def rhs(x, A, O, K, Os):
        return A @ x - O @ (K @ x) - Os

    out = np.empty((grid.steps + 1, len(g)))
    out[0] = x = np.asarray(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.steps):
            k1 = rhs(x, A_n[i], O_n[i], K_n[i], Os_n[i])
            k2 = rhs(x + (0.5 * h) * k1, A_m[i], O_m[i], K_m[i], Os_m[i])
            k3 = rhs(x + (0.5 * h) * k2, A_m[i], O_m[i], K_m[i], Os_m[i])
            k4 = rhs(x + h * k3, A_n[i + 1], O_n[i + 1], K_n[i + 1], Os_n[i + 1])
            x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            _check_finite(x, i + 1, float(nodes[i + 1]))
            out[i + 1] = x
    return GriddedTrajectory(grid, out)


def reconstruct_control(
    prob: BilinearProblem,
    factors: BilinearFactors,
    xtraj: GriddedTrajectory,
    ptraj: GriddedTrajectory,
) -> GriddedTrajectory:
    """Node-wise u = -R^-1 L(x)' p along the given trajectories."""
    X = xtraj.values
    P = ptraj.values
    lam = prob.B + np.einsum("tj,jki->tki", X, factors.mats)
    rhs = np.einsum("tki,tk->ti", lam, P)
    U = -(prob.Rinv @ rhs.T).T
    return GriddedTrajectory(xtraj.grid, U)


def evaluate_cost(prob: BilinearProblem, utraj: GriddedTrajectory, x_tf: np.ndarray) -> float:
    """Trapezoidal control energy plus the weighted terminal penalty."""
    U = utraj.values
    e = np.einsum("ti,ij,tj->t", U, prob.R, U)
    h = utraj.grid.h
    energy = 0.5 * h * (np.sum(e) - 0.5 * (e[0] + e[-1]))
    miss = np.asarray(x_tf, dtype=float) - prob.xd
    return float(energy + prob.terminal_weight * np.dot(miss, miss))


def value_function_initial(prob: BilinearProblem, state: IterationState) -> float:
    """Cost-to-go V(0, x0) implied by the iterate's (K, s, q) trajectories.

    The quadratic/affine/offset parts alone evaluate the terminal penalty
    only up to the constant w ||xd||^2 (the offset sweep starts from zero),
    so that constant is added to complete the square.
    """
    x0 = prob.x0
    K0 = state.K.values[0]
    s0 = state.s.values[0]
    q0 = float(state.q.values[0])
    const = prob.terminal_weight * float(np.dot(prob.xd, prob.xd))
    return float(0.5 * x0 @ (K0 @ x0) + x0 @ s0 + 0.5 * q0 + const)


def solve_frozen_boundary_value(
    prob: BilinearProblem,
    Afield: Callable[[float], np.ndarray],
    Ofield: Callable[[float], np.ndarray],
    grid: TimeGrid,
) -> tuple[GriddedTrajectory, GriddedTrajectory]:
    """Solve the frozen linear two-point boundary-value problem directly.

    The frozen costate flows autonomously backward, so p(t) = Theta(t) c
    with Theta the backward fundamental matrix and c = p(tf); the state is
    affine in c.  All flows are linear, so this route has no finite escape
    and remains usable when the Riccati representation hits a conjugate
    point.  Raises BoundarySolveError if the terminal condition cannot
    determine c.
    """
    n = prob.n
    w = prob.terminal_weight
    A_n, A_m = _stage_tables(Afield, grid)
    O_n, O_m = _stage_tables(Ofield, grid)
    h = grid.h

    # backward fundamental of dp/dt = -A' p, Theta(tf) = I
    theta = np.empty((grid.steps + 1, n, n))
    theta[-1] = Th = np.eye(n)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.steps - 1, -1, -1):
            k1 = -A_n[i + 1].T @ Th
            k2 = -A_m[i].T @ (Th - (0.5 * h) * k1)
            k3 = -A_m[i].T @ (Th - (0.5 * h) * k2)
            k4 = -A_n[i].T @ (Th - h * k3)
            Th = Th - (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            theta[i] = Th
    if not np.all(np.isfinite(theta)):
        raise BoundarySolveError(
            "frozen boundary-value system produced non-finite data; try increasing R"
        )
    theta_m = 0.5 * (theta[:-1] + theta[1:])

    # forward: Y = [X_c | phi] with dX_c/dt = A X_c - O Theta, dphi/dt = A phi + g
    Y = np.zeros((n, n + 1))
    Y[:, n] = prob.x0
    stored = np.empty((grid.steps + 1, n, n + 1))
    stored[0] = Y

    def rhs(Yv, Ai, Oi, Thi):
        out = Ai @ Yv
        out[:, :n] -= Oi @ Thi
        out[:, n] += prob.g
        return out

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(grid.steps):
            k1 = rhs(Y, A_n[i], O_n[i], theta[i])
            k2 = rhs(Y + (0.5 * h) * k1, A_m[i], O_m[i], theta_m[i])
            k3 = rhs(Y + (0.5 * h) * k2, A_m[i], O_m[i], theta_m[i])
            k4 = rhs(Y + h * k3, A_n[i + 1], O_n[i + 1], theta[i + 1])
            Y = Y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
            stored[i + 1] = Y
    if not np.all(np.isfinite(stored)):
        raise BoundarySolveError(
            "frozen boundary-value system produced non-finite data; try increasing R"
        )

    Xc_f = stored[-1, :, :n]
    phi_f = stored[-1, :, n]
    M = np.eye(n) - 2.0 * w * Xc_f
    try:
        c = np.linalg.solve(M, 2.0 * w * (phi_f - prob.xd))
    except np.linalg.LinAlgError as exc:
        raise BoundarySolveError(
            "frozen boundary-value system singular; try increasing R"
        ) from exc
    if not np.all(np.isfinite(c)):
        raise BoundarySolveError(
            "frozen boundary-value system produced non-finite data; try increasing R"
        )
    X = stored[:, :, :n] @ c + stored[:, :, n]
    P = theta @ c
    return GriddedTrajectory(grid, X), GriddedTrajectory(grid, P)


def iterate_once(
    prob: BilinearProblem,
    factors: BilinearFactors,
    prev: IterationState,
    grid: TimeGrid,
) -> IterationState:
    """One pass of the frozen-coefficient map applied to `prev`.

    The frozen subproblem is a well-posed affine LQR (its input gram is
    positive semidefinite), so the sweep route is expected to succeed; a
    Riccati escape would indicate pathological data and falls back to the
    direct boundary-value route, which computes the same iterate wherever
    both are defined.  `diff_x` measures how far the map moved the state
    away from its argument.
    """
    w = prob.terminal_weight
    fields = freeze_iteration_fields(prob, factors, prev.x.values, grid)
    try:
        K = riccati_sweep(fields.afield, fields.ofield, 2.0 * w * np.eye(prob.n), grid)
        s = affine_sweep(fields.afield, fields.ofield, K, prob.g, -2.0 * w * prob.xd, grid)
        q = value_offset_sweep(fields.ofield, s, prob.g, grid)
        x = closed_loop_forward(fields.afield, fields.ofield, K, s, prob.g, prob.x0, grid)
        P = np.einsum("tij,tj->ti", K.values, x.values) + s.values
        p = GriddedTrajectory(grid, P)
        via_sweeps = True
    except RiccatiEscapeError:
        x, p = solve_frozen_boundary_value(prob, fields.afield, fields.ofield, grid)
        K = s = q = None
        via_sweeps = False
    u = reconstruct_control(prob, factors, x, p)
    cost = evaluate_cost(prob, u, x.values[-1])
    diff = float(np.max(np.sum(np.abs(x.values - prev.x.values), axis=1)))
    return IterationState(
        k=prev.k + 1, x=x, p=p, u=u, K=K, s=s, q=q,
        cost=cost, diff_x=diff, via_sweeps=via_sweeps,
    )


def _initial_state(prob: BilinearProblem, grid: TimeGrid, probe: float = 0.0) -> IterationState:
    """Iteration 0: the flow under a constant probe control (zero by default).

    A nonzero probe breaks invariant sets of the iteration map on which the
    frozen input map is blind to the target (dark initial states).
    """
    T = grid.steps + 1
    u0 = np.full(prob.m, probe)
    if probe == 0.0:
        field = lambda t, y: prob.A @ y + prob.g
        u_traj = GriddedTrajectory(grid, np.zeros((T, prob.m)))
    else:
        coupling = prob.A + np.tensordot(u0, np.stack(prob.Blist), axes=(0, 0))
        drive = prob.B @ u0 + prob.g
        field = lambda t, y: coupling @ y + drive
        u_traj = GriddedTrajectory(grid, np.tile(u0, (T, 1)))
    x = integrate_forward(field, prob.x0, grid)
    zeros_n = GriddedTrajectory(grid, np.zeros((T, prob.n)))
    zeros_nn = GriddedTrajectory(grid, np.zeros((T, prob.n, prob.n)))
    zeros_scalar = GriddedTrajectory(grid, np.zeros(T))
    cost = evaluate_cost(prob, u_traj, x.values[-1])
    return IterationState(
        k=0, x=x, p=zeros_n, u=u_traj, K=zeros_nn, s=zeros_n, q=zeros_scalar,
        cost=cost, diff_x=float("inf"),
    )


def _stop_satisfied(prob: BilinearProblem, state: IterationState, opts: SolveOptions) -> bool:
    diff_ok = state.diff_x < opts.tol
    if opts.stop_rule == "diff":
        return diff_ok
    target_ok = float(np.linalg.norm(state.x.values[-1] - prob.xd)) <= opts.tol
    if opts.stop_rule == "target":
        return target_ok
    return diff_ok and target_ok


def solve(prob: BilinearProblem, opts: SolveOptions | None = None) -> SolveResult:
    """Run the fixed-point loop until the stop rule fires or iterations run out.

    With relaxation < 1 the trajectory fed to the freeze is a running blend
    of past iterates (the fixed points are unchanged).  Non-convergence is
    a result (converged=False), not an error; sweep blow-ups raise with the
    iteration index attached.
    """
    opts = opts or SolveOptions()
    grid = TimeGrid(0.0, prob.tf, opts.steps)
    factors = bilinear_factors(prob.Blist)

    state = _initial_state(prob, grid, probe=opts.init_control)
    frozen_x = state.x.values
    history = [(0, state.diff_x, state.cost)]
    reports = []
    converged = False
    iterations = 0
    theta = opts.relaxation

    if opts.record_diagnostics:
        from . import diagnostics as _diag

        strengths = _diag.coupling_strengths(prob, factors)

    for k in range(1, opts.max_iters + 1):
        feed = state if theta == 1.0 else dataclasses.replace(
            state, x=GriddedTrajectory(grid, frozen_x))
        try:
            nxt = iterate_once(prob, factors, feed, grid)
        except (RiccatiEscapeError, BoundarySolveError, BlowupError) as exc:
            exc.args = (f"iteration {k}: {exc.args[0]}",) + exc.args[1:]
            raise
        if opts.record_diagnostics:
            reports.append(
                _diag.contraction_report(
                    prob, factors, state, nxt, grid,
                    alpha=opts.alpha, subsample=opts.diag_subsample,
                    strengths=strengths,
                )
            )
        history.append((k, nxt.diff_x, nxt.cost))
        frozen_x = nxt.x.values if theta == 1.0 else (
            (1.0 - theta) * frozen_x + theta * nxt.x.values)
        state = nxt
        iterations = k
        if _stop_satisfied(prob, state, opts):
            converged = True
            break

    diagnostics = None
    if opts.record_diagnostics:
        from .diagnostics import ConvergenceReport

        diagnostics = ConvergenceReport(rows=tuple(reports))
    return SolveResult(
        final=state,
        converged=converged,
        iterations_used=iterations,
        history=tuple(history),
        diagnostics=diagnostics,
    )


def bilinear_field(
    prob: BilinearProblem, utraj: GriddedTrajectory
) -> Callable[[float, np.ndarray], np.ndarray]:
    """Right-hand side of the original bilinear dynamics under a stored control."""
    Bs = np.stack(prob.Blist)  # (m, n, n)

    def rhs(t, x):
        u = utraj.at(t)
        coupling = np.tensordot(u, Bs, axes=(0, 0))
        return prob.A @ x + prob.B @ u + coupling @ x + prob.g

    return rhs


def simulate_bilinear(
    prob: BilinearProblem,
    utraj: GriddedTrajectory,
    grid: TimeGrid | None = None,
) -> GriddedTrajectory:
    """Forward RK4 of the original bilinear dynamics with u interpolated.

    `grid` defaults to the control's own grid; a finer grid may be passed
    for refinement checks.
    """
    return integrate_forward(bilinear_field(prob, utraj), prob.x0, grid or utraj.grid)
