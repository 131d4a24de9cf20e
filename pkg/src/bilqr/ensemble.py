"""Parameterized families of bilinear systems under one shared control.

A family over a parameter box is discretized into q uniform samples and
stacked into a single problem: block-diagonal drift and bilinear maps,
vertically stacked input map (the control is broadcast, so the stacked
quadratic weight couples all samples), and a terminal penalty that is the
Riemann-sum average of the per-sample errors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import block_diag

from .model import BilinearProblem
from .solver import SolveOptions, solve

__all__ = [
    "SampleCoefficients",
    "EnsembleSpec",
    "sample_uniform",
    "stack_problem",
    "stack_coefficients",
    "averaged_terminal_cost",
    "refinement_study",
    "STACKING_NOTE",
]

# Recorded in run summaries whenever a stacked problem is built.
STACKING_NOTE = (
    "ensemble stacking: the input map is stacked vertically (shared control), "
    "not direct-summed; the drift and bilinear maps are block-diagonal"
)

WEIGHTINGS = ("averaged", "summed")


@dataclass(frozen=True)
class SampleCoefficients:
    """Matrices of one parameter sample."""

    A: np.ndarray
    B: np.ndarray
    Blist: tuple
    g: np.ndarray
    x0: np.ndarray
    xd: np.ndarray


@dataclass(frozen=True)
class EnsembleSpec:
    """A parameter box, a sample count, and the coefficient map over the box.

    `coefficients` maps a parameter value (scalar for a 1-d box, tuple for
    d > 1) to a SampleCoefficients bundle.  `terminal_weighting` selects the
    per-sample terminal coefficient of the stacked problem: "averaged" gives
    1/q (the Riemann-sum mean error), "summed" gives 1 per sample.
    """

    box: tuple  # ((a1, b1), ..., (ad, bd))
    q: int
    coefficients: Callable
    base_n: int
    base_m: int
    tf: float
    R: np.ndarray
    terminal_weighting: str = "averaged"

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        if not box:
            raise ValueError("parameter box must have at least one axis")
        for a, b in box:
            if a > b:
                raise ValueError(f"degenerate box axis [{a}, {b}]")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.terminal_weighting not in WEIGHTINGS:
            raise ValueError(f"terminal_weighting must be one of {WEIGHTINGS}")
        object.__setattr__(self, "box", box)

    @property
    def dim(self) -> int:
        return len(self.box)


def _axis_points(a: float, b: float, count: int) -> np.ndarray:
    if count == 1:
        return np.array([0.5 * (a + b)])
    return np.linspace(a, b, count)


def sample_uniform(spec: EnsembleSpec) -> list:
    """Uniform samples of the box including the endpoints.

    For a 1-d box this is q equally spaced points (q = 1 gives the
    midpoint).  For d > 1 a tensor grid is used with the per-axis count
    whose d-th power is closest to q; the realized count may differ from q.
    """
    if spec.dim == 1:
        a, b = spec.box[0]
        return [float(v) for v in _axis_points(a, b, spec.q)]
    root = spec.q ** (1.0 / spec.dim)
    candidates = sorted({max(1, int(np.floor(root))), int(np.ceil(root))})
    count = min(candidates, key=lambda c: abs(c ** spec.dim - spec.q))
    axes = [_axis_points(a, b, count) for a, b in spec.box]
    return [tuple(float(v) for v in combo) for combo in itertools.product(*axes)]


def stack_coefficients(
    coeffs: Sequence[SampleCoefficients],
    tf: float,
    R: np.ndarray,
    terminal_weighting: str = "averaged",
) -> BilinearProblem:
    """Stack explicit per-sample coefficient bundles into one problem."""
    q = len(coeffs)
    if q < 1:
        raise ValueError("need at least one sample")
    m = np.atleast_2d(np.asarray(coeffs[0].B, dtype=float).reshape(len(coeffs[0].x0), -1)).shape[1]
    A = block_diag(*[c.A for c in coeffs])
    B = np.vstack([np.asarray(c.B, dtype=float).reshape(-1, m) for c in coeffs])
    Blist = tuple(
        block_diag(*[np.atleast_2d(c.Blist[i]) for c in coeffs]) for i in range(m)
    )
    g = np.concatenate([np.atleast_1d(c.g) for c in coeffs])
    x0 = np.concatenate([np.atleast_1d(c.x0) for c in coeffs])
    xd = np.concatenate([np.atleast_1d(c.xd) for c in coeffs])
    weight = 1.0 / q if terminal_weighting == "averaged" else 1.0
    return BilinearProblem(
        A=A, B=B, Blist=Blist, g=g, x0=x0, xd=xd, tf=tf, R=R, terminal_weight=weight
    )


def stack_problem(spec: EnsembleSpec, samples: Sequence) -> BilinearProblem:
    """Evaluate the coefficient map at the samples and stack the results."""
    coeffs = [spec.coefficients(beta) for beta in samples]
    for i, c in enumerate(coeffs):
        if len(np.atleast_1d(c.x0)) != spec.base_n:
            raise ValueError(
                f"sample {i}: coefficient state dimension "
                f"{len(np.atleast_1d(c.x0))} != base_n {spec.base_n}"
            )
    return stack_coefficients(coeffs, spec.tf, spec.R, spec.terminal_weighting)


def averaged_terminal_cost(spec: EnsembleSpec, samples: Sequence, X_tf: np.ndarray) -> float:
    """Riemann-sum mean of the per-sample squared terminal errors.

    Always 1/q-normalized, independent of the stacking weight, so values
    are comparable across refinement levels.
    """
    X_tf = np.asarray(X_tf, dtype=float)
    q = len(samples)
    n = spec.base_n
    if X_tf.shape != (q * n,):
        raise ValueError(f"expected stacked terminal state of length {q * n}")
    total = 0.0
    for j, beta in enumerate(samples):
        xd = np.atleast_1d(spec.coefficients(beta).xd)
        miss = X_tf[j * n : (j + 1) * n] - xd
        total += float(np.dot(miss, miss))
    return total / q


@dataclass(frozen=True)
class RefinementRow:
    q: int
    terminal_cost: float
    cost: float
    iterations: int
    converged: bool


def refinement_study(
    spec: EnsembleSpec,
    q_sequence: Sequence[int],
    opts: SolveOptions,
) -> list[RefinementRow]:
    """Solve the stacked problem over a sequence of sample counts.

    Reports the averaged terminal cost per level so Cauchy behavior under
    refinement can be read off directly.
    """
    rows = []
    for q in q_sequence:
        level = EnsembleSpec(
            box=spec.box,
            q=int(q),
            coefficients=spec.coefficients,
            base_n=spec.base_n,
            base_m=spec.base_m,
            tf=spec.tf,
            R=spec.R,
            terminal_weighting=spec.terminal_weighting,
        )
        samples = sample_uniform(level)
        prob = stack_problem(level, samples)
        result = solve(prob, opts)
        rows.append(
            RefinementRow(
                q=len(samples),
                terminal_cost=averaged_terminal_cost(level, samples, result.final.x.values[-1]),
                cost=result.final.cost,
                iterations=result.iterations_used,
                converged=result.converged,
            )
        )
    return rows
