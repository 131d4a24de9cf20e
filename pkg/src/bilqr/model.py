"""Problem definitions for the free-endpoint quadratic bilinear control
problem and the algebra feeding the frozen-coefficient iteration.

A problem is

    min  (1/2) int_0^tf u' R u dt  +  w ||x(tf) - xd||_2^2
    s.t. dx/dt = A x + B u + (sum_i u_i B_i) x + g,   x(0) = x0,

with the bilinear term rewritten as (sum_j x_j N_j) u, where column i of
N_j equals column j of B_i.  The frozen coefficient matrices of the
per-iteration linear-quadratic subproblem are

    drift(x, p)_ij = A_ij - [(N_j R^-1 L' + L R^-1 N_j') p]_i
    gram(x)        = B R^-1 B' - C R^-1 C'

with L = B + sum_j x_j N_j and C = L - B.  They satisfy the identity

    drift(x, p) x - gram(x) p = A x - L R^-1 L' p

for all finite (x, p), which is what makes a fixed point of the iteration
solve the original necessary conditions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numkit import vec_norm

__all__ = [
    "BilinearProblem",
    "BilinearFactors",
    "bilinear_factors",
    "input_gain",
    "frozen_drift",
    "frozen_gram",
    "consistency_residual",
]


@dataclass(frozen=True)
class BilinearProblem:
    """Immutable data of one bilinear control problem.

    `terminal_weight` is the coefficient w of the terminal penalty: 1 for a
    single system, 1/q for an averaged ensemble stack.
    """

    A: np.ndarray
    B: np.ndarray
    Blist: tuple
    g: np.ndarray
    x0: np.ndarray
    xd: np.ndarray
    tf: float
    R: np.ndarray
    terminal_weight: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        g = np.atleast_1d(np.asarray(self.g, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        xd = np.atleast_1d(np.asarray(self.xd, dtype=float))
        Blist = tuple(np.atleast_2d(np.asarray(Bi, dtype=float)) for Bi in self.Blist)

        n = A.shape[0]
        m = B.shape[1]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape != (n, m):
            raise ValueError(f"B must be {n}x{m}, got {B.shape}")
        if len(Blist) != m:
            raise ValueError(f"expected {m} bilinear maps, got {len(Blist)}")
        for i, Bi in enumerate(Blist):
            if Bi.shape != (n, n):
                raise ValueError(f"bilinear map {i} must be {n}x{n}, got {Bi.shape}")
        for name, v in (("g", g), ("x0", x0), ("xd", xd)):
            if v.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got {v.shape}")
        if R.shape != (m, m):
            raise ValueError(f"R must be {m}x{m}, got {R.shape}")
        if not self.tf > 0:
            raise ValueError(f"tf must be positive, got {self.tf}")
        if not self.terminal_weight > 0:
            raise ValueError("terminal_weight must be positive")
        if np.max(np.abs(R - R.T)) > 1e-12 * max(1.0, np.max(np.abs(R))):
            raise ValueError("R must be symmetric")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R must be positive definite") from exc

        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Blist", Blist)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xd", xd)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "_Rinv", np.linalg.inv(R))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def Rinv(self) -> np.ndarray:
        return self._Rinv

    def with_g(self, g: np.ndarray) -> "BilinearProblem":
        return replace(self, g=np.asarray(g, dtype=float))


@dataclass(frozen=True)
class BilinearFactors:
    """The state-indexed factorization of the bilinear term.

    `mats[j]` is the n x m matrix N_j whose column i equals column j of
    B_i, so that (sum_i u_i B_i) x == (sum_j x_j N_j) u for all u, x.
    """

    mats: np.ndarray  # (n, n, m)

    @property
    def n(self) -> int:
        return self.mats.shape[0]

    @property
    def m(self) -> int:
        return self.mats.shape[2]


def bilinear_factors(Blist) -> BilinearFactors:
    """Build the N_j family from the B_i family."""
    Bs = np.stack([np.atleast_2d(np.asarray(Bi, dtype=float)) for Bi in Blist])
    m, n, n2 = Bs.shape
    if n != n2:
        raise ValueError(f"bilinear maps must be square, got {Bs.shape[1:]}")
    # mats[j, k, i] = Bs[i, k, j]
    mats = np.transpose(Bs, (2, 1, 0))
    return BilinearFactors(np.ascontiguousarray(mats))


def input_gain(prob: BilinearProblem, factors: BilinearFactors, x: np.ndarray) -> np.ndarray:
    """State-dependent input map B + sum_j x_j N_j (n x m)."""
    x = np.asarray(x, dtype=float)
    return prob.B + np.tensordot(x, factors.mats, axes=(0, 0))


def frozen_drift(
    prob: BilinearProblem,
    factors: BilinearFactors,
    x: np.ndarray,
    p: np.ndarray,
) -> np.ndarray:
    """Drift matrix of the frozen linear subproblem at the iterate (x, p)."""
    lam = input_gain(prob, factors, x)
    p = np.asarray(p, dtype=float)
    w = prob.Rinv @ (lam.T @ p)  # R^-1 L' p, shape (m,)
    v = np.einsum("jki,k->ji", factors.mats, p)  # N_j' p, shape (n, m)
    # column j of the correction: N_j w + (L R^-1) (N_j' p)
    corr = np.einsum("jki,i->kj", factors.mats, w) + (lam @ prob.Rinv) @ v.T
    return prob.A - corr


def frozen_gram(prob: BilinearProblem, factors: BilinearFactors, x: np.ndarray) -> np.ndarray:
    """Quadratic input weight B R^-1 B' - C R^-1 C' of the frozen subproblem.

    Symmetric by construction; may be indefinite and is consumed directly
    (never factored) downstream.
    """
    x = np.asarray(x, dtype=float)
    C = np.tensordot(x, factors.mats, axes=(0, 0))
    O = prob.B @ prob.Rinv @ prob.B.T - C @ prob.Rinv @ C.T
    return 0.5 * (O + O.T)


def consistency_residual(
    prob: BilinearProblem,
    factors: BilinearFactors,
    x: np.ndarray,
    p: np.ndarray,
) -> float:
    """l1 residual of the change-of-variables identity at (x, p).

    Contract: below 1e-10 for finite inputs; this is the load-bearing fact
    that makes a fixed point of the iteration satisfy the original
    necessary conditions.
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    lam = input_gain(prob, factors, x)
    lhs = frozen_drift(prob, factors, x, p) @ x - frozen_gram(prob, factors, x) @ p
    rhs = prob.A @ x - lam @ (prob.Rinv @ (lam.T @ p))
    return vec_norm(lhs - rhs)
