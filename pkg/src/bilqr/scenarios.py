"""Built-in scenario constructors and their reporting metrics.

Three families are provided:

* ``iaf_case1`` / ``iaf_case2``: an ensemble of leaky integrate-and-fire
  neurons with conductance input u (E - x) and Poisson membrane noise,
  reduced to its expected dynamics and driven to a firing level.
* ``bloch_broadband``: an ensemble of two-level Bloch systems over a
  detuning band, steered from the pole to a transverse target by a shared
  two-channel pulse.
* ``twospin_coherence``: a single six-state two-spin system with
  relaxation, driven to maximize transfer into its last coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import (
    STACKING_NOTE,
    EnsembleSpec,
    SampleCoefficients,
    sample_uniform,
    stack_problem,
)
from .model import BilinearProblem
from .solver import SolveOptions, SolveResult
from .stochastic import NoiseSpec, expected_reduction, stack_noise

__all__ = [
    "SCENARIO_IDS",
    "RunSetup",
    "build",
    "scenario_metrics",
]

SCENARIO_IDS = ("iaf_case1", "iaf_case2", "bloch_broadband", "twospin_coherence")

OVERRIDE_KEYS = ("q", "steps", "r_scale", "tol")

# Parameter-table ambiguities resolved at build time; recorded verbatim in
# every run summary that uses the affected scenario.
NOTE_TWOSPIN_R = (
    "twospin_coherence: the control weight is taken as 1.8 I_2 (u is "
    "2-dimensional; a 6x6 weight would not conform)"
)
NOTE_TWOSPIN_COORD = (
    "twospin_coherence: the transfer metric reports state coordinate 6, the "
    "coordinate selected by the target state; source naming for this "
    "coordinate is inconsistent (x2 vs z2)"
)
NOTE_BLOCH_R = (
    "bloch_broadband: the control weight is taken as I_2 (u is 2-dimensional; "
    "a 3x3 weight would not conform)"
)
NOTE_IAF2_R = (
    "iaf_case2: control weight 5 is the default; 3 is a documented alternate "
    "(apply with the r_scale override)"
)
NOTE_IAF_TARGET = (
    "iaf scenarios: the firing level is the nominal steering goal; at the "
    "stated control weight the optimal terminal mean settles below it "
    "(the averaged terminal penalty prices the miss lower than the energy)"
)
NOTE_TWOSPIN_DARK = (
    "twospin_coherence: the initial state is dark for the frozen-gain "
    "iteration (zero control is a fixed point); the run starts from a probe "
    "pulse and the iteration settles back toward the dark point, so the "
    "reported transfer tracks the transient, not a nontrivial optimum"
)


@dataclass(frozen=True)
class RunSetup:
    """Everything a run needs: the solvable problem plus its provenance."""

    label: str
    problem: BilinearProblem
    options: SolveOptions
    noise: NoiseSpec | None = None
    spec: EnsembleSpec | None = None
    samples: tuple = ()
    base_n: int = 0
    q: int = 1
    notes: tuple = ()

    @property
    def is_ensemble(self) -> bool:
        return self.spec is not None


def _check_overrides(overrides: dict | None) -> dict:
    overrides = dict(overrides or {})
    unknown = set(overrides) - set(OVERRIDE_KEYS)
    if unknown:
        raise ValueError(
            f"unknown override(s) {sorted(unknown)}; allowed: {list(OVERRIDE_KEYS)}"
        )
    return overrides


def _iaf_setup(case: str, overrides: dict) -> RunSetup:
    if case == "iaf_case1":
        box = (1.2, 1.3)  # decay-rate dispersion
        gamma = 2.0
        xd = 0.5
        G, lam = 0.15, 2.0

        def coeff(beta):
            return SampleCoefficients(
                A=np.array([[-beta]]),
                B=np.array([[gamma * 1.0]]),
                Blist=(np.array([[-gamma]]),),
                g=np.zeros(1),
                x0=np.zeros(1),
                xd=np.array([xd]),
            )

        notes = (NOTE_IAF_TARGET, STACKING_NOTE)
    else:
        box = (1.8, 2.2)  # responsiveness dispersion
        alpha = 2.6
        xd = 0.2
        G, lam = 0.1, 4.0

        def coeff(beta):
            return SampleCoefficients(
                A=np.array([[-alpha]]),
                B=np.array([[beta * 1.0]]),
                Blist=(np.array([[-beta]]),),
                g=np.zeros(1),
                x0=np.zeros(1),
                xd=np.array([xd]),
            )

        notes = (NOTE_IAF2_R, NOTE_IAF_TARGET, STACKING_NOTE)

    q = int(overrides.get("q", 20))
    R = np.array([[5.0 * float(overrides.get("r_scale", 1.0))]])
    spec = EnsembleSpec(
        box=(box,),
        q=q,
        coefficients=coeff,
        base_n=1,
        base_m=1,
        tf=10.0,
        R=R,
    )
    samples = sample_uniform(spec)
    stacked = stack_problem(spec, samples)
    noise = stack_noise([NoiseSpec("poisson", np.array([[G]]), np.array([lam]))] * len(samples))
    problem = expected_reduction(stacked, noise)
    options = SolveOptions(
        steps=int(overrides.get("steps", 2000)),
        max_iters=100,
        tol=float(overrides.get("tol", 1e-12)),
    )
    return RunSetup(
        label=case,
        problem=problem,
        options=options,
        noise=noise,
        spec=spec,
        samples=tuple(samples),
        base_n=1,
        q=len(samples),
        notes=notes,
    )


def _bloch_setup(overrides: dict) -> RunSetup:
    B1 = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    B2 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])

    def coeff(omega):
        return SampleCoefficients(
            A=np.array([[0.0, -omega, 0.0], [omega, 0.0, 0.0], [0.0, 0.0, 0.0]]),
            B=np.zeros((3, 2)),
            Blist=(B1, B2),
            g=np.zeros(3),
            x0=np.array([0.0, 0.0, 1.0]),
            xd=np.array([1.0, 0.0, 0.0]),
        )

    q = int(overrides.get("q", 81))
    R = np.eye(2) * float(overrides.get("r_scale", 1.0))
    spec = EnsembleSpec(
        box=((-1.0, 1.0),),
        q=q,
        coefficients=coeff,
        base_n=3,
        base_m=2,
        tf=20.0,
        R=R,
    )
    samples = sample_uniform(spec)
    problem = stack_problem(spec, samples)
    # the plain map oscillates on this family; a half-step relaxation damps it
    options = SolveOptions(
        steps=int(overrides.get("steps", 2000)),
        max_iters=500,
        tol=float(overrides.get("tol", 1e-4)),
        relaxation=0.5,
    )
    return RunSetup(
        label="bloch_broadband",
        problem=problem,
        options=options,
        spec=spec,
        samples=tuple(samples),
        base_n=3,
        q=len(samples),
        notes=(NOTE_BLOCH_R, STACKING_NOTE),
    )


def twospin_drift(J: float = 0.5, xi_a: float = 1.0, xi_c: float = 0.8,
                  w1: float = 0.5, w2: float = 0.5) -> np.ndarray:
    """Control-free part of the two-spin generator."""
    return np.array(
        [
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, -xi_a, w1, J, -xi_c, 0.0],
            [0.0, -w1, -xi_a, -xi_c, J, 0.0],
            [0.0, J, -xi_c, -xi_a, -w2, 0.0],
            [0.0, -xi_c, J, w2, -xi_a, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        ]
    )


TWOSPIN_B1 = np.zeros((6, 6))
TWOSPIN_B1[0, 1] = -1.0
TWOSPIN_B1[1, 0] = 1.0
TWOSPIN_B1[4, 5] = 1.0
TWOSPIN_B1[5, 4] = -1.0

TWOSPIN_B2 = np.zeros((6, 6))
TWOSPIN_B2[0, 2] = 1.0
TWOSPIN_B2[2, 0] = -1.0
TWOSPIN_B2[3, 5] = -1.0
TWOSPIN_B2[5, 3] = 1.0

TWOSPIN_TRANSFER_INDEX = 5  # coordinate selected by the target state


def _twospin_setup(overrides: dict) -> RunSetup:
    if "q" in overrides:
        raise ValueError("twospin_coherence is a single system; q does not apply")
    R = 1.8 * float(overrides.get("r_scale", 1.0)) * np.eye(2)
    problem = BilinearProblem(
        A=twospin_drift(),
        B=np.zeros((6, 2)),
        Blist=(TWOSPIN_B1.copy(), TWOSPIN_B2.copy()),
        g=np.zeros(6),
        x0=np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        xd=np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        tf=5.0,
        R=R,
    )
    options = SolveOptions(
        steps=int(overrides.get("steps", 2000)),
        max_iters=800,
        tol=float(overrides.get("tol", 1e-6)),
        record_diagnostics=True,
        diag_subsample=20,
        init_control=0.2,
    )
    return RunSetup(
        label="twospin_coherence",
        problem=problem,
        options=options,
        base_n=6,
        q=1,
        notes=(NOTE_TWOSPIN_R, NOTE_TWOSPIN_COORD, NOTE_TWOSPIN_DARK),
    )


def build(scenario_id: str, overrides: dict | None = None) -> RunSetup:
    """Construct a scenario run setup, applying any named overrides."""
    overrides = _check_overrides(overrides)
    if scenario_id in ("iaf_case1", "iaf_case2"):
        return _iaf_setup(scenario_id, overrides)
    if scenario_id == "bloch_broadband":
        return _bloch_setup(overrides)
    if scenario_id == "twospin_coherence":
        return _twospin_setup(overrides)
    raise ValueError(f"unknown scenario {scenario_id!r}; known: {list(SCENARIO_IDS)}")


def scenario_metrics(setup: RunSetup, result: SolveResult) -> dict:
    """Scenario-specific scalars for the run summary."""
    X = result.final.x.values
    if setup.label in ("iaf_case1", "iaf_case2"):
        terminal = X[-1]
        return {
            "terminal_mean": float(np.mean(terminal)),
            "terminal_values": [float(v) for v in terminal],
        }
    if setup.label == "bloch_broadband":
        finals = X[-1].reshape(setup.q, setup.base_n)
        return {
            "omegas": [float(b) for b in setup.samples],
            "final_x_components": [float(v) for v in finals[:, 0]],
        }
    if setup.label == "twospin_coherence":
        transfer = X[:, TWOSPIN_TRANSFER_INDEX]
        peak = int(np.argmax(transfer))
        return {
            "max_transfer": float(transfer[peak]),
            "max_transfer_time": float(result.final.x.grid.nodes[peak]),
        }
    return {}
