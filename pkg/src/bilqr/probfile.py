"""JSON problem files.

Two layouts are accepted, discriminated by "kind":

* "single": all fields of one bilinear problem, dimensions explicit,
  matrices as row-major nested arrays, optional additive-noise block.
* "ensemble": parameter box bounds, sample count q, and either a builtin
  scenario name ("scenario") or explicit per-sample coefficient tables
  ("samples").

See the repository README for annotated examples.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .ensemble import STACKING_NOTE, SampleCoefficients, stack_coefficients
from .model import BilinearProblem
from .scenarios import RunSetup, build
from .solver import SolveOptions
from .stochastic import NoiseSpec, expected_reduction, stack_noise

__all__ = ["ProblemFileError", "load_problem_file"]


class ProblemFileError(ValueError):
    """Schema violation in a problem file; the message names the field."""


def _require(data: dict, key: str, ctx: str):
    if key not in data:
        raise ProblemFileError(f"{ctx}: missing field '{key}'")
    return data[key]


def _matrix(data: dict, key: str, rows: int, cols: int, ctx: str) -> np.ndarray:
    raw = _require(data, key, ctx)
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(f"{ctx}: field '{key}' is not numeric") from exc
    if arr.shape != (rows, cols):
        raise ProblemFileError(
            f"{ctx}: field '{key}' must be {rows}x{cols}, got shape {arr.shape}"
        )
    return arr


def _vector(data: dict, key: str, length: int, ctx: str) -> np.ndarray:
    raw = _require(data, key, ctx)
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ProblemFileError(f"{ctx}: field '{key}' is not numeric") from exc
    if arr.shape != (length,):
        raise ProblemFileError(
            f"{ctx}: field '{key}' must have length {length}, got shape {arr.shape}"
        )
    return arr


def _noise(data: dict, n: int, ctx: str) -> NoiseSpec | None:
    if "noise" not in data or data["noise"] is None:
        return None
    block = data["noise"]
    kind = _require(block, "kind", f"{ctx}.noise")
    if kind not in ("poisson", "wiener"):
        raise ProblemFileError(f"{ctx}.noise: unknown kind {kind!r}")
    G = np.asarray(_require(block, "G", f"{ctx}.noise"), dtype=float)
    if G.ndim == 1:
        G = G.reshape(-1, 1)
    if G.shape[0] != n:
        raise ProblemFileError(f"{ctx}.noise: field 'G' must have {n} rows")
    if kind == "poisson":
        lam = np.atleast_1d(np.asarray(_require(block, "lambda", f"{ctx}.noise"), dtype=float))
        try:
            return NoiseSpec("poisson", G, lam)
        except ValueError as exc:
            raise ProblemFileError(f"{ctx}.noise: {exc}") from exc
    return NoiseSpec("wiener", G)


def _coefficients(data: dict, n: int, m: int, ctx: str) -> SampleCoefficients:
    Blist_raw = _require(data, "Blist", ctx)
    if not isinstance(Blist_raw, (list, tuple)) or len(Blist_raw) != m:
        raise ProblemFileError(f"{ctx}: field 'Blist' must hold {m} matrices")
    Blist = tuple(
        _matrix({"Bi": Bi}, "Bi", n, n, f"{ctx}.Blist[{i}]") for i, Bi in enumerate(Blist_raw)
    )
    return SampleCoefficients(
        A=_matrix(data, "A", n, n, ctx),
        B=_matrix(data, "B", n, m, ctx),
        Blist=Blist,
        g=_vector(data, "g", n, ctx),
        x0=_vector(data, "x0", n, ctx),
        xd=_vector(data, "xd", n, ctx),
    )


def _load_single(data: dict, label: str) -> RunSetup:
    ctx = "problem file"
    n = int(_require(data, "n", ctx))
    m = int(_require(data, "m", ctx))
    if n < 1 or m < 1:
        raise ProblemFileError(f"{ctx}: dimensions must be positive, got n={n}, m={m}")
    coeffs = _coefficients(data, n, m, ctx)
    tf = float(_require(data, "tf", ctx))
    R = _matrix(data, "R", m, m, ctx)
    weight = float(data.get("terminal_weight", 1.0))
    try:
        problem = BilinearProblem(
            A=coeffs.A, B=coeffs.B, Blist=coeffs.Blist, g=coeffs.g,
            x0=coeffs.x0, xd=coeffs.xd, tf=tf, R=R, terminal_weight=weight,
        )
    except ValueError as exc:
        raise ProblemFileError(f"{ctx}: {exc}") from exc
    noise = _noise(data, n, ctx)
    if noise is not None and noise.kind == "poisson":
        problem = expected_reduction(problem, noise)
    return RunSetup(
        label=label,
        problem=problem,
        options=SolveOptions(),
        noise=noise,
        base_n=n,
        q=1,
    )


def _load_ensemble(data: dict, label: str) -> RunSetup:
    ctx = "problem file"
    if "scenario" in data:
        name = data["scenario"]
        overrides = {}
        if "q" in data:
            overrides["q"] = int(data["q"])
        return build(name, overrides)

    samples_raw = _require(data, "samples", ctx)
    if not isinstance(samples_raw, list) or not samples_raw:
        raise ProblemFileError(f"{ctx}: field 'samples' must be a non-empty list")
    n = int(_require(data, "n", ctx))
    m = int(_require(data, "m", ctx))
    tf = float(_require(data, "tf", ctx))
    R = _matrix(data, "R", m, m, ctx)
    weighting = data.get("terminal_weighting", "averaged")

    coeffs = []
    noises = []
    for i, sample in enumerate(samples_raw):
        sctx = f"{ctx}.samples[{i}]"
        coeffs.append(_coefficients(sample, n, m, sctx))
        ns = _noise(sample, n, sctx)
        if ns is not None:
            noises.append(ns)
    if noises and len(noises) != len(coeffs):
        raise ProblemFileError(f"{ctx}: either every sample carries noise or none does")
    try:
        problem = stack_coefficients(coeffs, tf, R, weighting)
    except ValueError as exc:
        raise ProblemFileError(f"{ctx}: {exc}") from exc
    noise = stack_noise(noises) if noises else None
    if noise is not None and noise.kind == "poisson":
        problem = expected_reduction(problem, noise)
    betas = data.get("betas", list(range(len(coeffs))))
    return RunSetup(
        label=label,
        problem=problem,
        options=SolveOptions(),
        noise=noise,
        samples=tuple(betas),
        base_n=n,
        q=len(coeffs),
        notes=(STACKING_NOTE,),
    )


def load_problem_file(path: str | Path) -> RunSetup:
    """Parse and validate a problem file into a runnable setup."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ProblemFileError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(
            f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise ProblemFileError(f"{path}: top level must be an object")
    kind = data.get("kind", "single")
    if kind == "single":
        return _load_single(data, label=path.stem)
    if kind == "ensemble":
        return _load_ensemble(data, label=path.stem)
    raise ProblemFileError(f"{path}: field 'kind' must be 'single' or 'ensemble', got {kind!r}")
