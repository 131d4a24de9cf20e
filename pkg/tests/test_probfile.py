import json

import numpy as np
import pytest

from bilqr.probfile import ProblemFileError, load_problem_file


def write(tmp_path, payload, name="prob.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload, indent=1))
    return path


def single_payload():
    return {
        "kind": "single",
        "n": 2,
        "m": 1,
        "A": [[0.0, 1.0], [-2.0, -3.0]],
        "B": [[0.0], [1.0]],
        "Blist": [[[0.0, 0.0], [0.0, 0.0]]],
        "g": [0.5, -0.2],
        "x0": [1.0, 0.0],
        "xd": [0.3, -0.1],
        "tf": 2.0,
        "R": [[2.0]],
    }


def test_load_single(tmp_path):
    setup = load_problem_file(write(tmp_path, single_payload()))
    assert setup.problem.n == 2
    assert setup.problem.m == 1
    assert setup.q == 1
    assert setup.noise is None


def test_single_with_poisson_noise_reduces(tmp_path):
    payload = single_payload()
    payload["g"] = [0.0, 0.0]
    payload["noise"] = {"kind": "poisson", "G": [[0.15], [0.0]], "lambda": [2.0]}
    setup = load_problem_file(write(tmp_path, payload))
    assert setup.noise is not None
    np.testing.assert_allclose(setup.problem.g, [0.3, 0.0])


def test_missing_field_named(tmp_path):
    payload = single_payload()
    del payload["xd"]
    with pytest.raises(ProblemFileError, match="'xd'"):
        load_problem_file(write(tmp_path, payload))


def test_bad_shape_named(tmp_path):
    payload = single_payload()
    payload["A"] = [[0.0, 1.0]]
    with pytest.raises(ProblemFileError, match="'A'"):
        load_problem_file(write(tmp_path, payload))


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n "kind": "single",\n "n": oops\n}')
    with pytest.raises(ProblemFileError, match="line 3"):
        load_problem_file(path)


def test_non_spd_R_rejected(tmp_path):
    payload = single_payload()
    payload["R"] = [[-1.0]]
    with pytest.raises(ProblemFileError, match="positive definite"):
        load_problem_file(write(tmp_path, payload))


def test_ensemble_with_samples(tmp_path):
    payload = {
        "kind": "ensemble",
        "n": 1,
        "m": 1,
        "tf": 2.0,
        "R": [[2.0]],
        "betas": [0.0, 1.0],
        "samples": [
            {"A": [[-1.0]], "B": [[1.0]], "Blist": [[[-0.5]]],
             "g": [0.1], "x0": [0.0], "xd": [0.3]},
            {"A": [[-1.3]], "B": [[1.0]], "Blist": [[[-0.5]]],
             "g": [0.1], "x0": [0.0], "xd": [0.3]},
        ],
    }
    setup = load_problem_file(write(tmp_path, payload))
    assert setup.q == 2
    assert setup.problem.n == 2
    assert setup.problem.terminal_weight == pytest.approx(0.5)
    assert setup.problem.A[0, 0] == -1.0
    assert setup.problem.A[1, 1] == -1.3
    assert setup.problem.A[0, 1] == 0.0


def test_ensemble_builtin_scenario(tmp_path):
    payload = {"kind": "ensemble", "scenario": "iaf_case1", "q": 4}
    setup = load_problem_file(write(tmp_path, payload))
    assert setup.q == 4
    np.testing.assert_allclose(setup.problem.g, 0.3)


def test_unknown_kind(tmp_path):
    with pytest.raises(ProblemFileError, match="kind"):
        load_problem_file(write(tmp_path, {"kind": "batch"}))
