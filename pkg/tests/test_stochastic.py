import numpy as np
import pytest

from bilqr.model import BilinearProblem
from bilqr.numkit import GriddedTrajectory, TimeGrid, integrate_forward
from bilqr.stochastic import (
    NoiseSpec,
    expected_reduction,
    mean_consistency,
    simulate_poisson_paths,
    simulate_wiener_paths,
    stack_noise,
)


def drift_problem(n=1, g=None):
    if n == 1:
        return BilinearProblem(
            A=[[-1.25]], B=[[2.0]], Blist=([[-2.0]],), g=g if g is not None else [0.0],
            x0=[0.0], xd=[0.5], tf=10.0, R=[[5.0]],
        )
    raise NotImplementedError


def zero_drift_problem():
    return BilinearProblem(
        A=np.zeros((2, 2)), B=np.zeros((2, 1)), Blist=(np.zeros((2, 2)),),
        g=np.zeros(2), x0=np.zeros(2), xd=np.zeros(2), tf=1.0, R=[[1.0]],
    )


def zero_control(grid, m=1):
    return GriddedTrajectory(grid, np.zeros((grid.steps + 1, m)))


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseSpec("poisson", [[0.1]])  # missing rates
    with pytest.raises(ValueError):
        NoiseSpec("poisson", [[0.1]], [-1.0])
    with pytest.raises(ValueError):
        NoiseSpec("wiener", [[0.1]], [1.0])
    with pytest.raises(ValueError):
        NoiseSpec("brownian", [[0.1]])


def test_expected_reduction_values():
    prob = drift_problem()
    poisson = NoiseSpec("poisson", [[0.15]], [2.0])
    reduced = expected_reduction(prob, poisson)
    assert reduced.g[0] == pytest.approx(0.3)
    wiener = NoiseSpec("wiener", [[0.15]])
    assert expected_reduction(prob, wiener).g[0] == 0.0
    # continuity as the rate vanishes
    small = expected_reduction(prob, NoiseSpec("poisson", [[0.15]], [1e-9]))
    assert abs(small.g[0]) < 1e-9


def test_stack_noise_block_structure():
    stacked = stack_noise([NoiseSpec("poisson", [[0.1]], [2.0]),
                           NoiseSpec("poisson", [[0.3]], [4.0])])
    assert stacked.G.shape == (2, 2)
    assert stacked.G[0, 0] == 0.1 and stacked.G[1, 1] == 0.3
    assert stacked.G[0, 1] == 0.0
    np.testing.assert_array_equal(stacked.lam, [2.0, 4.0])


def test_poisson_paths_seeded_reproducibility():
    prob = drift_problem(g=[0.0])
    grid = TimeGrid(0.0, prob.tf, 200)
    noise = NoiseSpec("poisson", [[0.15]], [2.0])
    u = zero_control(grid)
    b1 = simulate_poisson_paths(prob, noise, u, M=50, seed=42)
    b2 = simulate_poisson_paths(prob, noise, u, M=50, seed=42)
    assert np.array_equal(b1.states, b2.states)
    assert np.array_equal(b1.jump_counts, b2.jump_counts)
    b3 = simulate_poisson_paths(prob, noise, u, M=50, seed=43)
    assert not np.array_equal(b1.states, b3.states)


def test_poisson_zero_gain_matches_deterministic():
    prob = drift_problem(g=[0.3])
    grid = TimeGrid(0.0, prob.tf, 300)
    noise = NoiseSpec("poisson", [[0.0]], [2.0])
    u = zero_control(grid)
    batch = simulate_poisson_paths(prob, noise, u, M=5, seed=1)
    det = integrate_forward(lambda t, y: prob.A @ y + prob.g, prob.x0, grid)
    for j in range(5):
        assert np.max(np.abs(batch.states[j] - det.values)) < 1e-8


def test_poisson_jump_count_mean():
    prob = drift_problem(g=[0.0])
    grid = TimeGrid(0.0, prob.tf, 50)
    noise = NoiseSpec("poisson", [[0.15]], [2.0])
    batch = simulate_poisson_paths(prob, noise, zero_control(grid), M=10_000, seed=7)
    mean_jumps = batch.jump_counts.mean()
    assert 19.0 <= mean_jumps <= 21.0  # rate 2 over [0, 10]


def test_poisson_jump_adds_gain_column():
    # no drift at all: the path is a staircase of G-column increments
    prob = BilinearProblem(A=[[0.0]], B=[[1.0]], Blist=([[0.0]],), g=[0.0],
                           x0=[0.0], xd=[0.0], tf=5.0, R=[[1.0]])
    grid = TimeGrid(0.0, 5.0, 100)
    noise = NoiseSpec("poisson", [[0.25]], [1.5])
    batch = simulate_poisson_paths(prob, noise, zero_control(grid), M=40, seed=3)
    finals = batch.states[:, -1, 0]
    np.testing.assert_allclose(finals, 0.25 * batch.jump_counts[:, 0], atol=1e-12)


def test_wiener_paths_variance_growth():
    prob = zero_drift_problem()
    grid = TimeGrid(0.0, 1.0, 200)
    G = np.array([[0.5, 0.0], [0.2, 0.3]])
    noise = NoiseSpec("wiener", G)
    batch = simulate_wiener_paths(prob, noise, zero_control(grid), M=100_000, seed=11)
    var = batch.states[:, -1, :].var(axis=0, ddof=1)
    expected = np.diag(G @ G.T) * 1.0
    assert np.all(np.abs(var - expected) <= 0.05 * expected)


def test_wiener_zero_gain_matches_deterministic():
    prob = drift_problem(g=[0.3])
    grid = TimeGrid(0.0, prob.tf, 1000)
    noise = NoiseSpec("wiener", [[0.0]])
    batch = simulate_wiener_paths(prob, noise, zero_control(grid), M=3, seed=5)
    det = integrate_forward(lambda t, y: prob.A @ y + prob.g, prob.x0, grid)
    # Euler drift vs RK4: agreement at the Euler accuracy level, O(h)
    assert np.max(np.abs(batch.states[0] - det.values)) < 1e-3


def test_wiener_mean_tracks_deterministic():
    prob = drift_problem(g=[0.0])
    grid = TimeGrid(0.0, prob.tf, 200)
    noise = NoiseSpec("wiener", [[0.2]])
    batch = simulate_wiener_paths(prob, noise, zero_control(grid), M=20_000, seed=13)
    det = integrate_forward(lambda t, y: prob.A @ y + prob.g, prob.x0, grid)
    report = mean_consistency(batch, det)
    assert report.max_standardized_deviation < 4.0


def test_mean_consistency_identical_paths():
    grid = TimeGrid(0.0, 1.0, 10)
    ref = GriddedTrajectory(grid, np.linspace(0, 1, 11).reshape(-1, 1))
    states = np.tile(ref.values, (4, 1, 1))
    from bilqr.stochastic import PathBatch

    batch = PathBatch(paths=4, grid=grid, states=states, rng_seed=0)
    report = mean_consistency(batch, ref)
    assert report.max_standardized_deviation == 0.0


def test_mean_consistency_flags_shifted_reference():
    rng = np.random.default_rng(0)
    grid = TimeGrid(0.0, 1.0, 5)
    states = rng.normal(size=(500, 6, 1))
    from bilqr.stochastic import PathBatch

    batch = PathBatch(paths=500, grid=grid, states=states, rng_seed=0)
    stderr = states.std(axis=0, ddof=1) / np.sqrt(500)
    shifted = GriddedTrajectory(grid, states.mean(axis=0) + 10.0 * stderr)
    report = mean_consistency(batch, shifted)
    assert report.max_standardized_deviation > 8.0


def test_mean_consistency_single_path_not_gated():
    grid = TimeGrid(0.0, 1.0, 5)
    from bilqr.stochastic import PathBatch

    batch = PathBatch(paths=1, grid=grid, states=np.zeros((1, 6, 1)), rng_seed=0)
    ref = GriddedTrajectory(grid, np.zeros((6, 1)))
    report = mean_consistency(batch, ref)
    assert np.isnan(report.max_standardized_deviation)


def test_poisson_mean_tracks_expected_reduction():
    raw = drift_problem(g=[0.0])
    noise = NoiseSpec("poisson", [[0.15]], [2.0])
    reduced = expected_reduction(raw, noise)
    grid = TimeGrid(0.0, raw.tf, 200)
    u = zero_control(grid)
    batch = simulate_poisson_paths(raw, noise, u, M=4000, seed=21)
    det = integrate_forward(lambda t, y: reduced.A @ y + reduced.g, reduced.x0, grid)
    report = mean_consistency(batch, det)
    assert report.max_standardized_deviation < 4.0
