import numpy as np
import pytest
from scipy.optimize import minimize

from sgmave.gmave import gmave_fit, gmave_objective
from sgmave.models import GroupedBasis, ShrinkageVector
from sgmave.shrinkage import (
    PenaltyError,
    PenaltySpec,
    ShrinkageDesign,
    assemble_estimator,
    build_design,
    coordinate_descent,
    fit_path,
    kkt_residual,
    lambda_grid,
    lambda_max,
    mcp_threshold,
    penalized_objective,
    scad_threshold,
    soft_threshold,
)
from sgmave.sim import SimConfig, simulate_dataset


def make_design(seed: int = 0, rows: int = 40, p: int = 5) -> ShrinkageDesign:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((rows, p))
    beta = np.zeros(p)
    beta[: max(1, p // 2)] = rng.uniform(0.5, 2.0, size=max(1, p // 2))
    r = X @ beta + 0.3 * rng.standard_normal(rows)
    w = rng.random(rows) + 0.1
    return ShrinkageDesign(X=X, r=r, w=w * rows / w.sum(), n=rows)


def lasso_oracle(design: ShrinkageDesign, lam: float) -> np.ndarray:
    G, c, p = design.gram, design.cross, design.p

    def objective(z):
        alpha = z[:p] - z[p:]
        return 0.5 * alpha @ G @ alpha - c @ alpha + lam * z.sum()

    def gradient(z):
        g = G @ (z[:p] - z[p:]) - c
        return np.concatenate([g + lam, -g + lam])

    result = minimize(objective, np.zeros(2 * p), jac=gradient, method="L-BFGS-B", bounds=[(0, None)] * (2 * p),
                      options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10000})
    return result.x[:p] - result.x[p:]


def test_soft_threshold_examples():
    assert soft_threshold(3.0, 1.0) == 2.0
    assert soft_threshold(-0.5, 1.0) == 0.0
    assert soft_threshold(-1.7, 0.0) == -1.7


def test_soft_threshold_rejects_negative_threshold():
    with pytest.raises(PenaltyError):
        soft_threshold(1.0, -0.1)


def test_scad_threshold_examples():
    assert scad_threshold(1.5, 1.0, 3.7, 1.0) == pytest.approx(0.5)
    assert scad_threshold(3.0, 1.0, 3.7, 1.0) == pytest.approx(4.4 / 1.7)
    assert scad_threshold(3.0, 1.0, 3.7, 1.0) == pytest.approx(2.5882, abs=1e-4)
    assert scad_threshold(5.0, 1.0, 3.7, 1.0) == pytest.approx(5.0)


def test_scad_threshold_rejects_small_shape():
    with pytest.raises(PenaltyError):
        scad_threshold(1.0, 1.0, 2.0, 1.0)


def test_mcp_threshold_examples():
    assert mcp_threshold(1.5, 1.0, 3.0, 1.0) == pytest.approx(0.75)
    assert mcp_threshold(5.0, 1.0, 3.0, 1.0) == pytest.approx(5.0)
    assert mcp_threshold(0.0, 0.7, 4.0, 2.0) == 0.0


def test_mcp_threshold_rejects_small_shape():
    with pytest.raises(PenaltyError):
        mcp_threshold(1.0, 1.0, 0.5, 1.0)
    with pytest.raises(PenaltyError):
        mcp_threshold(1.0, 1.0, 3.0, 0.0)


@pytest.mark.parametrize(
    "operator",
    [
        lambda z: soft_threshold(z, 1.0),
        lambda z: scad_threshold(z, 1.0, 3.7, 1.0),
        lambda z: scad_threshold(z, 0.5, 3.7, 2.0),
        lambda z: mcp_threshold(z, 1.0, 3.0, 1.0),
        lambda z: mcp_threshold(z, 0.5, 3.0, 0.8),
    ],
)
def test_threshold_operators_are_odd_monotone_and_continuous(operator):
    grid = np.arange(-6.0, 6.0 + 1e-9, 1e-3)
    values = np.array([operator(z) for z in grid])
    mirrored = np.array([operator(-z) for z in grid])
    assert np.allclose(values, -mirrored, atol=1e-12)
    steps = np.diff(values)
    assert steps.min() >= -1e-12
    assert steps.max() <= 3e-3


def scad_values(t, lam, a):
    t = np.abs(t)
    middle = (2 * a * lam * t - t**2 - lam**2) / (2 * (a - 1))
    return np.where(t <= lam, lam * t, np.where(t <= a * lam, middle, lam**2 * (a + 1) / 2))


def mcp_values(t, lam, gamma):
    t = np.abs(t)
    return np.where(t <= gamma * lam, lam * t - t**2 / (2 * gamma), gamma * lam**2 / 2)


@pytest.mark.parametrize(
    "operator, penalty, v",
    [
        (lambda z: scad_threshold(z, 1.0, 3.7, 0.3), lambda t: scad_values(t, 1.0, 3.7), 0.3),
        (lambda z: scad_threshold(z, 0.4, 3.7, 0.1), lambda t: scad_values(t, 0.4, 3.7), 0.1),
        (lambda z: scad_threshold(z, 1.0, 3.7, 4.0), lambda t: scad_values(t, 1.0, 3.7), 4.0),
        (lambda z: mcp_threshold(z, 1.0, 3.0, 0.2), lambda t: mcp_values(t, 1.0, 3.0), 0.2),
        (lambda z: mcp_threshold(z, 0.5, 3.0, 5.0), lambda t: mcp_values(t, 0.5, 3.0), 5.0),
    ],
)
def test_thresholds_return_global_minimum_for_any_curvature(operator, penalty, v):
    grid = np.linspace(-80.0, 80.0, 800001)
    for z in np.linspace(-6.0, 6.0, 121):
        objective = 0.5 * v * grid**2 - z * grid + penalty(grid)
        x = operator(z)
        attained = 0.5 * v * x**2 - z * x + float(penalty(np.array([x]))[0])
        assert attained <= objective.min() + 1e-9
        assert x == 0.0 or np.sign(x) == np.sign(z)


def test_scad_threshold_jumps_on_a_concave_coordinate():
    # v (a - 1) < 1: small inputs stay at zero, large ones jump past a * lam
    assert scad_threshold(0.9, 1.0, 3.7, 0.3) == 0.0
    assert scad_threshold(3.0, 1.0, 3.7, 0.3) == pytest.approx(10.0)
    assert scad_threshold(-3.0, 1.0, 3.7, 0.3) == pytest.approx(-10.0)


def test_penalty_spec_validation():
    with pytest.raises(PenaltyError):
        PenaltySpec(kind="bridge")
    with pytest.raises(PenaltyError):
        PenaltySpec(kind="scad", a=2.0)
    with pytest.raises(PenaltyError):
        PenaltySpec(kind="mcp", gamma=1.0)
    with pytest.raises(PenaltyError):
        PenaltySpec(kind="lasso", lambda_=-1.0)
    assert PenaltySpec(kind="SCAD").kind == "scad"


def test_lambda_zero_gives_weighted_least_squares():
    design = make_design()
    solution = coordinate_descent(design, PenaltySpec(kind="lasso", lambda_=0.0))
    assert solution.converged
    assert np.allclose(solution.values, np.linalg.solve(design.gram, design.cross), atol=1e-7)


@pytest.mark.parametrize("kind", ["lasso", "scad", "mcp"])
def test_lambda_max_gives_zero_solution(kind):
    design = make_design(seed=1)
    top = lambda_max(design)
    solution = coordinate_descent(design, PenaltySpec(kind=kind, lambda_=top * 1.0000001))
    assert np.all(solution.values == 0.0)


def test_lasso_matches_convex_oracle_on_random_instances():
    for seed in range(100):
        rng = np.random.default_rng(100 + seed)
        p = int(rng.integers(1, 6))
        design = make_design(seed=100 + seed, rows=int(rng.integers(p + 5, 50)), p=p)
        lam = float(rng.uniform(0.05, 0.8)) * lambda_max(design)
        spec = PenaltySpec(kind="lasso", lambda_=lam)
        solution = coordinate_descent(design, spec)
        oracle = lasso_oracle(design, lam)
        assert penalized_objective(design, spec, solution.values) <= penalized_objective(design, spec, oracle) + 1e-8
        assert solution.kkt_residual <= 1e-7


@pytest.mark.parametrize("kind", ["scad", "mcp"])
def test_non_convex_penalties_reach_stationary_points(kind):
    design = make_design(seed=7, rows=60, p=5)
    for ratio in (0.5, 0.1, 0.01):
        spec = PenaltySpec(kind=kind, lambda_=ratio * lambda_max(design))
        solution = coordinate_descent(design, spec)
        assert solution.converged
        assert kkt_residual(design, spec, solution.values) <= 1e-6


@pytest.mark.parametrize("kind", ["lasso", "scad", "mcp"])
def test_path_is_invariant_to_response_scale(kind):
    # scaling y by 10 scales both the local gradients and the residuals
    design = make_design(seed=8, rows=60, p=5)
    scaled = ShrinkageDesign(X=10.0 * design.X, r=10.0 * design.r, w=design.w, n=design.n)
    assert scaled.curvature.min() > 2.7
    grid = lambda_grid(design, 20, 1e-2)
    path = fit_path(design, kind, grid)
    scaled_path = fit_path(scaled, kind, 100.0 * grid)
    for record, scaled_record in zip(path, scaled_path):
        assert scaled_record.alpha.converged
        assert np.allclose(record.alpha.values, scaled_record.alpha.values, atol=1e-7)
        assert np.array_equal(record.alpha.active(), scaled_record.alpha.active())


@pytest.mark.parametrize("kind", ["lasso", "scad", "mcp"])
def test_coordinate_descent_never_increases_the_objective(kind):
    design = make_design(seed=9, rows=60, p=6)
    spec = PenaltySpec(kind=kind, lambda_=0.05 * lambda_max(design))
    values = [penalized_objective(design, spec, np.zeros(design.p))]
    for sweeps in range(1, 16):
        values.append(penalized_objective(design, spec, coordinate_descent(design, spec, max_sweeps=sweeps).values))
    assert np.all(np.diff(values) <= 1e-12)


def test_lambda_grid_construction():
    design = make_design(seed=2)
    grid = lambda_grid(design, 50, 1e-3)
    assert grid.shape == (50,)
    assert grid[0] == pytest.approx(lambda_max(design))
    assert grid[-1] == pytest.approx(1e-3 * lambda_max(design))
    assert np.all(np.diff(grid) < 0)


def test_fit_path_single_lambda_max_is_all_zero():
    design = make_design(seed=3)
    path = fit_path(design, "lasso", [lambda_max(design)])
    assert len(path) == 1
    assert path.records[0].n_active == 0


def test_fit_path_rejects_increasing_grid():
    with pytest.raises(PenaltyError):
        fit_path(make_design(), "lasso", [0.1, 0.2])


def test_warm_started_path_matches_cold_starts_for_lasso():
    design = make_design(seed=4)
    grid = lambda_grid(design, 20, 1e-2)
    path = fit_path(design, "lasso", grid)
    for record in path:
        cold = coordinate_descent(design, PenaltySpec(kind="lasso", lambda_=record.lambda_))
        assert np.max(np.abs(cold.values - record.alpha.values)) < 1e-5


def test_path_tail_approaches_unpenalised_solution():
    design = make_design(seed=5)
    path = fit_path(design, "lasso", lambda_grid(design, 50, 1e-6))
    unpenalised = np.linalg.solve(design.gram, design.cross)
    assert np.allclose(path.records[-1].alpha.values, unpenalised, atol=1e-3)


def test_assemble_estimator_scales_rows():
    basis = GroupedBasis((np.array([[0.6], [0.8]]), np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])))
    assert all(np.array_equal(a, b) for a, b in zip(assemble_estimator(np.ones(5), basis).blocks, basis.blocks))
    assert all(not np.any(block) for block in assemble_estimator(np.zeros(5), basis).blocks)
    shrunk = assemble_estimator(ShrinkageVector(values=np.array([0.0, 2.0, 1.0, 0.0, 3.0])), basis)
    assert np.allclose(shrunk.blocks[0][:, 0], [0.0, 1.6])
    assert np.allclose(shrunk.blocks[1], [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])


def test_assemble_estimator_checks_dimensions():
    with pytest.raises(PenaltyError):
        assemble_estimator(np.ones(3), GroupedBasis((np.ones((2, 1)), np.ones((2, 1)))))


def test_design_reproduces_unshrunk_refit():
    dataset, groups = simulate_dataset(SimConfig("illus", n=40, p0=4, reps=1, seed=8), 0)
    output = gmave_fit(dataset, groups)
    design = build_design(dataset, groups, output)
    assert design.X.shape == (40 * 40, 8)
    expected = gmave_objective(dataset, output.basis, output.local)
    assert design.weighted_rss(np.ones(8)) == pytest.approx(expected, rel=1e-9)
    assert design.w.sum() == pytest.approx(40.0)


def test_zeroing_a_coordinate_matches_dropping_the_column():
    design = make_design(seed=6, rows=50, p=4)
    reduced = ShrinkageDesign(X=design.X[:, 1:], r=design.r, w=design.w, n=design.n)
    alpha = np.array([0.0, 0.3, -0.2, 1.1])
    assert design.weighted_rss(alpha) == pytest.approx(reduced.weighted_rss(alpha[1:]), rel=1e-12)
