import numpy as np
import pytest

from sgmave.config import FitOptions
from sgmave.gmave import (
    basis_normal_equations,
    gmave_fit,
    initial_basis,
    linear_start,
    pair_differences,
    solve_basis,
    solve_local,
)
from sgmave.models import Dataset, GroupedBasis, GroupStructure, LocalFit
from sgmave.sim import SimConfig, simulate_dataset
from sgmave.smoothing import KernelConfig, index_weights


def make_linear_dataset(n: int = 40, seed: int = 0, intercept: float = 1.0):
    rng = np.random.default_rng(seed)
    groups = GroupStructure(sizes=(3, 3), dims=(1, 1))
    V = rng.standard_normal((n, 6))
    beta1 = np.array([1.0, -1.0, 0.0])
    beta2 = np.array([0.0, 1.0, 2.0])
    y = intercept + V[:, :3] @ beta1 + 2.0 * V[:, 3:] @ beta2
    truth = GroupedBasis((beta1[:, None] / np.linalg.norm(beta1), beta2[:, None] / np.linalg.norm(beta2)))
    return Dataset(V=V, y=y), groups, truth, (np.linalg.norm(beta1), 2.0 * np.linalg.norm(beta2))


def make_weights(dataset: Dataset, basis: GroupedBasis, h: float = 1.0) -> np.ndarray:
    return index_weights(basis.project(dataset.V), KernelConfig(h))


def test_local_fit_of_constant_response():
    dataset, groups, truth, _ = make_linear_dataset()
    constant = Dataset(V=dataset.V, y=np.full(dataset.n, 2.5))
    local = solve_local(constant, groups, truth, make_weights(constant, truth))
    assert np.allclose(local.a, 2.5, atol=1e-6)
    assert np.allclose(local.b, 0.0, atol=1e-6)


def test_local_fit_is_exact_for_linear_response():
    dataset, groups, truth, slopes = make_linear_dataset()
    local = solve_local(dataset, groups, truth, make_weights(dataset, truth))
    U = truth.project(dataset.V)
    assert np.allclose(local.a, 1.0 + U @ np.array(slopes), atol=1e-5)
    assert np.allclose(local.b, np.array(slopes)[None, :], atol=1e-5)
    assert not local.degenerate.any()


def test_local_fit_matches_weighted_least_squares_oracle():
    rng = np.random.default_rng(11)
    dataset = Dataset(V=rng.standard_normal((8, 3)), y=rng.standard_normal(8))
    groups = GroupStructure(sizes=(3,), dims=(1,))
    basis = GroupedBasis((np.array([[0.6], [0.8], [0.0]]),))
    W = make_weights(dataset, basis, h=0.8)
    local = solve_local(dataset, groups, basis, W, ridge=0.0)

    U = basis.project(dataset.V)[:, 0]
    for i in range(dataset.n):
        X = np.column_stack([np.ones(8), U - U[i]])
        sw = np.sqrt(W[i])
        coef, *_ = np.linalg.lstsq(X * sw[:, None], dataset.y * sw, rcond=None)
        assert local.a[i] == pytest.approx(coef[0], abs=1e-8)
        assert local.b[i, 0] == pytest.approx(coef[1], abs=1e-8)


def test_basis_normal_equations_match_explicit_rows():
    rng = np.random.default_rng(5)
    n = 6
    groups = GroupStructure(sizes=(2, 2), dims=(1, 1))
    dataset = Dataset(V=rng.standard_normal((n, 4)), y=rng.standard_normal(n))
    W = rng.random((n, n))
    W /= W.sum(axis=1, keepdims=True)
    local = LocalFit(a=rng.standard_normal(n), b=rng.standard_normal((n, 2)), weights=W)

    M, rhs = basis_normal_equations(dataset, groups, local)
    D = pair_differences(dataset.V)
    M_oracle = np.zeros_like(M)
    rhs_oracle = np.zeros_like(rhs)
    for i in range(n):
        for j in range(n):
            row = np.kron(local.b[i], D[i, j])
            M_oracle += W[i, j] * np.outer(row, row)
            rhs_oracle += W[i, j] * (dataset.y[j] - local.a[i]) * row
    assert np.allclose(M, M_oracle, atol=1e-10)
    assert np.allclose(rhs, rhs_oracle, atol=1e-10)


def test_solve_basis_keeps_previous_basis_when_slopes_vanish():
    dataset, groups, truth, _ = make_linear_dataset()
    n = dataset.n
    local = LocalFit(a=np.zeros(n), b=np.zeros((n, 2)), weights=np.full((n, n), 1.0 / n))
    basis = solve_basis(dataset, groups, local, truth)
    assert basis.projection_gap(truth) < 1e-12


def test_solve_basis_recovers_linear_directions():
    dataset, groups, truth, slopes = make_linear_dataset()
    local = solve_local(dataset, groups, truth, make_weights(dataset, truth))
    basis = solve_basis(dataset, groups, local, initial_basis(dataset, groups))
    assert basis.projection_gap(truth) < 1e-6


def test_initial_basis_is_orthonormal_and_sign_normalised():
    dataset, groups, _, _ = make_linear_dataset()
    basis = initial_basis(dataset, groups)
    for block in basis.blocks:
        assert np.allclose(block.T @ block, np.eye(block.shape[1]))
        first = block[np.flatnonzero(np.abs(block[:, 0]) > 1e-12)[0], 0]
        assert first > 0


def test_initial_basis_falls_back_to_coordinates_for_constant_response():
    dataset, groups, _, _ = make_linear_dataset()
    basis = initial_basis(Dataset(V=dataset.V, y=np.ones(dataset.n)), groups)
    assert np.allclose(basis.blocks[0][:, 0], [1.0, 0.0, 0.0])


def test_gmave_recovers_noiseless_linear_model():
    dataset, groups, truth, _ = make_linear_dataset(n=50)
    result = gmave_fit(dataset, groups, FitOptions())
    assert result.converged
    assert result.iterations <= 20
    assert result.basis.projection_gap(truth) < 1e-4
    for block in result.basis.blocks:
        assert np.allclose(block.T @ block, np.eye(block.shape[1]), atol=1e-10)


def test_refined_weights_come_from_the_alternation_basis():
    dataset, groups = simulate_dataset(SimConfig("illus", n=50, p0=4, reps=1, seed=3), 0)
    result = gmave_fit(dataset, groups)
    expected = index_weights(result.alternation_basis.project(dataset.V), KernelConfig(result.bandwidth))
    assert np.allclose(result.local.weights, expected, atol=1e-14)
    assert np.allclose(result.local.weights.sum(axis=1), 1.0, atol=1e-12)


def test_alternation_does_not_increase_fixed_weight_objective():
    dataset, groups = simulate_dataset(SimConfig("illus", n=60, p0=5, reps=1, seed=1), 0)
    result = gmave_fit(dataset, groups)
    assert result.descent_violations == 0
    for before, after in result.objective_trace:
        assert after <= before + 1e-9 * (1 + abs(before))


def test_gmave_is_equivariant_under_group_rotations():
    dataset, groups = simulate_dataset(SimConfig("illus", n=50, p0=4, reps=1, seed=2), 0)
    rng = np.random.default_rng(9)
    Q1, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    Q2, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    rotated = Dataset(V=np.hstack([dataset.V[:, :4] @ Q1, dataset.V[:, 4:] @ Q2]), y=dataset.y)

    original = gmave_fit(dataset, groups)
    turned = gmave_fit(rotated, groups)
    back = GroupedBasis((Q1 @ turned.basis.blocks[0], Q2 @ turned.basis.blocks[1]))
    assert back.projection_gap(original.basis) < 1e-6


def test_gmave_is_deterministic():
    dataset, groups = simulate_dataset(SimConfig("illus", n=40, p0=4, reps=1, seed=4), 0)
    first = gmave_fit(dataset, groups)
    second = gmave_fit(dataset, groups)
    for a, b in zip(first.basis.blocks, second.basis.blocks):
        assert np.array_equal(a, b)


def test_gmave_reports_non_convergence_without_raising():
    dataset, groups = simulate_dataset(SimConfig("illus", n=40, p0=4, reps=1, seed=5), 0)
    result = gmave_fit(dataset, groups, FitOptions(max_iter=1, tol=1e-300))
    assert not result.converged
    assert result.iterations == 1


def make_factor_dataset(n: int = 60, seed: int = 0, loading: float = 3.0):
    # a shared factor dominates every column; the first group's direction is a contrast
    rng = np.random.default_rng(seed)
    groups = GroupStructure(sizes=(3, 3), dims=(1, 1))
    V = rng.standard_normal((n, 6)) + loading * rng.standard_normal((n, 1))
    beta1 = np.array([1.0, -1.0, 0.0])
    beta2 = np.array([0.0, 1.0, 2.0])
    y = V[:, :3] @ beta1 + 2.0 * V[:, 3:] @ beta2
    truth = GroupedBasis((beta1[:, None] / np.linalg.norm(beta1), beta2[:, None] / np.linalg.norm(beta2)))
    return Dataset(V=V, y=y), groups, truth


def test_linear_start_undoes_a_common_factor():
    dataset, groups, truth = make_factor_dataset()
    moment = initial_basis(dataset, groups)
    linear = linear_start(dataset, groups, moment)
    assert GroupedBasis(moment.blocks[:1]).projection_gap(GroupedBasis(truth.blocks[:1])) > 0.5
    assert linear.projection_gap(truth) < 1e-8
    for block in linear.blocks:
        assert np.allclose(block.T @ block, np.eye(block.shape[1]))


def test_linear_start_keeps_the_fallback_without_a_linear_trend():
    dataset, groups, _, _ = make_linear_dataset()
    fallback = initial_basis(dataset, groups)
    flat = Dataset(V=dataset.V, y=np.ones(dataset.n))
    assert linear_start(flat, groups, fallback).projection_gap(fallback) == 0.0


def test_linear_start_completes_two_dimensional_blocks():
    dataset, _, _, _ = make_linear_dataset()
    groups = GroupStructure(sizes=(3, 3), dims=(2, 1))
    basis = linear_start(dataset, groups, initial_basis(dataset, groups))
    assert basis.blocks[0].shape == (3, 2)
    assert np.allclose(basis.blocks[0].T @ basis.blocks[0], np.eye(2))
    direction = np.array([1.0, -1.0, 0.0]) / np.sqrt(2.0)
    assert np.linalg.norm(basis.blocks[0].T @ direction) == pytest.approx(1.0)


def test_gmave_recovers_contrasts_under_a_common_factor():
    dataset, groups, truth = make_factor_dataset()
    result = gmave_fit(dataset, groups)
    assert result.basis.projection_gap(truth) < 1e-3
    assert result.start in ("moment", "linear")


def test_single_start_uses_the_response_moment():
    dataset, groups, _ = make_factor_dataset()
    result = gmave_fit(dataset, groups, FitOptions(multi_start=False))
    assert result.start == "moment"
