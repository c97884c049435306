import numpy as np
import pytest

from mldual.critsys import (
    DomainError,
    assemble,
    critical_residual,
    factor_point,
    fiber_data_space,
    fiber_sample,
    gauge_dim,
    make_critical_point,
    make_gauge,
    start_system,
)
from mldual.models import DegeneracyError, ModelSpec, ambient_dim, model_dim, random_point
from mldual.numkit import rel_distance, symplectic_form
from mldual.tracker import newton_refine
from checks import fd_jacobian_error, random_evaluation_points
from reference_data import DEGENERATE_P, DEGENERATE_U

KIND_SPECS = [ModelSpec("rect", 3, 3, 2), ModelSpec("rect", 3, 5, 2), ModelSpec("rect", 4, 4, 3),
              ModelSpec("sym", 4, 4, 2), ModelSpec("sym", 4, 4, 3), ModelSpec("skew", 4, 4, 2),
              ModelSpec("skew", 5, 5, 4)]


def test_rect_square_count():
    system, x = start_system(ModelSpec("rect", 3, 3, 2), 0)
    F, J = system.evaluate(x)
    assert system.nvars == 9 and len(F) == 9 and J.shape == (9, 9)


@pytest.mark.parametrize("spec", [ModelSpec("sym", 4, 4, 2), ModelSpec("skew", 4, 4, 2)], ids=str)
def test_sym_skew_square_counts(spec):
    system, x = start_system(spec, 0)
    F, J = system.evaluate(x)
    assert system.nvars == 9 and J.shape == (9, 9)
    assert len(system.gauge.slice_rhs) == gauge_dim(spec) == (1 if spec.kind == "sym" else 3)


@pytest.mark.parametrize("spec", KIND_SPECS, ids=str)
def test_fiber_sample_residuals(spec):
    for seed in range(3):
        system, x = start_system(spec, seed)
        F, _ = system.evaluate(x)
        assert np.linalg.norm(F) <= 1e-10
        assert np.linalg.norm(system.full_equations(x)) <= 1e-10
        point, U = fiber_sample(spec, seed)
        assert point.residual <= 1e-10
        assert critical_residual(spec, point.P, U) <= 1e-10


def test_fiber_dimension_rect():
    P = random_point(ModelSpec("rect", 3, 3, 2), 0).P
    assert fiber_data_space(ModelSpec("rect", 3, 3, 2), P).shape[1] == 2
    spec = ModelSpec("sym", 4, 4, 2)
    P = random_point(spec, 0).P
    assert fiber_data_space(spec, P).shape[1] == ambient_dim(spec) - model_dim(spec)


def test_seeds_give_distinct_valid_samples():
    spec = ModelSpec("rect", 3, 3, 2)
    (p1, U1), (p2, U2) = fiber_sample(spec, 1), fiber_sample(spec, 2)
    assert rel_distance(U1, U2) > 1e-3
    assert p1.residual <= 1e-10 and p2.residual <= 1e-10


@pytest.mark.parametrize("spec", KIND_SPECS, ids=str)
def test_jacobian_matches_finite_differences(spec):
    for system, x in random_evaluation_points(spec, 10, seed=1):
        assert fd_jacobian_error(system, x) <= 1e-6


@pytest.mark.parametrize("spec", KIND_SPECS, ids=str)
def test_parameter_derivative_matches_finite_differences(spec):
    rng = np.random.default_rng(3)
    system, x = start_system(spec, 3)
    dU = rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape)
    if spec.kind != "rect":
        dU = dU + dU.T
    if spec.kind == "skew":
        np.fill_diagonal(dU, 0)
    h = 1e-6
    fd = (system.evaluate(x, system.U + h * dU, jac=False)[0]
          - system.evaluate(x, system.U - h * dU, jac=False)[0]) / (2 * h)
    assert np.abs(system.param_derivative(x, dU) - fd).max() <= 1e-6 * np.abs(fd).max()


def test_kernel_matches_reference_residual():
    for spec in KIND_SPECS:
        system, x = random_evaluation_points(spec, 1, seed=5)[0]
        assert np.allclose(system.evaluate(x, jac=False)[0], system.residual(x), atol=1e-12)


def test_zero_coordinate_domain_error():
    spec = ModelSpec("rect", 3, 3, 2)
    system, x = start_system(spec, 0)
    d = system.unpack(x)
    B = d["B"].copy()
    B[1, 0] = 0.0  # p_12 = B[1, 0] because A starts with the identity block
    x_bad = system.pack(A2=d["A2"], B=B, lam=d["lam"])
    assert system.reconstruct(x_bad)[0, 1] == 0
    with pytest.raises(DomainError):
        system.evaluate(x_bad)


def test_degenerate_marginals_rejected():
    U = np.ones((3, 3))
    U[1] = 0
    with pytest.raises(DegeneracyError):
        assemble(ModelSpec("rect", 3, 3, 2), U)


def test_translated_skew_has_no_square_system():
    with pytest.raises(ValueError):
        assemble(ModelSpec("skew_translated", 4, 4, 2), np.ones((4, 4)) - np.eye(4))


def test_degenerate_point_is_critical():
    spec = ModelSpec("rect", 4, 4, 2)
    assert critical_residual(spec, DEGENERATE_P, DEGENERATE_U) <= 1e-12
    point = make_critical_point(spec, DEGENERATE_P, DEGENERATE_U)
    assert point.num_rank == 2 and point.lam == pytest.approx(1.0)


@pytest.mark.parametrize("spec", KIND_SPECS, ids=str)
def test_closed_form_multiplier_and_marginals(spec):
    system, x = start_system(spec, 4)
    lam = system.unpack(x)["lam"]
    total = system.U.sum()
    assert lam == pytest.approx(total if spec.kind == "rect" else total / 2, rel=1e-10)
    P = system.reconstruct(x)
    if spec.kind == "skew":
        a = (P * (np.triu(np.ones(P.shape), 1) - np.tril(np.ones(P.shape), -1))).sum(axis=1)
        assert a[0] == pytest.approx(2 * system.U[0].sum() / total, rel=1e-9)
    else:
        scale = (1 if spec.kind == "rect" else 2) / total
        assert np.allclose(P.sum(axis=1), scale * system.U.sum(axis=1), rtol=1e-9)


@pytest.mark.parametrize("spec", [ModelSpec("sym", 4, 4, 2), ModelSpec("skew", 4, 4, 2),
                                  ModelSpec("sym", 4, 4, 3)], ids=str)
def test_gauge_independence(spec):
    system, x = start_system(spec, 6)
    P = system.reconstruct(x)
    G = factor_point(spec, P)
    other = assemble(spec, system.U, make_gauge(spec, np.random.default_rng(99), through=G))
    y = other.pack(G=G, lam=system.unpack(x)["lam"])
    y = y + 1e-4 * np.random.default_rng(1).standard_normal(len(y))
    y, res, ok = newton_refine(other, y, tol=1e-12)
    assert ok
    assert rel_distance(other.reconstruct(y), P) <= 1e-8


@pytest.mark.parametrize("spec", [ModelSpec("sym", 4, 4, 2), ModelSpec("skew", 5, 5, 4),
                                  ModelSpec("sym", 5, 5, 3)], ids=str)
def test_factor_point_reproduces_p(spec):
    P = random_point(spec, 8).P
    G = factor_point(spec, P)
    if spec.kind == "sym":
        back = G @ G.T
    else:
        back = G @ symplectic_form(spec.r) @ G.T
    assert rel_distance(back, P) <= 1e-10


def test_rect_dropped_rows_vanish_at_solutions():
    system, x = start_system(ModelSpec("rect", 3, 4, 2), 2)
    d = system.unpack(x)
    P = system.reconstruct(x)
    N = system.U / P - d["lam"]
    assert np.abs((N @ d["B"])[:2]).max() <= 1e-10
