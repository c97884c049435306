import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mldual.models import (
    LikelihoodDomainError,
    ModelPoint,
    ModelSpec,
    SpecError,
    ambient_dim,
    data_structure_errors,
    likelihood,
    likelihood_coords,
    membership_failures,
    model_dim,
    random_integer_data,
    random_point,
    rank_target,
    stacked_rank,
    tangent_basis,
)
from mldual.numkit import column_space, null_space, s_matrix, svd_rank
from reference_data import DEGENERATE_P, DEGENERATE_U


def test_spec_validation():
    for bad in [("rect", 3, 2, 1), ("rect", 3, 3, 4), ("sym", 3, 4, 1), ("skew", 4, 4, 3),
                ("skew", 4, 4, 0), ("skew_translated", 4, 4, 4), ("cube", 3, 3, 1)]:
        with pytest.raises(SpecError):
            ModelSpec(*bad)
    assert ModelSpec.make("sym", 4, r=2) == ModelSpec("sym", 4, 4, 2)


def test_model_dims():
    assert model_dim(ModelSpec("rect", 3, 3, 2)) == 7
    assert ambient_dim(ModelSpec("rect", 3, 3, 2)) - model_dim(ModelSpec("rect", 3, 3, 2)) == 2
    assert model_dim(ModelSpec("sym", 4, 4, 2)) == 6
    assert model_dim(ModelSpec("skew", 4, 4, 2)) == 4
    assert model_dim(ModelSpec("skew_translated", 4, 4, 2)) == 5


@settings(max_examples=1000, deadline=None)
@given(m=st.integers(1, 9), extra=st.integers(0, 5), r=st.integers(1, 9))
def test_rect_dim_plus_codim(m, extra, r):
    n = m + extra
    r = min(r, m)
    spec = ModelSpec("rect", m, n, r)
    assert model_dim(spec) + 1 + (m - r) * (n - r) == m * n


def test_random_rank_one_rect():
    P = random_point(ModelSpec("rect", 3, 3, 1), 5).P
    assert svd_rank(P).rank == 1 and P.sum() == pytest.approx(1.0)


def test_random_skew_point():
    spec = ModelSpec("skew", 4, 4, 2)
    P = random_point(spec, 9).P
    assert np.allclose(P, -P.T)
    assert svd_rank(P).rank == 2
    assert np.triu(P, 1).sum() == pytest.approx(1.0)
    assert np.all(np.abs(P[np.triu_indices(4, 1)]) > 0)
    assert membership_failures(spec, P) == []


def test_random_sym_rank_three():
    P = random_point(ModelSpec("sym", 4, 4, 3), 7).P
    assert np.allclose(P, P.T) and svd_rank(P).rank == 3
    assert P.sum() == pytest.approx(2.0)


def test_translated_skew_point():
    spec = ModelSpec("skew_translated", 5, 5, 2)
    P = random_point(spec, 1).P
    assert svd_rank(s_matrix(5) - P).rank == 2
    assert membership_failures(spec, P) == []
    assert np.allclose(rank_target(spec, P), s_matrix(5) - P)


all_specs = [ModelSpec("rect", m, n, r) for m in range(1, 5) for n in range(m, 6) for r in range(1, m + 1)]
all_specs += [ModelSpec("sym", m, m, r) for m in range(2, 6) for r in range(1, m + 1)]
all_specs += [ModelSpec("skew", m, m, r) for m in range(3, 6) for r in range(2, m + 1, 2)]
all_specs += [ModelSpec("skew_translated", m, m, s) for m in range(3, 6) for s in range(2, m - 1, 2)]


@pytest.mark.parametrize("spec", all_specs, ids=str)
def test_membership_and_tangent_rank(spec):
    for seed in range(3):
        point = random_point(spec, seed)
        assert membership_failures(spec, point.P) == []
        assert stacked_rank(tangent_basis(point)) == model_dim(spec)


def _tangent_defects(spec, P, X):
    target = rank_target(spec, P)
    r = spec.r
    im = column_space(target, r)
    ker = null_space(target, r)
    proj = np.eye(spec.m) - im @ np.linalg.pinv(im)
    off = np.linalg.norm(proj @ X @ ker) if ker.size else 0.0
    if spec.kind in ("rect", "sym"):
        total = X.sum()
    elif spec.kind == "skew":
        total = np.triu(X, 1).sum()
    else:
        total = 0.0
    return off / max(np.linalg.norm(X), 1e-300), abs(total) / max(np.linalg.norm(X), 1e-300)


@pytest.mark.parametrize("spec", [ModelSpec("rect", 3, 4, 2), ModelSpec("sym", 4, 4, 2),
                                  ModelSpec("skew", 5, 5, 2), ModelSpec("skew_translated", 5, 5, 2)], ids=str)
def test_tangent_vectors_satisfy_defining_conditions(spec):
    point = random_point(spec, 2)
    for X in tangent_basis(point):
        off, total = _tangent_defects(spec, point.P, X)
        assert off <= 1e-9 and total <= 1e-9
        if spec.kind == "sym":
            assert np.allclose(X, X.T)
        if spec.kind in ("skew", "skew_translated"):
            assert np.allclose(X, -X.T)


def test_full_rank_tangent_is_hyperplane():
    spec = ModelSpec("rect", 3, 3, 3)
    assert stacked_rank(tangent_basis(random_point(spec, 0))) == 8


def test_uniform_likelihood():
    U = np.array([[3, 1], [4, 2]])
    point = ModelPoint(ModelSpec("rect", 2, 2, 1), np.full((2, 2), 0.25))
    assert likelihood(point, U).real == pytest.approx(0.25 ** 10, rel=1e-14)


def test_likelihood_domain_error():
    P = np.full((2, 2), 0.25)
    P[0, 1] = 0.0
    with pytest.raises(LikelihoodDomainError):
        likelihood(ModelPoint(ModelSpec("rect", 2, 2, 1), P), np.ones((2, 2)))


def _oracle(spec, P, U, log_form):
    mpmath.mp.dps = 50
    p, u = likelihood_coords(spec, P, U)
    if log_form:
        return complex(mpmath.fsum(mpmath.mpf(float(e.real)) * mpmath.log(mpmath.mpc(b.real, b.imag))
                                   for b, e in zip(p, u)))
    val = mpmath.mpf(1)
    for b, e in zip(p, u):
        val *= mpmath.power(mpmath.mpc(b.real, b.imag), mpmath.mpf(float(e.real)))
    return complex(val)


def test_likelihood_against_high_precision_oracle():
    point = ModelPoint(ModelSpec("rect", 4, 4, 2), DEGENERATE_P)
    for log_form in (False, True):
        got = likelihood(point, DEGENERATE_U, log_form)
        want = _oracle(point.spec, DEGENERATE_P, DEGENERATE_U, log_form)
        assert np.isfinite(got)
        assert abs(got - want) <= 1e-12 * abs(want)


@pytest.mark.parametrize("kind,m", [("rect", 3), ("sym", 4), ("skew", 4)])
def test_likelihood_conventions_against_oracle(kind, m):
    spec = ModelSpec(kind, m, m, 2)
    rng = np.random.default_rng(4)
    P = random_point(spec, 4).P
    U = random_integer_data(spec, rng, 1, 5)
    for log_form in (False, True):
        got = likelihood(ModelPoint(spec, P), U, log_form)
        want = _oracle(spec, P, U, log_form)
        assert abs(got - want) <= 1e-10 * abs(want)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["rect", "sym", "skew"]))
def test_log_form_consistent(seed, kind):
    spec = ModelSpec(kind, 4, 4, 2)
    P = random_point(spec, seed).P
    U = random_integer_data(spec, np.random.default_rng(seed), 1, 4)
    point = ModelPoint(spec, P)
    lg = likelihood(point, U, log_form=True)
    if abs(lg) < 200:
        plain = likelihood(point, U)
        assert abs(np.exp(lg) - plain) <= 1e-10 * abs(plain)


def test_sym_coordinates_halve_diagonal():
    spec = ModelSpec("sym", 2, 2, 1)
    p, u = likelihood_coords(spec, np.array([[2.0, 3.0], [3.0, 4.0]]), np.array([[6.0, 1.0], [1.0, 8.0]]))
    assert np.allclose(p, [1.0, 3.0, 2.0]) and np.allclose(u, [3.0, 1.0, 4.0])


def test_data_structure_checks():
    assert data_structure_errors(ModelSpec("sym", 2, 2, 1), np.array([[1, 2], [3, 1]]))
    assert data_structure_errors(ModelSpec("skew", 4, 4, 2), np.ones((4, 4)))
    skew_data = random_integer_data(ModelSpec("skew", 4, 4, 2), np.random.default_rng(0))
    assert data_structure_errors(ModelSpec("skew", 4, 4, 2), skew_data) == []
    sym_data = random_integer_data(ModelSpec("sym", 3, 3, 2), np.random.default_rng(0))
    assert np.all(np.diag(sym_data).real % 2 == 0)
