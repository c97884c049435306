"""Rank-constrained matrix models: dimensions, sampling, tangent spaces and
the likelihood function.

Four kinds are supported:

``rect``
    m x n matrices of rank r whose entries sum to 1.
``sym``
    symmetric m x m matrices of rank r. The stored matrix carries the doubled
    diagonal ``P_ii = 2 p_ii`` so the full entry sum is 2.
``skew``
    alternating m x m matrices of even rank r whose upper entries sum to 1.
``skew_translated``
    alternating matrices P with ``rank(S - P) = s`` and no sum constraint; here
    ``ModelSpec.r`` holds s.

Data matrices follow the same storage conventions: a symmetric data matrix
carries ``U_ii = 2 u_ii``; skew data is symmetric with zero diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numkit import (
    InputError,
    as_matrix,
    bilinear_complement,
    column_space,
    complex_gaussian,
    null_space,
    s_matrix,
    svd_rank,
    symplectic_form,
)

KINDS = ("rect", "sym", "skew", "skew_translated")


class SpecError(ValueError):
    pass


class DegeneracyError(ArithmeticError):
    """The point or data is not generic enough for the requested construction."""


class LikelihoodDomainError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    m: int
    n: int
    r: int

    def __post_init__(self):
        kind, m, n, r = self.kind, self.m, self.n, self.r
        if kind not in KINDS:
            raise SpecError(f"unknown model kind {kind!r}")
        if m < 1 or n < 1:
            raise SpecError("dimensions must be positive")
        if kind == "rect":
            if not 1 <= r <= m <= n:
                raise SpecError(f"rect needs 1 <= r <= m <= n, got r={r}, m={m}, n={n}")
            return
        if n != m:
            raise SpecError(f"{kind} models are square, got {m}x{n}")
        if kind == "sym" and not 1 <= r <= m:
            raise SpecError(f"sym needs 1 <= r <= m, got r={r}")
        if kind == "skew" and (r % 2 or not 2 <= r <= m):
            raise SpecError(f"skew needs even 2 <= r <= m, got r={r}")
        if kind == "skew_translated" and (r % 2 or not 0 <= r <= m - 2):
            raise SpecError(f"skew_translated needs even 0 <= s <= m-2, got s={r}")

    @classmethod
    def make(cls, kind: str, m: int, n: int | None = None, r: int = 1) -> "ModelSpec":
        return cls(kind, m, m if n is None else n, r)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "m": self.m, "n": self.n, "r": self.r}


@dataclass(frozen=True)
class ModelPoint:
    spec: ModelSpec
    P: np.ndarray = field(repr=False)


def model_dim(spec: ModelSpec) -> int:
    m, n, r = spec.m, spec.n, spec.r
    if spec.kind == "rect":
        return r * (m + n - r) - 1
    if spec.kind == "sym":
        return r * (r + 1) // 2 + r * (m - r) - 1
    if spec.kind == "skew":
        return r * (m - r) + r * (r - 1) // 2 - 1
    return r * (m - r) + r * (r - 1) // 2


def ambient_dim(spec: ModelSpec) -> int:
    """Number of free coordinates of the data space for this kind."""
    m = spec.m
    if spec.kind == "rect":
        return m * spec.n
    if spec.kind == "sym":
        return m * (m + 1) // 2
    return m * (m - 1) // 2


# -- coordinates -----------------------------------------------------------

def likelihood_coords(spec: ModelSpec, P, U) -> tuple[np.ndarray, np.ndarray]:
    """Flatten (bases p, exponents u) of the likelihood monomial for a kind."""
    P = np.asarray(P, dtype=complex)
    U = np.asarray(U, dtype=complex)
    m = spec.m
    if spec.kind == "rect":
        return P.ravel(), U.ravel()
    if spec.kind == "sym":
        iu = np.triu_indices(m)
        diag = iu[0] == iu[1]
        p = P[iu].copy()
        u = U[iu].copy()
        p[diag] /= 2.0
        u[diag] /= 2.0
        return p, u
    iu = np.triu_indices(m, 1)
    return P[iu], U[iu]


def likelihood(point: ModelPoint, U, log_form: bool = False) -> complex:
    """Likelihood monomial of data U at a model point.

    ``log_form`` returns the principal-branch sum of ``u * log p``.
    """
    spec = point.spec
    U = as_matrix(U)
    if U.shape != spec.shape:
        raise InputError(f"data shape {U.shape} does not match model {spec.shape}")
    p, u = likelihood_coords(spec, point.P, U)
    bad = (p == 0) & (u != 0)
    if np.any(bad):
        raise LikelihoodDomainError("zero probability coordinate with nonzero exponent")
    keep = u != 0
    if log_form:
        return complex(np.sum(u[keep] * np.log(p[keep])))
    return complex(np.prod(p[keep] ** u[keep]))


def normalization_defect(spec: ModelSpec, P) -> complex:
    P = np.asarray(P)
    if spec.kind == "rect":
        return complex(P.sum() - 1.0)
    if spec.kind == "sym":
        return complex(P.sum() / 2.0 - 1.0)
    if spec.kind == "skew":
        return complex(np.triu(P, 1).sum() - 1.0)
    return 0j


def rank_target(spec: ModelSpec, P) -> np.ndarray:
    """The matrix whose rank defines membership (``S - P`` for translated skew)."""
    P = np.asarray(P, dtype=complex)
    if spec.kind == "skew_translated":
        return s_matrix(spec.m) - P
    return P


def membership_failures(spec: ModelSpec, P, rel_tol: float = 1e-8, sum_tol: float = 1e-8) -> list[str]:
    """Names of the membership conditions P violates (empty list if none)."""
    P = np.asarray(P, dtype=complex)
    out = []
    if P.shape != spec.shape:
        return [f"shape {P.shape} != {spec.shape}"]
    if spec.kind == "sym" and np.linalg.norm(P - P.T) > 1e-10 * np.linalg.norm(P):
        out.append("not symmetric")
    if spec.kind in ("skew", "skew_translated"):
        if np.linalg.norm(P + P.T) > 1e-10 * max(np.linalg.norm(P), 1.0):
            out.append("not alternating")
    rk = svd_rank(rank_target(spec, P), rel_tol).rank if np.any(rank_target(spec, P)) else 0
    if rk != spec.r:
        out.append(f"rank {rk} != {spec.r}")
    if abs(normalization_defect(spec, P)) > sum_tol:
        out.append("sum normalization")
    if spec.kind in ("skew", "skew_translated"):
        entries = P[np.triu_indices(spec.m, 1)]
    else:
        entries = P.ravel()
    if np.any(np.abs(entries) < 1e-14 * max(np.abs(entries).max(), 1e-300)):
        out.append("zero entry")
    return out


# -- sampling --------------------------------------------------------------

def random_factor(spec: ModelSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random normalized point together with its factor.

    Returns ``(P, F)`` where F is ``B`` for rect (``P = A B^T`` with
    ``A = [I; A2]`` recovered separately), ``G`` for sym (``P = G G^T``) and
    skew (``P = G Sigma G^T``), and ``H`` for translated skew.
    """
    m, n, r = spec.m, spec.n, spec.r
    for _ in range(100):
        if spec.kind == "rect":
            A = complex_gaussian(rng, (m, r))
            B = complex_gaussian(rng, (n, r))
            P = A @ B.T
            total = P.sum()
        elif spec.kind == "sym":
            F = complex_gaussian(rng, (m, r))
            P = F @ F.T
            total = P.sum() / 2.0
        elif spec.kind == "skew":
            F = complex_gaussian(rng, (m, r))
            P = F @ symplectic_form(r) @ F.T
            total = np.triu(P, 1).sum()
        else:
            H = complex_gaussian(rng, (m, r))
            P = s_matrix(m) - (H @ symplectic_form(r) @ H.T if r else 0)
            return P, H
        if abs(total) > 1e-3:
            if spec.kind == "rect":
                return P / total, B
            scale = 1.0 / np.sqrt(total)
            return P / total, F * scale
    raise DegeneracyError("could not normalize a random point after 100 attempts")


def random_point(spec: ModelSpec, seed: int | np.random.Generator) -> ModelPoint:
    rng = np.random.default_rng(seed)
    P, _ = random_factor(spec, rng)
    return ModelPoint(spec, P)


def random_data(spec: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Generic complex data matrix with the kind's structure, Frobenius norm ``scale``."""
    m, n = spec.shape
    Z = complex_gaussian(rng, (m, n))
    if spec.kind != "rect":
        Z = (Z + Z.T) / 2.0
    if spec.kind in ("skew", "skew_translated"):
        np.fill_diagonal(Z, 0.0)
    return Z * (scale / np.linalg.norm(Z))


def random_integer_data(spec: ModelSpec, rng: np.random.Generator, low: int = 1, high: int = 30) -> np.ndarray:
    """Integer counts with the kind's storage convention (doubled sym diagonal)."""
    m, n = spec.shape
    Z = rng.integers(low, high + 1, size=(m, n)).astype(float)
    if spec.kind == "rect":
        return Z.astype(complex)
    Z = np.triu(Z)
    Z = Z + np.triu(Z, 1).T
    if spec.kind == "sym":
        Z[np.diag_indices(m)] *= 2.0
    else:
        np.fill_diagonal(Z, 0.0)
    return Z.astype(complex)


def data_structure_errors(spec: ModelSpec, U) -> list[str]:
    U = np.asarray(U, dtype=complex)
    out = []
    if U.shape != spec.shape:
        return [f"data shape {U.shape} != {spec.shape}"]
    if not np.all(np.isfinite(U)):
        out.append("non-finite data")
    if spec.kind != "rect" and np.any(np.abs(U - U.T) > 1e-12 * max(np.abs(U).max(), 1.0)):
        out.append("data matrix must be symmetric")
    if spec.kind in ("skew", "skew_translated") and np.any(np.diag(U) != 0):
        out.append("skew data must have zero diagonal")
    return out


# -- tangent spaces --------------------------------------------------------

def _ones_perp(k: int) -> np.ndarray:
    """Basis e_i - e_{i+1} of the sum-zero hyperplane in C^k."""
    B = np.zeros((k, k - 1), dtype=complex)
    for i in range(k - 1):
        B[i, i] = 1.0
        B[i + 1, i] = -1.0
    return B


def _check_ones(P: np.ndarray, im: np.ndarray, rel: float = 1e-10) -> None:
    if np.linalg.norm(P @ np.ones(P.shape[1])) <= rel * np.linalg.norm(P):
        raise DegeneracyError("all-ones vector lies in ker P")
    if np.linalg.norm(np.ones(P.shape[0]) @ im) <= rel:
        raise DegeneracyError("im P is contained in the sum-zero hyperplane")


def _sum_zero_part(V: np.ndarray) -> np.ndarray:
    """Columns spanning ``span(V) ∩ 1^perp``."""
    c = np.ones(V.shape[0]) @ V
    return V @ null_space(c[None, :], 1)


def tangent_basis(point: ModelPoint, rel_tol: float = 1e-8) -> list[np.ndarray]:
    """Finite spanning set of the tangent space built from low-rank generators."""
    spec, P = point.spec, np.asarray(point.P, dtype=complex)
    m, n, r = spec.m, spec.n, spec.r
    E_m, E_n = np.eye(m, dtype=complex), np.eye(n, dtype=complex)
    out = []
    if spec.kind == "rect":
        im = column_space(P, r)
        row = column_space(P.T, r)
        _check_ones(P, im)
        _check_ones(P.T, row)
        A, A_row = _sum_zero_part(im), _sum_zero_part(row)
        perp_m, perp_n = _ones_perp(m), _ones_perp(n)
        # v in im P with v ⊥ 1 or w ⊥ 1; w ⊥ ker P with v ⊥ 1 or w ⊥ 1
        for V, W in ((A, E_n), (im, perp_n), (E_m, A_row), (perp_m, row)):
            for a in range(V.shape[1]):
                for b in range(W.shape[1]):
                    out.append(np.outer(V[:, a], W[:, b]))
        return out
    if spec.kind == "sym":
        im = column_space(P, r)
        _check_ones(P, im)
        A = _sum_zero_part(im)
        for V, W in ((A, E_m), (im, _ones_perp(m))):
            for a in range(V.shape[1]):
                for b in range(W.shape[1]):
                    X = np.outer(V[:, a], W[:, b])
                    out.append(X + X.T)
        return out
    S = s_matrix(m)
    if spec.kind == "skew":
        im = column_space(P, r)
        form = im.T @ S @ im
        if svd_rank(form, rel_tol).rank < r:
            raise DegeneracyError("im P is degenerate for the skew form")
        for a in range(r):
            v = im[:, a]
            Wperp = bilinear_complement(S.T @ v)
            for b in range(Wperp.shape[1]):
                X = np.outer(v, Wperp[:, b])
                out.append(X - X.T)
        return out
    # translated skew: v in im(S - P), w free
    if r == 0:
        return []
    im = column_space(S - P, r)
    for a in range(r):
        for b in range(m):
            X = np.outer(im[:, a], E_m[:, b])
            out.append(X - X.T)
    return out


def stacked_rank(basis: list[np.ndarray], rel_tol: float = 1e-8) -> int:
    if not basis:
        return 0
    return svd_rank(np.array([X.ravel() for X in basis]), rel_tol).rank
