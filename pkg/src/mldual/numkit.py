"""Dense complex linear algebra helpers: numerical rank, subspace bases,
Hadamard quotients and marginals.

Every function takes plain ``numpy`` arrays; complex dtype is enforced on the
way in. Matrices here are tiny (at most 6x6), so nothing is sparse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_REL_TOL = 1e-8
ABS_FLOOR = 1e-300


class InputError(ValueError):
    """Raised for non-finite or malformed matrix input."""


class DivisionDomainError(ZeroDivisionError):
    """Raised when an entrywise quotient meets a zero denominator."""

    def __init__(self, index: tuple[int, int]):
        self.index = index
        super().__init__(f"zero denominator at entry {index}")


@dataclass(frozen=True)
class RankReport:
    rank: int
    singular_values: np.ndarray
    tolerance_used: float


def as_matrix(M) -> np.ndarray:
    A = np.asarray(M, dtype=complex)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2 or A.size == 0:
        raise InputError(f"expected a nonempty 2-d matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError("matrix has non-finite entries")
    return A


def _check_tol(rel_tol: float) -> None:
    if not 0.0 < rel_tol < 1.0:
        raise InputError(f"rel_tol must lie in (0, 1), got {rel_tol}")


def svd_rank(M, rel_tol: float = DEFAULT_REL_TOL) -> RankReport:
    """Numerical rank: count of singular values above ``rel_tol * sigma_1``."""
    _check_tol(rel_tol)
    A = as_matrix(M)
    s = np.linalg.svd(A, compute_uv=False)
    if s[0] <= ABS_FLOOR:
        return RankReport(0, s, rel_tol)
    return RankReport(int(np.sum(s > rel_tol * s[0])), s, rel_tol)


def subspace_basis(M, which: str = "column_space", rel_tol: float = DEFAULT_REL_TOL) -> list[np.ndarray]:
    """Orthonormal (Hermitian) basis of the column space or null space of M.

    Returned as a list of 1-d vectors. The null space is the right kernel,
    ``{x : M x = 0}``.
    """
    A = as_matrix(M)
    rank = svd_rank(A, rel_tol).rank
    U, _, Vh = np.linalg.svd(A)
    if which == "column_space":
        return [U[:, k].copy() for k in range(rank)]
    if which == "null_space":
        return [Vh[k].conj() for k in range(rank, A.shape[1])]
    raise InputError(f"unknown subspace {which!r}")


def column_space(M, rank: int) -> np.ndarray:
    """First ``rank`` left singular vectors, as columns."""
    U, _, _ = np.linalg.svd(np.asarray(M, dtype=complex))
    return U[:, :rank]


def null_space(M, rank: int) -> np.ndarray:
    """Right kernel of a matrix known to have the given rank, as columns."""
    A = np.asarray(M, dtype=complex)
    _, _, Vh = np.linalg.svd(A)
    return Vh[rank:].conj().T


def bilinear_complement(V: np.ndarray) -> np.ndarray:
    """Basis of ``{w : V^T w = 0}`` (orthogonal complement for the plain bilinear form)."""
    V = np.atleast_2d(np.asarray(V, dtype=complex))
    if V.shape[0] == 1 and V.shape[1] > 1:
        V = V.T
    k = np.linalg.matrix_rank(V)
    return null_space(V.T, k)


def hadamard_div(A, B) -> np.ndarray:
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape != B.shape:
        raise InputError(f"shape mismatch {A.shape} vs {B.shape}")
    zeros = np.argwhere(B == 0)
    if len(zeros):
        raise DivisionDomainError(tuple(int(i) for i in zeros[0]))
    return A / B


def marginals(U) -> tuple[np.ndarray, np.ndarray, complex]:
    A = as_matrix(U)
    return A.sum(axis=1), A.sum(axis=0), complex(A.sum())


def s_matrix(m: int) -> np.ndarray:
    """Alternating matrix with +1 strictly above the diagonal."""
    S = np.triu(np.ones((m, m)), 1)
    return (S - S.T).astype(complex)


def symplectic_form(r: int) -> np.ndarray:
    """Block-diagonal sum of r/2 copies of [[0, 1], [-1, 0]]."""
    if r % 2:
        raise InputError(f"symplectic form needs even size, got {r}")
    J = np.zeros((r, r), dtype=complex)
    for k in range(0, r, 2):
        J[k, k + 1] = 1.0
        J[k + 1, k] = -1.0
    return J


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_unit(rng: np.random.Generator) -> complex:
    return complex(np.exp(2j * np.pi * rng.random()))


def rel_distance(A, B) -> float:
    A = np.asarray(A)
    B = np.asarray(B)
    scale = max(np.linalg.norm(A), np.linalg.norm(B), ABS_FLOOR)
    return float(np.linalg.norm(A - B) / scale)
