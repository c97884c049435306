"""Square polynomial systems whose solutions are the critical points of the
likelihood on a model, plus fiber sampling of the critical-point bundle.

Parametrizations
----------------
rect   P = A B^T with A = [I; A2]; unknowns (A2, B, lam).
sym    P = G G^T; unknowns (G, lam); the orthogonal gauge is cut by affine
       slices and the redundant stationarity equations are compressed by a
       fixed random projection.
skew   P = G Sigma G^T with Sigma the standard symplectic form; same squaring
       scheme with the symplectic gauge.

The stationarity equations are the Lagrange conditions of
``sum u log p - lam * (normalization)`` with the entrywise quotient
``M = U / P`` (zero diagonal in the skew case).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .models import (
    DegeneracyError,
    ModelPoint,
    ModelSpec,
    ambient_dim,
    likelihood,
    model_dim,
    random_factor,
    svd_rank,
    tangent_basis,
)
from . import _kernels
from .numkit import as_matrix, complex_gaussian, s_matrix, symplectic_form


class DomainError(ArithmeticError):
    """Reconstructed P has a zero coordinate where U / P must be formed."""


@dataclass(frozen=True)
class Gauge:
    """Affine slice ``L vec(G) = c`` and the equation projection for sym/skew."""

    slice_matrix: np.ndarray
    slice_rhs: np.ndarray
    projection: np.ndarray

    def with_rhs(self, rhs) -> "Gauge":
        return Gauge(self.slice_matrix, np.asarray(rhs, dtype=complex), self.projection)


def gauge_dim(spec: ModelSpec) -> int:
    r = spec.r
    if spec.kind == "sym":
        return r * (r - 1) // 2
    if spec.kind == "skew":
        return r * (r + 1) // 2
    return 0


def make_gauge(spec: ModelSpec, rng: np.random.Generator, through: np.ndarray | None = None) -> Gauge | None:
    """Random gauge for sym/skew; the slice passes through ``through`` if given."""
    if spec.kind not in ("sym", "skew"):
        return None
    k = gauge_dim(spec)
    nf = spec.m * spec.r
    L = complex_gaussian(rng, (k, nf)) / np.sqrt(nf)
    R = complex_gaussian(rng, (nf - k, nf)) / np.sqrt(nf)
    c = L @ through.ravel() if through is not None else complex_gaussian(rng, k)
    return Gauge(L, np.asarray(c, dtype=complex), R)


@dataclass(frozen=True)
class CriticalPoint:
    spec: ModelSpec
    P: np.ndarray = field(repr=False)
    lam: complex
    residual: float
    num_rank: int
    loglik: complex
    x: np.ndarray | None = field(default=None, repr=False, compare=False)


class SquareSystem:
    """Critical equations for one model and one data matrix.

    Immutable after construction; :meth:`with_params` returns a sibling
    system for new data (and new slice constants).
    """

    def __init__(self, spec: ModelSpec, U, gauge: Gauge | None = None):
        if spec.kind == "skew_translated":
            raise ValueError("no square system is assembled for translated skew models")
        self.spec = spec
        self.U = as_matrix(U)
        if self.U.shape != spec.shape:
            raise ValueError(f"data shape {self.U.shape} != {spec.shape}")
        if spec.kind in ("sym", "skew") and gauge is None:
            raise ValueError(f"{spec.kind} systems need a gauge")
        self.gauge = gauge
        m, n, r = spec.m, spec.n, spec.r
        if spec.kind == "rect":
            self.layout = (("A2", (m - r, r)), ("B", (n, r)), ("lam", ()))
        else:
            self.layout = (("G", (m, r)), ("lam", ()))
        self.nvars = sum(int(np.prod(s)) for _, s in self.layout)
        self._build_constants()
        self.count = self.nvars

    # -- layout ------------------------------------------------------------

    def _build_constants(self):
        m, r = self.spec.m, self.spec.r
        self._Sg = self._K = np.zeros((1, 1), dtype=complex)
        self._L = self._R = np.zeros((0, 1), dtype=complex)
        self._c = np.zeros(0, dtype=complex)
        if self.spec.kind != "rect":
            self._Sigma = symplectic_form(r) if self.spec.kind == "skew" else None
            self._S = s_matrix(m)
            self._Sg = self._Sigma if self._Sigma is not None else np.eye(r, dtype=complex)
            self._K = self._S if self.spec.kind == "skew" else np.ones((m, m), dtype=complex)
            if self.gauge is not None:
                self._L = np.ascontiguousarray(self.gauge.slice_matrix, dtype=complex)
                self._R = np.ascontiguousarray(self.gauge.projection, dtype=complex)
                self._c = np.ascontiguousarray(self.gauge.slice_rhs, dtype=complex)

    def unpack(self, x) -> dict:
        x = np.asarray(x, dtype=complex)
        out, k = {}, 0
        for name, shape in self.layout:
            size = int(np.prod(shape))
            out[name] = x[k] if shape == () else x[k:k + size].reshape(shape)
            k += size
        return out

    def pack(self, **parts) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(parts[name], dtype=complex)).ravel()
                               for name, _ in self.layout])

    def reconstruct(self, x) -> np.ndarray:
        d = self.unpack(x)
        if self.spec.kind == "rect":
            A = np.vstack([np.eye(self.spec.r), d["A2"]])
            return A @ d["B"].T
        G = d["G"]
        if self.spec.kind == "sym":
            return G @ G.T
        return G @ self._Sigma @ G.T

    def with_params(self, U, slice_rhs=None) -> "SquareSystem":
        gauge = self.gauge if slice_rhs is None or self.gauge is None else self.gauge.with_rhs(slice_rhs)
        return SquareSystem(self.spec, U, gauge)

    def slice_through(self, x) -> np.ndarray | None:
        """Slice constants for which x satisfies the gauge equations."""
        if self.gauge is None:
            return None
        return self.gauge.slice_matrix @ self.unpack(x)["G"].ravel()

    def params(self) -> tuple[np.ndarray, np.ndarray | None]:
        return self.U, None if self.gauge is None else self.gauge.slice_rhs

    # -- evaluation --------------------------------------------------------

    def coordinate_entries(self, P) -> np.ndarray:
        if self.spec.kind == "skew":
            return P[np.triu_indices(self.spec.m, 1)]
        return P.ravel()

    def _quotients(self, P, U):
        if np.any(self.coordinate_entries(P) == 0):
            raise DomainError("reconstructed P has a zero coordinate")
        if self.spec.kind == "skew":
            Pd = P + np.eye(self.spec.m)
            M = U / Pd
            np.fill_diagonal(M, 0.0)
            return M, M / Pd
        M = U / P
        return M, M / P

    def residual(self, x, U=None, slice_rhs=None, lam_scale: float = 1.0, constants: bool = True) -> np.ndarray:
        """Equation values; optional overrides evaluate the affine parameter dependence."""
        U = self.U if U is None else U
        d = self.unpack(x)
        P = self.reconstruct(x)
        M, _ = self._quotients(P, U)
        lam = d["lam"] * lam_scale
        one = 1.0 if constants else 0.0
        kind = self.spec.kind
        if kind == "rect":
            r = self.spec.r
            A = np.vstack([np.eye(r), d["A2"]])
            N = M - lam
            return np.concatenate([(A.T @ N).ravel(), (N @ d["B"])[r:].ravel(),
                                   [P.sum() * one - one]])
        G = d["G"]
        if kind == "sym":
            N = M - lam
            total = P.sum() / 2.0
        else:
            N = M - lam * self._S
            total = np.triu(P, 1).sum()
        rhs = self.gauge.slice_rhs if slice_rhs is None else slice_rhs
        return np.concatenate([self.gauge.projection @ (N @ G).ravel(),
                               self.gauge.slice_matrix @ G.ravel() * one - rhs,
                               [total * one - one]])

    @property
    def kind_code(self) -> int:
        return {"rect": _kernels.RECT, "sym": _kernels.SYM, "skew": _kernels.SKEW}[self.spec.kind]

    def kernel_constants(self) -> tuple:
        """(m, n, r, Sg, K, L, R) as passed to the compiled kernels."""
        return (self.spec.m, self.spec.n, self.spec.r, self._Sg, self._K, self._L, self._R)

    def param_derivative(self, x, dU, dc=None) -> np.ndarray:
        """Derivative of the residual along a parameter direction (dU, dc)."""
        m, n, r, Sg, _, _, R = self.kernel_constants()
        dc = self._c * 0 if dc is None else np.ascontiguousarray(dc, dtype=complex)
        return _kernels.system_pderiv(self.kind_code, np.ascontiguousarray(x, dtype=complex),
                                      np.ascontiguousarray(dU, dtype=complex), dc, m, n, r, Sg, R)

    def evaluate(self, x, U=None, slice_rhs=None, jac: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Residual vector and analytic Jacobian (equations x unknowns).

        ``U`` and ``slice_rhs`` override the stored parameters.
        """
        U = self.U if U is None else np.ascontiguousarray(U, dtype=complex)
        c = self._c if slice_rhs is None else np.ascontiguousarray(slice_rhs, dtype=complex)
        F, J, ok = _kernels.system_eval(self.kind_code, np.ascontiguousarray(x, dtype=complex), U, c,
                                        *self.kernel_constants(), jac)
        if not ok:
            raise DomainError("reconstructed P has a zero coordinate")
        return F, (J if jac else None)

    # -- checks ------------------------------------------------------------

    def full_equations(self, x) -> np.ndarray:
        """Unprojected stationarity equations (before squaring)."""
        d = self.unpack(x)
        P = self.reconstruct(x)
        M, _ = self._quotients(P, self.U)
        if self.spec.kind == "rect":
            N = M - d["lam"]
            return np.concatenate([(N.T @ np.vstack([np.eye(self.spec.r), d["A2"]])).ravel(),
                                   (N @ d["B"]).ravel()])
        S = 1.0 if self.spec.kind == "sym" else self._S
        return ((M - d["lam"] * S) @ d["G"]).ravel()


def assemble(spec: ModelSpec, U, gauge: Gauge | None = None, seed: int | None = 0) -> SquareSystem:
    """Square critical system for data U; sym/skew get a random gauge unless given."""
    U = as_matrix(U)
    rows, cols, total = U.sum(axis=1), U.sum(axis=0), U.sum()
    if abs(total) == 0 or np.any(rows == 0) or np.any(cols == 0):
        raise DegeneracyError("data matrix has a zero marginal")
    if gauge is None and spec.kind in ("sym", "skew"):
        gauge = make_gauge(spec, np.random.default_rng(seed))
    return SquareSystem(spec, U, gauge)


# -- gauge-free criticality --------------------------------------------------

def multiplier(spec: ModelSpec, U) -> complex:
    """Closed-form Lagrange multiplier at a normalized critical point."""
    total = complex(np.sum(U))
    return total if spec.kind == "rect" else total / 2.0


def critical_residual(spec: ModelSpec, P, U) -> float:
    """Relative residual of the full (gauge-free) criticality conditions.

    rect: ``P^T N = 0`` and ``N P^T = 0``; sym/skew: ``N P = 0``, where N is
    the quotient U / P minus the multiplier times J (or S); translated skew:
    ``(U / P)(S - P) = 0``. The normalization defect is added.
    """
    P = np.asarray(P, dtype=complex)
    U = np.asarray(U, dtype=complex)
    m = spec.m
    if spec.kind in ("skew", "skew_translated"):
        iu = np.triu_indices(m, 1)
        if np.any(P[iu] == 0):
            return float("inf")
        M = U / (P + np.eye(m))
        np.fill_diagonal(M, 0.0)
    else:
        if np.any(P == 0):
            return float("inf")
        M = U / P
    scale = np.linalg.norm(M) * max(np.linalg.norm(P), 1e-300)
    if spec.kind == "skew_translated":
        B = s_matrix(m) - P
        return float(np.linalg.norm(M @ B) / (np.linalg.norm(M) * max(np.linalg.norm(B), 1.0)))
    if spec.kind == "rect":
        N = M - complex(U.sum()) / complex(P.sum())
        res = (np.linalg.norm(P.T @ N) + np.linalg.norm(N @ P.T)) / scale
        defect = P.sum() - 1.0
    elif spec.kind == "sym":
        N = M - complex(U.sum()) / complex(P.sum())
        res = np.linalg.norm(N @ P) / scale
        defect = P.sum() / 2.0 - 1.0
    else:
        upper = np.triu(P, 1).sum()
        N = M - complex(U.sum()) / (2.0 * upper) * s_matrix(m)
        res = np.linalg.norm(N @ P) / scale
        defect = upper - 1.0
    return float(res + abs(defect))


def make_critical_point(spec: ModelSpec, P, U, lam=None, x=None, rel_tol: float = 1e-8) -> CriticalPoint:
    P = np.asarray(P, dtype=complex)
    from .models import rank_target

    target = rank_target(spec, P)
    rank = svd_rank(target, rel_tol).rank if np.any(target) else 0
    try:
        ll = likelihood(ModelPoint(spec, P), U, log_form=True)
    except ArithmeticError:
        ll = complex("nan")
    lam = multiplier(spec, U) if lam is None and spec.kind != "skew_translated" else lam
    return CriticalPoint(spec, P, 0j if lam is None else complex(lam),
                         critical_residual(spec, P, U), rank, ll, x)


# -- factorizations ----------------------------------------------------------

def _pivot_indices(P: np.ndarray, r: int) -> np.ndarray:
    _, _, piv = scipy.linalg.qr(P, pivoting=True, mode="economic")
    return np.sort(piv[:r])


def _block_ldl(C: np.ndarray, block: int) -> np.ndarray:
    """H with C = H H^T (block 1, symmetric C) or C = H Sigma H^T (block 2, skew C)."""
    C = np.array(C, dtype=complex)
    r = C.shape[0]
    H = np.zeros((r, r), dtype=complex)
    for k in range(0, r, block):
        piv = C[k:k + block, k:k + block]
        L = C[k:, k:k + block] @ np.linalg.inv(piv)
        if block == 1:
            root = np.sqrt(piv[0, 0])
            H[k:, k] = L[:, 0] * root
        else:
            c = piv[0, 1]
            H[k:, k] = L[:, 0] * c
            H[k:, k + 1] = L[:, 1]
        C[k:, k:] = C[k:, k:] - L @ piv @ L.T
    return H


def factor_point(spec: ModelSpec, P, rank: int | None = None) -> np.ndarray:
    """One factor of P: B for rect (with A2 recoverable), G for sym/skew."""
    P = np.asarray(P, dtype=complex)
    r = spec.r if rank is None else rank
    if spec.kind == "rect":
        return P[:r].T.copy()
    idx = _pivot_indices(P, r)
    W = P[:, idx]
    C = P[np.ix_(idx, idx)]
    if spec.kind == "sym":
        return W @ _block_ldl(np.linalg.inv(C), 1)
    return W @ _block_ldl(-np.linalg.inv(C), 2)


def rect_unknowns(spec: ModelSpec, P, lam) -> np.ndarray:
    r = spec.r
    P = np.asarray(P, dtype=complex)
    Bt = P[:r]
    A2 = P[r:] @ np.linalg.pinv(Bt)
    return np.concatenate([A2.ravel(), Bt.T.ravel(), [lam]])


# -- fiber sampling ----------------------------------------------------------

def _data_coordinates(spec: ModelSpec):
    m, n = spec.shape
    if spec.kind == "rect":
        return [(i, j) for i in range(m) for j in range(n)]
    if spec.kind == "sym":
        return [(i, j) for i in range(m) for j in range(i, m)]
    return [(i, j) for i in range(m) for j in range(i + 1, m)]


def fiber_data_space(spec: ModelSpec, P, rel_tol: float = 1e-8) -> np.ndarray:
    """Basis (columns, in data coordinates) of ``{U : P critical for U}``."""
    P = np.asarray(P, dtype=complex)
    coords = _data_coordinates(spec)
    basis = tangent_basis(ModelPoint(spec, P), rel_tol)
    rows = []
    for X in basis:
        Q = X / np.where(P == 0, 1.0, P)
        row = []
        for i, j in coords:
            w = 2.0 if (spec.kind == "sym" and i != j) else 1.0
            row.append(w * Q[i, j])
        rows.append(row)
    Amat = np.array(rows)
    rank = svd_rank(Amat, rel_tol).rank
    _, _, Vh = np.linalg.svd(Amat)
    return Vh[rank:].conj().T


def data_from_coordinates(spec: ModelSpec, u) -> np.ndarray:
    U = np.zeros(spec.shape, dtype=complex)
    for (i, j), val in zip(_data_coordinates(spec), u):
        U[i, j] = val
        if spec.kind != "rect":
            U[j, i] = val
    return U


def start_system(spec: ModelSpec, seed: int | np.random.Generator = 0, attempts: int = 20) -> tuple[SquareSystem, np.ndarray]:
    """Random point of the critical-point bundle as a (system, solution) pair."""
    rng = np.random.default_rng(seed)
    expected = ambient_dim(spec) - model_dim(spec)
    for _ in range(attempts):
        P, F = random_factor(spec, rng)
        try:
            space = fiber_data_space(spec, P)
        except DegeneracyError:
            continue
        if space.shape[1] != expected:
            continue
        U = data_from_coordinates(spec, space @ complex_gaussian(rng, expected))
        U = U / np.linalg.norm(U)
        lam = multiplier(spec, U)
        if spec.kind == "rect":
            system = SquareSystem(spec, U)
            x = rect_unknowns(spec, P, lam)
        else:
            system = SquareSystem(spec, U, make_gauge(spec, rng, through=F))
            x = np.concatenate([F.ravel(), [lam]])
        return system, x
    raise DegeneracyError(f"fiber of unexpected dimension for {spec} after {attempts} attempts")


def fiber_sample(spec: ModelSpec, seed: int = 0) -> tuple[CriticalPoint, np.ndarray]:
    system, x = start_system(spec, seed)
    P = system.reconstruct(x)
    point = make_critical_point(spec, P, system.U, lam=system.unpack(x)["lam"], x=x)
    return point, system.U
