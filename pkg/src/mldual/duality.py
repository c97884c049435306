"""ML-duality maps between critical points of complementary rank.

For a critical point P of the likelihood of data U:

``rect``
    ``Q = RUK / P`` (entrywise), ``Q' = Q / u_++^3`` is critical on rank
    ``m - r + 1``.
``sym``
    ``Q = RUR / P`` with the doubled-diagonal storage, ``Q' = 4 Q / U_++^3``
    is critical on rank ``m - r + 1``.
``skew``
    ``Q = U / P`` off the diagonal, ``Q' = 2 Q / U_++`` is critical on the
    translated variety ``rank(S - Q') = s`` with s the largest even integer
    not exceeding ``m - r``.

Every map is its own inverse once the dual model is fixed, so the same code
runs in both directions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .critsys import CriticalPoint, make_critical_point
from .models import ModelSpec, data_structure_errors
from .monodromy import SolutionSet, solve_for_data
from .numkit import InputError, as_matrix, rel_distance, s_matrix
from .tracker import TrackOptions

log = logging.getLogger(__name__)

INVOLUTION_TOL = 1e-8
NORMALIZATION_TOL = 1e-8
SPREAD_TOL = 1e-8
LEMMA_TOL = 1e-8
DUAL_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SMatrix:
    """The alternating matrix with ones above the diagonal."""

    m: int

    @property
    def value(self) -> np.ndarray:
        return s_matrix(self.m)

    def pairing(self, v, w) -> complex:
        return complex(np.asarray(v) @ self.value @ np.asarray(w))


@dataclass(frozen=True)
class DualPair:
    primal: CriticalPoint
    dual: CriticalPoint
    product: complex
    dual_spec: ModelSpec
    degenerate: bool = False
    Q: np.ndarray = field(default=None, repr=False)

    @property
    def log_product(self) -> complex:
        return self.primal.loglik + self.dual.loglik


def dual_spec(spec: ModelSpec) -> ModelSpec:
    m, n, r = spec.m, spec.n, spec.r
    if spec.kind in ("rect", "sym"):
        return ModelSpec(spec.kind, m, n, m - r + 1)
    if spec.kind == "skew":
        return ModelSpec("skew_translated", m, m, (m - r) // 2 * 2)
    return ModelSpec("skew", m, m, (m - r) // 2 * 2)


def hadamard_dual(kind: str, P, U) -> np.ndarray:
    """The unnormalized dual Q (the entrywise map, before scaling)."""
    P = np.asarray(P, dtype=complex)
    U = np.asarray(U, dtype=complex)
    if kind in ("skew", "skew_translated"):
        m = P.shape[0]
        off = ~np.eye(m, dtype=bool)
        if np.any(P[off] == 0):
            raise ZeroDivisionError("zero off-diagonal entry")
        Q = np.zeros_like(P)
        Q[off] = U[off] / P[off]
        return Q
    if np.any(P == 0):
        raise ZeroDivisionError("zero entry in P")
    rows, cols = U.sum(axis=1), U.sum(axis=0)
    return rows[:, None] * U * cols[None, :] / P


def dual_scale(kind: str, U) -> complex:
    """Factor turning the unnormalized dual into the dual model point."""
    total = complex(np.sum(U))
    if kind == "rect":
        return 1.0 / total ** 3
    if kind == "sym":
        return 4.0 / total ** 3
    return 2.0 / total


def dual_matrix(spec: ModelSpec, P, U) -> np.ndarray:
    """Q' for a point P of ``spec``; a point of ``dual_spec(spec)``."""
    return hadamard_dual(spec.kind, P, U) * dual_scale(spec.kind, U)


def dualize_point(point: CriticalPoint, U, rel_tol: float = 1e-8) -> DualPair:
    """Apply the duality map to a critical point.

    A dual whose rank falls short of the dual model's rank is returned with
    ``degenerate=True`` rather than raising.
    """
    U = as_matrix(U)
    spec = point.spec
    if U.shape != spec.shape:
        raise InputError(f"data shape {U.shape} does not match model {spec.shape}")
    errs = data_structure_errors(spec, U)
    if errs:
        raise InputError("; ".join(errs))
    dspec = dual_spec(spec)
    Q = hadamard_dual(spec.kind, point.P, U)
    Qp = Q * dual_scale(spec.kind, U)
    dual = make_critical_point(dspec, Qp, U, rel_tol=rel_tol)
    degenerate = dual.num_rank != dspec.r
    if degenerate:
        log.warning("dual of a %s point has rank %d, expected %d (non-generic data)",
                    spec.kind, dual.num_rank, dspec.r)
    product = np.exp(point.loglik + dual.loglik)
    return DualPair(point, dual, complex(product), dspec, degenerate, Q)


# -- lemma checks ------------------------------------------------------------

def proportionality_defect(x, y) -> float:
    """Largest 2x2 minor of the two-column matrix (x | y), relative to |x||y|."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    minors = np.outer(x, y) - np.outer(y, x)
    scale = np.linalg.norm(x) * np.linalg.norm(y)
    return float(np.abs(minors).max() / scale) if scale else float("inf")


def skew_marginal(P) -> np.ndarray:
    """a_i = sum_{j<i} p_ji + sum_{j>i} p_ij for an alternating P."""
    P = np.asarray(P, dtype=complex)
    return (P * s_matrix(P.shape[0])).sum(axis=1)


def marginal_defects(spec: ModelSpec, P, U) -> dict[str, float]:
    """Proportionality of the model point's marginals to the data marginals."""
    P = np.asarray(P, dtype=complex)
    U = np.asarray(U, dtype=complex)
    if spec.kind == "rect":
        return {"rows": proportionality_defect(P.sum(axis=1), U.sum(axis=1)),
                "cols": proportionality_defect(P.sum(axis=0), U.sum(axis=0))}
    if spec.kind == "sym":
        return {"rows": proportionality_defect(P.sum(axis=1), U.sum(axis=1))}
    if spec.kind == "skew":
        return {"a_vector": proportionality_defect(skew_marginal(P), U.sum(axis=1))}
    return {}


def multiplier_defect(point: CriticalPoint, U) -> float:
    """Relative gap between the tracked multiplier and its closed form."""
    if point.spec.kind == "skew_translated":
        return 0.0
    total = complex(np.sum(U))
    expected = total if point.spec.kind == "rect" else total / 2.0
    return abs(point.lam - expected) / abs(expected)


def normalization_sum_defect(spec: ModelSpec, Q, U) -> float:
    """Relative gap between sum(Q) and its predicted value (rect, sym only)."""
    total = complex(np.sum(U))
    if spec.kind == "rect":
        expected = total ** 3
    elif spec.kind == "sym":
        expected = total ** 3 / 2.0
    else:
        return 0.0
    return abs(np.sum(Q) - expected) / abs(expected)


# -- certification -----------------------------------------------------------

@dataclass
class PairingReport:
    spec: ModelSpec
    dual_spec: ModelSpec
    count: int
    dual_ranks: list[int]
    degenerate: list[int]
    involution_error: float
    normalization_error: float
    product_spread: float | None
    marginal_error: float
    multiplier_error: float
    dual_residual: float
    self_dual_match: bool | None
    failures: list[str]

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "model": self.spec.as_dict(),
            "dual_model": self.dual_spec.as_dict(),
            "count": self.count,
            "dual_ranks": self.dual_ranks,
            "degenerate": self.degenerate,
            "involution_error": self.involution_error,
            "normalization_error": self.normalization_error,
            "product_spread": self.product_spread,
            "marginal_error": self.marginal_error,
            "multiplier_error": self.multiplier_error,
            "dual_residual": self.dual_residual,
            "self_dual_match": self.self_dual_match,
            "failures": self.failures,
            "pass": self.passed,
        }


def integer_data(U) -> bool:
    U = np.asarray(U, dtype=complex)
    return bool(np.all(U == np.round(U.real)))


def log_spread(logs) -> float:
    """Relative spread of exp(logs) computed from log differences (no underflow).

    Differences are exponentiated, so branch shifts by 2 pi i integer
    multiples drop out; meaningful for integer exponents only.
    """
    logs = np.asarray(logs, dtype=complex)
    if logs.size < 2:
        return 0.0
    return float(np.abs(np.exp(logs - logs[0]) - 1.0).max())


def verify_pairing(solset: SolutionSet, dedup_tol: float | None = None) -> PairingReport:
    """Check every duality prediction over a solution set; failures are collected, not raised."""
    spec, U = solset.spec, np.asarray(solset.U, dtype=complex)
    dspec = dual_spec(spec)
    failures = []
    ranks, degenerate = [], []
    inv = norm = marg = mult = dres = 0.0
    products = []
    duals = []
    for k, point in enumerate(solset.points):
        try:
            pair = dualize_point(point, U)
        except (ZeroDivisionError, InputError) as exc:
            failures.append(f"point {k}: dual undefined ({exc})")
            continue
        duals.append(pair.dual.P)
        ranks.append(pair.dual.num_rank)
        if pair.degenerate:
            degenerate.append(k)
        back = dual_matrix(dspec, pair.dual.P, U)
        inv = max(inv, rel_distance(back, point.P))
        norm = max(norm, normalization_sum_defect(spec, pair.Q, U))
        marg = max([marg, *marginal_defects(spec, point.P, U).values()])
        mult = max(mult, multiplier_defect(point, U))
        dres = max(dres, pair.dual.residual)
        products.append(pair.log_product)
    # Likelihoods with non-integer exponents are multivalued; their product
    # is only well defined, and only checked, for integer data.
    spread = log_spread(products) if integer_data(U) else None
    if degenerate:
        failures.append(f"dual rank: {len(degenerate)} point(s) below rank {dspec.r}")
    if inv > INVOLUTION_TOL:
        failures.append(f"involution: error {inv:.3g}")
    if norm > NORMALIZATION_TOL:
        failures.append(f"normalization: error {norm:.3g}")
    if spread is not None and spread > SPREAD_TOL:
        failures.append(f"product constancy: spread {spread:.3g}")
    if marg > LEMMA_TOL:
        failures.append(f"marginal lemma: defect {marg:.3g}")
    if mult > LEMMA_TOL:
        failures.append(f"multiplier: defect {mult:.3g}")
    if dres > DUAL_RESIDUAL_TOL:
        failures.append(f"dual criticality: residual {dres:.3g}")
    self_dual = None
    if dspec == spec:
        self_dual = solset.same_points(duals, dedup_tol)
        if not self_dual:
            failures.append("self-dual model: dual set differs from primal set")
    return PairingReport(spec, dspec, len(solset), ranks, degenerate, inv, norm, spread,
                         marg, mult, dres, self_dual, failures)


def dual_solve(spec: ModelSpec, U_target, seed: int = 0, opts: TrackOptions = TrackOptions(),
               base: SolutionSet | None = None, workers: int = 1) -> SolutionSet:
    """Critical points of the dual model at U_target, obtained by solving ``spec`` and dualizing.

    Duals of lower rank than the dual model are kept apart in ``degenerate``.
    """
    primal = solve_for_data(spec, U_target, seed, opts, base=base, workers=workers)
    U = np.asarray(U_target, dtype=complex)
    out = SolutionSet(dual_spec(spec), U, dedup_tol=primal.dedup_tol,
                      trace_certificate=primal.trace_certificate,
                      loops_run=primal.loops_run, loops_since_new=primal.loops_since_new,
                      failures=list(primal.failures))
    for point in primal.points:
        pair = dualize_point(point, U)
        if pair.degenerate:
            out.degenerate.append(pair.dual)
        else:
            out.add(pair.dual)
    return out
