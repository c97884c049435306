"""Monodromy population of a generic fiber of the critical-point bundle,
a trace-type completeness test, and ML-degree computation.

Every solution is stored as a converged unknown vector of one base
:class:`SquareSystem`, so gauge slices stay fixed while the data moves.
Deduplication is on the reconstructed P, never on raw unknowns.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .critsys import CriticalPoint, SquareSystem, make_critical_point, start_system
from .models import ModelSpec, data_structure_errors, membership_failures, random_data
from .numkit import rel_distance
from .tracker import TrackOptions, TrackResult, newton_refine, random_gamma, track_path

log = logging.getLogger(__name__)

DEDUP_TOL = 1e-6
RESIDUAL_TOL = 1e-8
TRACE_TOL = 1e-6


class IncompleteError(RuntimeError):
    """Loop budget exhausted before the trace test passed."""

    def __init__(self, message: str, solset: "SolutionSet"):
        super().__init__(message)
        self.solset = solset


class InstabilityError(RuntimeError):
    """Independent runs disagree on the fiber cardinality."""

    def __init__(self, counts: dict[int, int]):
        self.counts = counts
        super().__init__(f"ML-degree runs disagree: {counts}")


@dataclass(frozen=True)
class TraceCertificate:
    passed: bool
    collinearity_residual: float
    inconclusive: bool = False
    detail: str = ""

    def __iter__(self):
        # unpacks as (pass, residual)
        return iter((self.passed, self.collinearity_residual))


@dataclass
class PathFailure:
    index: int
    status: str
    t_reached: float
    final_residual: float


@dataclass
class SolutionSet:
    spec: ModelSpec
    U: np.ndarray = field(repr=False)
    points: list[CriticalPoint] = field(default_factory=list, repr=False)
    loops_run: int = 0
    loops_since_new: int = 0
    trace_certificate: TraceCertificate | None = None
    system: SquareSystem | None = field(default=None, repr=False)
    failures: list[PathFailure] = field(default_factory=list, repr=False)
    dedup_tol: float = DEDUP_TOL
    degenerate: list[CriticalPoint] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def count(self) -> int:
        return len(self.points)

    def matrices(self) -> list[np.ndarray]:
        return [p.P for p in self.points]

    def find(self, P) -> int | None:
        for k, q in enumerate(self.points):
            if rel_distance(P, q.P) <= self.dedup_tol:
                return k
        return None

    def add(self, point: CriticalPoint) -> bool:
        """Insert unless a point with the same P is already present."""
        if self.find(point.P) is not None:
            return False
        self.points.append(point)
        return True

    def merged(self, other: "SolutionSet") -> "SolutionSet":
        out = SolutionSet(self.spec, self.U, list(self.points), self.loops_run, self.loops_since_new,
                          None, self.system, list(self.failures), self.dedup_tol,
                          list(self.degenerate))
        for p in other.points:
            out.add(p)
        return out

    def same_points(self, others, tol: float | None = None) -> bool:
        """Set equality of P matrices under the dedup tolerance."""
        tol = self.dedup_tol if tol is None else tol
        others = list(others)
        if len(others) != len(self.points):
            return False
        used = set()
        for p in self.points:
            hit = next((k for k, Q in enumerate(others)
                        if k not in used and rel_distance(p.P, Q) <= tol), None)
            if hit is None:
                return False
            used.add(hit)
        return True

    @property
    def certified(self) -> bool:
        return self.trace_certificate is not None and self.trace_certificate.passed


# -- helpers -----------------------------------------------------------------

def _accept(system: SquareSystem, x, U_report=None) -> CriticalPoint | None:
    """Critical point at the system's data if x passes the residual and membership checks."""
    spec = system.spec
    P = system.reconstruct(x)
    U = system.U if U_report is None else U_report
    lam = system.unpack(x)["lam"]
    if U_report is not None:
        lam = lam * (np.sum(U_report) / np.sum(system.U))
    point = make_critical_point(spec, P, U, lam=lam, x=np.array(x))
    if not np.isfinite(point.residual) or point.residual > RESIDUAL_TOL:
        return None
    if membership_failures(spec, P):
        return None
    return point


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) < 2:
        return [fn(a) for a in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _track_chain(system: SquareSystem, stops, x, opts: TrackOptions, gammas) -> tuple[TrackResult, list]:
    """Track x through the data matrices in ``stops``; returns the last result and endpoints."""
    cur = system
    ends = []
    res = None
    for U_next, g in zip(stops, gammas):
        res = track_path(cur, U_next, x, replace(opts, gamma=g))
        if not res.ok:
            return res, ends
        x = res.endpoint
        ends.append(x)
        cur = cur.with_params(U_next)
    return res, ends


def sum_zero_direction(spec: ModelSpec, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Random structured data direction whose entries sum to zero."""
    m, n = spec.shape
    D = random_data(spec, rng)
    if spec.kind in ("skew", "skew_translated"):
        E = np.ones((m, m)) - np.eye(m)
    else:
        E = np.ones((m, n))
    D = D - D.sum() / E.sum() * E
    return D * (scale / np.linalg.norm(D))


# -- operations --------------------------------------------------------------

def run_loop(solset: SolutionSet, rng: np.random.Generator, opts: TrackOptions = TrackOptions(),
             workers: int = 1) -> int:
    """One triangle loop U0 -> U1 -> U2 -> U0 over every known point; returns the number added."""
    system = solset.system
    U0 = solset.U
    scale = float(np.linalg.norm(U0))
    U1 = random_data(solset.spec, rng, scale)
    U2 = random_data(solset.spec, rng, scale)
    gammas = [random_gamma(rng) for _ in range(3)]
    xs = [p.x for p in solset.points]

    def go(x):
        res, ends = _track_chain(system, (U1, U2, U0), x, opts, gammas)
        return ends[-1] if res.ok else None

    added = 0
    for end in _map(go, xs, workers):
        if end is None:
            continue
        point = _accept(system, end)
        if point is not None and solset.add(point):
            added += 1
    solset.loops_run += 1
    solset.loops_since_new = 0 if added else solset.loops_since_new + 1
    return added


def rational_fit_residual(samples: np.ndarray, nodes: np.ndarray, degree: int) -> float:
    """How far the sampled vector function is from a rational function of type (degree, degree).

    ``samples`` is (K, c); all c coordinates share one denominator. The
    numerators are eliminated by projecting onto the orthogonal complement
    of the degree-``degree`` polynomials on the nodes, and the result is the
    smallest relative singular value of the remaining linear system in the
    denominator coefficients.
    """
    scale = np.linalg.norm(samples, axis=0)
    # structurally zero coordinates (skew diagonal) carry only rounding noise
    keep = scale > 1e-10 * scale.max()
    samples, scale = samples[:, keep], scale[keep]
    z = nodes / np.max(np.abs(nodes))
    V = np.vander(z, degree + 1, increasing=True)
    Q, _ = np.linalg.qr(V, mode="complete")
    perp = Q[:, degree + 1:].conj().T
    A = np.vstack([perp @ (V * (samples[:, [j]] / scale[j])) for j in range(samples.shape[1])])
    sv = np.linalg.svd(A, compute_uv=False)
    return float(sv[-1] / sv[0])


def _circle_check(spec, solset, rng, K, radius, opts, workers, tol):
    system = solset.system
    U0 = solset.U
    D = sum_zero_direction(spec, rng, float(np.linalg.norm(U0)))
    nodes = radius * np.exp(2j * np.pi * np.arange(K) / K)
    stops = [U0 + radius * D] + [U0 + t * D for t in nodes[1:]] + [U0 + radius * D]
    gammas = [random_gamma(rng) for _ in stops]
    chord = replace(opts, initial_step=0.25)

    def go(x):
        res, ends = _track_chain(system, stops, x, chord, gammas)
        if not res.ok:
            return res, None
        return res, np.array([system.reconstruct(y).ravel() for y in ends])

    sums = np.zeros((K + 1, spec.m * spec.n), dtype=complex)
    for k, (res, Ps) in enumerate(_map(go, [p.x for p in solset.points], workers)):
        if Ps is None:
            return None, f"point {k}: path {res.status} at t={res.t_reached:.3g}"
        sums += Ps
    closure = float(np.linalg.norm(sums[-1] - sums[0]) / max(np.linalg.norm(sums[0]), 1e-300))
    # smallest passing degree, then a few more for a settled residual
    fit, degree, first = float("inf"), -1, None
    for L in range(0, K // 2 - 1):
        val = rational_fit_residual(sums[:K], nodes, L)
        if val < fit:
            fit, degree = val, L
        if first is None and val <= tol:
            first = L
        if first is not None and L >= first + 3:
            break
    return max(closure, fit), f"closure {closure:.1e}, fit {fit:.1e} (degree {degree})"


def trace_test(spec: ModelSpec, solset: SolutionSet, seed: int | np.random.Generator = 0,
               samples: int | None = None, radius: float = 2.0, circles: int = 3,
               opts: TrackOptions = TrackOptions(), workers: int = 1,
               tol: float = TRACE_TOL, max_redraws: int = 3) -> TraceCertificate:
    """Completeness test for a fiber.

    The set is carried around circles ``|t| = radius`` on random data lines
    ``U0 + t D`` (D sums to zero), stopping at equally spaced nodes. For a
    complete fiber the carried set closes up on itself and the
    coordinatewise sum of P at the nodes is a rational function of t (a
    symmetric function of the whole fiber). A proper subset is generally
    permuted into its complement around some circle, which breaks closure.
    The residual is the worst closure mismatch or best rational-fit residual
    over all circles. A circle on which some path fails is redrawn, up to
    ``max_redraws`` times; after that the certificate is inconclusive.
    """
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    if not solset.points:
        return TraceCertificate(False, float("inf"), True, "empty set")
    K = samples if samples is not None else 2 * len(solset.points) + 24
    worst, notes, done = 0.0, [], 0
    # a circle with a failed path says nothing; draw another, a few times at most
    for _ in range(circles + max_redraws):
        resid, note = _circle_check(spec, solset, rng, K, radius, opts, workers, tol)
        notes.append(note)
        if resid is None:
            continue
        worst = max(worst, resid)
        done += 1
        if done == circles:
            return TraceCertificate(worst <= tol, worst, False, "; ".join(notes))
    return TraceCertificate(False, float("inf"), True, "; ".join(notes))


def populate(spec: ModelSpec, seed: int = 0, opts: TrackOptions = TrackOptions(),
             quiet_loops: int = 10, max_loops: int = 200, workers: int = 1,
             dedup_tol: float = DEDUP_TOL) -> SolutionSet:
    """All critical points over a generic data matrix, found by monodromy.

    Raises IncompleteError (carrying the partial set) if the trace test has
    not passed within ``max_loops`` loops.
    """
    rng = np.random.default_rng(seed)
    system, x0 = start_system(spec, rng)
    solset = SolutionSet(spec, system.U, system=system, dedup_tol=dedup_tol)
    x0, _, ok = newton_refine(system, x0, tol=1e-12)
    first = _accept(system, x0)
    if first is None:
        raise IncompleteError("start point failed its residual check", solset)
    solset.add(first)
    tested_at = None
    while solset.loops_run < max_loops:
        run_loop(solset, rng, opts, workers)
        if solset.loops_since_new < quiet_loops:
            continue
        state = (len(solset), solset.loops_since_new // quiet_loops)
        if state == tested_at:
            continue
        tested_at = state
        cert = trace_test(spec, solset, rng, opts=opts, workers=workers)
        solset.trace_certificate = cert
        log.info("%s: %d points after %d loops, trace %s", spec, len(solset), solset.loops_run, cert.detail)
        if cert.passed:
            return solset
    raise IncompleteError(f"trace test did not pass within {max_loops} loops "
                          f"({len(solset)} points found)", solset)


def ml_degree(spec: ModelSpec, seeds=(0, 1), opts: TrackOptions = TrackOptions(),
              workers: int = 1, **kwargs) -> int:
    """Common fiber cardinality over independent runs; raises InstabilityError on disagreement."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("ml_degree needs at least two seeds")
    counts = {s: len(populate(spec, s, opts, workers=workers, **kwargs)) for s in seeds}
    if len(set(counts.values())) != 1:
        raise InstabilityError(counts)
    return counts[seeds[0]]


def solve_for_data(spec: ModelSpec, U_target, seed: int = 0, opts: TrackOptions = TrackOptions(),
                   base: SolutionSet | None = None, workers: int = 1) -> SolutionSet:
    """Critical points for the given data via a parameter homotopy from a populated generic fiber.

    The data are rescaled to the base norm for tracking (critical points do
    not depend on the scale of U). Failed paths are recorded in
    ``failures``; nothing here raises for an individual path.
    """
    U_target = np.asarray(U_target, dtype=complex)
    errs = data_structure_errors(spec, U_target)
    if errs:
        raise ValueError("; ".join(errs))
    base = populate(spec, seed, opts, workers=workers) if base is None else base
    system = base.system
    scale = np.linalg.norm(base.U) / np.linalg.norm(U_target)
    U_scaled = U_target * scale
    rng = np.random.default_rng(seed)
    gamma = random_gamma(rng)
    target = system.with_params(U_scaled)

    def go(x):
        return track_path(system, U_scaled, x, replace(opts, gamma=gamma))

    out = SolutionSet(spec, U_target, system=target, dedup_tol=base.dedup_tol,
                      trace_certificate=base.trace_certificate,
                      loops_run=base.loops_run, loops_since_new=base.loops_since_new)
    for k, res in enumerate(_map(go, [p.x for p in base.points], workers)):
        point = _accept(target, res.endpoint, U_target) if res.ok else None
        if point is None:
            status = res.status if not res.ok else "rejected_endpoint"
            out.failures.append(PathFailure(k, status, res.t_reached, res.final_residual))
            continue
        out.add(point)
    return out
