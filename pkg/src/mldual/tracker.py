"""Predictor-corrector continuation of square-system solutions along paths in
parameter (data) space."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .critsys import DomainError, SquareSystem, factor_point

SUCCESS = "success"
DIVERGED = "diverged"
HIT_HYPERPLANE = "hit_coordinate_hyperplane"
STEP_UNDERFLOW = "step_underflow"
MAX_STEPS = "max_steps"

# re-gauge once ||G||^2 exceeds this multiple of ||P||
MAX_IMBALANCE = 20.0


class ConditioningError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class TrackOptions:
    initial_step: float = 0.05
    min_step: float = 1e-7
    max_newton_iters: int = 4
    corrector_tol: float = 1e-9
    max_steps: int = 10000
    gamma: complex | None = None
    max_norm: float = 1e8
    hyperplane_tol: float = 1e-12

    def __post_init__(self):
        if not 0 < self.min_step < self.initial_step <= 0.25:
            raise ValueError("need 0 < min_step < initial_step <= 0.25")


@dataclass
class TrackResult:
    status: str
    endpoint: np.ndarray | None = field(repr=False)
    steps_taken: int
    final_residual: float
    t_reached: float = 0.0
    last_x: np.ndarray | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.status == SUCCESS


def newton_refine(system: SquareSystem, x, tol: float = 1e-12, max_iters: int = 8,
                  U=None, slice_rhs=None, cond_limit: float = 1e12) -> tuple[np.ndarray, float, bool]:
    """Newton's method on the square system.

    Returns ``(x, residual_norm, converged)``. Raises ConditioningError when
    the Jacobian is numerically singular.
    """
    x = np.array(x, dtype=complex)
    F, J = system.evaluate(x, U, slice_rhs)
    res = float(np.linalg.norm(F))
    for _ in range(max_iters):
        if res <= tol:
            return x, res, True
        if np.linalg.cond(J) > cond_limit:
            raise ConditioningError("Jacobian is numerically singular")
        x = x - np.linalg.solve(J, F)
        try:
            F, J = system.evaluate(x, U, slice_rhs)
        except DomainError:
            return x, float("inf"), False
        res = float(np.linalg.norm(F))
        if not np.isfinite(res):
            return x, res, False
    return x, res, res <= tol


_STATUS = {
    _kernels.SUCCESS: SUCCESS,
    _kernels.DIVERGED: DIVERGED,
    _kernels.HYPERPLANE: HIT_HYPERPLANE,
    _kernels.UNDERFLOW: STEP_UNDERFLOW,
    _kernels.MAX_STEPS: MAX_STEPS,
    _kernels.UNBALANCED: STEP_UNDERFLOW,
}


def random_gamma(rng: np.random.Generator) -> complex:
    """Unit twist with argument uniform in (-pi/2, pi/2)."""
    return complex(np.exp(1j * rng.uniform(-np.pi / 2, np.pi / 2)))


def track_path(system: SquareSystem, U_end, x_start, opts: TrackOptions = TrackOptions(),
               slice_end=None, rng: np.random.Generator | None = None,
               max_regauge: int = 3) -> TrackResult:
    """Continue ``x_start`` (a solution at the system's data) to ``U_end``.

    The data move along ``p(t) = p0 + tau(t) (p1 - p0)`` with
    ``tau = t / (t + gamma (1 - t))``. For sym/skew the gauge slice is the
    one through ``x_start`` unless ``slice_end`` is given, in which case the
    slice constants move from the system's to ``slice_end`` along the path.
    With a fixed slice, a path that stalls because the factor G ran off
    along its gauge orbit is re-gauged (P refactored, new slice through the
    balanced factor) and resumed on the same data curve.
    """
    U0 = system.U
    U1 = np.ascontiguousarray(U_end, dtype=complex)
    x = np.ascontiguousarray(x_start, dtype=complex)
    fixed_slice = system.gauge is None or slice_end is None
    if system.gauge is None:
        c0 = c1 = system._c
    elif slice_end is None:
        c0 = c1 = system.slice_through(x)
    else:
        c0 = system.gauge.slice_rhs
        c1 = np.ascontiguousarray(slice_end, dtype=complex)
    gamma = opts.gamma
    if gamma is None:
        gamma = random_gamma(rng if rng is not None else np.random.default_rng(0))
    gamma = complex(gamma)
    if np.array_equal(U0, U1) and np.array_equal(c0, c1):
        return _finish(system, x, U1, c1, opts, 0, 1.0)

    consts = system.kernel_constants()
    t_base, total, stalls = 0.0, 0, 0
    Ua, ga = U0, gamma
    while True:
        limit = np.inf
        if system.gauge is not None and fixed_slice:
            limit = max(MAX_IMBALANCE, 4.0 * _kernels.gauge_imbalance(x, system.spec.m, system.spec.r, system._Sg))
        code, y, steps, last_res, t = _kernels.track(
            system.kind_code, x, Ua, U1 - Ua, c0, c1 - c0, ga, *consts,
            opts.initial_step, opts.min_step, opts.max_newton_iters, opts.corrector_tol, opts.max_steps - total,
            opts.max_norm, opts.hyperplane_tol, limit)
        total += steps
        t_glob = t_base + t * (1.0 - t_base)
        if code == _kernels.SUCCESS:
            return _finish(system, y, U1, c1, opts, total, 1.0)
        # an imbalance stop is a planned restart; stalls are limited
        stalls += code != _kernels.UNBALANCED
        if (system.gauge is None or not fixed_slice or stalls > max_regauge
                or code not in (_kernels.UNDERFLOW, _kernels.DIVERGED, _kernels.MAX_STEPS, _kernels.UNBALANCED)
                or total >= opts.max_steps):
            return TrackResult(_STATUS[code], None, total, last_res, t_glob, y)
        # y is the last accepted point, at local parameter t
        tau = t / (t + ga * (1.0 - t))
        Ut = Ua + tau * (U1 - Ua)
        restart = _regauge(system, y, Ut)
        if restart is None:
            return TrackResult(_STATUS[code], None, total, last_res, t_glob, y)
        x, c0 = restart
        c1 = c0
        ga = _remaining_gamma(ga, t)
        Ua, t_base = Ut, t_glob


def _remaining_gamma(gamma: complex, t: float) -> complex:
    """Twist of the tail ``t' in [t, 1]`` of a gamma-segment, re-based to [0, 1].

    Both the segment and its re-based tail are Moebius maps fixing 0 and 1
    in the local parameter, so the tail is again of the same form.
    """
    tau = lambda s: s / (s + gamma * (1.0 - s))
    ta = tau(t)
    sig = (tau(t + 0.5 * (1.0 - t)) - ta) / (1.0 - ta)
    return complex((1.0 - sig) / sig)


def _regauge(system: SquareSystem, x, U) -> tuple[np.ndarray, np.ndarray] | None:
    """Balanced factor of the same P as x, with the slice through it."""
    d = system.unpack(x)
    P = system.reconstruct(x)
    try:
        G = factor_point(system.spec, P)
    except (np.linalg.LinAlgError, ZeroDivisionError, ValueError):
        return None
    if not np.all(np.isfinite(G)):
        return None
    y = np.concatenate([G.ravel(), [d["lam"]]])
    c = system.gauge.slice_matrix @ G.ravel()
    try:
        y, _, ok = newton_refine(system, y, tol=1e-11, max_iters=6, U=U, slice_rhs=c)
    except (np.linalg.LinAlgError, DomainError):
        return None
    if not ok:
        return None
    return y, system.slice_through(y)


def _finish(system, x, U, c, opts, steps, t) -> TrackResult:
    try:
        x, res, ok = newton_refine(system, x, tol=opts.corrector_tol, max_iters=6, U=U, slice_rhs=c)
    except (np.linalg.LinAlgError, DomainError):
        return TrackResult(STEP_UNDERFLOW, None, steps, float("inf"), t, x)
    if not ok:
        return TrackResult(STEP_UNDERFLOW, None, steps, res, t, x)
    if np.linalg.norm(x) > opts.max_norm:
        return TrackResult(DIVERGED, None, steps, res, t, x)
    return TrackResult(SUCCESS, x, steps, res, t, x)
