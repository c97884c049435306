"""Compiled residual/Jacobian kernels for the square critical systems.

Each kernel returns ``ok = False`` instead of dividing by a zero coordinate.
Derivatives are formed per unknown with dense tiny matrices; sizes are at
most 6 x 6 so this is cheaper than any cleverness.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def rect_eval(A2, B, lam, U, jac):
    m, n = U.shape
    r = B.shape[1]
    A = np.zeros((m, r), dtype=np.complex128)
    for i in range(r):
        A[i, i] = 1.0
    for a in range(m - r):
        for k in range(r):
            A[r + a, k] = A2[a, k]
    P = A @ B.T
    nv = (m - r) * r + n * r + 1
    neq = nv
    F = np.zeros(neq, dtype=np.complex128)
    J = np.zeros((neq, nv), dtype=np.complex128)
    for i in range(m):
        for j in range(n):
            if P[i, j] == 0:
                return F, J, False
    M = U / P
    W = M / P
    N = M - lam
    E1 = A.T @ N
    E2 = N @ B
    e = 0
    for i in range(r):
        for j in range(n):
            F[e] = E1[i, j]
            e += 1
    for a in range(m - r):
        for k in range(r):
            F[e] = E2[r + a, k]
            e += 1
    F[e] = P.sum() - 1.0
    if not jac:
        return F, J, True
    # closed-form entries; equation rows: E1 (i, j) then E2 (a, k)
    base = r * n
    nb = (m - r) * r
    for a in range(m - r):
        ra = r + a
        for kp in range(r):
            v = a * r + kp
            for i in range(r):
                for j in range(n):
                    val = -A[ra, i] * W[ra, j] * B[j, kp]
                    if i == kp:
                        val += N[ra, j]
                    J[i * n + j, v] = val
            for k in range(r):
                acc = 0j
                for j in range(n):
                    acc -= W[ra, j] * B[j, kp] * B[j, k]
                J[base + a * r + k, v] = acc
            acc = 0j
            for j in range(n):
                acc += B[j, kp]
            J[nv - 1, v] = acc
    for jp in range(n):
        for kp in range(r):
            v = nb + jp * r + kp
            for i in range(r):
                acc = 0j
                for l in range(m):
                    acc -= A[l, i] * W[l, jp] * A[l, kp]
                J[i * n + jp, v] = acc
            for a in range(m - r):
                ra = r + a
                for k in range(r):
                    val = -W[ra, jp] * A[ra, kp] * B[jp, k]
                    if k == kp:
                        val += N[ra, jp]
                    J[base + a * r + k, v] = val
            acc = 0j
            for l in range(m):
                acc += A[l, kp]
            J[nv - 1, v] = acc
    for i in range(r):
        acc = 0j
        for l in range(m):
            acc -= A[l, i]
        for j in range(n):
            J[i * n + j, nv - 1] = acc
    for k in range(r):
        acc = 0j
        for j in range(n):
            acc -= B[j, k]
        for a in range(m - r):
            J[base + a * r + k, nv - 1] = acc
    return F, J, True


@njit(cache=True, nogil=True)
def rect_pderiv(A2, B, dU):
    m, n = dU.shape
    r = B.shape[1]
    A = np.zeros((m, r), dtype=np.complex128)
    for i in range(r):
        A[i, i] = 1.0
    for a in range(m - r):
        for k in range(r):
            A[r + a, k] = A2[a, k]
    dM = np.empty((m, n), dtype=np.complex128)
    for i in range(m):
        for j in range(n):
            p = 0j
            for k in range(r):
                p += A[i, k] * B[j, k]
            dM[i, j] = dU[i, j] / p
    out = np.zeros((m - r) * r + n * r + 1, dtype=np.complex128)
    for i in range(r):
        for j in range(n):
            acc = 0j
            for l in range(m):
                acc += A[l, i] * dM[l, j]
            out[i * n + j] = acc
    base = r * n
    for a in range(m - r):
        for k in range(r):
            acc = 0j
            for j in range(n):
                acc += dM[r + a, j] * B[j, k]
            out[base + a * r + k] = acc
    return out


@njit(cache=True, nogil=True)
def factor_eval(G, lam, U, Sg, K, skew, jac):
    """Unprojected equations ``(U/P - lam K) G`` for ``P = G Sg G^T``.

    Returns (Fm, dFm, total, dtotal, ok) with Fm flattened row-major and
    total the normalization sum (half entry sum for sym, upper sum for skew).
    """
    m, r = G.shape
    H = G @ Sg.T
    P = G @ H.T
    nv = m * r + 1
    Fm = np.zeros(m * r, dtype=np.complex128)
    dFm = np.zeros((m * r, nv), dtype=np.complex128)
    dtotal = np.zeros(nv, dtype=np.complex128)
    M = np.zeros((m, m), dtype=np.complex128)
    W = np.zeros((m, m), dtype=np.complex128)
    for i in range(m):
        for j in range(m):
            if skew and i == j:
                continue
            if P[i, j] == 0:
                return Fm, dFm, 0j, dtotal, False
            M[i, j] = U[i, j] / P[i, j]
            W[i, j] = M[i, j] / P[i, j]
    N = M - lam * K
    FG = N @ G
    total = 0j
    for i in range(m):
        for j in range(m):
            if skew:
                if j > i:
                    total += P[i, j]
            else:
                total += 0.5 * P[i, j]
        for k in range(r):
            Fm[i * r + k] = FG[i, k]
    if not jac:
        return Fm, dFm, total, dtotal, True
    s = -1.0 if skew else 1.0
    D = np.zeros((m, m), dtype=np.complex128)
    dG = np.zeros((m, r), dtype=np.complex128)
    for v in range(nv - 1):
        a, k = v // r, v % r
        D[:, :] = 0.0
        for j in range(m):
            D[a, j] += H[j, k]
            D[j, a] += s * H[j, k]
        dN = -W * D
        dG[:, :] = 0.0
        dG[a, k] = 1.0
        dF = dN @ G + N @ dG
        for i in range(m):
            for kk in range(r):
                dFm[i * r + kk, v] = dF[i, kk]
        acc = 0j
        for i in range(m):
            for j in range(m):
                if skew:
                    if j > i:
                        acc += D[i, j]
                else:
                    acc += 0.5 * D[i, j]
        dtotal[v] = acc
    dF = -(K @ G)
    for i in range(m):
        for kk in range(r):
            dFm[i * r + kk, nv - 1] = dF[i, kk]
    return Fm, dFm, total, dtotal, True


@njit(cache=True, nogil=True)
def factor_pderiv(G, dU, Sg, skew):
    m, r = G.shape
    P = G @ (G @ Sg.T).T
    dM = np.zeros((m, m), dtype=np.complex128)
    for i in range(m):
        for j in range(m):
            if skew and i == j:
                continue
            dM[i, j] = dU[i, j] / P[i, j]
    FG = dM @ G
    out = np.zeros(m * r, dtype=np.complex128)
    for i in range(m):
        for k in range(r):
            out[i * r + k] = FG[i, k]
    return out


# -- whole-system evaluation and path tracking --------------------------------
# kind codes: 0 rect, 1 sym, 2 skew. For rect the factor constants (Sg, K,
# L, R, c) are unused placeholders.

RECT, SYM, SKEW = 0, 1, 2

SUCCESS, DIVERGED, HYPERPLANE, UNDERFLOW, MAX_STEPS, UNBALANCED = 0, 1, 2, 3, 4, 5


@njit(cache=True, nogil=True)
def _split_rect(x, m, n, r):
    na = (m - r) * r
    A2 = x[:na].copy().reshape((m - r, r))
    B = x[na:na + n * r].copy().reshape((n, r))
    return A2, B


@njit(cache=True, nogil=True)
def system_eval(kind, x, U, c, m, n, r, Sg, K, L, R, jac):
    if kind == RECT:
        A2, B = _split_rect(x, m, n, r)
        return rect_eval(A2, B, x[x.size - 1], U, jac)
    nf = m * r
    nv = nf + 1
    G = x[:nf].copy().reshape((m, r))
    Fm, dFm, total, dtotal, ok = factor_eval(G, x[nv - 1], U, Sg, K, kind == SKEW, jac)
    F = np.zeros(nv, dtype=np.complex128)
    J = np.zeros((nv, nv), dtype=np.complex128)
    if not ok:
        return F, J, False
    p = R.shape[0]
    k = L.shape[0]
    F[:p] = R @ Fm
    F[p:p + k] = L @ x[:nf] - c
    F[nv - 1] = total - 1.0
    if jac:
        J[:p, :] = R @ dFm
        J[p:p + k, :nf] = L
        J[nv - 1, :] = dtotal
    return F, J, True


@njit(cache=True, nogil=True)
def system_pderiv(kind, x, dU, dc, m, n, r, Sg, R):
    if kind == RECT:
        A2, B = _split_rect(x, m, n, r)
        return rect_pderiv(A2, B, dU)
    nf = m * r
    G = x[:nf].copy().reshape((m, r))
    Fm = factor_pderiv(G, dU, Sg, kind == SKEW)
    out = np.zeros(nf + 1, dtype=np.complex128)
    p = R.shape[0]
    out[:p] = R @ Fm
    out[p:nf] = -dc
    return out


@njit(cache=True, nogil=True)
def min_coordinate(kind, x, m, n, r, Sg):
    """Smallest |p_ij| over the coordinates that enter the likelihood."""
    if kind == RECT:
        A2, B = _split_rect(x, m, n, r)
        A = np.zeros((m, r), dtype=np.complex128)
        for i in range(r):
            A[i, i] = 1.0
        A[r:, :] = A2
        P = A @ B.T
    else:
        G = x[:m * r].copy().reshape((m, r))
        P = G @ (G @ Sg.T).T
    best = np.inf
    for i in range(P.shape[0]):
        for j in range(P.shape[1]):
            if kind == SKEW and j <= i:
                continue
            a = abs(P[i, j])
            if a < best:
                best = a
    return best


@njit(cache=True, nogil=True)
def gauge_imbalance(x, m, r, Sg):
    """||G||^2 / ||P||; large when G has drifted far along its gauge orbit."""
    G = x[:m * r].copy().reshape((m, r))
    P = G @ (G @ Sg.T).T
    return np.linalg.norm(G) ** 2 / max(np.linalg.norm(P), 1e-300)


@njit(cache=True, nogil=True)
def _velocity(kind, x, t, U0, dU, c0, dc, gamma, m, n, r, Sg, K, L, R):
    den = t + gamma * (1.0 - t)
    tau = t / den
    dtau = gamma / (den * den)
    F, J, ok = system_eval(kind, x, U0 + tau * dU, c0 + tau * dc, m, n, r, Sg, K, L, R, True)
    if not ok:
        return x, False
    rate = system_pderiv(kind, x, dU, dc, m, n, r, Sg, R) * dtau
    try:
        v = -np.linalg.solve(J, rate)
    except Exception:
        return x, False
    if not np.all(np.isfinite(v)):
        return x, False
    return v, True


@njit(cache=True, nogil=True)
def track(kind, x0, U0, dU, c0, dc, gamma, m, n, r, Sg, K, L, R,
          h0, hmin, max_newton, tol, max_steps, max_norm, hyp_tol, max_imbalance):
    """RK4 predictor / Newton corrector along the gamma-twisted segment.

    Returns (status, x, steps, last_residual, t). For sym/skew the run stops
    with UNBALANCED once the factor's gauge imbalance exceeds
    ``max_imbalance`` so the caller can re-gauge.
    """
    x = x0.copy()
    t = 0.0
    h = h0
    streak = 0
    steps = 0
    last_res = 0.0
    while t < 1.0:
        if steps >= max_steps:
            return MAX_STEPS, x, steps, last_res, t
        steps += 1
        h = min(h, 1.0 - t)
        t1 = t + h
        ok = True
        k1, ok1 = _velocity(kind, x, t, U0, dU, c0, dc, gamma, m, n, r, Sg, K, L, R)
        ok = ok1
        if ok:
            k2, ok = _velocity(kind, x + 0.5 * h * k1, t + 0.5 * h, U0, dU, c0, dc, gamma, m, n, r, Sg, K, L, R)
        if ok:
            k3, ok = _velocity(kind, x + 0.5 * h * k2, t + 0.5 * h, U0, dU, c0, dc, gamma, m, n, r, Sg, K, L, R)
        if ok:
            k4, ok = _velocity(kind, x + h * k3, t1, U0, dU, c0, dc, gamma, m, n, r, Sg, K, L, R)
        converged = False
        y = x
        if ok:
            y = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            den = t1 + gamma * (1.0 - t1)
            tau = t1 / den
            Ut = U0 + tau * dU
            ct = c0 + tau * dc
            scale = 1.0 + np.linalg.norm(y)
            prev = -1.0
            for _ in range(max_newton):
                F, J, good = system_eval(kind, y, Ut, ct, m, n, r, Sg, K, L, R, True)
                if not good:
                    break
                try:
                    dx = np.linalg.solve(J, F)
                except Exception:
                    break
                nd = np.linalg.norm(dx)
                if not np.isfinite(nd):
                    break
                if prev >= 0.0 and nd > 0.5 * prev:
                    break
                if prev < 0.0 and nd > 0.1 * scale:
                    break
                last_res = np.linalg.norm(F)
                y = y - dx
                if nd <= tol * scale:
                    converged = True
                    break
                prev = nd
        if converged:
            if min_coordinate(kind, y, m, n, r, Sg) < hyp_tol:
                return HYPERPLANE, y, steps, last_res, t1
            if np.linalg.norm(y) > max_norm:
                return DIVERGED, y, steps, last_res, t1
            x = y
            t = t1
            if kind != RECT and t < 1.0 and gauge_imbalance(x, m, r, Sg) > max_imbalance:
                return UNBALANCED, x, steps, last_res, t
            streak += 1
            if streak >= 3:
                h = min(h * 1.5, 0.25)
                streak = 0
        else:
            streak = 0
            h = h / 2.0
            if h < hmin:
                if min_coordinate(kind, x, m, n, r, Sg) < 1e-8:
                    return HYPERPLANE, x, steps, last_res, t
                return UNDERFLOW, x, steps, last_res, t
    return SUCCESS, x, steps, last_res, 1.0
