"""Compiled inner loops: per-agent dynamics, joint rollouts, linearization,
the Riccati backward pass and the pairwise proximity terms.

Agents are described by parallel arrays so one kernel serves heterogeneous
teams: ``kinds[a]`` selects the model, ``xoff``/``uoff`` hold the cumulative
state/control offsets and ``params[a]`` the model constants.
"""

import math

import numpy as np
from numba import njit

DOUBLE_INTEGRATOR = 0
UNICYCLE = 1
QUAD6D = 2


@njit(cache=True, nogil=True)
def _deriv(kind, x, u, p, out):
    if kind == UNICYCLE:
        out[0] = x[3] * math.cos(x[2])
        out[1] = x[3] * math.sin(x[2])
        out[2] = u[0]
        out[3] = u[1]
    elif kind == QUAD6D:
        g = p[0]
        out[0] = x[3]
        out[1] = x[4]
        out[2] = x[5]
        out[3] = g * math.tan(u[0])
        out[4] = -g * math.tan(u[1])
        out[5] = u[2] - g


@njit(cache=True, nogil=True)
def _deriv_jac(kind, x, u, p, fx, fu):
    # fx, fu must arrive zeroed
    if kind == UNICYCLE:
        c = math.cos(x[2])
        s = math.sin(x[2])
        fx[0, 2] = -x[3] * s
        fx[0, 3] = c
        fx[1, 2] = x[3] * c
        fx[1, 3] = s
        fu[2, 0] = 1.0
        fu[3, 1] = 1.0
    elif kind == QUAD6D:
        g = p[0]
        fx[0, 3] = 1.0
        fx[1, 4] = 1.0
        fx[2, 5] = 1.0
        ct = math.cos(u[0])
        cp = math.cos(u[1])
        fu[3, 0] = g / (ct * ct)
        fu[4, 1] = -g / (cp * cp)
        fu[5, 2] = 1.0


@njit(cache=True, nogil=True)
def agent_step(kind, x, u, p, dt, out):
    """Advance one agent by ``dt``: exact ZOH for the double integrator, RK4 otherwise."""
    if kind == DOUBLE_INTEGRATOR:
        h2 = 0.5 * dt * dt
        out[0] = x[0] + dt * x[2] + h2 * u[0]
        out[1] = x[1] + dt * x[3] + h2 * u[1]
        out[2] = x[2] + dt * u[0]
        out[3] = x[3] + dt * u[1]
        return
    n = x.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    _deriv(kind, x, u, p, k1)
    _deriv(kind, x + 0.5 * dt * k1, u, p, k2)
    _deriv(kind, x + 0.5 * dt * k2, u, p, k3)
    _deriv(kind, x + dt * k3, u, p, k4)
    for i in range(n):
        out[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True, nogil=True)
def agent_jacobians(kind, x, u, p, dt, A, B):
    """Exact Jacobians of ``agent_step``, propagated through the RK4 stages."""
    n = x.shape[0]
    m = u.shape[0]
    A[:, :] = 0.0
    B[:, :] = 0.0
    if kind == DOUBLE_INTEGRATOR:
        for i in range(4):
            A[i, i] = 1.0
        A[0, 2] = dt
        A[1, 3] = dt
        h2 = 0.5 * dt * dt
        B[0, 0] = h2
        B[1, 1] = h2
        B[2, 0] = dt
        B[3, 1] = dt
        return

    eye = np.eye(n)
    fx = np.zeros((n, n))
    fu = np.zeros((n, m))
    k = np.empty(n)

    # stage 1
    _deriv(kind, x, u, p, k)
    _deriv_jac(kind, x, u, p, fx, fu)
    dkx = fx.copy()
    dku = fu.copy()
    sum_x = dkx.copy()
    sum_u = dku.copy()
    ks = k.copy()
    for stage in range(3):
        c = dt if stage == 2 else 0.5 * dt
        xs = x + c * ks
        dxs_x = eye + c * dkx
        dxs_u = c * dku
        fx[:, :] = 0.0
        fu[:, :] = 0.0
        _deriv(kind, xs, u, p, ks)
        _deriv_jac(kind, xs, u, p, fx, fu)
        dkx = fx @ dxs_x
        dku = fx @ dxs_u + fu
        w = 1.0 if stage == 2 else 2.0
        sum_x += w * dkx
        sum_u += w * dku
    for i in range(n):
        for j in range(n):
            A[i, j] = eye[i, j] + dt / 6.0 * sum_x[i, j]
        for j in range(m):
            B[i, j] = dt / 6.0 * sum_u[i, j]


@njit(cache=True, nogil=True)
def joint_rollout(kinds, xoff, uoff, params, dt, x0, U, ulo, uhi, X, Uc):
    """Clamp ``U`` into ``Uc`` and integrate from ``x0`` into ``X``."""
    T = U.shape[0]
    na = kinds.shape[0]
    X[0] = x0
    for k in range(T):
        for j in range(U.shape[1]):
            Uc[k, j] = min(max(U[k, j], ulo[j]), uhi[j])
        for a in range(na):
            agent_step(kinds[a], X[k, xoff[a]:xoff[a + 1]], Uc[k, uoff[a]:uoff[a + 1]],
                       params[a], dt, X[k + 1, xoff[a]:xoff[a + 1]])


@njit(cache=True, nogil=True)
def joint_forward(kinds, xoff, uoff, params, dt, x0, Xbar, Ubar, kff, K, alpha,
                  ulo, uhi, X, U):
    """Closed-loop forward pass ``u = ubar + alpha*kff + K (x - xbar)``."""
    T = Ubar.shape[0]
    na = kinds.shape[0]
    X[0] = x0
    for k in range(T):
        u = Ubar[k] + alpha * kff[k] + K[k] @ (X[k] - Xbar[k])
        for j in range(u.shape[0]):
            U[k, j] = min(max(u[j], ulo[j]), uhi[j])
        for a in range(na):
            agent_step(kinds[a], X[k, xoff[a]:xoff[a + 1]], U[k, uoff[a]:uoff[a + 1]],
                       params[a], dt, X[k + 1, xoff[a]:xoff[a + 1]])


@njit(cache=True, nogil=True)
def joint_linearize(kinds, xoff, uoff, params, dt, X, U, A, B):
    T = U.shape[0]
    na = kinds.shape[0]
    A[:] = 0.0
    B[:] = 0.0
    for k in range(T):
        for a in range(na):
            x0, x1 = xoff[a], xoff[a + 1]
            u0, u1 = uoff[a], uoff[a + 1]
            Aa = np.empty((x1 - x0, x1 - x0))
            Ba = np.empty((x1 - x0, u1 - u0))
            agent_jacobians(kinds[a], X[k, x0:x1], U[k, u0:u1], params[a], dt, Aa, Ba)
            A[k, x0:x1, x0:x1] = Aa
            B[k, x0:x1, u0:u1] = Ba


@njit(cache=True, nogil=True)
def _cholesky(M, L):
    n = M.shape[0]
    L[:, :] = 0.0
    for j in range(n):
        s = M[j, j]
        for p in range(j):
            s -= L[j, p] * L[j, p]
        if not s > 0.0:
            return False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            t = M[i, j]
            for p in range(j):
                t -= L[i, p] * L[j, p]
            L[i, j] = t / L[j, j]
    return True


@njit(cache=True, nogil=True)
def _chol_solve(L, Bm):
    # solves (L L^T) X = Bm column by column
    n = L.shape[0]
    out = Bm.copy()
    for c in range(out.shape[1]):
        for i in range(n):
            t = out[i, c]
            for p in range(i):
                t -= L[i, p] * out[p, c]
            out[i, c] = t / L[i, i]
        for i in range(n - 1, -1, -1):
            t = out[i, c]
            for p in range(i + 1, n):
                t -= L[p, i] * out[p, c]
            out[i, c] = t / L[i, i]
    return out


@njit(cache=True, nogil=True)
def riccati(A, B, lx, lu, lxx, luu, lux, mu, kff, K):
    """Backward Riccati recursion.

    Returns ``(ok, failed_stage, dV1, dV2)`` where the predicted cost change of
    a step of size alpha is ``alpha*dV1 + alpha**2*dV2``.
    """
    T = A.shape[0]
    m = B.shape[2]
    Vx = lx[T].copy()
    Vxx = lxx[T].copy()
    L = np.empty((m, m))
    rhs = np.empty((m, 1 + A.shape[1]))
    dV1 = 0.0
    dV2 = 0.0
    for k in range(T - 1, -1, -1):
        At = A[k].T.copy()
        Bt = B[k].T.copy()
        VxxA = Vxx @ A[k]
        VxxB = Vxx @ B[k]
        Qx = lx[k] + At @ Vx
        Qu = lu[k] + Bt @ Vx
        Qxx = lxx[k] + At @ VxxA
        Quu = luu[k] + Bt @ VxxB
        Qux = lux[k] + Bt @ VxxA
        Quu_reg = Quu + mu * np.eye(m)
        if not _cholesky(Quu_reg, L):
            return False, k, 0.0, 0.0
        rhs[:, 0] = Qu
        rhs[:, 1:] = Qux
        sol = _chol_solve(L, rhs)
        kk = -sol[:, 0]
        KK = -sol[:, 1:]
        kff[k] = kk
        K[k] = KK
        Quu_k = Quu @ kk
        dV1 += kk @ Qu
        dV2 += 0.5 * (kk @ Quu_k)
        KtQuu = KK.T @ Quu
        Vx = Qx + KtQuu @ kk + KK.T @ Qu + Qux.T @ kk
        Vxx = Qxx + KtQuu @ KK + KK.T @ Qux + Qux.T @ KK
        Vxx = 0.5 * (Vxx + Vxx.T)
    return True, -1, dV1, dV2


@njit(cache=True, nogil=True)
def proximity_value(X, pos, pa, pb, beta, d_prox):
    """Sum of hinge penalties over stages ``0..T-1`` of ``X`` and the given pairs."""
    T = X.shape[0]
    d = pos.shape[1]
    total = 0.0
    for k in range(T):
        for q in range(pa.shape[0]):
            s = 0.0
            for c in range(d):
                r = X[k, pos[pa[q], c]] - X[k, pos[pb[q], c]]
                s += r * r
            dist = math.sqrt(s)
            if dist < d_prox:
                total += beta * (dist - d_prox) ** 2
    return total


@njit(cache=True, nogil=True)
def proximity_quadraticize(X, pos, pa, pb, beta, d_prox, lx, lxx):
    """Accumulate gradients and PSD-projected Hessians of the hinge penalties.

    For ``r = p_a - p_b`` inside the threshold the exact Hessian in ``p_a`` is
    ``2 beta (nn^T + (1 - d_prox/d)(I - nn^T))``; the second term is negative
    semidefinite, so eigenvalue clamping leaves ``2 beta nn^T``. The pair block
    is ``[[H, -H], [-H, H]]`` whose spectrum is twice that of ``H``, so the same
    clamping applies blockwise.
    """
    T = X.shape[0]
    d = pos.shape[1]
    r = np.empty(d)
    nhat = np.empty(d)
    for k in range(T):
        for q in range(pa.shape[0]):
            ia = pos[pa[q]]
            ib = pos[pb[q]]
            s = 0.0
            for c in range(d):
                r[c] = X[k, ia[c]] - X[k, ib[c]]
                s += r[c] * r[c]
            dist = math.sqrt(s)
            if not dist < d_prox:
                continue
            if dist > 0.0:
                for c in range(d):
                    nhat[c] = r[c] / dist
            else:
                nhat[:] = 0.0
                nhat[0] = 1.0
            gscale = 2.0 * beta * (dist - d_prox)
            for c in range(d):
                lx[k, ia[c]] += gscale * nhat[c]
                lx[k, ib[c]] -= gscale * nhat[c]
            for c in range(d):
                for e in range(d):
                    h = 2.0 * beta * nhat[c] * nhat[e]
                    lxx[k, ia[c], ia[e]] += h
                    lxx[k, ib[c], ib[e]] += h
                    lxx[k, ia[c], ib[e]] -= h
                    lxx[k, ib[c], ia[e]] -= h
