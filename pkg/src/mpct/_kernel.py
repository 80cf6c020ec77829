"""Compiled inner loop of the solver.

Same arithmetic as :func:`mpct.solver.eadmm_iteration`, written index by
index over the stage structure so no coupling matrix is ever formed.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _tri_lower_solve(L, b, out):
    k = L.shape[0]
    for r in range(k):
        acc = b[r]
        for c in range(r):
            acc -= L[r, c] * out[c]
        out[r] = acc / L[r, r]


@njit(cache=True)
def _tri_upper_t_solve(L, b, out):
    # solves L^T out = b for lower-triangular L
    k = L.shape[0]
    for r in range(k - 1, -1, -1):
        acc = b[r]
        for c in range(r + 1, k):
            acc -= L[c, r] * out[c]
        out[r] = acc / L[r, r]


@njit(cache=True)
def _range_space_solve(n, N, F, hinv, diag_hinv, L_diag, L_sub, qhat, r2, z, mu, shifted, y, rhs, fw, tmp):
    """``[[H, G'], [G, 0]] [z; mu] = [-qhat; r2]``; ``shifted`` receives ``qhat + G' mu``."""
    nz = F.shape[1]
    for i in range(N + 1):
        for r in range(nz):
            if diag_hinv:
                y[i * nz + r] = hinv[i, r, r] * qhat[i * nz + r]
            else:
                acc = 0.0
                for c in range(nz):
                    acc += hinv[i, r, c] * qhat[i * nz + c]
                y[i * nz + r] = acc
    for i in range(N):
        for r in range(n):
            acc = -y[(i + 1) * nz + r]
            for c in range(nz):
                acc += F[r, c] * y[i * nz + c]
            rhs[i * n + r] = -acc - r2[i * n + r]
    # forward substitution with the block lower-bidiagonal factor
    for i in range(N):
        for r in range(n):
            tmp[r] = rhs[i * n + r]
        if i > 0:
            for r in range(n):
                for c in range(n):
                    tmp[r] -= L_sub[i - 1, r, c] * fw[(i - 1) * n + c]
        _tri_lower_solve(L_diag[i], tmp, fw[i * n:(i + 1) * n])
    # backward substitution with its transpose
    for i in range(N - 1, -1, -1):
        for r in range(n):
            tmp[r] = fw[i * n + r]
        if i < N - 1:
            for r in range(n):
                for c in range(n):
                    tmp[r] -= L_sub[i, c, r] * mu[(i + 1) * n + c]
        _tri_upper_t_solve(L_diag[i], tmp, mu[i * n:(i + 1) * n])
    for p in range(qhat.shape[0]):
        shifted[p] = qhat[p]
    for i in range(N):
        for c in range(nz):
            acc = 0.0
            for r in range(n):
                acc += F[r, c] * mu[i * n + r]
            shifted[i * nz + c] += acc
        for r in range(n):
            shifted[(i + 1) * nz + r] -= mu[i * n + r]
    for i in range(N + 1):
        for r in range(nz):
            if diag_hinv:
                z[i * nz + r] = -hinv[i, r, r] * shifted[i * nz + r]
            else:
                acc = 0.0
                for c in range(nz):
                    acc += hinv[i, r, c] * shifted[i * nz + c]
                z[i * nz + r] = -acc


@njit(cache=True)
def run_eadmm(
    n, m, N, x, q_ref, rho, lb1, ub1, d1, z2_map, F, hhat, hinv, diag_hinv, L_diag, L_sub,
    z1, z2, z3, lam, z2_prev, z3_prev, tol, max_iters,
):
    """Iterate in place. Returns ``(iterations, converged, ||Gamma||_inf)``;
    ``iterations`` is negative (``-k``) if iteration ``k`` went non-finite."""
    nz = n + m
    nv = (N + 1) * nz
    t0 = n + (N + 1) * nz
    qhat = np.empty(nv)
    shifted = np.empty(nv)
    zt = np.empty(nv)
    dz = np.empty(nv)
    y = np.empty(nv)
    r2 = np.zeros(N * n)
    rhs = np.empty(N * n)
    fw = np.empty(N * n)
    mu = np.empty(N * n)
    tmp = np.empty(n)
    g = np.empty(nz)
    res = np.inf
    for k in range(1, max_iters + 1):
        # z1 update
        for i in range(N + 1):
            for j in range(nz):
                c = n + i * nz + j
                acc = -(lam[c] + rho[c] * (z3[i * nz + j] + z2[j]))
                if i == 0 and j < n:
                    acc += lam[j] - rho[j] * x[j]
                if i == N:
                    acc += lam[t0 + j] - rho[t0 + j] * z2[j]
                v = -acc / d1[i * nz + j]
                if v < lb1[i * nz + j]:
                    v = lb1[i * nz + j]
                elif v > ub1[i * nz + j]:
                    v = ub1[i * nz + j]
                z1[i * nz + j] = v

        # z2 update
        for j in range(nz):
            z2_prev[j] = z2[j]
            g[j] = -(lam[t0 + j] + rho[t0 + j] * z1[N * nz + j])
        for i in range(N + 1):
            for j in range(nz):
                c = n + i * nz + j
                g[j] += lam[c] + rho[c] * (z3[i * nz + j] - z1[i * nz + j])
        for j in range(nz):
            g[j] = q_ref[j] - g[j]
        for r in range(nz):
            acc = 0.0
            for c in range(nz):
                acc += z2_map[r, c] * g[c]
            z2[r] = acc

        # z3 update
        for i in range(N + 1):
            for j in range(nz):
                c = n + i * nz + j
                qhat[i * nz + j] = lam[c] + rho[c] * (z2[j] - z1[i * nz + j])
        for p in range(N * n):
            r2[p] = 0.0
        _range_space_solve(n, N, F, hinv, diag_hinv, L_diag, L_sub, qhat, r2, zt, mu, shifted, y, rhs, fw, tmp)
        # one refinement step on the residuals of both block rows
        for i in range(N + 1):
            for r in range(nz):
                acc = shifted[i * nz + r]
                for c in range(nz):
                    acc += hhat[i, r, c] * zt[i * nz + c]
                qhat[i * nz + r] = acc
        for i in range(N):
            for r in range(n):
                acc = -zt[(i + 1) * nz + r]
                for c in range(nz):
                    acc += F[r, c] * zt[i * nz + c]
                r2[i * n + r] = -acc
        _range_space_solve(n, N, F, hinv, diag_hinv, L_diag, L_sub, qhat, r2, dz, mu, shifted, y, rhs, fw, tmp)
        for p in range(nv):
            z3_prev[p] = z3[p]
            z3[p] = zt[p] + dz[p]

        # residual and dual update
        res = 0.0
        finite = True
        for j in range(n):
            gam = z1[j] - x[j]
            lam[j] += rho[j] * gam
            res = max(res, abs(gam))
        for i in range(N + 1):
            for j in range(nz):
                c = n + i * nz + j
                gam = z3[i * nz + j] + z2[j] - z1[i * nz + j]
                lam[c] += rho[c] * gam
                res = max(res, abs(gam))
        for j in range(nz):
            gam = z1[N * nz + j] - z2[j]
            lam[t0 + j] += rho[t0 + j] * gam
            res = max(res, abs(gam))
        dz2 = 0.0
        for j in range(nz):
            dz2 = max(dz2, abs(z2[j] - z2_prev[j]))
        dz3 = 0.0
        for p in range(nv):
            dz3 = max(dz3, abs(z3[p] - z3_prev[p]))
        for p in range(lam.shape[0]):
            if not np.isfinite(lam[p]):
                finite = False
        if not (finite and np.isfinite(res) and np.isfinite(dz2) and np.isfinite(dz3)):
            return -k, False, res
        if res <= tol and dz2 <= tol and dz3 <= tol:
            return k, True, res
    return max_iters, False, res
