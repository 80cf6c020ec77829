"""Slow reference solver for validating the extended ADMM solver.

The oracle works on the untransformed MPCT problem, over
``v = (x_0..x_N, u_0..u_{N-1}, x_s, u_s)``, with no artificial-reference
shift and no three-block split. It runs a plain two-block ADMM (equality
constrained QP, then box projection). Periodically the active set guessed
from the iterates is polished by a KKT solve; on degenerate problems where
that fails, the converged iterates are used instead. Either way a result
is returned only after the full KKT conditions have been checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
from scipy.optimize import linprog

from mpct.errors import OracleInconclusive
from mpct.problem import MpctProblem


@dataclass(frozen=True, eq=False)
class DenseQp:
    """``min 1/2 v'Hv + q'v  s.t.  Aeq v = beq,  lb <= v <= ub``."""

    H: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray
    beq: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    n: int
    m: int
    N: int

    @property
    def size(self) -> int:
        return self.H.shape[0]

    def x_index(self, i: int) -> slice:
        return slice(i * self.n, (i + 1) * self.n)

    def u_index(self, i: int) -> slice:
        base = (self.N + 1) * self.n
        return slice(base + i * self.m, base + (i + 1) * self.m)

    @property
    def xs_index(self) -> slice:
        base = (self.N + 1) * self.n + self.N * self.m
        return slice(base, base + self.n)

    @property
    def us_index(self) -> slice:
        base = (self.N + 1) * self.n + self.N * self.m + self.n
        return slice(base, base + self.m)

    def objective(self, v) -> float:
        return float(0.5 * v @ self.H @ v + self.q @ v)


def dense_qp(prob: MpctProblem, x, x_ref, u_ref) -> DenseQp:
    """Assemble the tracking QP directly from its original statement."""
    n, m, N = prob.n, prob.m, prob.N
    A, B, mdl = prob.model.A, prob.model.B, prob.model
    nv = (N + 1) * n + N * m + n + m
    qp = DenseQp(np.zeros((nv, nv)), np.zeros(nv), np.zeros((0, nv)), np.zeros(0),
                 np.full(nv, -np.inf), np.full(nv, np.inf), n, m, N)
    H, q, lb, ub = qp.H, qp.q, qp.lb, qp.ub

    def sel(idx):
        S = np.zeros((idx.stop - idx.start, nv))
        S[:, idx] = np.eye(idx.stop - idx.start)
        return S

    Sxs, Sus = sel(qp.xs_index), sel(qp.us_index)
    for i in range(N):
        Dx = sel(qp.x_index(i)) - Sxs
        Du = sel(qp.u_index(i)) - Sus
        H += Dx.T @ prob.Q @ Dx + Du.T @ prob.R @ Du
    H += Sxs.T @ prob.T @ Sxs + Sus.T @ prob.S @ Sus
    q[qp.xs_index] = -prob.T @ np.asarray(x_ref, dtype=float)
    q[qp.us_index] = -prob.S @ np.atleast_1d(np.asarray(u_ref, dtype=float))

    rows, rhs = [], []
    rows.append(sel(qp.x_index(0)))
    rhs.append(np.asarray(x, dtype=float))
    for i in range(N):
        rows.append(A @ sel(qp.x_index(i)) + B @ sel(qp.u_index(i)) - sel(qp.x_index(i + 1)))
        rhs.append(np.zeros(n))
    rows.append(A @ Sxs + B @ Sus - Sxs)
    rhs.append(np.zeros(n))
    rows.append(sel(qp.x_index(N)) - Sxs)
    rhs.append(np.zeros(n))

    for i in range(1, N):
        lb[qp.x_index(i)], ub[qp.x_index(i)] = mdl.x_lb, mdl.x_ub
    for i in range(N):
        lb[qp.u_index(i)], ub[qp.u_index(i)] = mdl.u_lb, mdl.u_ub
    lb[qp.xs_index], ub[qp.xs_index] = mdl.x_lb + prob.eps_x, mdl.x_ub - prob.eps_x
    lb[qp.us_index], ub[qp.us_index] = mdl.u_lb + prob.eps_u, mdl.u_ub - prob.eps_u
    return DenseQp(H, q, np.vstack(rows), np.concatenate(rhs), lb, ub, n, m, N)


@dataclass
class OracleResult:
    v: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    iters: int
    kkt: dict
    qp: DenseQp

    @property
    def u0(self) -> np.ndarray:
        return self.v[self.qp.u_index(0)]

    @property
    def x_s(self) -> np.ndarray:
        return self.v[self.qp.xs_index]

    @property
    def u_s(self) -> np.ndarray:
        return self.v[self.qp.us_index]


def kkt_residuals(qp: DenseQp, v, nu, mu, active_tol: float = 1e-9) -> dict:
    """Infinity norms of each KKT condition.

    ``mu`` is the box multiplier: positive where the upper bound is active,
    negative where the lower bound is. A bound counts as active when ``v`` is
    within ``active_tol`` of it; any multiplier on an inactive bound, or of
    the wrong sign, counts against complementarity.
    """
    stat = qp.H @ v + qp.q + qp.Aeq.T @ nu + mu
    eq = qp.Aeq @ v - qp.beq
    box = np.maximum(np.maximum(qp.lb - v, v - qp.ub), 0.0)
    at_upper = v >= qp.ub - active_tol
    at_lower = v <= qp.lb + active_tol
    wrong = np.where(mu > 0, np.where(at_upper, 0.0, mu), np.where(at_lower, 0.0, -mu))
    return {
        "stationarity": float(np.max(np.abs(stat))),
        "primal_eq": float(np.max(np.abs(eq), initial=0.0)),
        "primal_box": float(np.max(box, initial=0.0)),
        "complementarity": float(np.max(wrong, initial=0.0)),
    }


def _polish(qp: DenseQp, lower: np.ndarray, upper: np.ndarray):
    """Solve the KKT system with the given bounds treated as equalities."""
    act = np.flatnonzero(lower | upper)
    nv, ne, na = qp.size, qp.Aeq.shape[0], act.size
    Eact = np.zeros((na, nv))
    Eact[np.arange(na), act] = 1.0
    bound = np.where(upper[act], qp.ub[act], qp.lb[act])
    K = np.block([
        [qp.H, qp.Aeq.T, Eact.T],
        [qp.Aeq, np.zeros((ne, ne)), np.zeros((ne, na))],
        [Eact, np.zeros((na, ne)), np.zeros((na, na))],
    ])
    rhs = np.concatenate([-qp.q, qp.beq, bound])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    v = sol[:nv]
    nu = sol[nv:nv + ne]
    mu = np.zeros(nv)
    mu[act] = sol[nv + ne:]
    return v, nu, mu


def _refine_active_set(qp: DenseQp, lower, upper, kkt_tol: float, passes: int = 4):
    """Primal-dual active-set passes from an initial guess.

    Bounds that the polished point violates are added, bounds whose
    multiplier has the wrong sign are released. Returns the verified
    solution or ``None``. Degenerate active sets can make these passes
    cycle, so only a few are attempted.
    """
    lower, upper = lower.copy(), upper.copy()
    tol = kkt_tol
    for _ in range(passes):
        v, nu, mu = _polish(qp, lower, upper)
        kkt = kkt_residuals(qp, v, nu, mu)
        if max(kkt.values()) <= tol:
            return v, nu, mu, kkt
        new_upper = (upper & (mu >= -tol)) | (~lower & (v > qp.ub + tol))
        new_lower = (lower & (mu <= tol)) | (~upper & (v < qp.lb - tol))
        if np.array_equal(new_upper, upper) and np.array_equal(new_lower, lower):
            return None
        upper, lower = new_upper, new_lower
    return None


def oracle_solve(
    qp: DenseQp,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
    rho: float = 100.0,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    polish_every: int = 200,
    kkt_tol: float = 1e-8,
) -> OracleResult:
    """Minimise the dense QP; raise :class:`OracleInconclusive` if no verified
    solution is found within ``max_iters`` iterations.

    Over-relaxed two-block ADMM: an equality-constrained QP step with a
    dense factorisation followed by projection onto the box. A solution is
    returned either from an active-set polish or from the converged
    iterates themselves, and only after its KKT residuals pass
    ``kkt_tol``.
    """
    nv, ne = qp.size, qp.Aeq.shape[0]
    K = np.block([[qp.H + (sigma + rho) * np.eye(nv), qp.Aeq.T], [qp.Aeq, np.zeros((ne, ne))]])
    lu = la.lu_factor(K)

    v = np.zeros(nv)
    w = np.clip(v, qp.lb, qp.ub)
    y = np.zeros(nv)
    for k in range(max_iters + 1):
        if k % polish_every == 0:
            free = np.abs(y) <= 1e-12
            upper = (w >= qp.ub - 1e-9) & (y > 0) & ~free
            lower = (w <= qp.lb + 1e-9) & (y < 0) & ~free
            found = _refine_active_set(qp, lower, upper, kkt_tol)
            if found is not None:
                pv, pnu, pmu, kkt = found
                return OracleResult(pv, pnu, pmu, k, kkt, qp)
        if k == max_iters:
            break
        sol = la.lu_solve(lu, np.concatenate([sigma * v - qp.q + rho * w - y, qp.beq]))
        v, nu = sol[:nv], sol[nv:]
        vr = alpha * v + (1.0 - alpha) * w
        w_prev = w
        w = np.clip(vr + y / rho, qp.lb, qp.ub)
        y = y + rho * (vr - w)
        if max(np.max(np.abs(v - w)), rho * np.max(np.abs(w - w_prev))) <= tol:
            kkt = kkt_residuals(qp, w, nu, y)
            if max(kkt.values()) <= kkt_tol:
                return OracleResult(w.copy(), nu.copy(), y.copy(), k + 1, kkt, qp)
    raise OracleInconclusive(f"no KKT-verified solution after {max_iters} iterations")


def is_feasible(qp: DenseQp) -> bool:
    """Whether the constraint set is non-empty (linear programme, zero objective)."""
    res = linprog(
        np.zeros(qp.size),
        A_eq=qp.Aeq,
        b_eq=qp.beq,
        bounds=list(zip(np.where(np.isfinite(qp.lb), qp.lb, None), np.where(np.isfinite(qp.ub), qp.ub, None))),
        method="highs",
    )
    return res.status == 0
