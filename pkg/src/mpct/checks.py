"""Structural self-checks of the split problem against its explicit dense form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from mpct.model import LtiModel
from mpct.problem import DenseSplit, MpctProblem, OfflineData, PenaltySpec, assemble_dense, build_offline
from mpct.solver import SolverState, eadmm_iteration


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _eq_qp(H: np.ndarray, q: np.ndarray, A: np.ndarray) -> np.ndarray:
    # argmin 1/2 z'Hz + q'z  s.t.  A z = 0
    k, nv = A.shape
    K = np.block([[H, A.T], [A, np.zeros((k, k))]])
    rhs = np.concatenate([-q, np.zeros(k)])
    lu = la.lu_factor(K)
    sol = la.lu_solve(lu, rhs)
    for _ in range(3):
        # iterative refinement keeps this reference below the comparison tolerance
        sol = sol + la.lu_solve(lu, rhs - K @ sol)
    return sol[:nv]


def dense_iteration(ds: DenseSplit, state: SolverState, x, q_ref) -> SolverState:
    """One iteration written directly with the explicit ``C1, C2, C3, P``.

    Slow reference for the structured implementation; every subproblem is
    solved as a generic equality-constrained QP.
    """
    x = np.asarray(x, dtype=float)
    P, b = ds.P, ds.b(x)
    C1, C2, C3 = ds.C1, ds.C2, ds.C3
    lam = state.lam

    d1 = np.diag(C1.T @ P @ C1)
    z1 = np.clip(-(C1.T @ (lam + P @ (C2 @ state.z2 + C3 @ state.z3 - b))) / d1, ds.lb1, ds.ub1)
    q2 = -np.asarray(q_ref) + C2.T @ (lam + P @ (C1 @ z1 + C3 @ state.z3 - b))
    z2 = _eq_qp(ds.H2 + C2.T @ P @ C2, q2, ds.E)
    q3 = C3.T @ (lam + P @ (C1 @ z1 + C2 @ z2 - b))
    z3 = _eq_qp(ds.H3 + C3.T @ P @ C3, q3, ds.G)
    gamma = C1 @ z1 + C2 @ z2 + C3 @ z3 - b
    return SolverState(z1, z2, z3, lam + P @ gamma, state.k + 1, state.z2, state.z3)


def random_problem(rng: np.random.Generator, max_n: int = 4, max_m: int = 2, max_N: int = 6) -> MpctProblem:
    """A random boxed problem with ``n <= max_n``, ``m <= max_m``, ``2 <= N <= max_N``."""
    n = int(rng.integers(1, max_n + 1))
    m = int(rng.integers(1, max_m + 1))
    N = int(rng.integers(2, max_N + 1))
    A = np.eye(n) + 0.3 * rng.normal(size=(n, n))
    B = rng.normal(size=(n, m))
    x_ub = rng.uniform(1.0, 5.0, size=n)
    u_ub = rng.uniform(1.0, 5.0, size=m)
    model = LtiModel(A, B, 0.1, -x_ub, x_ub, -u_ub, u_ub)

    def spd(k):
        M = rng.normal(size=(k, k))
        return M @ M.T + k * np.eye(k)

    return MpctProblem(model, N, spd(n), spd(m), spd(n), spd(m), 1e-6 * np.ones(n), 1e-6 * np.ones(m))


def _is_diagonal(M: np.ndarray) -> bool:
    return not np.any(M - np.diag(np.diag(M)))


def _is_block_tridiagonal(W: np.ndarray, n: int, tol: float = 0.0) -> bool:
    blocks = W.shape[0] // n
    cutoff = tol * np.max(np.abs(W))
    for i in range(blocks):
        for j in range(blocks):
            if abs(i - j) > 1 and np.max(np.abs(W[i * n:(i + 1) * n, j * n:(j + 1) * n])) > cutoff:
                return False
    return True


def iteration_mismatch(off: OfflineData, ds: DenseSplit, state: SolverState, x, q_ref) -> float:
    """Largest scaled difference ``|a - b| / (1 + |b|)`` between the
    structured and the dense iteration, over all four iterates."""
    fast, _ = eadmm_iteration(off, state, x, q_ref)
    slow = dense_iteration(ds, state, x, q_ref)
    worst = 0.0
    for name in ("z1", "z2", "z3", "lam"):
        a, b = getattr(fast, name), getattr(slow, name)
        worst = max(worst, float(np.max(np.abs(a - b) / (1.0 + np.abs(b)))))
    return worst


def random_state(off: OfflineData, rng: np.random.Generator) -> SolverState:
    return SolverState(
        rng.normal(size=off.layout.nz * (off.N + 1)),
        rng.normal(size=off.nz),
        rng.normal(size=off.layout.nz * (off.N + 1)),
        rng.normal(size=off.m_z),
    )


def structural_checks(
    prob: MpctProblem,
    pen: PenaltySpec | None = None,
    seed: int = 0,
    iteration_tol: float = 1e-12,
) -> list[Check]:
    """Run the invariant suite on one problem.

    Covers diagonality of ``Ci' P Ci``, the full-column-rank assumption on
    ``C1`` and ``C2``, the banded structure and definiteness of ``W``, and
    agreement of one structured iteration with the dense one from a random
    iterate.
    """
    pen = pen or PenaltySpec()
    off = build_offline(prob, pen)
    ds = assemble_dense(prob, pen)
    n, m = prob.n, prob.m
    out = []

    for i, C in enumerate((ds.C1, ds.C2, ds.C3), start=1):
        out.append(Check(f"C{i}'PC{i} diagonal", _is_diagonal(C.T @ ds.P @ C), f"shape {C.shape[1]}x{C.shape[1]}"))

    r1 = int(np.linalg.matrix_rank(ds.C1))
    out.append(Check("rank(C1) = columns", r1 == ds.C1.shape[1], f"rank(C1) = {r1}, columns = {ds.C1.shape[1]}"))
    r2 = int(np.linalg.matrix_rank(ds.C2))
    out.append(Check("rank(C2) = n+m", r2 == n + m, f"rank(C2) = {r2}, n+m = {n + m}"))
    rE = int(np.linalg.matrix_rank(ds.E))
    out.append(Check("rank(E) = n", rE == n, f"rank([A-I, B]) = {rE}, n = {n}"))

    d1_dense = np.diag(ds.C1.T @ ds.P @ ds.C1)
    out.append(Check("d1 matches and is positive", bool(np.array_equal(d1_dense, off.d1) and np.all(d1_dense > 0)),
                     f"min d1 = {d1_dense.min():g}"))

    H3 = ds.H3 + ds.C3.T @ ds.P @ ds.C3
    W = ds.G @ np.linalg.solve(H3, ds.G.T)
    W_off = off.w_dense()
    w_err = float(np.max(np.abs(W - W_off)) / (1.0 + np.max(np.abs(W))))
    out.append(Check("W block-tridiagonal", _is_block_tridiagonal(W, n, 1e-14) and w_err <= 1e-12,
                     f"structured vs dense W mismatch {w_err:.2e}"))
    eig_min = float(np.linalg.eigvalsh(0.5 * (W_off + W_off.T)).min())
    out.append(Check("W positive definite", eig_min > 0, f"min eigenvalue {eig_min:.3e}"))

    rng = np.random.default_rng(seed)
    state = random_state(off, rng)
    x = rng.normal(size=n)
    q_ref = off.ref_linear_term(rng.normal(size=n), rng.normal(size=m))
    err = iteration_mismatch(off, ds, state, x, q_ref)
    out.append(Check("structured iteration = dense iteration", err <= iteration_tol, f"scaled mismatch {err:.2e}"))
    return out
