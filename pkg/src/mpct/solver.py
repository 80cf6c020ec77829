"""Online phase: extended ADMM iterations specialised to the MPCT split.

Each iteration minimises the augmented Lagrangian over ``z1``, ``z2`` and
``z3`` in turn and then takes a dual step with the diagonal penalty. All
products with ``C1``, ``C2``, ``C3`` are done by slicing, never by
materialising the matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from mpct._kernel import run_eadmm
from mpct.errors import ContractError, DivergenceError
from mpct.problem import OfflineData

CONVERGED = "converged"
MAX_ITERS = "max_iters_reached"


@dataclass
class SolverState:
    """Iterates of the algorithm. ``z2_prev``/``z3_prev`` hold the values
    before the last iteration so the exit test can be recomputed."""

    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    lam: np.ndarray
    k: int = 0
    z2_prev: np.ndarray | None = None
    z3_prev: np.ndarray | None = None

    @classmethod
    def zeros(cls, off: OfflineData) -> "SolverState":
        nv = (off.N + 1) * off.nz
        return cls(np.zeros(nv), np.zeros(off.nz), np.zeros(nv), np.zeros(off.m_z))

    def copy(self) -> "SolverState":
        return SolverState(
            self.z1.copy(),
            self.z2.copy(),
            self.z3.copy(),
            self.lam.copy(),
            self.k,
            None if self.z2_prev is None else self.z2_prev.copy(),
            None if self.z3_prev is None else self.z3_prev.copy(),
        )


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-3
    max_iters: int = 4000
    warm_start: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ContractError("tol must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ContractError("max_iters must be a positive integer")


@dataclass
class Solution:
    u0: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    lam: np.ndarray
    iters: int
    status: str
    residual_inf: float
    state: SolverState = field(repr=False)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def x_s(self) -> np.ndarray:
        return self.z2[: self.z2.size - self.u0.size]

    @property
    def u_s(self) -> np.ndarray:
        return self.z2[self.z2.size - self.u0.size:]

    def to_dict(self) -> dict:
        return {
            "u0": self.u0.tolist(),
            "x_s": self.x_s.tolist(),
            "u_s": self.u_s.tolist(),
            "iters": self.iters,
            "status": self.status,
            "residual_inf": self.residual_inf,
        }


def coupling_residual(off: OfflineData, z1, z2, z3, x) -> np.ndarray:
    """``C1 z1 + C2 z2 + C3 z3 - b`` for current state ``x``."""
    lay, n, N, nz = off.layout, off.n, off.N, off.nz
    z1r = z1.reshape(N + 1, nz)
    out = np.empty(lay.m_z)
    out[lay.initial] = z1r[0, :n] - x
    out[lay.coupling] = (z3.reshape(N + 1, nz) + z2 - z1r).ravel()
    out[lay.terminal] = z1r[N] - z2
    return out


def _c1t(off: OfflineData, v: np.ndarray) -> np.ndarray:
    lay, n, N, nz = off.layout, off.n, off.N, off.nz
    out = -v[lay.coupling].reshape(N + 1, nz)
    out[0, :n] += v[lay.initial]
    out[N] += v[lay.terminal]
    return out.ravel()


def _c2t(off: OfflineData, v: np.ndarray) -> np.ndarray:
    return v[off.layout.coupling].reshape(off.N + 1, off.nz).sum(axis=0) - v[off.layout.terminal]


def _hinv_apply(off: OfflineData, v: np.ndarray) -> np.ndarray:
    # v has shape (N+1, nz)
    if off.hinv_diag is not None:
        return off.hinv_diag * v
    return np.einsum("kij,kj->ki", off.hinv, v)


def _check_dims(off: OfflineData, x, x_ref, u_ref):
    x = np.asarray(x, dtype=float).reshape(-1)
    x_ref = np.asarray(x_ref, dtype=float).reshape(-1)
    u_ref = np.asarray(u_ref, dtype=float).reshape(-1)
    if x.size != off.n or x_ref.size != off.n or u_ref.size != off.m:
        raise ContractError(
            f"expected x, x_ref of length {off.n} and u_ref of length {off.m}, "
            f"got {x.size}, {x_ref.size}, {u_ref.size}"
        )
    return x, x_ref, u_ref


def _range_space_solve(off: OfflineData, qhat: np.ndarray, r2: np.ndarray):
    """Solve ``[[H, G'], [G, 0]] [z; mu] = [-qhat; r2]`` through the factor of ``W``.

    ``G z`` stacks ``F z_i - z_{i+1}[:n]``. Also returns ``qhat + G' mu``.
    """
    n, N, nz = off.n, off.N, off.nz
    y = _hinv_apply(off, qhat)
    gy = y[:N] @ off.F.T - y[1:, :n]
    mu = la.cho_solve_banded((off.w_chol_banded, True), (-gy - r2).ravel(), check_finite=False).reshape(N, n)
    shifted = qhat.copy()
    shifted[:N] += mu @ off.F
    shifted[1:, :n] -= mu
    return -_hinv_apply(off, shifted), mu, shifted


def eadmm_iteration(off: OfflineData, state: SolverState, x, q_ref) -> tuple[SolverState, np.ndarray]:
    """One pass of the z1, z2, z3 and dual updates.

    ``q_ref`` is ``(T x_ref, S u_ref)``. Returns the new state and the
    coupling residual computed for the dual step.
    """
    n, N, nz = off.n, off.N, off.nz
    rho, lam = off.rho, state.lam
    z2, z3 = state.z2, state.z3
    zero_v = np.zeros_like(state.z1)

    # z1: separable box-constrained least squares
    r = coupling_residual(off, zero_v, z2, z3, x)
    z1 = np.clip(-_c1t(off, lam + rho * r) / off.d1, off.lb1, off.ub1)

    # z2: steady-state subproblem, equality-constrained by (A - I) x_s + B u_s = 0
    r = coupling_residual(off, z1, np.zeros(nz), z3, x)
    z2_new = off.z2_map @ (q_ref - _c2t(off, lam + rho * r))

    # z3: deviation dynamics, range-space solve plus one refinement step
    r = coupling_residual(off, z1, z2_new, zero_v, x)
    qhat = (lam + rho * r)[off.layout.coupling].reshape(N + 1, nz)
    z, mu, shifted = _range_space_solve(off, qhat, np.zeros((N, n)))
    corr_q = shifted + np.einsum("kij,kj->ki", off.hhat, z)
    corr_r = -(z[:N] @ off.F.T - z[1:, :n])
    dz, _, _ = _range_space_solve(off, corr_q, corr_r)
    z3_new = (z + dz).ravel()

    gamma = coupling_residual(off, z1, z2_new, z3_new, x)
    new = SolverState(z1, z2_new, z3_new, lam + rho * gamma, state.k + 1, z2, z3)
    return new, gamma


def residual_norms(state: SolverState, off: OfflineData, x) -> tuple[float, float, float]:
    """The three quantities of the exit test: ``||Gamma||_inf``, ``||dz2||_inf``, ``||dz3||_inf``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    gamma = coupling_residual(off, state.z1, state.z2, state.z3, x)
    dz2 = 0.0 if state.z2_prev is None else float(np.max(np.abs(state.z2 - state.z2_prev), initial=0.0))
    dz3 = 0.0 if state.z3_prev is None else float(np.max(np.abs(state.z3 - state.z3_prev), initial=0.0))
    return float(np.max(np.abs(gamma), initial=0.0)), dz2, dz3


def warm_start_shift(state: SolverState) -> SolverState:
    """Initial iterate for the next solve: the previous iterates, unshifted."""
    out = state.copy()
    out.k = 0
    out.z2_prev = None
    out.z3_prev = None
    return out


def solve(
    off: OfflineData,
    x,
    x_ref,
    u_ref,
    state: SolverState | None = None,
    opts: SolveOptions | None = None,
) -> Solution:
    """Run extended ADMM from ``state`` (or from zero) until the exit test holds.

    The exit test requires, in the same iteration, ``||Gamma||_inf <= tol``
    and changes in ``z2`` and ``z3`` no larger than ``tol``. Hitting
    ``max_iters`` is reported through ``status``, not raised.
    """
    opts = opts or SolveOptions()
    x, x_ref, u_ref = _check_dims(off, x, x_ref, u_ref)
    if opts.warm_start and state is not None:
        if state.lam.size != off.m_z or state.z2.size != off.nz:
            raise ContractError("warm-start state does not match the problem dimensions")
        cur = warm_start_shift(state)
    else:
        cur = SolverState.zeros(off)
    q_ref = off.ref_linear_term(x_ref, u_ref)

    z1, z2, z3, lam = cur.z1.copy(), cur.z2.copy(), cur.z3.copy(), cur.lam.copy()
    z2_prev, z3_prev = z2.copy(), z3.copy()
    iters, converged, res = run_eadmm(
        off.n, off.m, off.N, x, q_ref, off.rho, off.lb1, off.ub1, off.d1, off.z2_map, off.F,
        off.hhat, off.hinv, off.hinv_diag is not None, off.w_chol_diag, off.w_chol_sub,
        z1, z2, z3, lam, z2_prev, z3_prev, float(opts.tol), int(opts.max_iters),
    )
    if iters < 0:
        raise DivergenceError(-iters)
    final = SolverState(z1, z2, z3, lam, iters, z2_prev, z3_prev)
    return Solution(
        u0=z1[off.n:off.nz].copy(),
        z1=z1,
        z2=z2,
        z3=z3,
        lam=lam,
        iters=iters,
        status=CONVERGED if converged else MAX_ITERS,
        residual_inf=float(res),
        state=final,
    )


class MpctController:
    """Stateful wrapper that carries the iterates from one solve to the next."""

    def __init__(self, off: OfflineData, opts: SolveOptions | None = None):
        self.off = off
        self.opts = opts or SolveOptions(warm_start=True)
        self.state: SolverState | None = None

    def reset(self):
        self.state = None

    def solve(self, x, x_ref, u_ref) -> Solution:
        sol = solve(self.off, x, x_ref, u_ref, self.state, self.opts)
        self.state = sol.state
        return sol

    def with_options(self, **changes) -> "MpctController":
        return MpctController(self.off, replace(self.opts, **changes))
