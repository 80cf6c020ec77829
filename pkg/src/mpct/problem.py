"""MPCT problem definition and the offline phase of the three-block split.

Decision variables are split as

* ``z1 = (x_0, u_0, ..., x_N, u_N)``: the box-constrained trajectory,
* ``z2 = (x_s, u_s)``: the artificial steady-state reference,
* ``z3 = (dx_0, du_0, ..., dx_N, du_N)``: deviations from the artificial
  reference, constrained by the model dynamics,

and coupled through ``C1 z1 + C2 z2 + C3 z3 = b``. Equality rows are ordered
as described by :class:`EqualityLayout`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from os import PathLike
from typing import Any

import numpy as np
import scipy.linalg as la

from mpct.errors import AssumptionViolation, ConditioningError, ContractError
from mpct.model import LtiModel, discretize_zoh, linearize_pendulum
from mpct.plant import PendulumParams

# Bounds of the pendulum case study: tilt within +-90 deg, tilt rate within
# +-4 rad/s, wheel speed within +-60 rad/s and wheel acceleration within +-80 rad/s^2.
PENDULUM_X_UB = np.array([np.pi / 2, 4.0, 60.0])
PENDULUM_U_UB = np.array([80.0])

DEFAULT_EPS = 1e-6


def _is_spd(M: np.ndarray) -> bool:
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass(frozen=True)
class PenaltySpec:
    """Diagonal ADMM penalty: ``rho_large`` on the rows that pin the trajectory
    ends, ``rho_base`` on every other equality row."""

    rho_base: float = 5.0
    rho_large: float = 1000.0

    def __post_init__(self):
        if not (self.rho_base > 0 and self.rho_large > 0):
            raise ContractError("penalty parameters must be positive")


@dataclass(frozen=True)
class MpctProblem:
    """Full controller specification: model, horizon, weights and tightening."""

    model: LtiModel
    N: int
    Q: np.ndarray
    R: np.ndarray
    T: np.ndarray
    S: np.ndarray
    eps_x: np.ndarray | None = None
    eps_u: np.ndarray | None = None

    def __post_init__(self):
        n, m = self.model.n, self.model.m
        if int(self.N) != self.N or self.N < 2:
            raise ContractError("horizon N must be an integer >= 2")
        object.__setattr__(self, "N", int(self.N))
        for name, size in (("Q", n), ("R", m), ("T", n), ("S", m)):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.shape == (1, 1) and size > 1:
                raise ContractError(f"{name} must be {size}x{size}")
            if M.shape != (size, size):
                raise ContractError(f"{name} has shape {M.shape}, expected {(size, size)}")
            if not _is_spd(M):
                raise ContractError(f"{name} must be symmetric positive definite")
            object.__setattr__(self, name, M)
        mdl = self.model
        for name, size, lb, ub in (("eps_x", n, mdl.x_lb, mdl.x_ub), ("eps_u", m, mdl.u_lb, mdl.u_ub)):
            val = getattr(self, name)
            eps = np.full(size, DEFAULT_EPS) if val is None else np.broadcast_to(
                np.asarray(val, dtype=float).reshape(-1), (size,)
            ).copy()
            if np.any(eps <= 0) or np.any(eps >= 0.5 * (ub - lb)):
                raise ContractError(f"{name} must lie in (0, half the box width)")
            object.__setattr__(self, name, eps)

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m


@dataclass(frozen=True)
class EqualityLayout:
    """Row ordering of the coupling constraint ``sum_i C_i z_i = b``.

    Rows are: initial state (n), then per stage ``i = 0..N`` the x-coupling
    (n) and u-coupling (m) rows interleaved, then terminal x (n) and terminal
    u (m). The coupling block therefore lines up with the stage-major
    ordering of ``z1`` and ``z3``.
    """

    n: int
    m: int
    N: int

    @property
    def nz(self) -> int:
        return self.n + self.m

    @property
    def m_z(self) -> int:
        return self.n + (self.N + 1) * self.nz + self.nz

    @property
    def initial(self) -> slice:
        return slice(0, self.n)

    @property
    def coupling(self) -> slice:
        return slice(self.n, self.n + (self.N + 1) * self.nz)

    def coupling_x(self, i: int) -> slice:
        start = self.n + i * self.nz
        return slice(start, start + self.n)

    def coupling_u(self, i: int) -> slice:
        start = self.n + i * self.nz + self.n
        return slice(start, start + self.m)

    @property
    def terminal_x(self) -> slice:
        start = self.n + (self.N + 1) * self.nz
        return slice(start, start + self.n)

    @property
    def terminal_u(self) -> slice:
        start = self.n + (self.N + 1) * self.nz + self.n
        return slice(start, start + self.m)

    @property
    def terminal(self) -> slice:
        return slice(self.terminal_x.start, self.m_z)

    def b(self, x) -> np.ndarray:
        out = np.zeros(self.m_z)
        out[self.initial] = x
        return out


def penalty_vector(layout: EqualityLayout, pen: PenaltySpec) -> np.ndarray:
    """Diagonal of the penalty matrix, one entry per equality row."""
    rho = np.full(layout.m_z, float(pen.rho_base))
    for rows in (
        layout.initial,
        layout.coupling_x(0),
        layout.coupling_x(layout.N),
        layout.coupling_u(layout.N),
        layout.terminal_x,
        layout.terminal_u,
    ):
        rho[rows] = pen.rho_large
    return rho


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class OfflineData:
    """Everything the online iteration needs that does not depend on the
    current state or reference."""

    problem: MpctProblem
    penalty: PenaltySpec
    layout: EqualityLayout
    rho: np.ndarray
    lb1: np.ndarray
    ub1: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    H2: np.ndarray
    kkt2: np.ndarray
    kkt2_lu: tuple
    z2_map: np.ndarray
    F: np.ndarray
    hhat: np.ndarray
    hinv: np.ndarray
    hinv_diag: np.ndarray | None
    w_diag: np.ndarray
    w_sub: np.ndarray
    w_chol_diag: np.ndarray
    w_chol_sub: np.ndarray
    w_chol_banded: np.ndarray

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def m(self) -> int:
        return self.layout.m

    @property
    def N(self) -> int:
        return self.layout.N

    @property
    def nz(self) -> int:
        return self.layout.nz

    @property
    def m_z(self) -> int:
        return self.layout.m_z

    @property
    def A(self) -> np.ndarray:
        return self.problem.model.A

    @property
    def B(self) -> np.ndarray:
        return self.problem.model.B

    def ref_linear_term(self, x_ref, u_ref) -> np.ndarray:
        """``(T x_ref, S u_ref)``, the linear part of the reference cost."""
        p = self.problem
        return np.concatenate([p.T @ np.asarray(x_ref, dtype=float), p.S @ np.atleast_1d(np.asarray(u_ref, dtype=float))])

    def w_dense(self) -> np.ndarray:
        """Reassemble the block-tridiagonal ``W`` as a dense matrix."""
        n, N = self.n, self.N
        W = np.zeros((N * n, N * n))
        for i in range(N):
            W[i * n:(i + 1) * n, i * n:(i + 1) * n] = self.w_diag[i]
        for i in range(N - 1):
            W[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = self.w_sub[i]
            W[i * n:(i + 1) * n, (i + 1) * n:(i + 2) * n] = self.w_sub[i].T
        return W


def stage_bounds(prob: MpctProblem) -> tuple[np.ndarray, np.ndarray]:
    """Box bounds on ``z1`` as ``(N+1, n+m)`` arrays."""
    mdl, n, N = prob.model, prob.n, prob.N
    lb = np.empty((N + 1, n + prob.m))
    ub = np.empty_like(lb)
    lb[:, :n], ub[:, :n] = mdl.x_lb, mdl.x_ub
    lb[:, n:], ub[:, n:] = mdl.u_lb, mdl.u_ub
    lb[0, :n], ub[0, :n] = -np.inf, np.inf
    lb[N, :n], ub[N, :n] = mdl.x_lb + prob.eps_x, mdl.x_ub - prob.eps_x
    lb[N, n:], ub[N, n:] = mdl.u_lb + prob.eps_u, mdl.u_ub - prob.eps_u
    return lb, ub


def build_offline(prob: MpctProblem, pen: PenaltySpec | None = None) -> OfflineData:
    """Precompute penalties, diagonal scalings and the constant factorizations."""
    pen = pen or PenaltySpec()
    n, m, N = prob.n, prob.m, prob.N
    nz = n + m
    layout = EqualityLayout(n, m, N)
    A, B = prob.model.A, prob.model.B

    rho = penalty_vector(layout, pen)
    rho_c = rho[layout.coupling].reshape(N + 1, nz)
    rho_t = rho[layout.terminal]

    lb, ub = stage_bounds(prob)

    d1 = rho_c.copy()
    d1[0, :n] += rho[layout.initial]
    d1[N, :] += rho_t
    d1 = d1.ravel()
    d2 = rho_c.sum(axis=0) + rho_t
    if np.any(d1 <= 0) or np.any(d2 <= 0):
        raise AssumptionViolation("C1 or C2 is not full column rank")

    E = np.hstack([A - np.eye(n), B])
    if np.linalg.matrix_rank(E) < n:
        raise AssumptionViolation("[A - I, B] is rank deficient; steady-state KKT system is singular")
    H2 = la.block_diag(prob.T, prob.S)
    kkt2 = np.zeros((2 * n + m, 2 * n + m))
    kkt2[:nz, :nz] = H2 + np.diag(d2)
    kkt2[:nz, nz:] = E.T
    kkt2[nz:, :nz] = E
    kkt2_lu = la.lu_factor(kkt2)
    # right-hand side of the dual rows is always zero, so only this block is needed online
    z2_map = la.lu_solve(kkt2_lu, np.eye(2 * n + m)[:, :nz])[:nz]

    base = la.block_diag(prob.Q, prob.R)
    hhat = base[None, :, :] + np.einsum("ij,kj->kij", np.eye(nz), rho_c)
    hinv = np.linalg.inv(hhat)
    diagonal = np.count_nonzero(base - np.diag(np.diag(base))) == 0
    hinv_diag = 1.0 / np.einsum("kii->ki", hhat) if diagonal else None

    F = np.hstack([A, B])
    w_diag = np.empty((N, n, n))
    w_sub = np.empty((max(N - 1, 0), n, n))
    for i in range(N):
        w_diag[i] = F @ hinv[i] @ F.T + hinv[i + 1][:n, :n]
    for i in range(N - 1):
        # block (i+1, i): stage i+1 is shared by dynamics rows i and i+1
        w_sub[i] = -F @ hinv[i + 1][:, :n]

    L_diag = np.empty_like(w_diag)
    L_sub = np.empty_like(w_sub)
    try:
        L_diag[0] = np.linalg.cholesky(w_diag[0])
        for i in range(1, N):
            L_sub[i - 1] = la.solve_triangular(L_diag[i - 1], w_sub[i - 1].T, lower=True).T
            L_diag[i] = np.linalg.cholesky(w_diag[i] - L_sub[i - 1] @ L_sub[i - 1].T)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("block Cholesky of W failed") from exc

    L = np.zeros((N * n, N * n))
    for i in range(N):
        L[i * n:(i + 1) * n, i * n:(i + 1) * n] = L_diag[i]
    for i in range(N - 1):
        L[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = L_sub[i]
    bw = 2 * n - 1
    banded = np.zeros((bw + 1, N * n))
    for k in range(bw + 1):
        banded[k, : N * n - k] = np.diagonal(L, -k)

    lb1, ub1 = lb.ravel(), ub.ravel()
    _readonly(rho, lb1, ub1, d1, d2, H2, kkt2, z2_map, F, hhat, hinv, w_diag, w_sub, L_diag, L_sub, banded)
    if hinv_diag is not None:
        _readonly(hinv_diag)
    return OfflineData(
        problem=prob,
        penalty=pen,
        layout=layout,
        rho=rho,
        lb1=lb1,
        ub1=ub1,
        d1=d1,
        d2=d2,
        H2=H2,
        kkt2=kkt2,
        kkt2_lu=kkt2_lu,
        z2_map=z2_map,
        F=F,
        hhat=hhat,
        hinv=hinv,
        hinv_diag=hinv_diag,
        w_diag=w_diag,
        w_sub=w_sub,
        w_chol_diag=L_diag,
        w_chol_sub=L_sub,
        w_chol_banded=banded,
    )


@dataclass(frozen=True, eq=False)
class DenseSplit:
    """Explicit matrices of the split problem, for testing and validation."""

    layout: EqualityLayout
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    P: np.ndarray
    H2: np.ndarray
    H3: np.ndarray
    E: np.ndarray
    G: np.ndarray
    lb1: np.ndarray
    ub1: np.ndarray

    def b(self, x) -> np.ndarray:
        return self.layout.b(x)


def assemble_dense(prob: MpctProblem, pen: PenaltySpec | None = None) -> DenseSplit:
    """Build ``C1, C2, C3, P`` and the cost/constraint blocks entry by entry."""
    pen = pen or PenaltySpec()
    n, m, N = prob.n, prob.m, prob.N
    nz = n + m
    lay = EqualityLayout(n, m, N)
    nv = (N + 1) * nz
    C1 = np.zeros((lay.m_z, nv))
    C2 = np.zeros((lay.m_z, nz))
    C3 = np.zeros((lay.m_z, nv))

    def xcol(i, j):
        return i * nz + j

    def ucol(i, j):
        return i * nz + n + j

    for j in range(n):
        C1[lay.initial.start + j, xcol(0, j)] = 1.0
    for i in range(N + 1):
        for j in range(n):
            r = lay.coupling_x(i).start + j
            C1[r, xcol(i, j)] = -1.0
            C2[r, j] = 1.0
            C3[r, xcol(i, j)] = 1.0
        for j in range(m):
            r = lay.coupling_u(i).start + j
            C1[r, ucol(i, j)] = -1.0
            C2[r, n + j] = 1.0
            C3[r, ucol(i, j)] = 1.0
    for j in range(n):
        r = lay.terminal_x.start + j
        C1[r, xcol(N, j)] = 1.0
        C2[r, j] = -1.0
    for j in range(m):
        r = lay.terminal_u.start + j
        C1[r, ucol(N, j)] = 1.0
        C2[r, n + j] = -1.0

    P = np.diag(penalty_vector(lay, pen))
    A, B = prob.model.A, prob.model.B
    H2 = la.block_diag(prob.T, prob.S)
    H3 = la.block_diag(*([prob.Q, prob.R] * (N + 1)))
    E = np.hstack([A - np.eye(n), B])
    G = np.zeros((N * n, nv))
    for i in range(N):
        G[i * n:(i + 1) * n, i * nz:i * nz + n] = A
        G[i * n:(i + 1) * n, i * nz + n:(i + 1) * nz] = B
        G[i * n:(i + 1) * n, (i + 1) * nz:(i + 1) * nz + n] = -np.eye(n)
    lb, ub = stage_bounds(prob)
    return DenseSplit(lay, C1, C2, C3, P, H2, H3, E, G, lb.ravel(), ub.ravel())


def pendulum_problem(
    params: PendulumParams | None = None,
    Ts: float = 0.02,
    N: int = 12,
    eps_x=DEFAULT_EPS,
    eps_u=DEFAULT_EPS,
) -> MpctProblem:
    """The case-study controller: upright linearization, Q = 5I, R = 1, T = 1000I, S = 5."""
    params = params or PendulumParams()
    lin = discretize_zoh(linearize_pendulum(params), Ts)
    model = lin.with_bounds(-PENDULUM_X_UB, PENDULUM_X_UB, -PENDULUM_U_UB, PENDULUM_U_UB)
    return MpctProblem(
        model=model,
        N=N,
        Q=5.0 * np.eye(3),
        R=np.eye(1),
        T=1000.0 * np.eye(3),
        S=5.0 * np.eye(1),
        eps_x=eps_x,
        eps_u=eps_u,
    )


def _matrix(val, rows: int, cols: int, name: str) -> np.ndarray:
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        if rows != 1 or cols != 1:
            raise ContractError(f"{name}: scalar only allowed for 1x1 matrices")
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(rows, cols) if arr.size == rows * cols and (rows == 1 or cols == 1) else arr
    if arr.shape != (rows, cols):
        raise ContractError(f"{name}: expected shape {(rows, cols)}, got {arr.shape}")
    return arr


def _vector(val, size: int, name: str) -> np.ndarray:
    arr = np.asarray(val, dtype=float).reshape(-1)
    if arr.size == 1:
        return np.full(size, arr[0])
    if arr.size != size:
        raise ContractError(f"{name}: expected length {size}, got {arr.size}")
    return arr


def problem_from_dict(d: dict[str, Any]) -> tuple[MpctProblem, PenaltySpec]:
    """Parse the JSON problem schema (row-major matrices, scalars where 1x1)."""
    try:
        A = np.atleast_2d(np.asarray(d["A"], dtype=float))
        n = A.shape[0]
        B_raw = np.asarray(d["B"], dtype=float)
        m = 1 if B_raw.ndim <= 1 else B_raw.shape[1]
        B = _matrix(B_raw, n, m, "B")
        model = LtiModel(
            A,
            B,
            float(d.get("Ts", 0.02)),
            _vector(d["x_lb"], n, "x_lb"),
            _vector(d["x_ub"], n, "x_ub"),
            _vector(d["u_lb"], m, "u_lb"),
            _vector(d["u_ub"], m, "u_ub"),
        )
        prob = MpctProblem(
            model=model,
            N=d["N"],
            Q=_matrix(d["Q"], n, n, "Q"),
            R=_matrix(d["R"], m, m, "R"),
            T=_matrix(d["T"], n, n, "T"),
            S=_matrix(d["S"], m, m, "S"),
            eps_x=_vector(d.get("eps_x", DEFAULT_EPS), n, "eps_x"),
            eps_u=_vector(d.get("eps_u", DEFAULT_EPS), m, "eps_u"),
        )
        pen = PenaltySpec(float(d.get("rho_base", 5.0)), float(d.get("rho_large", 1000.0)))
    except KeyError as exc:
        raise ContractError(f"problem file is missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ContractError):
            raise
        raise ContractError(f"malformed problem file: {exc}") from exc
    return prob, pen


def problem_to_dict(prob: MpctProblem, pen: PenaltySpec | None = None) -> dict[str, Any]:
    pen = pen or PenaltySpec()
    mdl = prob.model
    return {
        "A": mdl.A.tolist(),
        "B": mdl.B.tolist(),
        "Ts": mdl.Ts,
        "N": prob.N,
        "Q": prob.Q.tolist(),
        "R": prob.R.tolist(),
        "T": prob.T.tolist(),
        "S": prob.S.tolist(),
        "x_lb": mdl.x_lb.tolist(),
        "x_ub": mdl.x_ub.tolist(),
        "u_lb": mdl.u_lb.tolist(),
        "u_ub": mdl.u_ub.tolist(),
        "eps_x": prob.eps_x.tolist(),
        "eps_u": prob.eps_u.tolist(),
        "rho_base": pen.rho_base,
        "rho_large": pen.rho_large,
    }


def load_problem(path: str | PathLike) -> tuple[MpctProblem, PenaltySpec]:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ContractError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ContractError(f"{path}: expected a JSON object")
    return problem_from_dict(data)
