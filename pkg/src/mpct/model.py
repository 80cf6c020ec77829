"""Linear prediction models: pendulum linearization and zero-order-hold sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpct.errors import ContractError, NumericError
from mpct.plant import PendulumParams, _denominator


@dataclass(frozen=True)
class ContinuousModel:
    """``x' = Ac x + Bc u``."""

    Ac: np.ndarray
    Bc: np.ndarray

    def __post_init__(self):
        Ac = np.atleast_2d(np.asarray(self.Ac, dtype=float))
        Bc = np.asarray(self.Bc, dtype=float)
        if Bc.ndim == 1:
            Bc = Bc.reshape(-1, 1)
        if Ac.shape[0] != Ac.shape[1] or Bc.shape[0] != Ac.shape[0]:
            raise ContractError(f"inconsistent shapes Ac{Ac.shape}, Bc{Bc.shape}")
        if not (np.all(np.isfinite(Ac)) and np.all(np.isfinite(Bc))):
            raise NumericError("continuous model has non-finite entries")
        object.__setattr__(self, "Ac", Ac)
        object.__setattr__(self, "Bc", Bc)

    @property
    def n(self) -> int:
        return self.Ac.shape[0]

    @property
    def m(self) -> int:
        return self.Bc.shape[1]


@dataclass(frozen=True)
class LtiModel:
    """Discrete-time model ``x+ = A x + B u`` with box bounds on state and input.

    Bounds default to +-inf so a bare ``(A, B)`` pair from :func:`discretize_zoh`
    is a valid model; attach real bounds with :meth:`with_bounds`.
    """

    A: np.ndarray
    B: np.ndarray
    Ts: float
    x_lb: np.ndarray | None = None
    x_ub: np.ndarray | None = None
    u_lb: np.ndarray | None = None
    u_ub: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n, m = A.shape[0], B.shape[1]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ContractError(f"inconsistent shapes A{A.shape}, B{B.shape}")
        if not self.Ts > 0:
            raise ContractError("Ts must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        for name, size, default in (
            ("x_lb", n, -np.inf),
            ("x_ub", n, np.inf),
            ("u_lb", m, -np.inf),
            ("u_ub", m, np.inf),
        ):
            val = getattr(self, name)
            arr = np.full(size, default) if val is None else np.broadcast_to(
                np.asarray(val, dtype=float).reshape(-1), (size,)
            ).copy()
            object.__setattr__(self, name, arr)
        if np.any(self.x_lb >= self.x_ub) or np.any(self.u_lb >= self.u_ub):
            raise ContractError("lower bounds must be strictly below upper bounds")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def with_bounds(self, x_lb, x_ub, u_lb, u_ub) -> "LtiModel":
        return LtiModel(self.A, self.B, self.Ts, x_lb, x_ub, u_lb, u_ub)

    def step(self, x, u) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.B @ np.atleast_1d(np.asarray(u, dtype=float))


def linearize_pendulum(params: PendulumParams, operating_point=None) -> ContinuousModel:
    """Analytic Jacobians of the pendulum dynamics at ``(x_op, u_op)``.

    Parameters
    ----------
    params : PendulumParams
    operating_point : tuple, optional
        ``(state 3-vector, input scalar)``. Defaults to the upright rest point.
    """
    if operating_point is None:
        x_op, u_op = np.zeros(3), 0.0
    else:
        x_op, u_op = operating_point
        x_op = np.asarray(x_op, dtype=float)
        u_op = float(np.asarray(u_op).reshape(-1)[0])
    phi, phi_dot, _ = x_op
    p = params
    ang = phi + p.phi0
    s, c = np.sin(ang), np.cos(ang)
    den = _denominator(p, c)
    num = p.c * phi_dot**2 * s + p.d * s - (2.0 * p.a + p.c * c) * u_op
    dnum_dphi = p.c * phi_dot**2 * c + p.d * c + p.c * s * u_op
    dden_dphi = -p.c * s

    Ac = np.zeros((3, 3))
    Ac[0, 1] = 1.0
    Ac[1, 0] = (dnum_dphi * den - num * dden_dphi) / den**2
    Ac[1, 1] = 2.0 * p.c * phi_dot * s / den
    Bc = np.array([[0.0], [-(2.0 * p.a + p.c * c) / den], [1.0]])
    return ContinuousModel(Ac, Bc)


def expm(M: np.ndarray, tol: float = 1e-16) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise NumericError("matrix exponential of non-finite matrix")
    norm = np.linalg.norm(M, 1)
    squarings = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    X = M / 2.0**squarings
    result = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, 60):
        term = term @ X / k
        result = result + term
        if np.linalg.norm(term, 1) < tol * max(1.0, np.linalg.norm(result, 1)):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def discretize_zoh(cm: ContinuousModel, Ts: float) -> LtiModel:
    """Exact sampling of ``cm`` under an input held constant over ``Ts``.

    Uses ``expm([[Ac, Bc], [0, 0]] * Ts) = [[A, B], [0, I]]``.
    """
    if not Ts > 0:
        raise ContractError("Ts must be positive")
    n, m = cm.n, cm.m
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = cm.Ac
    aug[:n, n:] = cm.Bc
    E = expm(aug * Ts)
    A, B = E[:n, :n], E[:n, n:]
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise NumericError("discretization produced non-finite entries")
    return LtiModel(A, B, Ts)
