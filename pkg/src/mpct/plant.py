"""Nonlinear two-wheeled inverted pendulum used as the simulation truth model.

The state is ``(phi, phi_dot, theta_dot)``: body tilt, tilt rate and wheel
angular speed. The input is the wheel angular acceleration ``theta_ddot``,
which the stepper motors are assumed to track instantly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpct.errors import SingularDenominatorError

_DENOM_TOL = 1e-12


@dataclass(frozen=True)
class PendulumParams:
    """Physical constants of the robot.

    Attributes
    ----------
    m_r : float
        Wheel mass [kg].
    M : float
        Body mass without wheels [kg].
    R : float
        Wheel radius [m].
    L : float
        Distance from wheel axis to the centre of mass [m].
    g : float
        Gravitational acceleration [m/s^2].
    phi0 : float
        Angle between centre of mass and geometric centre [rad].
    """

    m_r: float = 0.064
    M: float = 0.975
    R: float = 0.05
    L: float = 0.05
    g: float = 9.81
    phi0: float = 0.0

    def __post_init__(self):
        for name in ("m_r", "M", "R", "L"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    # The 1/2 in ``a`` is taken literally (dimensionless), as in the original model.
    @property
    def a(self) -> float:
        return (1.5 * self.m_r + 0.5) * self.R**2

    @property
    def b(self) -> float:
        return self.M * self.L**2

    @property
    def c(self) -> float:
        return self.R * self.M * self.L

    @property
    def d(self) -> float:
        return self.M * self.g * self.L

    def replace(self, **changes) -> "PendulumParams":
        fields = {k: getattr(self, k) for k in ("m_r", "M", "R", "L", "g", "phi0")}
        fields.update(changes)
        return PendulumParams(**fields)


def _denominator(p: PendulumParams, cos_phi: float) -> float:
    den = p.c * cos_phi + 2.0 * p.b
    if abs(den) <= _DENOM_TOL:
        raise SingularDenominatorError(f"c*cos(phi+phi0) + 2b = {den:.3e}")
    return den


def pendulum_dynamics(s, u: float, p: PendulumParams) -> np.ndarray:
    """Time derivative ``(phi_dot, phi_ddot, theta_ddot)`` of the pendulum state.

    The Lagrangian equation of motion is solved for ``phi_ddot`` with the wheel
    acceleration ``u`` given.
    """
    phi, phi_dot, _ = s
    u = float(np.asarray(u).reshape(-1)[0]) if np.ndim(u) else float(u)
    ang = phi + p.phi0
    sin_a, cos_a = np.sin(ang), np.cos(ang)
    den = _denominator(p, cos_a)
    num = p.c * phi_dot**2 * sin_a + p.d * sin_a - (2.0 * p.a + p.c * cos_a) * u
    return np.array([phi_dot, num / den, u])


def rk4_step(s, u: float, dt: float, p: PendulumParams) -> np.ndarray:
    """One classical Runge-Kutta step with ``u`` held constant."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = np.asarray(s, dtype=float)
    k1 = pendulum_dynamics(s, u, p)
    k2 = pendulum_dynamics(s + 0.5 * dt * k1, u, p)
    k3 = pendulum_dynamics(s + 0.5 * dt * k2, u, p)
    k4 = pendulum_dynamics(s + dt * k3, u, p)
    return s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate_interval(s, u: float, duration: float, p: PendulumParams, substeps: int = 20) -> np.ndarray:
    """Integrate over ``duration`` seconds using ``substeps`` equal RK4 steps."""
    dt = duration / substeps
    s = np.asarray(s, dtype=float)
    for _ in range(substeps):
        s = rk4_step(s, u, dt, p)
    return s


def apply_impulse(s, dv: float) -> np.ndarray:
    """Instantaneous push: add ``dv`` to the tilt rate."""
    out = np.array(s, dtype=float)
    out[1] += dv
    return out
