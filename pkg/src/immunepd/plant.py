"""DC actuating mechanism dynamics.

A DC motor drives a single load link through a gear of ratio j.  With the
armature inductance neglected, the electrical and mechanical parts collapse
into one second-order model in the link angle theta:

    a2*theta_dd + a1*theta_d + a0*cos(theta) = v

where v is the armature voltage, a2 lumps the reflected inertias, a1 lumps
viscous friction and back-EMF, and a0*cos(theta) is the gravity torque of the
link seen from the electrical side.  The controller works against the linear
nominal model (a2_hat, a1_hat); everything the nominal model misses acts on
the loop as a single equivalent disturbance d, see `equivalent_disturbance`.

Coefficients can be produced from physical constants via `lump` or supplied
directly as `LumpedParams`; both paths are first class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class IntegrationError(RuntimeError):
    """Raised when integration produces a non-finite state (dt too large or
    the closed loop is unstable)."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of motor, gear and load link.

    The armature inductance L is stored for completeness only; the reduced
    second-order model treats the electrical time constant as negligible.
    """

    J_c: float  # load link inertia [kg m^2]
    m: float    # point mass at the link [kg]
    r: float    # arm length [m]
    B: float    # load viscous friction [N m s/rad]
    g: float    # gravitational acceleration [m/s^2]
    J_m: float  # motor inertia [kg m^2]
    B_m: float  # motor viscous friction [N m s/rad]
    j: float    # gear ratio, theta_motor = j * theta
    R: float    # armature resistance [ohm]
    L: float    # armature inductance [H], unused by the reduced model
    k_t: float  # torque constant [N m/A]
    k_v: float  # back-EMF constant [V s/rad]

    def __post_init__(self):
        _require(self.J_c >= 0.0, "J_c must be >= 0")
        _require(self.m >= 0.0, "m must be >= 0")
        _require(self.r >= 0.0, "r must be >= 0")
        _require(self.B >= 0.0, "B must be >= 0")
        _require(self.g >= 0.0, "g must be >= 0")
        _require(self.J_m > 0.0, "J_m must be > 0")
        _require(self.B_m >= 0.0, "B_m must be >= 0")
        _require(self.j > 0.0, "j must be > 0")
        _require(self.R > 0.0, "R must be > 0")
        _require(self.L >= 0.0, "L must be >= 0")
        _require(self.k_t > 0.0, "k_t must be > 0")
        _require(self.k_v >= 0.0, "k_v must be >= 0")


@dataclass(frozen=True)
class LumpedParams:
    """Reduced model coefficients: a2*theta_dd + a1*theta_d + a0*cos(theta) = v."""

    a2: float  # inertia coefficient [V s^2/rad]
    a1: float  # damping / back-EMF coefficient [V s/rad]
    a0: float  # gravity torque coefficient [V]

    def __post_init__(self):
        _require(self.a2 > 0.0, "a2 must be > 0")
        _require(self.a1 >= 0.0, "a1 must be >= 0")
        _require(self.a0 >= 0.0, "a0 must be >= 0")


@dataclass(frozen=True)
class NominalParams:
    """Coefficients of the linear nominal model a2_hat*theta_dd + a1_hat*theta_d = v."""

    a2: float
    a1: float

    def __post_init__(self):
        _require(self.a2 > 0.0, "a2_hat must be > 0")


@dataclass(frozen=True)
class PlantState:
    """Angle and angular velocity of the load link."""

    theta: float      # [rad]
    theta_dot: float  # [rad/s]


def lump(p: PhysicalParams) -> LumpedParams:
    """Collapse physical constants into the (a2, a1, a0) coefficients.

    Intermediate quantities: total load inertia J = J_c + m*r^2, effective
    gear-side inertia J_e = J_m + J/j^2 and friction B_e = B_m + B/j^2.
    """
    J = p.J_c + p.m * p.r ** 2
    J_e = p.J_m + J / p.j ** 2
    B_e = p.B_m + p.B / p.j ** 2
    a2 = p.j * J_e * p.R / p.k_t
    a1 = p.j * (B_e * p.R + p.k_v * p.k_t) / p.k_t
    a0 = p.R * p.m * p.g * p.r / (p.j * p.k_t)
    return LumpedParams(a2=a2, a1=a1, a0=a0)


def dynamics_rhs(s: PlantState, v: float, lp: LumpedParams) -> float:
    """Angular acceleration of the true plant at state s under voltage v."""
    return (v - lp.a1 * s.theta_dot - lp.a0 * math.cos(s.theta)) / lp.a2


def equivalent_disturbance(theta_ddot: float, theta_dot: float, theta: float,
                           lp: LumpedParams, nom: NominalParams) -> float:
    """Disturbance the nominal model attributes to the given true motion.

    d = (a2 - a2_hat)*theta_dd + (a1 - a1_hat)*theta_d + a0*cos(theta), so
    a2_hat*theta_dd + a1_hat*theta_d + d = v holds identically whenever
    theta_dd = dynamics_rhs(s, v, lp).  theta_ddot must come from the model,
    never from numerical differentiation, to keep that identity exact.
    """
    return ((lp.a2 - nom.a2) * theta_ddot
            + (lp.a1 - nom.a1) * theta_dot
            + lp.a0 * math.cos(theta))


def step(s: PlantState, v: float, lp: LumpedParams, dt: float) -> PlantState:
    """Advance the plant one step of length dt with v held constant.

    Classical 4th-order Runge-Kutta on the 2-state system (theta, theta_dot).
    """
    _require(dt > 0.0, "dt must be > 0")
    a2, a1, a0 = lp.a2, lp.a1, lp.a0

    def f(th, om):
        return om, (v - a1 * om - a0 * math.cos(th)) / a2

    th, om = s.theta, s.theta_dot
    try:
        k1t, k1o = f(th, om)
        k2t, k2o = f(th + 0.5 * dt * k1t, om + 0.5 * dt * k1o)
        k3t, k3o = f(th + 0.5 * dt * k2t, om + 0.5 * dt * k2o)
        k4t, k4o = f(th + dt * k3t, om + dt * k3o)
    except ValueError as exc:  # cos of a non-finite stage value
        raise IntegrationError(f"non-finite stage value in step from "
                               f"theta={th}, theta_dot={om}, v={v}") from exc
    th_next = th + dt * (k1t + 2.0 * k2t + 2.0 * k3t + k4t) / 6.0
    om_next = om + dt * (k1o + 2.0 * k2o + 2.0 * k3o + k4o) / 6.0
    if not (math.isfinite(th_next) and math.isfinite(om_next)):
        raise IntegrationError(
            f"non-finite state after step (dt={dt}): theta={th_next}, theta_dot={om_next}")
    return PlantState(theta=th_next, theta_dot=om_next)
