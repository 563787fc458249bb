"""Immune control laws.

The immune controller splits the control into a stimulating "helper" term and
an inhibiting "suppressor" term that is subtracted from it.  Here the helper
is a PD law (optionally with inverse-nominal feedforward for trajectory
tracking) and the suppressor is produced elsewhere, either by a recurrent
network (`immunepd.suppressor`) or by the exact equivalent disturbance in
oracle mode.  An immune PID controller is reconstructed as the comparison
baseline: a PID core scaled by a Gaussian-bump suppression factor driven by
the recent change of its own output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable


@dataclass(frozen=True)
class Gains:
    """PD feedback coefficients.

    kd**2 == 4*kp puts the ideally compensated error dynamics at a double
    real pole -kd/2 (critical damping, non-oscillatory convergence); see
    `check_critical_damping`.
    """

    kp: float  # proportional gain [1/s^2]
    kd: float  # derivative gain [1/s]

    def __post_init__(self):
        if not self.kp > 0.0:
            raise ValueError("K_P must be > 0")
        if not self.kd > 0.0:
            raise ValueError("K_D must be > 0")


@dataclass(frozen=True)
class ControlSample:
    """Per-step controller inputs: tracking error, its rate, the control rate
    estimate, the measured plant velocity and the desired acceleration."""

    e: float           # theta_d - theta [rad]
    e_dot: float       # theta_d_dot - theta_dot [rad/s]
    u_dot: float       # control input rate estimate [V/s]
    theta_dot: float   # measured plant velocity [rad/s]
    theta_dd_d: float  # desired acceleration [rad/s^2]


@dataclass(frozen=True)
class ImmunePidBaselineParams:
    """Parameters of the reconstructed immune PID baseline."""

    K0: float     # base gain [V/rad]
    eta: float    # suppression strength, in [0, 1)
    sigma: float  # suppression shape width [V/s]
    kp_i: float   # inner PID proportional gain
    ki_i: float   # inner PID integral gain
    kd_i: float   # inner PID derivative gain

    def __post_init__(self):
        if not self.K0 > 0.0:
            raise ValueError("K0 must be > 0")
        if not 0.0 <= self.eta < 1.0:
            raise ValueError("eta must lie in [0, 1)")
        if not self.sigma > 0.0:
            raise ValueError("sigma must be > 0")


def general_immune_law(P_h: Callable[[float], float],
                       f_h: Callable[[float], float],
                       f_s: Callable[[float], float],
                       e: float, u_dot: float) -> float:
    """Scalar immune law u = P_h(e) * (1 - f_h(e) * f_s(u_dot)).

    f_h is expected to be the inverse of P_h on the evaluation range; the
    caller owns that contract.
    """
    return P_h(e) * (1.0 - f_h(e) * f_s(u_dot))


def helper_pd(e: float, e_dot: float, g: Gains) -> float:
    """Helper (stimulating) term: kp*e + kd*e_dot."""
    return g.kp * e + g.kd * e_dot


def immune_combine(u_h: float, u_s: float) -> float:
    """Total control: helper output minus suppressor output."""
    return u_h - u_s


def tracking_helper(cs: ControlSample, nom, g: Gains) -> float:
    """Helper voltage for trajectory tracking.

    Inverse-nominal feedforward plus PD on the error, plus the nominal
    damping term on the measured velocity (not the error rate):

        v_h = a2_hat*(theta_dd_d + kd*e_dot + kp*e) + a1_hat*theta_dot
    """
    return nom.a2 * (cs.theta_dd_d + g.kd * cs.e_dot + g.kp * cs.e) + nom.a1 * cs.theta_dot


def check_critical_damping(g: Gains, rel_tol: float = 1e-9) -> bool:
    """True when kd**2 == 4*kp within rel_tol (gains usually arrive from
    text config, so exact float equality would be brittle)."""
    return abs(g.kd ** 2 - 4.0 * g.kp) <= rel_tol * 4.0 * g.kp


def gaussian_suppression(x: float, sigma: float) -> float:
    """Suppression shape 1 - exp(-x^2/sigma^2): even, zero at 0, -> 1 as |x| grows."""
    return 1.0 - math.exp(-(x * x) / (sigma * sigma))


class ImmunePidBaseline:
    """Reconstructed immune PID controller.

        u(k) = K0 * (1 - eta * f(du(k-1))) * u_pid(k)

    with u_pid a discrete PID on the error (rectangle-rule integral,
    backward-difference derivative), du(k-1) the change between the two
    previous outputs and f the Gaussian bump `gaussian_suppression`.  The
    suppression factor therefore always lies in (1 - eta, 1].

    Owns mutable history (integral, previous error, two previous outputs);
    one instance must not be shared across concurrent episodes.
    """

    def __init__(self, params: ImmunePidBaselineParams, dt: float):
        if not dt > 0.0:
            raise ValueError("dt must be > 0")
        self.params = params
        self.dt = dt
        self.reset()

    def reset(self) -> None:
        self._integral = 0.0
        self._e_prev = 0.0
        self._u_prev1 = 0.0
        self._u_prev2 = 0.0

    def update(self, e: float) -> float:
        p = self.params
        self._integral += e * self.dt
        deriv = (e - self._e_prev) / self.dt
        u_pid = p.kp_i * e + p.ki_i * self._integral + p.kd_i * deriv
        du = self._u_prev1 - self._u_prev2
        u = p.K0 * (1.0 - p.eta * gaussian_suppression(du, p.sigma)) * u_pid
        self._e_prev = e
        self._u_prev2 = self._u_prev1
        self._u_prev1 = u
        return u
