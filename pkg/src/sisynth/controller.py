"""Safe control law: minimal-deviation projection onto the safety halfspace.

When the index is nonnegative, the commanded control is the closest point to
the nominal control inside the state-dependent box intersected with the
halfspace ``L_f phi + L_g phi . u <= -eta``.  The single linear constraint
makes the dual one-dimensional and monotone, so the exact minimizer is found
by bisection on the dual multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .index import IndexParams, SafetyIndexFamily, decision_assignment
from .system import SymbolicSystem

MU_TOL = 1e-13
FEAS_TOL = 1e-9


class Infeasible(RuntimeError):
    """No box control meets the derivative constraint at this state."""

    def __init__(self, state, required: float, best: float):
        super().__init__(
            f"safety constraint infeasible at state {np.asarray(state)}: "
            f"need phidot <= {required:.6g}, best achievable {best:.6g}")
        self.state = np.asarray(state, dtype=float)
        self.required = required
        self.best = best


@dataclass
class SafeControlResult:
    u: np.ndarray
    constraint_active: bool
    phidot_achieved: float


def safe_control(fam: SafetyIndexFamily, params: IndexParams, state: Sequence[float],
                 u_ref: Sequence[float], sys: SymbolicSystem | None = None) -> SafeControlResult:
    """Project the nominal control onto the safety constraint and box.

    Inactive index (``phi_theta < 0``): the nominal control is clamped to the
    box and returned.  Active index: solves
    ``min ||u - u_ref||^2  s.t.  c.u <= b,  u in box`` exactly, where
    ``c = L_g phi`` and ``b = -eta - L_f phi`` at the current state.
    """
    sys = sys if sys is not None else fam.system
    a = sys.assignment(state)
    a.update(decision_assignment(fam, params))
    lower, upper = sys.control_box(state)
    u_ref = np.asarray(u_ref, dtype=float)

    lf = float(fam.Lf_phi.evaluate(a))
    c = np.array([lg.evaluate(a) for lg in fam.Lg_phi], dtype=float)
    phi = float(fam.phi_theta.evaluate(a))

    if phi < 0.0:
        u = np.clip(u_ref, lower, upper)
        return SafeControlResult(u=u, constraint_active=False,
                                 phidot_achieved=lf + float(c @ u))

    b = -params.eta - lf
    # The box minimum of c.u is attained at the per-coordinate vertex.
    vertex_min = float(np.sum(np.where(c >= 0, c * lower, c * upper)))
    if vertex_min > b + FEAS_TOL:
        raise Infeasible(state, required=-params.eta, best=lf + vertex_min)

    def clamped(mu: float) -> np.ndarray:
        return np.clip(u_ref - mu * c, lower, upper)

    u0 = clamped(0.0)
    if float(c @ u0) <= b + FEAS_TOL:
        return SafeControlResult(u=u0, constraint_active=True,
                                 phidot_achieved=lf + float(c @ u0))

    # residual r(mu) = c.u(mu) - b is nonincreasing in mu; bracket then bisect
    mu_lo, mu_hi = 0.0, 1.0
    while float(c @ clamped(mu_hi)) > b:
        mu_lo = mu_hi
        mu_hi *= 2.0
        if mu_hi > 1e18:
            raise Infeasible(state, required=-params.eta, best=lf + vertex_min)
    while mu_hi - mu_lo > MU_TOL * max(1.0, mu_hi):
        mid = 0.5 * (mu_lo + mu_hi)
        if float(c @ clamped(mid)) > b:
            mu_lo = mid
        else:
            mu_hi = mid
    u = clamped(mu_hi)
    return SafeControlResult(u=u, constraint_active=True,
                             phidot_achieved=lf + float(c @ u))


@dataclass
class NominalGains:
    speed: float = 1.0
    heading: float = 2.0
    cruise: float = 0.8   # target speed as a fraction of v_max


def wrap_angle(a: float) -> float:
    return float(np.arctan2(np.sin(a), np.cos(a)))


def nominal_control(position: Sequence[float], heading: float, speed: float,
                    goal: Sequence[float], box: tuple[np.ndarray, np.ndarray],
                    v_max: float, gains: NominalGains = NominalGains()) -> np.ndarray:
    """Proportional navigation: steer at the goal bearing, hold cruise speed.

    Slows proportionally when closer to the goal than one cruise-speed
    second.  Output is clamped to the state-dependent control box.
    """
    position = np.asarray(position, dtype=float)
    delta = np.asarray(goal, dtype=float) - position
    dist = float(np.hypot(*delta))
    bearing = float(np.arctan2(delta[1], delta[0]))
    heading_err = wrap_angle(bearing - heading)

    v_des = gains.cruise * v_max * min(1.0, dist / max(gains.cruise * v_max, 1e-9))
    a_cmd = gains.speed * (v_des - speed)
    w_cmd = gains.heading * heading_err
    lower, upper = box
    return np.clip(np.array([a_cmd, w_cmd]), lower, upper)
