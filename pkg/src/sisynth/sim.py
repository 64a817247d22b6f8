"""Discrete-time navigation trials with the safety filter in the loop.

The world-frame unicycle is the integration source of truth; the relative
state (distance, relative heading, azimuth) is recomputed from the world
pose each step, so the sin/cos circle identity holds exactly.  Trials start
outside the obstacle's protective radius with the goal placed beyond the
obstacle, forcing the nominal path through it, and report safe-set landing,
post-entry violations, and forward-invariance / finite-time-convergence
monitor results.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .controller import Infeasible, NominalGains, nominal_control, safe_control, wrap_angle
from .index import IndexParams, SafetyIndexFamily

COLLISION_EPS = 1e-6
GOAL_RADIUS = 0.2
SLACK_FACTOR = 10.0   # FI slack = factor * dt * max |phidot| seen on the trajectory


class CollisionError(RuntimeError):
    pass


@dataclass
class WorldState:
    position: np.ndarray   # (2,)
    heading: float         # psi, radians
    speed: float


@dataclass
class RelativeState:
    d: float
    v: float
    alpha: float
    beta: float


def relative_state(world: WorldState, obstacle=(0.0, 0.0)) -> RelativeState:
    rel = world.position - np.asarray(obstacle, dtype=float)
    d = float(np.hypot(*rel))
    beta = float(np.arctan2(rel[1], rel[0]))
    # bearing of the obstacle from the agent is beta + pi
    alpha = wrap_angle(world.heading - beta - np.pi)
    return RelativeState(d=d, v=world.speed, alpha=alpha, beta=beta)


def world_from_relative(rel: RelativeState, obstacle=(0.0, 0.0)) -> WorldState:
    position = np.asarray(obstacle, dtype=float) + rel.d * np.array(
        [np.cos(rel.beta), np.sin(rel.beta)])
    return WorldState(position=position, heading=wrap_angle(rel.alpha + rel.beta + np.pi),
                      speed=rel.v)


def sym_state(rel: RelativeState) -> np.ndarray:
    """State vector in the symbolic coordinates [d, sin(alpha), cos(alpha), v]."""
    return np.array([rel.d, np.sin(rel.alpha), np.cos(rel.alpha), rel.v])


def step(world: WorldState, u, dt: float, obstacle=(0.0, 0.0)) -> WorldState:
    """Semi-implicit Euler update with heading rate ``psi_dot = w + beta_dot``.

    The speed updates first and the position moves with the new speed, so a
    braking command takes effect within the same step; with explicit Euler
    the stale velocity produces one-step overshoots of the safety boundary.
    """
    rel = relative_state(world, obstacle)
    if rel.d < COLLISION_EPS:
        raise CollisionError(f"agent at the obstacle center (d={rel.d:.2e})")
    a, w = float(u[0]), float(u[1])
    beta_dot = -rel.v * np.sin(rel.alpha) / rel.d
    psi_dot = w + beta_dot
    speed = world.speed + dt * a
    position = world.position + dt * speed * np.array(
        [np.cos(world.heading), np.sin(world.heading)])
    return WorldState(position=position,
                      heading=wrap_angle(world.heading + dt * psi_dot),
                      speed=speed)


@dataclass
class TaskConfig:
    trials: int = 50
    horizon: float = 30.0
    dt: float = 0.01
    seed: int = 0
    v_max: float = 1.0
    d_init: tuple[float, float] = (1.5, 5.0)
    goal_dist: tuple[float, float] = (2.0, 5.0)
    lateral_offset: float = 0.8   # max sideways goal shift; keeps the nominal path in the disk
    gains: NominalGains = field(default_factory=NominalGains)

    @classmethod
    def from_dict(cls, spec: dict) -> "TaskConfig":
        known = {"trials", "horizon", "dt", "seed", "v_max", "d_init", "goal_dist",
                 "lateral_offset", "gains"}
        unknown = set(spec) - known
        if unknown:
            raise ValueError(f"unknown sim keys: {sorted(unknown)}")
        kwargs = dict(spec)
        if "gains" in kwargs:
            kwargs["gains"] = NominalGains(**kwargs["gains"])
        if "d_init" in kwargs:
            kwargs["d_init"] = tuple(kwargs["d_init"])
        if "goal_dist" in kwargs:
            kwargs["goal_dist"] = tuple(kwargs["goal_dist"])
        return cls(**kwargs)


@dataclass
class TrialReport:
    trial: int
    landed_in_safe_set: bool
    first_entry_time: float | None
    violations_after_entry: int
    fi_failures: list
    ftc_ok: bool
    ftc_bound: float | None
    reached_goal: bool
    failure: str | None = None
    max_overshoot: float = 0.0
    eps_disc: float = 0.0
    rows: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.failure is None and self.landed_in_safe_set
                and self.violations_after_entry == 0 and not self.fi_failures
                and self.ftc_ok)


def run_trial(fam: SafetyIndexFamily, params: IndexParams, task: TaskConfig,
              trial: int, record: bool = False) -> TrialReport:
    rng = np.random.default_rng([task.seed, trial])
    d0 = rng.uniform(*task.d_init)
    beta0 = rng.uniform(-np.pi, np.pi)
    position = d0 * np.array([np.cos(beta0), np.sin(beta0)])
    toward = -position / d0
    perp = np.array([-toward[1], toward[0]])
    goal = (rng.uniform(*task.goal_dist) * toward
            + rng.uniform(-task.lateral_offset, task.lateral_offset) * perp)
    alpha0 = rng.uniform(-np.pi, np.pi)
    world = WorldState(position=position,
                       heading=wrap_angle(alpha0 + beta0 + np.pi),
                       speed=0.0)

    chain = fam.chain_numeric(params)
    n = fam.order
    sys = fam.system
    steps = int(round(task.horizon / task.dt))

    phis = np.empty((steps + 1, n + 1))
    rows = []
    reached_goal = False
    failure = None
    t_used = 0

    for t in range(steps + 1):
        rel = relative_state(world)
        x = sym_state(rel)
        a = sys.assignment(x)
        phis[t] = [p.evaluate(a) for p in chain]
        t_used = t
        if np.hypot(*(goal - world.position)) < GOAL_RADIUS:
            reached_goal = True
            break
        if t == steps:
            break
        box = sys.control_box(x)
        u_ref = nominal_control(world.position, world.heading, world.speed, goal,
                                box, task.v_max, task.gains)
        try:
            result = safe_control(fam, params, x, u_ref)
            if record:
                rows.append([t * task.dt, *world.position, world.heading, world.speed,
                             rel.d, rel.alpha, rel.beta, *result.u, *phis[t],
                             int(result.constraint_active)])
            world = step(world, result.u, task.dt)
        except (Infeasible, CollisionError) as exc:
            failure = str(exc)
            break

    phis = phis[:t_used + 1]
    return _assess(trial, phis, params, task, reached_goal, failure, rows)


def _assess(trial: int, phis: np.ndarray, params: IndexParams, task: TaskConfig,
            reached_goal: bool, failure: str | None, rows: list) -> TrialReport:
    n = phis.shape[1] - 1
    if len(phis) > 1:
        eps_disc = SLACK_FACTOR * float(np.max(np.abs(np.diff(phis, axis=0))))
    else:
        eps_disc = SLACK_FACTOR * task.dt
    in_safe = np.all(phis <= 0.0, axis=1)
    entry_idx = int(np.argmax(in_safe)) if np.any(in_safe) else None
    landed = entry_idx is not None
    first_entry_time = entry_idx * task.dt if landed else None

    violations = 0
    max_overshoot = 0.0
    if landed:
        post = phis[entry_idx:]
        violations = int(np.sum(post[:, 0] > 0.0))
        max_overshoot = float(np.max(post)) if len(post) else 0.0

    fi_failures = []
    for m in range(n + 1):
        member = np.all(phis[:, n - m:] <= 0.0, axis=1)
        if not np.any(member):
            continue
        e = int(np.argmax(member))
        post = phis[e:, n - m:]
        bad = np.argwhere(post > eps_disc)
        for s, j in bad:
            fi_failures.append({"m": m, "step": int(e + s), "member": int(n - m + j),
                                "value": float(post[s, j])})

    if phis[0, n] > 0.0:
        ftc_bound = phis[0, n] / params.eta + 1.0
        ftc_ok = landed and first_entry_time <= ftc_bound
    else:
        ftc_bound = None
        ftc_ok = landed and entry_idx == 0

    return TrialReport(trial=trial, landed_in_safe_set=landed,
                       first_entry_time=first_entry_time,
                       violations_after_entry=violations, fi_failures=fi_failures,
                       ftc_ok=ftc_ok, ftc_bound=ftc_bound, reached_goal=reached_goal,
                       failure=failure, max_overshoot=max_overshoot,
                       eps_disc=eps_disc, rows=rows)


@dataclass
class BatchReport:
    reports: list[TrialReport]

    @property
    def safe_pct(self) -> float:
        if not self.reports:
            return 100.0
        return 100.0 * sum(r.landed_in_safe_set and r.failure is None
                           for r in self.reports) / len(self.reports)

    @property
    def total_violations(self) -> int:
        return sum(r.violations_after_entry for r in self.reports)

    @property
    def monitor_failures(self) -> int:
        return sum(len(r.fi_failures) + (0 if r.ftc_ok else 1) for r in self.reports)

    @property
    def all_ok(self) -> bool:
        return all(r.ok for r in self.reports)


def run_batch(fam: SafetyIndexFamily, params: IndexParams, task: TaskConfig,
              record: bool = False) -> BatchReport:
    workers = int(os.environ.get("SISYNTH_THREADS", "1"))
    indices = range(task.trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(
                lambda i: run_trial(fam, params, task, i, record), indices))
    else:
        reports = [run_trial(fam, params, task, i, record) for i in indices]
    return BatchReport(reports=sorted(reports, key=lambda r: r.trial))


TRAJECTORY_COLUMNS = ["t", "px", "py", "psi", "v", "d", "alpha", "beta",
                      "a", "w", "phi0", "phi1", "constraint_active"]


def trajectory_csv(report: TrialReport, path: str, order: int = 1) -> None:
    cols = TRAJECTORY_COLUMNS[:10] + [f"phi{j}" for j in range(order + 1)] + \
        [TRAJECTORY_COLUMNS[-1]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in report.rows:
            writer.writerow([f"{x:.9g}" if isinstance(x, float) else x for x in row])


def markdown_report(batch: BatchReport, k, solve_time: float | None = None) -> str:
    k = np.atleast_1d(np.asarray(k, dtype=float))
    k_str = ", ".join(f"{v:.4e}" for v in k)
    time_str = f"{solve_time:.1f} s" if solve_time is not None else "n/a"
    lines = [
        "# Simulation batch report",
        "",
        "| k | solve time | Safe Set (%) | Violations |",
        "|---|-----------|--------------|------------|",
        f"| {k_str} | {time_str} | {batch.safe_pct:.1f} | {batch.total_violations} |",
        "",
        f"- trials: {len(batch.reports)}",
        f"- goal reached: {sum(r.reached_goal for r in batch.reports)}",
        f"- invariance monitor failures: {sum(len(r.fi_failures) for r in batch.reports)}",
        f"- convergence monitor failures: {sum(0 if r.ftc_ok else 1 for r in batch.reports)}",
        f"- controller/collision failures: {sum(r.failure is not None for r in batch.reports)}",
    ]
    failed = [r for r in batch.reports if not r.ok]
    if failed:
        lines.append("")
        lines.append("## Failing trials (replay by trial index)")
        for r in failed:
            why = r.failure or (
                f"landed={r.landed_in_safe_set} violations={r.violations_after_entry} "
                f"fi_failures={len(r.fi_failures)} ftc_ok={r.ftc_ok}")
            lines.append(f"- trial {r.trial}: {why}")
    return "\n".join(lines) + "\n"
