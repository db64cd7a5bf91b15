"""Polynomial Frenet planner used as the comparison baseline.

Candidates combine a quintic lateral move to a target offset with a quartic
longitudinal velocity-keeping profile, both reaching their targets at time T
and holding afterwards. Candidates that break kinematic bounds, leave the
corridor or overlap an actor are pruned; the cheapest survivor under the
summed potentials wins.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .behavior import identify_neighbors, kinematic_constraints, KinematicConstraints, Task
from .planner import PlanConfig, Trajectory
from .potential import PotentialParams, u_obstacles, u_velocity
from .refpath import FrenetState
from .scenario import Scenario

VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 1.8
MARGIN = 0.5
TIMES = (2.0, 3.0, 4.0, 5.0)


class Infeasible(RuntimeError):
    def __init__(self, message: str, counts: dict | None = None):
        super().__init__(message)
        self.counts = counts or {}


def quintic_coefficients(x0, v0, a0, xT, vT, aT, T) -> np.ndarray:
    """Coefficients c0..c5 of the quintic meeting position/velocity/acceleration at 0 and T."""
    h = xT - x0 - v0 * T - 0.5 * a0 * T * T
    hv = vT - v0 - a0 * T
    ha = aT - a0
    return np.array([
        x0, v0, 0.5 * a0,
        (10.0 * h - 4.0 * hv * T + 0.5 * ha * T * T) / T ** 3,
        (-15.0 * h + 7.0 * hv * T - ha * T * T) / T ** 4,
        (6.0 * h - 3.0 * hv * T + 0.5 * ha * T * T) / T ** 5,
    ])


def quartic_coefficients(x0, v0, a0, vT, aT, T) -> np.ndarray:
    """Coefficients c0..c4 of the quartic meeting position/velocity/acceleration at 0 and velocity/acceleration at T."""
    hv = vT - v0 - a0 * T
    ha = aT - a0
    return np.array([x0, v0, 0.5 * a0, (3.0 * hv - ha * T) / (3.0 * T * T), (ha * T - 2.0 * hv) / (4.0 * T ** 3)])


def _eval(coef: np.ndarray, t: np.ndarray, order: int) -> np.ndarray:
    p = np.polynomial.polynomial
    return p.polyval(t, p.polyder(coef, order) if order else coef)


@dataclass
class CandidateTrajectory:
    target: tuple[float, float, float]       # d_T, s_dot_T, T
    lat_coef: np.ndarray
    lon_coef: np.ndarray
    t: np.ndarray
    s: np.ndarray
    d: np.ndarray
    s_dot: np.ndarray
    d_dot: np.ndarray
    s_ddot: np.ndarray
    d_ddot: np.ndarray


def generate_candidates(ego: FrenetState, targets: Iterable[tuple[float, float, float]], t_s: float = 0.1,
                        horizon: int = 50, s_ddot0: float = 0.0, d_ddot0: float = 0.0) -> list[CandidateTrajectory]:
    targets = list(targets)
    if not targets:
        raise ValueError("need at least one target")
    t = np.arange(horizon + 1) * t_s
    out = []
    for d_T, v_T, T in targets:
        if not T > 0:
            raise ValueError("target time must be positive")
        lat = quintic_coefficients(ego.d, ego.d_dot, d_ddot0, d_T, 0.0, 0.0, T)
        lon = quartic_coefficients(ego.s, ego.s_dot, s_ddot0, v_T, 0.0, T)
        inside = t <= T
        tc = np.minimum(t, T)
        s_T = _eval(lon, T, 0)
        s = np.where(inside, _eval(lon, tc, 0), s_T + v_T * (t - T))
        s_dot = np.where(inside, _eval(lon, tc, 1), v_T)
        s_ddot = np.where(inside, _eval(lon, tc, 2), 0.0)
        d = np.where(inside, _eval(lat, tc, 0), d_T)
        d_dot = np.where(inside, _eval(lat, tc, 1), 0.0)
        d_ddot = np.where(inside, _eval(lat, tc, 2), 0.0)
        out.append(CandidateTrajectory((float(d_T), float(v_T), float(T)), lat, lon, t,
                                       s, d, s_dot, d_dot, s_ddot, d_ddot))
    return out


def target_grid(d_targets: Sequence[float], s_dot_min: float, s_dot_max: float,
                times: Sequence[float] = TIMES, step: float = 1.0) -> list[tuple[float, float, float]]:
    speeds = list(np.arange(s_dot_min, s_dot_max + 1e-9, step))
    if s_dot_max - speeds[-1] > 1e-9:
        speeds.append(s_dot_max)
    return [(float(d), float(v), float(T)) for d in d_targets for v in speeds for T in times]


def ellipses_overlap(ds, dd, length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH,
                     margin: float = MARGIN):
    """Overlap test for two equal axis-aligned ellipses whose centers differ by (ds, dd)."""
    a = 0.5 * length + margin
    b = 0.5 * width + margin
    return (np.asarray(ds) / (2 * a)) ** 2 + (np.asarray(dd) / (2 * b)) ** 2 < 1.0


@dataclass
class Selection:
    best: CandidateTrajectory
    index: int
    cost: float
    survivors: list[int]
    costs: np.ndarray              # cost per survivor, aligned with ``survivors``
    per_step: np.ndarray           # (N, 2) U_o, U_v of the best


def kinematic_violation(c: CandidateTrajectory, kc: KinematicConstraints, corridor=None, tol: float = 1e-9):
    """Name of the first violated bound, or None."""
    if np.any(c.s_dot < kc.s_dot_min - tol) or np.any(c.s_dot > kc.s_dot_max + tol):
        return "speed"
    if np.any(c.s_ddot < -kc.s_ddot_dec_max - tol) or np.any(c.s_ddot > kc.s_ddot_acc_max + tol):
        return "longitudinal acceleration"
    if np.any(np.abs(c.d_ddot) > kc.d_ddot_max + tol):
        return "lateral acceleration"
    if corridor is not None:
        lo, hi = corridor
        if np.any(c.d < lo - tol) or np.any(c.d > hi + tol):
            return "corridor"
    return None


def candidate_cost(c: CandidateTrajectory, actors: np.ndarray, p: PotentialParams, cap: float,
                   min_speed: float = 0.1) -> np.ndarray:
    """Per-step (U_o, U_v) for steps 1..N; ``actors`` is (A, N+1, 2)."""
    t_s = c.t[1] - c.t[0]
    acts = np.swapaxes(actors[:, 1:, :], 0, 1)                   # (N, A, 2)
    uo = u_obstacles((c.s[1:], c.d[1:]), acts, p)
    v = np.maximum(np.diff(c.s) / t_s, min_speed)
    uv = u_velocity(uo, v, cap, p)
    return np.stack([uo, uv], axis=-1)


def prune_and_select(cands: Sequence[CandidateTrajectory], kc: KinematicConstraints, actors: np.ndarray,
                     potential_params: PotentialParams = PotentialParams(), corridor=None,
                     cap: float | None = None) -> Selection:
    """Drop infeasible or colliding candidates and pick the cheapest survivor (ties: lowest index)."""
    actors = np.asarray(actors, dtype=np.float64)
    if actors.size == 0:
        actors = np.zeros((0, len(cands[0].t) if cands else 1, 2))
    cap = kc.s_dot_max if cap is None else cap
    counts = {"kinematic": 0, "collision": 0}
    survivors, costs, steps = [], [], []
    for i, c in enumerate(cands):
        if kinematic_violation(c, kc, corridor) is not None:
            counts["kinematic"] += 1
            continue
        if len(actors) and np.any(ellipses_overlap(actors[:, :, 0] - c.s, actors[:, :, 1] - c.d)):
            counts["collision"] += 1
            continue
        per = candidate_cost(c, actors, potential_params, cap)
        survivors.append(i)
        costs.append(float(per.sum()))
        steps.append(per)
    if not survivors:
        raise Infeasible(f"all {len(cands)} candidates pruned ({counts})", counts)
    costs = np.array(costs)
    j = int(np.argmin(costs))
    return Selection(cands[survivors[j]], survivors[j], float(costs[j]), survivors, costs, steps[j])


def plan_baseline(scenario: Scenario, cfg: PlanConfig, start: FrenetState | None = None, k0: int = 0) -> Trajectory:
    """Baseline trajectory for a scenario; raises :class:`Infeasible` when nothing survives."""
    ego = start or scenario.ego_init
    n = cfg.horizon
    if k0 + n > scenario.n_steps:
        raise ValueError("scenario too short for the horizon")
    ks = np.arange(k0, k0 + n + 1)
    actor_states = [a.state(k0) for a in scenario.actors]
    nbr = identify_neighbors(ego, actor_states, scenario.lane_of, [a.id for a in scenario.actors])
    kc = kinematic_constraints(scenario.regs, nbr, scenario.task)
    lo, hi = scenario.ego_bounds(ks * scenario.t_s)
    centers = [scenario.lane_center(i) for i in range(scenario.lanes)]
    d_targets = [c for c in centers if lo[-1] - 1e-9 <= c <= hi[-1] + 1e-9] or [0.5 * (lo[-1] + hi[-1])]
    cands = generate_candidates(ego, target_grid(d_targets, kc.s_dot_min, kc.s_dot_max), cfg.t_s, n)
    if scenario.actors:
        actors = np.stack([np.stack([a.s[ks], a.d[ks]], axis=-1) for a in scenario.actors])
    else:
        actors = np.zeros((0, n + 1, 2))
    cap = min(kc.s_dot_max, kc.v_rec) if scenario.task is Task.FSPS else kc.s_dot_max
    sel = prune_and_select(cands, kc, actors, cfg.potential, (lo, hi), cap)
    c = sel.best
    states = [FrenetState(*map(float, x)) for x in zip(c.s, c.d, c.s_dot, c.d_dot)]
    return Trajectory(
        states=states, cartesian=scenario.path.to_cartesian(c.s, c.d), per_step_potentials=sel.per_step,
        attention_log=[], t_s=cfg.t_s, t0=k0 * scenario.t_s, scenario_id=scenario.id, planner="baseline",
        u_total=sel.cost, speed_limits=np.tile([kc.s_dot_min, kc.s_dot_max], (n, 1)),
        corridor=np.stack([lo[1:], hi[1:]], axis=-1),
    )
