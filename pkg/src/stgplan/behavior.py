"""Behavioral layer: neighbor gaps -> kinematic constraints.

``kinematic_constraints`` follows the constraint routine line by line;
``kinematic_constraints_batch`` is the same routine over numpy arrays and is
what the planner calls every rollout step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .refpath import FrenetState


class Task(str, Enum):
    DTT = "DTT"     # drive through traffic
    FSPS = "FSPS"   # follow a specific path and speed


class MissingNeighborVelocity(ValueError):
    pass


@dataclass(frozen=True)
class SafetyParams:
    s_safe: float = 10.0
    a_max_long: float = 2.0
    a_max_lat: float = 1.5
    v_max: float = 30.0
    v_min: float = 15.0
    v_rec: float | None = None

    def __post_init__(self):
        for name in ("s_safe", "a_max_long", "a_max_lat", "v_max", "v_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.v_min > self.v_max:
            raise ValueError("v_min exceeds v_max")
        if self.v_rec is not None and not (self.v_min <= self.v_rec <= self.v_max):
            raise ValueError("v_rec outside [v_min, v_max]")


@dataclass(frozen=True)
class NeighborState:
    s_lead: float = math.inf
    s_rear: float = math.inf
    v_lead: float | None = None
    v_rear: float | None = None
    lead_id: str | None = field(default=None, compare=False)
    rear_id: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.s_lead < 0 or self.s_rear < 0:
            raise ValueError("gaps must be non-negative")


@dataclass(frozen=True)
class KinematicConstraints:
    s_ddot_dec_max: float
    s_ddot_acc_max: float
    s_dot_max: float
    s_dot_min: float
    d_ddot_max: float
    v_rec: float | None = None


def kinematic_constraints(params: SafetyParams, nbr: NeighborState, task: Task | str) -> KinematicConstraints:
    task = Task(task)
    a_long, a_lat = params.a_max_long, params.a_max_lat
    lead_breach = nbr.s_lead < params.s_safe
    rear_breach = nbr.s_rear < params.s_safe
    if lead_breach and nbr.v_lead is None:
        raise MissingNeighborVelocity("lead gap breached but lead velocity unknown")
    if rear_breach and nbr.v_rear is None:
        raise MissingNeighborVelocity("rear gap breached but rear velocity unknown")
    v_rec = params.v_rec if params.v_rec is not None else params.v_max

    # lines 1-6 (the base values are also the starting point for lines 7-20)
    dec, acc = a_long, a_long
    s_dot_max, s_dot_min = params.v_max, params.v_min
    d_ddot_max = a_lat
    # lines 7-11
    if lead_breach:
        dec = 2.0 * a_long
        s_dot_max = nbr.v_lead
        if task is Task.FSPS:
            v_rec = nbr.v_lead
    # lines 12-16
    if rear_breach:
        acc = 2.0 * a_long
        s_dot_min = nbr.v_rear
        if task is Task.FSPS and v_rec < s_dot_min:
            v_rec = s_dot_min
    # lines 17-20
    if lead_breach and rear_breach:
        d_ddot_max = 2.0 * a_lat
        if s_dot_min > s_dot_max:
            s_dot_max = s_dot_min
    return KinematicConstraints(
        s_ddot_dec_max=dec,
        s_ddot_acc_max=acc,
        s_dot_max=s_dot_max,
        s_dot_min=s_dot_min,
        d_ddot_max=d_ddot_max,
        v_rec=v_rec if task is Task.FSPS else None,
    )


@dataclass
class ConstraintArrays:
    """Kinematic constraints for a batch of egos (one entry per scenario)."""
    s_ddot_dec_max: np.ndarray
    s_ddot_acc_max: np.ndarray
    s_dot_max: np.ndarray
    s_dot_min: np.ndarray
    d_ddot_max: np.ndarray
    v_rec: np.ndarray
    fsps: np.ndarray
    lead_breach: np.ndarray
    rear_breach: np.ndarray

    def row(self, b: int) -> KinematicConstraints:
        return KinematicConstraints(
            float(self.s_ddot_dec_max[b]), float(self.s_ddot_acc_max[b]),
            float(self.s_dot_max[b]), float(self.s_dot_min[b]), float(self.d_ddot_max[b]),
            float(self.v_rec[b]) if self.fsps[b] else None,
        )


def kinematic_constraints_batch(s_safe, a_long, a_lat, v_max, v_min, v_rec, fsps,
                                s_lead, s_rear, v_lead, v_rear) -> ConstraintArrays:
    """Vectorized constraint routine. ``v_rec`` must already default to ``v_max``."""
    lead = s_lead < s_safe
    rear = s_rear < s_safe
    dec = np.where(lead, 2.0 * a_long, a_long)
    s_dot_max = np.where(lead, v_lead, v_max)
    v_rec = np.where(lead & fsps, v_lead, v_rec)
    acc = np.where(rear, 2.0 * a_long, a_long)
    s_dot_min = np.where(rear, v_rear, v_min)
    v_rec = np.where(rear & fsps & (v_rec < s_dot_min), s_dot_min, v_rec)
    both = lead & rear
    d_ddot = np.where(both, 2.0 * a_lat, a_lat)
    s_dot_max = np.where(both & (s_dot_min > s_dot_max), s_dot_min, s_dot_max)
    return ConstraintArrays(dec, acc, s_dot_max, s_dot_min, d_ddot, v_rec, np.asarray(fsps),
                            lead, rear)


def lane_index(d, d_lower: float, lane_width: float):
    """Lane number counted from the lower road edge."""
    return np.floor((np.asarray(d) - d_lower) / lane_width).astype(int)


def identify_neighbors(ego: FrenetState, actors: Sequence[FrenetState],
                       lane_of: Callable[[float], int], ids: Sequence[str] | None = None) -> NeighborState:
    """Immediate same-lane lead and rear actors (ties at zero gap count as lead)."""
    ego_lane = lane_of(ego.d)
    lead = rear = None
    for i, a in enumerate(actors):
        if lane_of(a.d) != ego_lane:
            continue
        gap = a.s - ego.s
        if gap >= 0.0:
            if lead is None or gap < lead[0]:
                lead = (gap, a, i)
        elif rear is None or -gap < rear[0]:
            rear = (-gap, a, i)
    name = (lambda i: ids[i]) if ids is not None else (lambda i: str(i))
    return NeighborState(
        s_lead=lead[0] if lead else math.inf,
        s_rear=rear[0] if rear else math.inf,
        v_lead=lead[1].s_dot if lead else None,
        v_rear=rear[1].s_dot if rear else None,
        lead_id=name(lead[2]) if lead else None,
        rear_id=name(rear[2]) if rear else None,
    )


def neighbors_batch(ego_s, ego_d, act_s, act_d, act_v, mask, d_lower, lane_width):
    """Vectorized :func:`identify_neighbors`.

    ``act_*`` have shape (B, A); ``mask`` marks real (non-padding) actors.
    Returns gaps (inf when absent) and velocities (nan when absent).
    """
    ego_lane = lane_index(ego_d, d_lower, lane_width)
    act_lane = lane_index(act_d, d_lower[:, None], lane_width[:, None])
    same = mask & (act_lane == ego_lane[:, None])
    gap = act_s - ego_s[:, None]
    ahead = np.where(same & (gap >= 0.0), gap, np.inf)
    behind = np.where(same & (gap < 0.0), -gap, np.inf)
    if act_s.shape[1] == 0:
        inf = np.full(len(ego_s), np.inf)
        nan = np.full(len(ego_s), np.nan)
        return inf, inf.copy(), nan, nan.copy()
    i_lead = ahead.argmin(axis=1)
    i_rear = behind.argmin(axis=1)
    rows = np.arange(len(ego_s))
    s_lead = ahead[rows, i_lead]
    s_rear = behind[rows, i_rear]
    v_lead = np.where(np.isfinite(s_lead), act_v[rows, i_lead], np.nan)
    v_rear = np.where(np.isfinite(s_rear), act_v[rows, i_rear], np.nan)
    return s_lead, s_rear, v_lead, v_rear
