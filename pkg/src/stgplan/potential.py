"""Obstacle and velocity potential fields.

All functions accept plain floats, numpy arrays or diffcore tensors; the
result type follows the inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import DomainError, Tensor


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PotentialParams:
    b1: float = 1.0
    b2: float = 0.5
    b3: float = 1.0
    b4: float = 1.0
    eps1: float = 0.5
    c1: float = 1.0
    c2: float = 1.0
    eps2: float = 0.1

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{name} must be strictly positive")


def u_long(ds, p: PotentialParams = PotentialParams()):
    return p.b1 / (p.b2 * abs(ds) + p.eps1) ** 2


def u_lat(ds, dd, p: PotentialParams = PotentialParams()):
    return p.b3 * u_long(ds, p) / (p.b4 * abs(dd) + p.eps1) ** 2


def _expand(x):
    if isinstance(x, Tensor):
        return x[..., None]
    return np.asarray(x, dtype=np.float64)[..., None]


def u_obstacles(ego_pos, actors_pos, p: PotentialParams = PotentialParams(), mask=None):
    """Sum of lateral potentials over actors.

    ``ego_pos`` is an ``(s, d)`` pair (each scalar, array or tensor of shape
    ``(...)``); ``actors_pos`` has shape ``(..., A, 2)``. ``mask`` of shape
    ``(..., A)`` drops padding actors.
    """
    s, d = ego_pos
    acts = np.asarray(actors_pos, dtype=np.float64)
    if acts.shape[-2] == 0:
        shape = np.broadcast_shapes(np.shape(dc.value_of(s)), acts.shape[:-2])
        return np.zeros(shape) if not isinstance(s, Tensor) else dc.mul(s, 0.0)
    terms = u_lat(acts[..., 0] - _expand(s), acts[..., 1] - _expand(d), p)
    if mask is not None:
        terms = terms * np.asarray(mask, dtype=np.float64)
    if isinstance(terms, Tensor):
        return terms.sum(axis=-1)
    return np.sum(terms, axis=-1)


def u_velocity(u_o, s_dot, s_dot_max, p: PotentialParams = PotentialParams(), detach: bool = True):
    """``c1 (c2 / (U_o + eps2)) ** (s_dot_max / s_dot)``.

    With ``detach`` the obstacle term inside the base is a constant, so the
    velocity potential cannot be lowered by moving closer to actors.
    """
    if np.any(dc.value_of(s_dot) <= 0):
        raise DomainError("velocity potential needs a positive speed")
    if np.any(dc.value_of(s_dot_max) <= 0):
        raise DomainError("velocity potential needs a positive maximum speed")
    uo = dc.value_of(u_o) if detach else u_o
    base = p.c2 / (uo + p.eps2)
    return p.c1 * base ** (s_dot_max / s_dot)


def u_total(rollout: Sequence, n: int):
    """Sum of per-step ``(U_o, U_v)`` pairs over a rollout of length ``n``."""
    if len(rollout) != n:
        raise LengthMismatch(f"rollout has {len(rollout)} steps, expected {n}")
    total = 0.0
    for uo, uv in rollout:
        total = total + uo + uv
    return total
