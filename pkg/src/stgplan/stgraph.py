"""Spatial-temporal graph for one planning step.

Node order inside a graph is ``[ego, actor_1..actor_A, Vs_1..Vs_NV, Vd_1..Vd_NV]``.
Everything carries a leading batch axis so that many scenarios can be planned
with a single tape; ``build_graph`` is the single-ego convenience wrapper.

Edges are stored as a dense boolean matrix ``adjacency[b, p, q]`` meaning
"q sends to p", together with a dense matrix of edge attributes. Padding actors
(``actor_mask`` False) have no edges.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .refpath import FrenetState

EGO_ACTOR = "ego-actor"
ACTOR_EGO = "actor-ego"
EGO_VIRTUAL = "ego-virtual"
VIRTUAL_VIRTUAL = "virtual-virtual"


class DegenerateCorridor(ValueError):
    pass


@dataclass(frozen=True)
class RoadBounds:
    d_lower: float | np.ndarray
    d_upper: float | np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.d_lower) >= np.asarray(self.d_upper)):
            raise ValueError("d_lower must be below d_upper")


@dataclass
class VirtualNodes:
    """``n_v`` equally spaced positions from ``lo`` to ``hi`` (last axis of ``values``)."""
    values: Tensor
    kind: str
    lo: Tensor
    hi: Tensor
    delta: Tensor
    degenerate: np.ndarray | bool = False

    def __len__(self):
        return self.values.shape[-1]


def lateral_virtual_nodes(d_k, kc, bounds: RoadBounds, t_s: float, n_v: int = 5) -> VirtualNodes:
    """Lateral layer: reach ``d_ddot_max * t_s * t_s`` either side, clipped to the road."""
    if n_v < 2 or t_s <= 0:
        raise ValueError("need n_v >= 2 and t_s > 0")
    d_dot_max = np.asarray(kc.d_ddot_max, dtype=np.float64) * t_s
    reach = d_dot_max * t_s
    hi = dc.minimum(bounds.d_upper, dc.add(d_k, reach))
    lo = dc.maximum(bounds.d_lower, dc.sub(d_k, reach))
    if np.any(lo.value > hi.value):
        raise DegenerateCorridor(
            f"ego lateral position cannot reach the corridor (d_min={lo.value}, d_max={hi.value})")
    values = dc.lerp_nodes(lo, hi, n_v)
    delta = dc.div(dc.sub(hi, lo), n_v - 1)
    return VirtualNodes(values, "lateral", lo, hi, delta, degenerate=lo.value == hi.value)


def longitudinal_virtual_nodes(s_k, kc, t_s: float, n_v: int = 5) -> VirtualNodes:
    """Longitudinal layer between ``s_k + s_dot_min t_s`` and ``s_k + s_dot_max t_s``."""
    if n_v < 2 or t_s <= 0:
        raise ValueError("need n_v >= 2 and t_s > 0")
    if np.any(dc.value_of(kc.s_dot_min) > dc.value_of(kc.s_dot_max)):
        raise ValueError("s_dot_min exceeds s_dot_max")
    lo = dc.add(s_k, dc.mul(kc.s_dot_min, t_s))
    hi = dc.add(s_k, dc.mul(kc.s_dot_max, t_s))
    values = dc.lerp_nodes(lo, hi, n_v)
    delta = dc.div(dc.sub(hi, lo), n_v - 1)
    return VirtualNodes(values, "longitudinal", lo, hi, delta, degenerate=lo.value == hi.value)


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str
    attr: float


@lru_cache(maxsize=64)
def _edge_layout(n_actors: int, n_v: int):
    """Static edge positions and kinds for ``n_actors`` actor slots (without padding removal)."""
    n = 1 + n_actors + 2 * n_v
    vs0 = 1 + n_actors
    vd0 = vs0 + n_v
    rows, cols, kinds = [], [], []
    # actor edges first (both directions), then ego->virtual, then virtual chains
    for i in range(n_actors):
        rows.append(1 + i)
        cols.append(0)
        kinds.append(EGO_ACTOR)
    for i in range(n_actors):
        rows.append(0)
        cols.append(1 + i)
        kinds.append(ACTOR_EGO)
    for j in range(2 * n_v):
        rows.append(vs0 + j)
        cols.append(0)
        kinds.append(EGO_VIRTUAL)
    for base in (vs0, vd0):
        for j in range(n_v - 1):
            rows += [base + j + 1, base + j]
            cols += [base + j, base + j + 1]
            kinds += [VIRTUAL_VIRTUAL, VIRTUAL_VIRTUAL]
    return n, np.array(rows), np.array(cols), tuple(kinds)


@dataclass
class STGraph:
    ego_features: Tensor        # (B, 4): s, d (zero after the ego shift), s_dot, d_dot
    actor_features: Tensor      # (B, A, 2): ego-relative s, d at step k+1
    actor_mask: np.ndarray      # (B, A)
    v_long: VirtualNodes        # values (B, NV), absolute
    v_lat: VirtualNodes
    virtual_features: Tensor    # (B, 2 NV): ego-relative offsets, longitudinal then lateral
    adjacency: np.ndarray       # (B, n, n) bool, [p, q] means q -> p
    edge_attr: Tensor           # (B, n, n)
    t_s: float
    actor_ids: list | None = None

    @property
    def batch(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_actor_slots(self) -> int:
        return self.actor_mask.shape[1]

    @property
    def n_v(self) -> int:
        return self.v_long.values.shape[-1]

    def node_count(self, b: int = 0) -> int:
        return 1 + int(self.actor_mask[b].sum()) + 2 * self.n_v

    def node_features(self, b: int = 0) -> dict:
        """Feature vectors of real nodes keyed by node index."""
        feats = {0: self.ego_features.value[b]}
        for i in np.flatnonzero(self.actor_mask[b]):
            feats[1 + int(i)] = self.actor_features.value[b, i]
        base = 1 + self.n_actor_slots
        for j, v in enumerate(self.virtual_features.value[b]):
            feats[base + j] = np.array([v])
        return feats

    def edges(self, b: int = 0) -> list[Edge]:
        _, rows, cols, kinds = _edge_layout(self.n_actor_slots, self.n_v)
        out = []
        for p, q, kind in zip(rows, cols, kinds):
            if self.adjacency[b, p, q]:
                out.append(Edge(int(q), int(p), kind, float(self.edge_attr.value[b, p, q])))
        return out


def build_graph_batch(ego_s, ego_d, ego_s_dot, ego_d_dot, actors_k1: np.ndarray, actor_mask: np.ndarray,
                      speed_window, d_ddot_max, bounds: RoadBounds, t_s: float, n_v: int = 5,
                      actor_ids=None) -> STGraph:
    """Assemble graphs for a batch of egos.

    ``ego_*`` are (B,) tensors or arrays, ``actors_k1`` is (B, A, 2) holding
    predicted (s, d) at step k+1, ``speed_window`` has ``s_dot_min``/``s_dot_max``.
    """
    actor_mask = np.asarray(actor_mask, dtype=bool)
    n_b, n_a = actor_mask.shape
    v_long = longitudinal_virtual_nodes(ego_s, speed_window, t_s, n_v)
    v_lat = lateral_virtual_nodes(ego_d, _Lat(d_ddot_max), bounds, t_s, n_v)

    zeros = np.zeros(n_b)
    ego_feat = dc.stack([zeros, zeros, ego_s_dot, ego_d_dot], axis=-1)
    ego_pos = dc.stack([ego_s, ego_d], axis=-1)                       # (B, 2)
    rel = dc.sub(actors_k1, dc.reshape(ego_pos, (n_b, 1, 2)))          # (B, A, 2)
    rel = dc.mul(rel, actor_mask[:, :, None].astype(np.float64))
    virt = dc.concat([dc.sub(v_long.values, dc.reshape(ego_s, (n_b, 1))),
                      dc.sub(v_lat.values, dc.reshape(ego_d, (n_b, 1)))], axis=-1)

    n, rows, cols, _ = _edge_layout(n_a, n_v)
    dist = dc.norm_last(rel)                                            # (B, A)
    ones = np.ones((1, n_v - 1))
    spacing = dc.concat([
        dc.mul(dc.reshape(v_long.delta, (n_b, 1)), ones),
        dc.mul(dc.reshape(v_long.delta, (n_b, 1)), ones),
        dc.mul(dc.reshape(v_lat.delta, (n_b, 1)), ones),
        dc.mul(dc.reshape(v_lat.delta, (n_b, 1)), ones),
    ], axis=-1)
    # spacing above is grouped per chain; reorder to the (forward, backward) interleave of the layout
    spacing = dc.getitem(spacing, (slice(None), _chain_order(n_v)))
    values = dc.concat([dist, dist, np.full((n_b, 2 * n_v), t_s), spacing], axis=-1)
    attr = dc.scatter(values, rows, cols, n)

    adjacency = np.zeros((n_b, n, n), dtype=bool)
    adjacency[:, rows, cols] = True
    adjacency[:, 1:1 + n_a, 0] &= actor_mask
    adjacency[:, 0, 1:1 + n_a] &= actor_mask
    return STGraph(ego_feat, rel, actor_mask, v_long, v_lat, virt, adjacency, attr, t_s, actor_ids)


@lru_cache(maxsize=16)
def _chain_order(n_v: int) -> np.ndarray:
    m = n_v - 1
    order = []
    for chain in range(2):
        fwd, bwd = 2 * chain * m, (2 * chain + 1) * m
        for j in range(m):
            order += [fwd + j, bwd + j]
    return np.array(order)


@dataclass(frozen=True)
class _Lat:
    d_ddot_max: object


@dataclass(frozen=True)
class SpeedWindow:
    s_dot_min: object
    s_dot_max: object


def build_graph(ego: FrenetState, actors_k1: Sequence[tuple[float, float]], kc, bounds: RoadBounds,
                t_s: float, n_v: int = 5, actor_ids=None) -> STGraph:
    """Graph for a single ego (batch of one) using ``kc`` velocity bounds directly."""
    acts = np.array(actors_k1, dtype=np.float64).reshape(1, -1, 2)
    mask = np.ones(acts.shape[:2], dtype=bool)
    window = SpeedWindow(np.array([kc.s_dot_min], float), np.array([kc.s_dot_max], float))
    b = RoadBounds(np.array([bounds.d_lower], float), np.array([bounds.d_upper], float))
    return build_graph_batch(np.array([ego.s]), np.array([ego.d]), np.array([ego.s_dot]),
                             np.array([ego.d_dot]), acts, mask, window,
                             np.array([kc.d_ddot_max], float), b, t_s, n_v,
                             actor_ids=[list(actor_ids)] if actor_ids is not None else None)
