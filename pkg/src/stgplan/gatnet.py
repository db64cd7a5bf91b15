"""Heterogeneous graph-attention network and convex readout.

Every parameter array has a leading scenario axis of size B, so a batch of
independent networks is evaluated with batched matmuls. Shapes below omit it.

Parameter file format (JSON)::

    {"format": "stgplan-params/1", "r": 8, "n_v": 5, "hidden": 64,
     "aggregator": "attention", "batch": B,
     "arrays": {"W_ego": {"shape": [B, 4, 8], "data": [...flat, C order...]}, ...}}

Floats are written with ``repr`` precision, so save/load is lossless.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .stgraph import STGraph, _edge_layout

FORMAT = "stgplan-params/1"


@dataclass(frozen=True)
class NetworkConfig:
    r: int = 8
    hidden: int = 64
    n_v: int = 5
    aggregator: str = "attention"     # or "mean"
    leaky_slope: float = 0.2
    # feature scales: positions (m), lateral positions (m), speeds (m/s), lateral speeds (m/s)
    pos_scale: float = 10.0
    lat_scale: float = 3.6
    speed_scale: float = 10.0
    lat_speed_scale: float = 1.0

    def __post_init__(self):
        if self.aggregator not in ("attention", "mean"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.r < 1 or self.hidden < 1 or self.n_v < 2:
            raise ValueError("r, hidden must be >= 1 and n_v >= 2")

    @property
    def phi_size(self) -> int:
        return 2 * self.r + 2 * self.r * self.n_v


def _shapes(cfg: NetworkConfig) -> list[tuple[str, tuple, int]]:
    """(name, shape, fan_in) in initialization order."""
    r, h, nv = cfg.r, cfg.hidden, cfg.n_v
    out = [
        ("W_ego", (4, r), 4), ("b_ego", (1, r), 4),
        ("W_actor", (2, r), 2), ("b_actor", (1, r), 2),
        ("W_virtual", (1, r), 1), ("b_virtual", (1, r), 1),
        ("W_att", (r, r), r),
        ("att_dst", (r, 1), 2 * r + 1), ("att_src", (r, 1), 2 * r + 1), ("att_edge", (1, 1), 2 * r + 1),
        ("b_gat", (1, r), r),
    ]
    if cfg.aggregator == "mean":
        out.append(("W_self", (r, r), r))
    out += [
        ("W0", (cfg.phi_size, h), cfg.phi_size), ("b0", (1, h), cfg.phi_size),
        ("W1", (h, 2 * nv), h), ("b1", (1, 2 * nv), h),
    ]
    return out


@dataclass
class GatParams:
    """Named parameter tensors, each shaped ``(B, *shape)``."""
    config: NetworkConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: NetworkConfig, seeds: Sequence[int] | int) -> "GatParams":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per scenario, one seed per scenario."""
        seeds = [seeds] if np.isscalar(seeds) else list(seeds)
        per = []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            per.append({name: rng.uniform(-1.0, 1.0, shape) / np.sqrt(fan)
                        for name, shape, fan in _shapes(config)})
        tensors = {name: Tensor(np.stack([p[name] for p in per]), name=name)
                   for name, _, _ in _shapes(config)}
        return cls(config, tensors)

    @property
    def batch(self) -> int:
        return next(iter(self.tensors.values())).shape[0]

    def names(self) -> list[str]:
        return [name for name, _, _ in _shapes(self.config)]

    def leaves(self) -> list[Tensor]:
        return [self.tensors[n] for n in self.names()]

    def arrays(self) -> list[np.ndarray]:
        return [t.value for t in self.leaves()]

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def copy(self) -> "GatParams":
        return GatParams(self.config, {k: Tensor(v.value.copy(), name=k) for k, v in self.tensors.items()})

    def select(self, idx) -> "GatParams":
        """Sub-batch (index array or slice) as an independent copy."""
        idx = np.atleast_1d(np.arange(self.batch)[idx])
        return GatParams(self.config, {k: Tensor(v.value[idx].copy(), name=k) for k, v in self.tensors.items()})

    @classmethod
    def concat(cls, parts: Sequence["GatParams"]) -> "GatParams":
        cfg = parts[0].config
        return cls(cfg, {n: Tensor(np.concatenate([p.tensors[n].value for p in parts]), name=n)
                         for n in parts[0].names()})

    def to_json(self) -> dict:
        c = self.config
        return {
            "format": FORMAT, "r": c.r, "n_v": c.n_v, "hidden": c.hidden,
            "aggregator": c.aggregator, "batch": self.batch,
            "arrays": {n: {"shape": list(self.tensors[n].shape),
                           "data": self.tensors[n].value.ravel().tolist()} for n in self.names()},
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def from_json(cls, obj: dict, config: NetworkConfig | None = None) -> "GatParams":
        if obj.get("format") != FORMAT:
            raise ValueError(f"not a parameter file of format {FORMAT}")
        base = config or NetworkConfig()
        cfg = NetworkConfig(**{**base.__dict__, "r": obj["r"], "n_v": obj["n_v"],
                               "hidden": obj["hidden"], "aggregator": obj["aggregator"]})
        tensors = {}
        for name, shape, _ in _shapes(cfg):
            entry = obj["arrays"][name]
            arr = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape[1:] != shape:
                raise dc.ShapeMismatch(f"{name}: stored {arr.shape[1:]}, expected {shape}")
            tensors[name] = Tensor(arr, name=name)
        return cls(cfg, tensors)

    @classmethod
    def load(cls, path, config: NetworkConfig | None = None) -> "GatParams":
        return cls.from_json(json.loads(Path(path).read_text()), config)


@dataclass
class NetworkOutput:
    y: Tensor                   # (B, 2): s^{k+1}, d^{k+1}
    weights_s: Tensor           # (B, NV)
    weights_d: Tensor           # (B, NV)
    attention: np.ndarray       # (B, A): coefficient of actor i in the ego's aggregation
    logits: Tensor | None = None

    @property
    def s(self) -> Tensor:
        return self.y[:, 0]

    @property
    def d(self) -> Tensor:
        return self.y[:, 1]


@lru_cache(maxsize=64)
def _attr_scale(n_actors: int, n_v: int, t_s: float, cfg: NetworkConfig) -> np.ndarray:
    n, rows, cols, _ = _edge_layout(n_actors, n_v)
    m = n_v - 1
    per_edge = np.concatenate([
        np.full(2 * n_actors, 1.0 / cfg.pos_scale),
        np.full(2 * n_v, 1.0 / t_s),
        np.full(2 * m, 1.0 / (cfg.speed_scale * t_s)),
        np.full(2 * m, 1.0 / (cfg.lat_speed_scale * t_s)),
    ])
    out = np.zeros((n, n))
    out[rows, cols] = per_edge
    return out


def _project(graph: STGraph, params: GatParams, cfg: NetworkConfig) -> Tensor:
    n_b, n_a, nv = graph.batch, graph.n_actor_slots, graph.n_v
    ego_scale = np.array([1.0 / cfg.pos_scale, 1.0 / cfg.lat_scale,
                          1.0 / cfg.speed_scale, 1.0 / cfg.lat_speed_scale])
    act_scale = np.array([1.0 / cfg.pos_scale, 1.0 / cfg.lat_scale])
    virt_scale = np.concatenate([np.full(nv, 1.0 / (cfg.speed_scale * graph.t_s)),
                                 np.full(nv, 1.0 / (cfg.lat_speed_scale * graph.t_s))])
    ego = dc.reshape(dc.mul(graph.ego_features, ego_scale), (n_b, 1, 4))
    h_ego = dc.add(dc.matmul(ego, params["W_ego"]), params["b_ego"])
    parts = [h_ego]
    if n_a:
        act = dc.mul(graph.actor_features, act_scale)
        parts.append(dc.add(dc.matmul(act, params["W_actor"]), params["b_actor"]))
    virt = dc.reshape(dc.mul(graph.virtual_features, virt_scale), (n_b, 2 * nv, 1))
    parts.append(dc.add(dc.matmul(virt, params["W_virtual"]), params["b_virtual"]))
    return dc.concat(parts, axis=1)


def gat_layer(graph: STGraph, params: GatParams, cfg: NetworkConfig | None = None):
    """Per-node embeddings ``(B, n, r)`` and the aggregation weights ``(B, n, n)``.

    ``alpha[b, p, q]`` is the weight node p gives to neighbor q (self-loops included).
    """
    cfg = cfg or params.config
    h = _project(graph, params, cfg)
    z = dc.matmul(h, params["W_att"])
    n = h.shape[1]
    eye = np.eye(n, dtype=bool)
    neighbors = graph.adjacency | eye
    if cfg.aggregator == "attention":
        scale = _attr_scale(graph.n_actor_slots, graph.n_v, graph.t_s, cfg)
        attr = dc.mul(graph.edge_attr, scale)
        f_dst = dc.matmul(z, params["att_dst"])                         # (B, n, 1)
        f_src = dc.swapaxes(dc.matmul(z, params["att_src"]), -1, -2)     # (B, 1, n)
        logits = dc.add(dc.add(f_dst, f_src), dc.mul(params["att_edge"], attr))
        alpha = dc.softmax(dc.leaky_relu(logits, cfg.leaky_slope), neighbors)
        out = dc.add(dc.matmul(alpha, z), params["b_gat"])
        alpha_v = alpha.value
    else:
        adj = graph.adjacency.astype(np.float64)
        deg = adj.sum(axis=-1, keepdims=True)
        alpha_v = np.divide(adj, deg, out=np.zeros_like(adj), where=deg > 0)
        out = dc.add(dc.add(dc.matmul(alpha_v, z), dc.matmul(h, params["W_self"])), params["b_gat"])
    return dc.elu(out), alpha_v


def encode(emb: Tensor, graph: STGraph) -> Tensor:
    """Ego embedding, summed actor embeddings and flattened virtual embeddings."""
    n_b, n_a, nv = graph.batch, graph.n_actor_slots, graph.n_v
    r = emb.shape[-1]
    ego = emb[:, 0, :]
    if n_a:
        mask = graph.actor_mask[:, :, None].astype(np.float64)
        pooled = dc.reduce_sum(dc.mul(emb[:, 1:1 + n_a, :], mask), axis=1)
    else:
        pooled = np.zeros((n_b, r))
    virt = dc.reshape(emb[:, 1 + n_a:, :], (n_b, 2 * nv * r))
    return dc.concat([ego, pooled, virt], axis=1)


def readout(logits, v_long, v_lat):
    """Two softmaxes over ``(B, 2 NV)`` logits and the convex combination of node values."""
    lv = dc.value_of(logits)
    n_b, two_nv = lv.shape
    nv = two_nv // 2
    w = dc.softmax(dc.reshape(logits, (n_b, 2, nv)))
    nodes = dc.stack([v_long, v_lat], axis=1)                           # (B, 2, NV)
    y = dc.reduce_sum(dc.mul(w, nodes), axis=-1)                        # (B, 2)
    # a saturated softmax can round one ulp past the extreme node; shift the value back
    # into the hull with a constant offset so the gradient is untouched
    node_vals = dc.value_of(nodes)
    yv = y.value
    y = dc.add(y, np.clip(yv, node_vals.min(-1), node_vals.max(-1)) - yv)
    return y, w[:, 0, :], w[:, 1, :]


def decode_and_readout(phi: Tensor, v_long, v_lat, params: GatParams) -> NetworkOutput:
    n_b = phi.shape[0]
    x = dc.reshape(phi, (n_b, 1, phi.shape[-1]))
    hidden = dc.elu(dc.add(dc.matmul(x, params["W0"]), params["b0"]))
    logits = dc.add(dc.matmul(hidden, params["W1"]), params["b1"])
    logits = dc.reshape(logits, (n_b, logits.shape[-1]))
    lv = v_long.values if hasattr(v_long, "values") else v_long
    dv = v_lat.values if hasattr(v_lat, "values") else v_lat
    y, ws, wd = readout(logits, lv, dv)
    return NetworkOutput(y, ws, wd, np.zeros((n_b, 0)), logits)


def forward(graph: STGraph, params: GatParams, cfg: NetworkConfig | None = None) -> NetworkOutput:
    emb, alpha = gat_layer(graph, params, cfg)
    phi = encode(emb, graph)
    out = decode_and_readout(phi, graph.v_long, graph.v_lat, params)
    n_a = graph.n_actor_slots
    out.attention = np.where(graph.actor_mask, alpha[:, 0, 1:1 + n_a], 0.0)
    return out
