"""Online trajectory planning by unrolling the graph network over the horizon.

Each optimization iteration rolls the network through N steps (graph -> next
position -> graph ...), sums the potentials, backpropagates into the network
parameters and takes one Adam step. Many scenarios are planned together: all
arrays carry a leading scenario axis and every scenario owns its own
parameters, so the per-scenario optimizations do not interact.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .behavior import kinematic_constraints_batch, neighbors_batch, Task
from .gatnet import GatParams, NetworkConfig, forward
from .potential import PotentialParams, u_obstacles, u_velocity
from .refpath import FrenetState
from .scenario import Scenario
from .stgraph import RoadBounds, SpeedWindow, build_graph_batch


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 50
    t_s: float = 0.1
    iters: int = 200
    lr: float = 0.01
    seed: int = 0
    warm_start: bool = False
    min_speed: float = 0.1
    detach_risk: bool = True            # U_o is a constant inside U_v
    network: NetworkConfig = NetworkConfig()
    potential: PotentialParams = PotentialParams()

    def __post_init__(self):
        if self.horizon < 1 or not self.t_s > 0 or self.iters < 1 or not self.lr > 0:
            raise ValueError("need horizon >= 1, t_s > 0, iters >= 1, lr > 0")

    @property
    def n_v(self) -> int:
        return self.network.n_v


@dataclass
class Trajectory:
    """Planned states (index 0 is the start) with per-step diagnostics."""
    states: list[FrenetState]
    cartesian: np.ndarray
    per_step_potentials: np.ndarray                 # (N, 2): U_o, U_v
    attention_log: list[dict[str, float]]
    t_s: float
    t0: float = 0.0
    scenario_id: str = ""
    planner: str = "stg"
    u_total: float = float("nan")
    speed_window: np.ndarray | None = None          # (N, 2) effective speed bounds per step
    speed_limits: np.ndarray | None = None          # (N, 2) behavioral (s_dot_min, s_dot_max)
    lateral_window: np.ndarray | None = None        # (N, 2) d_min, d_max per step
    corridor: np.ndarray | None = None              # (N, 2) road/corridor bounds at step k+1
    lead_breach: np.ndarray | None = None           # (N,) bool
    history: np.ndarray | None = None               # U_total per iteration

    def __len__(self):
        return len(self.states)

    @property
    def s(self) -> np.ndarray:
        return np.array([x.s for x in self.states])

    @property
    def d(self) -> np.ndarray:
        return np.array([x.d for x in self.states])

    @property
    def s_dot(self) -> np.ndarray:
        return np.array([x.s_dot for x in self.states])

    @property
    def d_dot(self) -> np.ndarray:
        return np.array([x.d_dot for x in self.states])

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.t_s * np.arange(len(self.states))

    def violations(self, tol: float = 1e-9) -> list[str]:
        """Road and per-step speed-bound violations (empty when feasible)."""
        out = []
        s, d = self.s, self.d
        v = np.diff(s) / self.t_s
        if self.corridor is not None:
            for k in np.flatnonzero((d[1:] < self.corridor[:, 0] - tol) | (d[1:] > self.corridor[:, 1] + tol)):
                out.append(f"step {k + 1}: d={d[k + 1]:.6f} outside road bounds {self.corridor[k]}")
        if self.speed_window is not None:
            lo, hi = self.speed_window[:, 0], self.speed_window[:, 1]
            for k in np.flatnonzero((v < lo - tol) | (v > hi + tol)):
                out.append(f"step {k}: speed {v[k]:.6f} outside window [{lo[k]:.6f}, {hi[k]:.6f}]")
        if self.speed_limits is not None:
            for k in np.flatnonzero(v > self.speed_limits[:, 1] + tol):
                out.append(f"step {k}: speed {v[k]:.6f} above limit {self.speed_limits[k, 1]:.6f}")
        if self.lateral_window is not None:
            lo, hi = self.lateral_window[:, 0], self.lateral_window[:, 1]
            for k in np.flatnonzero((d[1:] < lo - tol) | (d[1:] > hi + tol)):
                out.append(f"step {k}: d={d[k + 1]:.6f} outside lateral reach [{lo[k]:.6f}, {hi[k]:.6f}]")
        return out

    @property
    def feasible(self) -> bool:
        return not self.violations()

    def rows(self) -> list[list[float]]:
        pot = np.vstack([[np.nan, np.nan], self.per_step_potentials])
        return [[t, st.s, st.d, xy[0], xy[1], st.s_dot, st.d_dot, u[0], u[1]]
                for t, st, xy, u in zip(self.times, self.states, self.cartesian, pot)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "s", "d", "x", "y", "s_dot", "d_dot", "U_o", "U_v"])
            for row in self.rows():
                w.writerow([repr(float(x)) for x in row])

    def attention_json(self) -> dict:
        return {"scenario_id": self.scenario_id, "t_s": self.t_s, "t0": self.t0,
                "steps": [{"k": k + 1, "alpha": a} for k, a in enumerate(self.attention_log)]}


# -- batch compilation ---------------------------------------------------------------


@dataclass
class _Batch:
    """Everything the rollout needs, stacked over scenarios."""
    ids: list[str]
    actor_ids: list[list[str]]
    ego: np.ndarray              # (B, 4)
    act_s: np.ndarray            # (B, A, N+1)
    act_d: np.ndarray
    act_v: np.ndarray
    mask: np.ndarray             # (B, A)
    corr_lo: np.ndarray          # (B, N+1)
    corr_hi: np.ndarray
    d_lower: np.ndarray          # (B,)
    lane_width: np.ndarray
    s_safe: np.ndarray
    a_long: np.ndarray
    a_lat: np.ndarray
    v_max: np.ndarray
    v_min: np.ndarray
    v_rec: np.ndarray
    fsps: np.ndarray
    t0: np.ndarray

    @property
    def size(self) -> int:
        return len(self.ids)


def _compile(scenarios: Sequence[Scenario], starts: Sequence[FrenetState], k0s: Sequence[int],
             cfg: PlanConfig) -> _Batch:
    n = cfg.horizon
    n_b = len(scenarios)
    n_a = max((len(sc.actors) for sc in scenarios), default=0)
    act_s = np.zeros((n_b, n_a, n + 1))
    act_d = np.zeros((n_b, n_a, n + 1))
    act_v = np.zeros((n_b, n_a, n + 1))
    mask = np.zeros((n_b, n_a), dtype=bool)
    corr_lo = np.zeros((n_b, n + 1))
    corr_hi = np.zeros((n_b, n + 1))
    actor_ids = []
    for b, (sc, k0) in enumerate(zip(scenarios, k0s)):
        if abs(sc.t_s - cfg.t_s) > 1e-12:
            raise ValueError(f"scenario {sc.id} uses t_s={sc.t_s}, planner uses {cfg.t_s}")
        if k0 + n > sc.n_steps:
            raise ValueError(f"scenario {sc.id} is too short for a {n}-step plan from step {k0}")
        for i, a in enumerate(sc.actors):
            act_s[b, i] = a.s[k0:k0 + n + 1]
            act_d[b, i] = a.d[k0:k0 + n + 1]
            act_v[b, i] = a.s_dot[k0:k0 + n + 1]
            mask[b, i] = True
        actor_ids.append([a.id for a in sc.actors])
        lo, hi = sc.ego_bounds((k0 + np.arange(n + 1)) * sc.t_s)
        corr_lo[b], corr_hi[b] = lo, hi
    regs = [sc.regs for sc in scenarios]
    arr = lambda f: np.array([f(r) for r in regs], dtype=np.float64)
    return _Batch(
        ids=[sc.id for sc in scenarios], actor_ids=actor_ids,
        ego=np.array([[st.s, st.d, st.s_dot, st.d_dot] for st in starts], dtype=np.float64),
        act_s=act_s, act_d=act_d, act_v=act_v, mask=mask, corr_lo=corr_lo, corr_hi=corr_hi,
        d_lower=np.array([sc.d_lower for sc in scenarios]),
        lane_width=np.array([sc.lane_width for sc in scenarios]),
        s_safe=arr(lambda r: r.s_safe), a_long=arr(lambda r: r.a_max_long), a_lat=arr(lambda r: r.a_max_lat),
        v_max=arr(lambda r: r.v_max), v_min=arr(lambda r: r.v_min),
        v_rec=arr(lambda r: r.v_rec if r.v_rec is not None else r.v_max),
        fsps=np.array([sc.task is Task.FSPS for sc in scenarios]),
        t0=np.array([k0 * sc.t_s for sc, k0 in zip(scenarios, k0s)]),
    )


# -- rollout -------------------------------------------------------------------------


@dataclass
class RolloutResult:
    u_total: dc.Tensor                 # (B,)
    s: np.ndarray                      # (B, N+1)
    d: np.ndarray
    u_o: np.ndarray                    # (B, N)
    u_v: np.ndarray
    speed_window: np.ndarray           # (B, N, 2)
    speed_limits: np.ndarray           # (B, N, 2)
    lateral_window: np.ndarray         # (B, N, 2)
    corridor: np.ndarray               # (B, N, 2)
    lead_breach: np.ndarray            # (B, N)
    attention: np.ndarray              # (B, N, A)

    def fields(self) -> list[str]:
        return ["s", "d", "u_o", "u_v", "speed_window", "speed_limits", "lateral_window", "corridor",
                "lead_breach", "attention"]


def speed_window(v, kc, t_s: float):
    """Speed bounds for the next step: behavioral limits met within the acceleration bounds.

    ``s_dot_max`` is always respected; ``s_dot_min`` and the FSPS recommended
    speed are approached at the acceleration limits. Returns ``(lo, hi, cap)``
    with ``cap`` the speed the velocity potential is normalized by.
    """
    reach_lo = dc.sub(v, kc.s_ddot_dec_max * t_s)
    reach_hi = dc.add(v, kc.s_ddot_acc_max * t_s)
    hi = dc.minimum(kc.s_dot_max, reach_hi)
    fsps = np.asarray(kc.fsps)
    if np.any(fsps):
        soft = dc.maximum(np.where(fsps, kc.v_rec, np.inf), reach_lo)
        hi = dc.minimum(hi, soft)
    floor = np.minimum(kc.s_dot_min, kc.s_dot_max)
    lo = dc.minimum(dc.maximum(floor, reach_lo), hi)
    cap = np.where(fsps, np.minimum(kc.s_dot_max, kc.v_rec), kc.s_dot_max)
    return lo, hi, cap


def rollout(params: GatParams, batch: _Batch, cfg: PlanConfig) -> RolloutResult:
    n, t_s = cfg.horizon, cfg.t_s
    n_b = batch.size
    n_a = batch.mask.shape[1]
    s, d = batch.ego[:, 0], batch.ego[:, 1]
    v, dv = batch.ego[:, 2], batch.ego[:, 3]
    rec = {k: [] for k in ("s", "d", "u_o", "u_v", "win", "lim", "lat", "corr", "lead", "att")}
    rec["s"].append(np.array(s))
    rec["d"].append(np.array(d))
    total = None
    for k in range(n):
        sv, dvv = dc.value_of(s), dc.value_of(d)
        nb = neighbors_batch(sv, dvv, batch.act_s[:, :, k], batch.act_d[:, :, k], batch.act_v[:, :, k],
                             batch.mask, batch.d_lower, batch.lane_width)
        kc = kinematic_constraints_batch(batch.s_safe, batch.a_long, batch.a_lat, batch.v_max, batch.v_min,
                                         batch.v_rec, batch.fsps, *nb)
        lo, hi, cap = speed_window(v, kc, t_s)
        bounds = RoadBounds(batch.corr_lo[:, k + 1], batch.corr_hi[:, k + 1])
        actors = np.stack([batch.act_s[:, :, k + 1], batch.act_d[:, :, k + 1]], axis=-1)
        graph = build_graph_batch(s, d, v, dv, actors, batch.mask, SpeedWindow(lo, hi), kc.d_ddot_max,
                                  bounds, t_s, cfg.n_v)
        out = forward(graph, params, cfg.network)
        s1, d1 = out.y[:, 0], out.y[:, 1]
        v = dc.div(dc.sub(s1, s), t_s)
        dv = dc.div(dc.sub(d1, d), t_s)
        u_o = u_obstacles((s1, d1), actors, cfg.potential, batch.mask)
        u_v = u_velocity(u_o, dc.maximum(v, cfg.min_speed), cap, cfg.potential, detach=cfg.detach_risk)
        step = dc.add(u_o, u_v)
        total = step if total is None else dc.add(total, step)
        s, d = s1, d1
        rec["s"].append(s1.value)
        rec["d"].append(d1.value)
        rec["u_o"].append(dc.value_of(u_o))
        rec["u_v"].append(dc.value_of(u_v))
        rec["win"].append(np.stack([dc.value_of(lo), dc.value_of(hi)], axis=-1))
        rec["lim"].append(np.stack([np.minimum(kc.s_dot_min, kc.s_dot_max), kc.s_dot_max], axis=-1))
        rec["lat"].append(np.stack([graph.v_lat.lo.value, graph.v_lat.hi.value], axis=-1))
        rec["corr"].append(np.stack([batch.corr_lo[:, k + 1], batch.corr_hi[:, k + 1]], axis=-1))
        rec["lead"].append(kc.lead_breach)
        rec["att"].append(out.attention if n_a else np.zeros((n_b, 0)))
    stack = lambda key: np.stack(rec[key], axis=1)
    return RolloutResult(total, stack("s"), stack("d"), stack("u_o"), stack("u_v"), stack("win"),
                         stack("lim"), stack("lat"), stack("corr"), stack("lead"), stack("att"))


def rollout_loss(params: GatParams, batch: _Batch, cfg: PlanConfig):
    """Rollout plus gradients of the summed loss; returns ``(result, grads)`` aligned with ``params.leaves()``."""
    with dc.Tape() as tape:
        res = rollout(params, batch, cfg)
        loss = res.u_total.sum()
        g = dc.backward(loss, tape)
    tape.reset()
    grads = [g.get(leaf, np.zeros_like(leaf.value)) for leaf in params.leaves()]
    return res, grads


# -- optimization --------------------------------------------------------------------


@dataclass
class BatchPlan:
    trajectories: list[Trajectory]
    params: GatParams
    history: np.ndarray                # (iters, B)


def _diagnose(res: RolloutResult, batch: _Batch, it: int) -> str:
    bad = np.flatnonzero(~np.isfinite(res.u_total.value))
    lines = [f"non-finite U_total at iteration {it} for scenarios {[batch.ids[b] for b in bad]}"]
    for b in bad[:5]:
        steps = np.flatnonzero(~(np.isfinite(res.u_o[b]) & np.isfinite(res.u_v[b])))
        k = int(steps[0]) if len(steps) else -1
        lines.append(f"  {batch.ids[b]}: first bad step {k}, s={res.s[b, k]:.6g}, d={res.d[b, k]:.6g}, "
                     f"U_o={res.u_o[b, k]!r}, U_v={res.u_v[b, k]!r}, window={res.speed_window[b, k]}")
    return "\n".join(lines)


def _seeds(cfg: PlanConfig, n: int) -> list[int]:
    return [int(x) for x in np.random.SeedSequence(cfg.seed).generate_state(n)] if n else []


def plan_batch(scenarios: Sequence[Scenario], cfg: PlanConfig, params: GatParams | None = None,
               starts: Sequence[FrenetState] | None = None, k0s: Sequence[int] | None = None,
               seeds: Sequence[int] | None = None) -> BatchPlan:
    """Plan every scenario independently (in one batch) and return the best trajectory of each."""
    scenarios = list(scenarios)
    starts = list(starts) if starts is not None else [sc.ego_init for sc in scenarios]
    k0s = list(k0s) if k0s is not None else [0] * len(scenarios)
    batch = _compile(scenarios, starts, k0s, cfg)
    if params is None:
        params = GatParams.init(cfg.network, seeds if seeds is not None else _seeds(cfg, batch.size))
    elif params.batch != batch.size:
        raise dc.ShapeMismatch(f"params for {params.batch} scenarios, batch has {batch.size}")
    else:
        params = params.copy()
    state = dc.AdamState()
    best_u = np.full(batch.size, np.inf)
    best: RolloutResult | None = None
    store = {}
    history = np.zeros((cfg.iters, batch.size))
    for it in range(cfg.iters):
        res, grads = rollout_loss(params, batch, cfg)
        u = res.u_total.value
        if not np.all(np.isfinite(u)) or not all(np.all(np.isfinite(g)) for g in grads):
            raise NonFiniteLoss(_diagnose(res, batch, it))
        history[it] = u
        better = u < best_u
        if best is None:
            store = {f: getattr(res, f).copy() for f in res.fields()}
        else:
            for f in res.fields():
                store[f][better] = getattr(res, f)[better]
        best = res
        best_u = np.where(better, u, best_u)
        dc.adam_step(params.arrays(), grads, state, lr=cfg.lr)
    trajectories = [_trajectory(store, b, batch, scenarios[b], cfg, best_u[b], history[:, b])
                    for b in range(batch.size)]
    return BatchPlan(trajectories, params, history)


def _trajectory(store: dict, b: int, batch: _Batch, sc: Scenario, cfg: PlanConfig, u_total: float,
                history: np.ndarray) -> Trajectory:
    s, d = store["s"][b], store["d"][b]
    v = np.concatenate([[batch.ego[b, 2]], np.diff(s) / cfg.t_s])
    dv = np.concatenate([[batch.ego[b, 3]], np.diff(d) / cfg.t_s])
    states = [FrenetState(float(a), float(c), float(e), float(f)) for a, c, e, f in zip(s, d, v, dv)]
    ids = batch.actor_ids[b]
    att = [{aid: float(store["attention"][b, k, i]) for i, aid in enumerate(ids)}
           for k in range(cfg.horizon)]
    return Trajectory(
        states=states, cartesian=sc.path.to_cartesian(s, d),
        per_step_potentials=np.stack([store["u_o"][b], store["u_v"][b]], axis=-1),
        attention_log=att, t_s=cfg.t_s, t0=float(batch.t0[b]), scenario_id=sc.id, planner="stg",
        u_total=float(u_total), speed_window=store["speed_window"][b], speed_limits=store["speed_limits"][b],
        lateral_window=store["lateral_window"][b], corridor=store["corridor"][b],
        lead_breach=store["lead_breach"][b], history=history.copy(),
    )


def plan(scenario: Scenario, cfg: PlanConfig, params: GatParams | None = None,
         start: FrenetState | None = None, k0: int = 0) -> Trajectory:
    return plan_with_params(scenario, cfg, params, start, k0)[0]


def plan_with_params(scenario: Scenario, cfg: PlanConfig, params: GatParams | None = None,
                     start: FrenetState | None = None, k0: int = 0) -> tuple[Trajectory, GatParams]:
    res = plan_batch([scenario], cfg, params, [start or scenario.ego_init], [k0],
                     seeds=[cfg.seed])
    return res.trajectories[0], res.params


def replan_loop(scenario: Scenario, cfg: PlanConfig, horizon_shift: int, cycles: int | None = None,
                warm_start: bool = True) -> list[Trajectory]:
    """Receding horizon: execute ``horizon_shift`` steps of each plan, then replan from there."""
    if not 1 <= horizon_shift <= cfg.horizon:
        raise ValueError("horizon_shift must lie in [1, horizon]")
    if cycles is None:
        cycles = (scenario.n_steps - cfg.horizon) // horizon_shift + 1
    if cycles < 1 or (cycles - 1) * horizon_shift + cfg.horizon > scenario.n_steps:
        raise ValueError("scenario is too short for the requested replanning cycles")
    out = []
    params = None
    start = scenario.ego_init
    for c in range(cycles):
        traj, learned = plan_with_params(scenario, cfg, params, start, c * horizon_shift)
        out.append(traj)
        start = traj.states[horizon_shift]
        params = learned if warm_start else None
    return out
