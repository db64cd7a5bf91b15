"""Scenarios: road, ego start, actor predictions, regulations.

Scenario files are JSON::

    {"format": "stgplan-scenario/1", "id": "...", "path": [[x, y], ...],
     "d_lower": -1.8, "lane_width": 3.6, "lanes": 3,
     "ego": {"s": .., "d": .., "s_dot": .., "d_dot": ..},
     "regs": {"s_safe": .., "a_max_long": .., "a_max_lat": .., "v_max": .., "v_min": .., "v_rec": null},
     "task": "DTT", "duration": 10.0, "t_s": 0.1,
     "corridor": null | [[t, d_lo, d_hi], ...],
     "meta": {...},
     "actors": [{"id": "a1", "s": [...], "d": [...]}, ...]}

Actor tracks are stored sampled at ``t_s`` (one entry per step, step 0 = t=0),
which makes the round trip exact. Velocities are derived from the samples.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .behavior import SafetyParams, Task
from .refpath import FrenetState, OutOfRange, ReferencePath, straight_path
from .stgraph import RoadBounds

FORMAT = "stgplan-scenario/1"

DENSITY_BANDS = {"low": (1, 5), "medium": (10, 14), "high": (15, 20)}


class PlacementFailure(RuntimeError):
    pass


class ScenarioError(ValueError):
    pass


@dataclass
class ActorTrack:
    """Predicted actor positions sampled every ``t_s`` seconds from t=0."""
    id: str
    t_s: float
    s: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)
        if self.s.shape != self.d.shape or self.s.ndim != 1 or len(self.s) < 2:
            raise ScenarioError(f"actor {self.id}: s and d must be equal-length 1-D samples")
        if not (np.all(np.isfinite(self.s)) and np.all(np.isfinite(self.d))):
            raise ScenarioError(f"actor {self.id}: non-finite samples")

    @property
    def n_samples(self) -> int:
        return len(self.s)

    @property
    def duration(self) -> float:
        return (self.n_samples - 1) * self.t_s

    @property
    def s_dot(self) -> np.ndarray:
        return np.gradient(self.s, self.t_s)

    @property
    def d_dot(self) -> np.ndarray:
        return np.gradient(self.d, self.t_s)

    def state(self, k: int) -> FrenetState:
        s, d = actor_position(self, k)
        return FrenetState(s, d, float(self.s_dot[k]), float(self.d_dot[k]))

    @classmethod
    def constant_velocity(cls, id: str, s0: float, d0: float, s_dot: float, duration: float,
                          t_s: float = 0.1, d_dot: float = 0.0) -> "ActorTrack":
        t = np.arange(_n_steps(duration, t_s) + 1) * t_s
        return cls(id, t_s, s0 + s_dot * t, d0 + d_dot * t)

    @classmethod
    def scripted(cls, id: str, s0: float, d0: float, v0: float, segments: Sequence[dict],
                 duration: float, t_s: float = 0.1) -> "ActorTrack":
        """Piecewise-linear speed and lateral profiles.

        Each segment is ``{"duration": T, "v": v_end, "d": d_end}``; speed and
        lateral offset move linearly to their end values over the segment
        (``v``/``d`` default to the previous values). After the last segment
        the actor holds speed and offset.
        """
        knots_t, knots_v, knots_d = [0.0], [v0], [d0]
        for seg in segments:
            knots_t.append(knots_t[-1] + float(seg["duration"]))
            knots_v.append(float(seg.get("v", knots_v[-1])))
            knots_d.append(float(seg.get("d", knots_d[-1])))
        t = np.arange(_n_steps(duration, t_s) + 1) * t_s
        s = s0 + _piecewise_linear_integral(np.array(knots_t), np.array(knots_v), t)
        d = np.interp(t, knots_t, knots_d)
        # exact knot values where a knot lands on the sampling grid
        for kt, kd in zip(knots_t, knots_d):
            j = int(round(kt / t_s))
            if j < len(t) and abs(j * t_s - kt) < 1e-9:
                d[j] = kd
        return cls(id, t_s, s, d)


def _n_steps(duration: float, t_s: float) -> int:
    n = int(round(duration / t_s))
    if n < 1 or abs(n * t_s - duration) > 1e-9 * max(1.0, duration):
        raise ScenarioError(f"duration {duration} is not a whole number of {t_s} s steps")
    return n


def _piecewise_linear_integral(kt: np.ndarray, kv: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Integral from 0 to t of the piecewise-linear function through the knots (held after the last)."""
    seg_area = 0.5 * (kv[1:] + kv[:-1]) * np.diff(kt)
    cum = np.concatenate([[0.0], np.cumsum(seg_area)])
    i = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, len(kt) - 1)
    tau = t - kt[i]
    v_i = kv[i]
    slope = np.zeros_like(t)
    inner = i < len(kt) - 1
    slope[inner] = (kv[i[inner] + 1] - kv[i[inner]]) / (kt[i[inner] + 1] - kt[i[inner]])
    return cum[i] + v_i * tau + 0.5 * slope * tau * tau


def actor_position(track: ActorTrack, k: int) -> tuple[float, float]:
    if not 0 <= k < track.n_samples:
        raise OutOfRange(f"step {k} outside actor {track.id} track of {track.n_samples} samples")
    return float(track.s[k]), float(track.d[k])


@dataclass
class Scenario:
    id: str
    path: ReferencePath
    d_lower: float
    lane_width: float
    lanes: int
    ego_init: FrenetState
    actors: list[ActorTrack]
    regs: SafetyParams
    task: Task
    duration: float
    t_s: float = 0.1
    corridor: np.ndarray | None = None      # rows (t, d_lo, d_hi) for the ego, linear between rows
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.task = Task(self.task)
        if self.corridor is not None:
            self.corridor = np.asarray(self.corridor, dtype=np.float64)
        self.validate()

    @property
    def d_upper(self) -> float:
        return self.d_lower + self.lanes * self.lane_width

    @property
    def road(self) -> RoadBounds:
        return RoadBounds(self.d_lower, self.d_upper)

    @property
    def n_steps(self) -> int:
        return _n_steps(self.duration, self.t_s)

    def lane_of(self, d: float) -> int:
        return int(math.floor((d - self.d_lower) / self.lane_width))

    def lane_center(self, lane: int) -> float:
        return self.d_lower + (lane + 0.5) * self.lane_width

    def ego_bounds(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Lateral corridor available to the ego at time(s) ``t``.

        Without an explicit corridor the ego may use the road between the
        centers of the outer lanes.
        """
        t = np.asarray(t, dtype=np.float64)
        if self.corridor is None:
            lo = np.full(t.shape, self.lane_center(0))
            hi = np.full(t.shape, self.lane_center(self.lanes - 1))
            if self.lanes == 1:
                lo, hi = lo - 0.25 * self.lane_width, hi + 0.25 * self.lane_width
            return lo, hi
        c = self.corridor
        return np.interp(t, c[:, 0], c[:, 1]), np.interp(t, c[:, 0], c[:, 2])

    def actor_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(A, K+1) arrays of actor s and d."""
        if not self.actors:
            z = np.zeros((0, self.n_steps + 1))
            return z, z.copy()
        return (np.stack([a.s[:self.n_steps + 1] for a in self.actors]),
                np.stack([a.d[:self.n_steps + 1] for a in self.actors]))

    def validate(self) -> None:
        if self.lanes < 1 or not self.lane_width > 0 or not self.t_s > 0:
            raise ScenarioError("need lanes >= 1, lane_width > 0 and t_s > 0")
        n = self.n_steps
        e = self.ego_init
        lo, hi = self.ego_bounds(0.0)
        if not (lo - 1e-9 <= e.d <= hi + 1e-9):
            raise ScenarioError(f"ego d={e.d} outside its corridor [{lo}, {hi}] at t=0")
        if not (0.0 <= e.s <= self.path.length):
            raise ScenarioError("ego s outside the reference path")
        if self.corridor is not None:
            c = self.corridor
            if c.ndim != 2 or c.shape[1] != 3 or np.any(np.diff(c[:, 0]) <= 0) or np.any(c[:, 1] >= c[:, 2]):
                raise ScenarioError("corridor rows must be (t, d_lo, d_hi) with increasing t and d_lo < d_hi")
            if np.any(c[:, 1] < self.d_lower - 1e-9) or np.any(c[:, 2] > self.d_upper + 1e-9):
                raise ScenarioError("corridor leaves the road")
        ids = [a.id for a in self.actors]
        if len(set(ids)) != len(ids):
            raise ScenarioError("duplicate actor ids")
        for a in self.actors:
            if abs(a.t_s - self.t_s) > 1e-12:
                raise ScenarioError(f"actor {a.id} sampled at {a.t_s} s, scenario uses {self.t_s} s")
            if a.n_samples < n + 1:
                raise ScenarioError(f"actor {a.id} track does not cover the scenario duration")
            if np.any(a.d < self.d_lower - 1e-9) or np.any(a.d > self.d_upper + 1e-9):
                raise ScenarioError(f"actor {a.id} leaves the road")

    # -- serialization -------------------------------------------------------------

    def to_json(self) -> dict:
        r = self.regs
        return {
            "format": FORMAT,
            "id": self.id,
            "path": self.path.points.tolist(),
            "d_lower": self.d_lower,
            "lane_width": self.lane_width,
            "lanes": self.lanes,
            "ego": {"s": self.ego_init.s, "d": self.ego_init.d,
                    "s_dot": self.ego_init.s_dot, "d_dot": self.ego_init.d_dot},
            "regs": {"s_safe": r.s_safe, "a_max_long": r.a_max_long, "a_max_lat": r.a_max_lat,
                     "v_max": r.v_max, "v_min": r.v_min, "v_rec": r.v_rec},
            "task": self.task.value,
            "duration": self.duration,
            "t_s": self.t_s,
            "corridor": None if self.corridor is None else self.corridor.tolist(),
            "meta": self.meta,
            "actors": [{"id": a.id, "s": a.s.tolist(), "d": a.d.tolist()} for a in self.actors],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scenario":
        if not isinstance(obj, dict) or obj.get("format") != FORMAT:
            raise ScenarioError(f"not a scenario file of format {FORMAT}")
        try:
            t_s = float(obj["t_s"])
            e = obj["ego"]
            return cls(
                id=str(obj["id"]),
                path=ReferencePath(obj["path"]),
                d_lower=float(obj["d_lower"]),
                lane_width=float(obj["lane_width"]),
                lanes=int(obj["lanes"]),
                ego_init=FrenetState(float(e["s"]), float(e["d"]), float(e["s_dot"]), float(e["d_dot"])),
                actors=[ActorTrack(str(a["id"]), t_s, a["s"], a["d"]) for a in obj["actors"]],
                regs=SafetyParams(**obj["regs"]),
                task=Task(obj["task"]),
                duration=float(obj["duration"]),
                t_s=t_s,
                corridor=obj.get("corridor"),
                meta=dict(obj.get("meta") or {}),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"malformed scenario: {exc!r}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def load_scenario(path) -> Scenario:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return Scenario.from_json(obj)


# -- generators ----------------------------------------------------------------------


def gen_traffic(density: str, seed: int, *, regs: SafetyParams | None = None, duration: float = 10.0,
                t_s: float = 0.1, lanes: int = 3, lane_width: float = 3.6, window: float = 150.0,
                max_tries: int = 200) -> Scenario:
    """Random highway snapshot with constant-velocity vehicles.

    ``N_A + 1`` vehicles are placed on a ``window``-long stretch with same-lane
    gaps of at least ``s_safe``; one of them, chosen at random, becomes the ego.
    """
    if density not in DENSITY_BANDS:
        raise ValueError(f"density must be one of {sorted(DENSITY_BANDS)}")
    regs = regs or SafetyParams()
    rng = np.random.default_rng(seed)
    lo, hi = DENSITY_BANDS[density]
    n_actors = int(rng.integers(lo, hi + 1))
    start = 100.0
    placed: list[tuple[int, float]] = []
    for _ in range(n_actors + 1):
        for _ in range(max_tries):
            lane = int(rng.integers(0, lanes))
            s = float(start + rng.uniform(0.0, window))
            if all(l != lane or abs(s - s2) >= regs.s_safe for l, s2 in placed):
                placed.append((lane, s))
                break
        else:
            raise PlacementFailure(f"could not place {n_actors + 1} vehicles with gap {regs.s_safe} m")
    speeds = rng.uniform(regs.v_min, regs.v_max, size=len(placed))
    ego_idx = int(rng.integers(0, len(placed)))
    d_lower = -0.5 * lane_width
    center = lambda lane: d_lower + (lane + 0.5) * lane_width
    path_len = start + window + regs.v_max * duration + 200.0
    ego_lane, ego_s = placed[ego_idx]
    actors = []
    for i, ((lane, s), v) in enumerate(zip(placed, speeds)):
        if i == ego_idx:
            continue
        actors.append(ActorTrack.constant_velocity(f"a{len(actors) + 1}", s, center(lane), float(v),
                                                   duration, t_s))
    return Scenario(
        id=f"{density}-{seed}",
        path=straight_path(path_len),
        d_lower=d_lower, lane_width=lane_width, lanes=lanes,
        ego_init=FrenetState(ego_s, center(ego_lane), float(speeds[ego_idx]), 0.0),
        actors=actors, regs=regs, task=Task.DTT, duration=duration, t_s=t_s,
        meta={"density": density, "seed": seed},
    )


KMH = 1.0 / 3.6


def builtin_merging(duration: float = 10.0, t_s: float = 0.1) -> Scenario:
    """On-ramp merge: the ego lane (lane 0) ends about 100 m ahead.

    The corridor keeps the whole ego lane plus the highway lane available,
    then lifts its lower edge to the highway lane as the ramp runs out.
    """
    w = 3.6
    ego_s = 50.0
    lane_end = ego_s + 100.0
    regs = SafetyParams(s_safe=10.0, a_max_long=2.0, a_max_lat=15.0,
                        v_max=100 * KMH, v_min=40 * KMH, v_rec=60 * KMH)
    corridor = [[0.0, -0.6, w + 0.6], [1.0, -0.6, w + 0.6], [4.0, w - 0.6, w + 0.6],
                [duration, w - 0.6, w + 0.6]]
    actors = [
        ActorTrack.constant_velocity("merge_lane_actor", ego_s + 8.0, w, 70 * KMH, duration, t_s),
        ActorTrack.constant_velocity("adjacent_actor", ego_s - 10.0, 2 * w, 75 * KMH, duration, t_s),
    ]
    return Scenario(
        id="merging", path=straight_path(ego_s + 400.0), d_lower=-0.5 * w, lane_width=w, lanes=3,
        ego_init=FrenetState(ego_s, 0.0, 50 * KMH, 0.0), actors=actors, regs=regs, task=Task.FSPS,
        duration=duration, t_s=t_s, corridor=corridor,
        meta={"lane_end_s": lane_end, "target_lane": 1, "tracked_actor": "merge_lane_actor"},
    )


def builtin_exit(duration: float = 10.0, t_s: float = 0.1) -> Scenario:
    """Highway exit: ego in the exit lane (lane 0) behind a lead that slows and exits."""
    w = 3.6
    ego_s = 50.0
    regs = SafetyParams(s_safe=10.0, a_max_long=2.0, a_max_lat=1.5,
                        v_max=100 * KMH, v_min=30 * KMH, v_rec=50 * KMH)
    lead = ActorTrack.scripted("exiting_lead", ego_s + 25.0, 0.0, 55 * KMH,
                               [{"duration": 2.0}, {"duration": 1.5, "v": 50 * KMH}], duration, t_s)
    actors = [lead,
              ActorTrack.constant_velocity("adjacent_actor", ego_s - 5.0, w, 75 * KMH, duration, t_s)]
    corridor = [[0.0, -0.6, 0.6], [duration, -0.6, 0.6]]
    return Scenario(
        id="exit", path=straight_path(ego_s + 400.0), d_lower=-0.5 * w, lane_width=w, lanes=3,
        ego_init=FrenetState(ego_s, 0.0, 80 * KMH, 0.0), actors=actors, regs=regs, task=Task.FSPS,
        duration=duration, t_s=t_s, corridor=corridor,
        meta={"target_lane": 0, "tracked_actor": "exiting_lead"},
    )


BUILTINS = {"merging": builtin_merging, "exit": builtin_exit}
