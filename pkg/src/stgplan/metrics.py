"""Trajectory scores: risk, discomfort, travelled distance, and batch medians."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .potential import LengthMismatch, PotentialParams, u_obstacles


class TooShort(ValueError):
    pass


def _sd(traj):
    if hasattr(traj, "states"):
        return traj.s, traj.d
    s, d = traj
    return np.asarray(s, dtype=np.float64), np.asarray(d, dtype=np.float64)


def _trapz_mean(y: np.ndarray, t_s: float, T: float | None) -> float:
    span = (len(y) - 1) * t_s
    T = span if T is None else T
    if not T > 0:
        raise ValueError("averaging time must be positive")
    area = t_s * (0.5 * y[0] + y[1:-1].sum() + 0.5 * y[-1])
    return float(area / T)


def risk(traj, actors, potential_params: PotentialParams = PotentialParams(), T: float | None = None,
         t_s: float | None = None) -> float:
    """Time-averaged obstacle potential along the trajectory (trapezoidal rule).

    ``actors`` has shape (A, K, 2) with the same K samples as the trajectory.
    """
    s, d = _sd(traj)
    t_s = t_s if t_s is not None else traj.t_s
    acts = np.asarray(actors, dtype=np.float64)
    if acts.size == 0:
        return 0.0
    if acts.ndim != 3 or acts.shape[1] != len(s):
        raise LengthMismatch(f"actors shaped {acts.shape}, trajectory has {len(s)} samples")
    uo = u_obstacles((s, d), np.swapaxes(acts, 0, 1), potential_params)
    return _trapz_mean(uo, t_s, T)


def jerk(x: np.ndarray, h: float) -> np.ndarray:
    """Third derivative by finite differences.

    Interior samples use the 5-point central stencil; the two samples at each
    end use the third difference of the nearest 4-sample window.
    """
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 4:
        raise TooShort(f"jerk needs at least 4 samples, got {n}")
    third = (x[3:] - 3 * x[2:-1] + 3 * x[1:-2] - x[:-3]) / h ** 3     # 4-sample window starting at j
    out = third[np.clip(np.arange(n) - 1, 0, n - 4)]
    if n >= 5:
        out[2:n - 2] = (-x[:-4] + 2 * x[1:-3] - 2 * x[3:-1] + x[4:]) / (2 * h ** 3)
    return out


def discomfort(traj, T: float | None = None, t_s: float | None = None) -> float:
    """Time-averaged magnitude of the combined longitudinal/lateral jerk."""
    s, d = _sd(traj)
    t_s = t_s if t_s is not None else traj.t_s
    if len(s) < 4:
        raise TooShort(f"discomfort needs at least 4 samples, got {len(s)}")
    j = np.hypot(jerk(s, t_s), jerk(d, t_s))
    return _trapz_mean(j, t_s, T)


def longitudinal_distance(traj) -> float:
    s, _ = _sd(traj)
    return float(s[-1] - s[0])


@dataclass
class RunResult:
    scenario_id: str
    planner: str
    feasible: bool
    discomfort: float = math.nan
    risk: float = math.nan
    distance: float = math.nan
    traffic: str = ""
    note: str = ""


@dataclass
class ReportRow:
    traffic: str
    planner: str
    runs: int
    feasibility: float
    discomfort: float
    risk: float
    distance: float


@dataclass
class Report:
    rows: list[ReportRow]
    results: list[RunResult]

    def table(self) -> str:
        head = ["traffic", "planner", "runs", "feasible", "discomfort", "risk", "distance"]
        body = [[r.traffic, r.planner, str(r.runs), f"{r.feasibility:.2f}", f"{r.discomfort:.4f}",
                 f"{r.risk:.4f}", f"{r.distance:.2f}"] for r in self.rows]
        widths = [max(len(x) for x in col) for col in zip(head, *body)]
        fmt = lambda row: "  ".join(x.rjust(w) for x, w in zip(row, widths))
        return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in body])

    def write_runs_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario_id", "planner", "feasible", "discomfort", "risk", "distance"])
            for r in self.results:
                w.writerow([r.scenario_id, r.planner, int(r.feasible), repr(r.discomfort), repr(r.risk),
                            repr(r.distance)])

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(asdict(self.rows[0]).keys()) if self.rows else [])
            for r in self.rows:
                w.writerow(list(asdict(r).values()))


def batch_report(results: Sequence[RunResult]) -> Report:
    """Medians over feasible runs and feasibility rate per (traffic, planner)."""
    results = list(results)
    if not results:
        raise ValueError("empty batch")
    groups: dict[tuple[str, str], list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.traffic, r.planner), []).append(r)
    rows = []
    for (traffic, planner), rs in groups.items():
        ok = [r for r in rs if r.feasible]
        med = lambda key: float(np.median([getattr(r, key) for r in ok])) if ok else math.nan
        rows.append(ReportRow(traffic, planner, len(rs), len(ok) / len(rs),
                              med("discomfort"), med("risk"), med("distance")))
    return Report(rows, results)
