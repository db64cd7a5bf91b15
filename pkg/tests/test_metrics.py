import math

import numpy as np
import pytest

from oracles import oversampled_risk, random_smooth_scene, sampled_risk
from stgplan.metrics import (Report, RunResult, TooShort, batch_report, discomfort, jerk, longitudinal_distance,
                             risk)
from stgplan.potential import LengthMismatch, PotentialParams, u_lat

H = 0.1
T5 = np.arange(51) * H


def test_risk_without_actors_is_zero():
    assert risk((T5 * 20, np.zeros(51)), np.zeros((0, 51, 2)), t_s=H) == 0.0


def test_constant_obstacle_potential():
    # actor moving with the ego at a fixed offset: U_o is constant
    s, d = 20 * T5, np.zeros(51)
    acts = np.stack([s + 7.0, d + 1.5], axis=-1)[None]
    c = u_lat(7.0, 1.5)
    assert abs(risk((s, d), acts, t_s=H) - c) < 1e-12 * c


def test_risk_length_mismatch():
    with pytest.raises(LengthMismatch):
        risk((T5, T5), np.zeros((1, 50, 2)), t_s=H)


@pytest.mark.parametrize("seed", range(10))
def test_risk_matches_oversampled_quadrature(seed):
    p = PotentialParams()
    ego, actors = random_smooth_scene(np.random.default_rng(seed))
    ref = oversampled_risk(ego, actors, p)
    assert abs(sampled_risk(ego, actors, p) - ref) < 5e-3 * ref


def test_risk_quadrature_converges_on_close_passes():
    # closer than the safety gap the 0.1 s grid under-resolves U_o, but the error is second order
    p = PotentialParams()
    ego, actors = random_smooth_scene(np.random.default_rng(13), clearance=0.0)
    ref = oversampled_risk(ego, actors, p, factor=40)
    errs = [abs(sampled_risk(ego, actors, p, h) - ref) for h in (0.1, 0.05, 0.025)]
    assert errs[1] < errs[0] / 3 and errs[2] < errs[1] / 3


def test_zero_jerk_profiles():
    assert discomfort((20 * T5 + 3, np.full(51, 1.0)), t_s=H) < 1e-9
    assert discomfort((0.5 * 2.0 * T5 ** 2 + 20 * T5, 0.1 * T5 ** 2), t_s=H) < 1e-8


def test_cubic_has_unit_jerk_six():
    assert abs(discomfort((T5 ** 3, np.zeros(51)), t_s=H) - 6.0) < 0.06
    # every sample, including the one-sided ends, is exact for a cubic
    for n in (4, 5, 6, 51):
        t = np.arange(n) * H
        assert np.allclose(jerk(t ** 3, H), 6.0, rtol=0, atol=1e-6)


def test_jerk_on_a_quartic_interior():
    # s = t^4 has jerk 24 t; the central stencil is exact for quartics
    j = jerk(T5 ** 4, H)
    assert np.allclose(j[2:-2], 24 * T5[2:-2], atol=1e-6)


def test_too_short():
    with pytest.raises(TooShort):
        discomfort((np.zeros(3), np.zeros(3)), t_s=H)


def test_distance():
    assert longitudinal_distance((np.full(51, 7.0), np.zeros(51))) == 0.0
    assert abs(longitudinal_distance((20 * T5, np.zeros(51))) - 100.0) < 1e-12
    rng = np.random.default_rng(3)
    s = np.cumsum(rng.uniform(0, 3, 51))
    assert longitudinal_distance((s, np.zeros(51))) == s[-1] - s[0]
    assert longitudinal_distance((-s, np.zeros(51))) < 0


def test_time_shift_invariance():
    rng = np.random.default_rng(2)
    s = np.cumsum(rng.uniform(1, 3, 51))
    d = np.cumsum(rng.normal(0, 0.05, 51))
    acts = rng.uniform(-5, 5, (2, 51, 2)) + np.stack([s, d], axis=-1) + [20.0, 0.0]

    class Shifted:
        def __init__(self, t0):
            self.states, self.t_s, self.t0 = [None] * 51, H, t0
            self.s, self.d = s, d

    for t0 in (0.0, 3.7):
        traj = Shifted(t0)
        assert discomfort(traj) == discomfort((s, d), t_s=H)
        assert risk(traj, acts) == risk((s, d), acts, t_s=H)


def test_metrics_are_non_negative():
    rng = np.random.default_rng(9)
    for _ in range(20):
        s, d = np.cumsum(rng.normal(2, 1, 51)), rng.normal(0, 1, 51)
        assert discomfort((s, d), t_s=H) >= 0
        assert risk((s, d), rng.normal(0, 10, (3, 51, 2)), t_s=H) >= 0


def test_report_medians_and_feasibility():
    rs = [RunResult(f"m-{i}", "stg", True, discomfort=float(i), risk=2.0 * i, distance=10.0 * i, traffic="medium")
          for i in range(5)]
    rs.append(RunResult("m-9", "stg", False, traffic="medium"))
    rs.append(RunResult("l-1", "stg", True, 1.5, 0.25, 80.0, traffic="low"))
    rep = batch_report(rs)
    med = next(r for r in rep.rows if r.traffic == "medium")
    assert (med.discomfort, med.risk, med.distance) == (2.0, 4.0, 20.0)
    assert med.runs == 6 and abs(med.feasibility - 5 / 6) < 1e-15
    low = next(r for r in rep.rows if r.traffic == "low")
    assert (low.discomfort, low.risk, low.distance, low.feasibility) == (1.5, 0.25, 80.0, 1.0)
    assert "medium" in rep.table() and "feasible" in rep.table().splitlines()[0]


def test_report_all_infeasible_and_files(tmp_path):
    rep = batch_report([RunResult("x", "baseline", False, traffic="high", note="Infeasible")])
    assert rep.rows[0].feasibility == 0.0 and math.isnan(rep.rows[0].risk)
    rep.write_runs_csv(tmp_path / "runs.csv")
    rep.write_summary_csv(tmp_path / "report.csv")
    assert (tmp_path / "runs.csv").read_text().splitlines()[0] == "scenario_id,planner,feasible,discomfort,risk,distance"
    with pytest.raises(ValueError):
        batch_report([])
    assert isinstance(rep, Report)
