"""Acceptance criteria 1-12. Each test records one PASS/FAIL line, shown in the terminal summary.

Criteria 10 and 12 are informational: they print their numbers and write plot data to
``acceptance_out/`` (override with ``STG_ACCEPTANCE_OUT``) but do not fail the suite.
"""
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import (ACCEPTANCE_LINES, TABLE_PARAMS, TRUTH_TABLE, check_grad, dense_arc_oracle, oversampled_risk,
                     random_smooth_scene, rollout_fd_check, sampled_risk, table_neighbors)
from stgplan import diffcore as dc
from stgplan.baseline import (Infeasible, ellipses_overlap, generate_candidates, plan_baseline, target_grid)
from stgplan.behavior import NeighborState, SafetyParams, Task, identify_neighbors, kinematic_constraints
from stgplan.cli import evaluate, main
from stgplan.config import Settings
from stgplan.gatnet import GatParams, readout
from stgplan.metrics import RunResult, batch_report, discomfort, jerk, longitudinal_distance, risk
from stgplan.planner import PlanConfig, _compile, plan, plan_batch, rollout, rollout_loss
from stgplan.potential import PotentialParams, u_obstacles, u_velocity
from stgplan.refpath import FrenetState, arc_path, straight_path
from stgplan.scenario import (DENSITY_BANDS, ActorTrack, Scenario, builtin_exit, builtin_merging, gen_traffic)

KMH = 1 / 3.6
OUT = Path(os.environ.get("STG_ACCEPTANCE_OUT", Path(__file__).resolve().parent.parent / "acceptance_out"))


def verdict(n, ok, detail, gated=True):
    tag = "PASS" if ok else ("FAIL" if gated else "FAIL (report-only)")
    ACCEPTANCE_LINES.append(f"criterion {n}: {tag} - {detail}")
    print(ACCEPTANCE_LINES[-1])
    if gated:
        assert ok, detail


def same_lane_gap(sc, traj):
    """Smallest longitudinal distance to an actor sharing the ego's lane at the same step."""
    gap = math.inf
    for a in sc.actors:
        for k in range(len(traj)):
            if sc.lane_of(traj.d[k]) == sc.lane_of(a.d[k]):
                gap = min(gap, abs(a.s[k] - traj.s[k]))
    return gap


# -- 1 and 10: generated batches --------------------------------------------------------------------

@pytest.fixture(scope="module")
def stg_batches():
    cfg = PlanConfig()
    out = {}
    for density in sorted(DENSITY_BANDS):
        scs = [gen_traffic(density, seed) for seed in range(100)]
        t0 = time.perf_counter()
        trajs = plan_batch(scs, cfg, seeds=list(range(100))).trajectories
        out[density] = (scs, trajs, time.perf_counter() - t0)
    return out


def independent_bounds_violations(sc, traj):
    """Re-check road bounds and speed bounds from the scenario and the raw states."""
    n = len(traj) - 1
    ks = np.arange(1, n + 1)
    lo, hi = sc.ego_bounds(ks * sc.t_s)
    d, v = traj.d[1:], np.diff(traj.s) / traj.t_s
    bad = int(np.sum((d < lo - 1e-9) | (d > hi + 1e-9)))
    bad += int(np.sum((v < traj.speed_window[:, 0] - 1e-9) | (v > traj.speed_window[:, 1] + 1e-9)))
    bad += int(np.sum(v > traj.speed_limits[:, 1] + 1e-9))
    bad += int(np.sum(v > sc.regs.v_max + 1e-9) * (not np.any(traj.lead_breach)))
    return bad


def test_criterion_01_feasibility_by_construction(stg_batches):
    lines, ok = [], True
    for density, (scs, trajs, secs) in stg_batches.items():
        bad = [sc.id for sc, t in zip(scs, trajs)
               if len(t) != 51 or not t.feasible or independent_bounds_violations(sc, t)]
        ok &= not bad and secs < 600.0
        lines.append(f"{density} {100 - len(bad)}/100 feasible in {secs:.0f}s")
    verdict(1, ok, "; ".join(lines) + " (N=50, iters=200, r=8)")


def test_criterion_10_comparative_report(stg_batches):
    settings = Settings()
    scs, trajs, _ = stg_batches["medium"]
    results = [evaluate(sc, t, settings, traffic="medium") for sc, t in zip(scs, trajs)]
    for sc in scs:
        try:
            results.append(evaluate(sc, plan_baseline(sc, settings.plan), settings, traffic="medium"))
        except Infeasible as exc:
            results.append(RunResult(sc.id, "baseline", False, traffic="medium", note=str(exc)))
    rep = batch_report(results)
    OUT.mkdir(parents=True, exist_ok=True)
    rep.write_runs_csv(OUT / "bench_medium_runs.csv")
    rep.write_summary_csv(OUT / "bench_medium_report.csv")
    (OUT / "bench_medium_report.txt").write_text(rep.table() + "\n")
    print("\n" + rep.table())
    rows = {r.planner: r for r in rep.rows}
    stg, base = rows["stg"], rows["baseline"]
    order = ", ".join(f"{k} {'stg' if getattr(stg, k) < getattr(base, k) else 'baseline'} lower"
                      for k in ("risk", "discomfort"))
    dist = "stg farther" if stg.distance > base.distance else "baseline farther"
    verdict(10, len(rep.rows) == 2,
            f"medium x100: feasible stg {stg.feasibility:.2f} / baseline {base.feasibility:.2f}; "
            f"risk {stg.risk:.3g} vs {base.risk:.3g}; discomfort {stg.discomfort:.3g} vs {base.discomfort:.3g}; "
            f"distance {stg.distance:.1f} vs {base.distance:.1f} ({order}, {dist})", gated=False)


# -- 2 ---------------------------------------------------------------------------------------------

def _op_cases():
    rng = np.random.default_rng(0)
    x = rng.normal(size=6)
    x = x + np.sign(x) * 0.05
    y = rng.normal(size=6)
    y = np.where(np.abs(x - y) < 0.05, y + 0.2, y)
    w6 = rng.normal(size=6)
    unary = {
        "exp": lambda a: dc.exp(a), "log": lambda a: dc.log(a * a + 0.5), "sqrt": lambda a: dc.sqrt(a * a + 0.5),
        "abs": dc.absolute, "leaky_relu": dc.leaky_relu, "elu": dc.elu, "softmax": dc.softmax,
        "norm_last": lambda a: dc.norm_last(dc.reshape(a, (2, 3))),
        "clamp": lambda a: dc.clamp(a, -0.5, 0.5), "getitem": lambda a: a[np.array([0, 0, 5])],
        "lerp_nodes": lambda a: dc.lerp_nodes(a[:3], a[3:], 5),
        "reduce_sum": lambda a: dc.reduce_sum(dc.reshape(a, (2, 3)), axis=0),
    }
    binary = {
        "add": dc.add, "sub": dc.sub, "mul": dc.mul, "div": lambda a, b: dc.div(a, b * b + 0.5),
        "pow": lambda a, b: (a * a + 0.5) ** b, "minimum": dc.minimum, "maximum": dc.maximum,
        "matmul": lambda a, b: dc.matmul(dc.reshape(a, (2, 3)), dc.reshape(b, (3, 2))),
        "concat": lambda a, b: dc.concat([a, b], axis=0), "stack": lambda a, b: dc.stack([a, b], axis=1),
    }
    clamp_x = np.where(np.abs(np.abs(x) - 0.5) < 0.05, x + 0.1, x)
    cases = []
    for name, f in unary.items():
        arg = clamp_x if name == "clamp" else x
        wt = rng.normal(size=np.shape(f(dc.Tensor(arg)).value))
        cases.append((name, lambda a, f=f, wt=wt: (f(a) * wt).sum(), [arg]))
    for name, f in binary.items():
        wt = rng.normal(size=np.shape(f(dc.Tensor(x), dc.Tensor(y)).value))
        cases.append((name, lambda a, b, f=f, wt=wt: (f(a, b) * wt).sum(), [x, y]))
    cases.append(("composite", lambda a: (dc.elu(a * w6) * dc.softmax(a)).sum(), [x]))
    return cases


def test_criterion_02_gradient_integrity():
    failures = []
    for name, fn, args in _op_cases():
        try:
            check_grad(fn, args, tol=1e-6)
        except AssertionError:
            failures.append(name)
    sc = Scenario(id="road", path=straight_path(600.0), d_lower=-1.8, lane_width=3.6, lanes=3,
                  ego_init=FrenetState(20.0, 0.0, 27.0, 0.0),
                  actors=[ActorTrack.constant_velocity("lead", 45.0, 0.0, 22.0, 6.0),
                          ActorTrack.constant_velocity("side", 15.0, 3.6, 26.0, 6.0)],
                  regs=SafetyParams(s_safe=10.0, a_max_long=2.0, a_max_lat=1.5, v_max=30.0, v_min=15.0),
                  task="DTT", duration=6.0)
    cfg = PlanConfig(horizon=5, iters=1, detach_risk=False)
    p = GatParams.init(cfg.network, 3)
    batch = _compile([sc], [sc.ego_init], [0], cfg)
    _, grads = rollout_loss(p, batch, cfg)
    try:
        rollout_fd_check(lambda: rollout(p, batch, cfg).u_total.value[0], p, grads)
    except AssertionError as exc:
        failures.append(f"rollout {exc}")
    verdict(2, not failures, f"{len(_op_cases())} per-op checks < 1e-6, N=5 rollout over 24 parameters < 1e-4"
            + (f"; failed: {failures}" if failures else ""))


# -- 3 ---------------------------------------------------------------------------------------------

def test_criterion_03_readout_convexity():
    rng = np.random.default_rng(3)
    n = 10_000
    logits = rng.normal(0.0, rng.uniform(0.1, 30.0, (n, 1)), (n, 10))
    vs = rng.uniform(-60, 60, (n, 5))
    vd = rng.uniform(-6, 6, (n, 5))
    y, ws, wd = readout(logits, vs, vd)
    y = y.value
    inside = ((y[:, 0] >= vs.min(1)) & (y[:, 0] <= vs.max(1)) & (y[:, 1] >= vd.min(1)) & (y[:, 1] <= vd.max(1)))
    sums = np.concatenate([ws.value.sum(1), wd.value.sum(1)])
    err = float(np.max(np.abs(sums - 1.0)))
    verdict(3, bool(inside.all()) and err <= 1e-9, f"{int(inside.sum())}/{n} inside hull, max |sum w - 1| = {err:.1e}")


# -- 4 ---------------------------------------------------------------------------------------------

def test_criterion_04_behavioral_truth_table():
    params = SafetyParams(**TABLE_PARAMS)
    bad = []
    for task in (Task.DTT, Task.FSPS):
        for key, (dec, acc, smax, smin, dd, v_rec) in TRUTH_TABLE.items():
            kc = kinematic_constraints(params, NeighborState(**table_neighbors(*key)), task)
            got = (kc.s_ddot_dec_max, kc.s_ddot_acc_max, kc.s_dot_max, kc.s_dot_min, kc.d_ddot_max, kc.v_rec)
            want = (dec, acc, smax, smin, dd, v_rec if task is Task.FSPS else None)
            if got != want:
                bad.append((task.value, key, got, want))
    verdict(4, not bad, f"{2 * len(TRUTH_TABLE) - len(bad)}/{2 * len(TRUTH_TABLE)} rows match" + (f"; {bad}" if bad else ""))


# -- 5 and 6 ---------------------------------------------------------------------------------------

def test_criterion_05_merging():
    sc = builtin_merging()
    t0 = time.perf_counter()
    traj = plan(sc, PlanConfig())
    secs = time.perf_counter() - t0
    v = np.diff(traj.s) / traj.t_s
    before_end = traj.s[1:] < sc.meta["lane_end_s"]
    target = 60 * KMH
    reached = bool(np.any(before_end & (np.abs(v - target) <= 0.1 * target)))
    lane = sc.lane_of(traj.d[-1])
    gap = same_lane_gap(sc, traj)
    ok = reached and lane == sc.meta["target_lane"] and gap >= sc.regs.s_safe and secs <= 60.0 and traj.feasible
    verdict(5, ok, f"speed {v[before_end].max() / KMH:.1f} km/h before lane end, final lane {lane}, "
                   f"min same-lane gap {gap:.1f} m, {secs:.1f}s")


def test_criterion_06_exit():
    sc = builtin_exit()
    traj = plan(sc, PlanConfig())
    v = np.diff(traj.s) / traj.t_s
    final = v[-1]
    lane = sc.lane_of(traj.d[-1])
    gap = same_lane_gap(sc, traj)
    decelerates = v[-1] < v[0]
    ok = (abs(final - 50 * KMH) <= 0.1 * 50 * KMH and lane == sc.meta["target_lane"] and gap >= sc.regs.s_safe
          and decelerates and traj.feasible)
    verdict(6, ok, f"{v[0] / KMH:.1f} -> {final / KMH:.1f} km/h, final lane {lane}, min gap {gap:.1f} m")


# -- 7 ---------------------------------------------------------------------------------------------

def test_criterion_07_metric_oracles():
    t = np.arange(51) * 0.1
    dis = discomfort((t ** 3, np.zeros(51)), t_s=0.1)
    p = PotentialParams()
    errs = []
    for seed in range(20):
        ego, actors = random_smooth_scene(np.random.default_rng(100 + seed))
        ref = oversampled_risk(ego, actors, p)
        errs.append(abs(sampled_risk(ego, actors, p) - ref) / ref)
    zero = (risk((20 * t, np.zeros(51)), np.zeros((0, 51, 2)), t_s=0.1) == 0.0
            and discomfort((20 * t + 3, np.ones(51)), t_s=0.1) < 1e-9
            and longitudinal_distance((np.full(51, 4.0), np.zeros(51))) == 0.0
            and np.max(np.abs(jerk(np.zeros(51), 0.1))) == 0.0)
    ok = abs(dis - 6.0) <= 0.06 and max(errs) < 5e-3 and zero
    verdict(7, ok, f"discomfort(t^3) = {dis:.6f}, risk vs 10x quadrature max rel err {max(errs):.2e} "
                   f"over 20 scenes, zero cases exact: {zero}")


# -- 8 ---------------------------------------------------------------------------------------------

def test_criterion_08_frenet_round_trip():
    path = arc_path(50.0, np.pi / 2, n_segments=200)
    rng = np.random.default_rng(8)
    s = rng.uniform(0.0, path.length, 1000)
    d = rng.uniform(-4.0, 4.0, 1000)
    back = np.array([path.to_frenet(q) for q in path.to_cartesian(s, d)])
    rt = float(np.max(np.hypot(back[:, 0] - s, back[:, 1] - d)))
    fine = arc_path(50.0, np.pi / 2, n_segments=2000)
    proj = 0.0
    for _ in range(50):
        ang = -np.pi / 2 + rng.uniform(0.05, np.pi / 2 - 0.05)
        point = (50.0 + rng.uniform(-4, 4)) * np.array([np.cos(ang), np.sin(ang)])
        got, want = fine.to_frenet(point), dense_arc_oracle(point, 50.0, np.pi / 2)
        proj = max(proj, abs(got[0] - want[0]), abs(got[1] - want[1]))
    verdict(8, rt < 1e-6 and proj < 1e-3, f"round trip max {rt:.1e} m over 1000 points, projection max {proj:.1e} m")


# -- 9 ---------------------------------------------------------------------------------------------

def _oracle_cost(c, actors, p, cap):
    total = []
    for k in range(1, len(c.s)):
        uo = float(u_obstacles((c.s[k], c.d[k]), actors[:, k], p)) if len(actors) else 0.0
        v = max((c.s[k] - c.s[k - 1]) / 0.1, 0.1)
        total += [uo, float(u_velocity(uo, v, cap, p))]
    return math.fsum(total)


def _oracle_ok(c, kc, actors, lo, hi):
    """Bounds via finite differences of the sampled path (mean-value sandwich) plus exact overlap."""
    h = 0.1
    v = np.diff(c.s) / h
    a = np.diff(c.s, 2) / h ** 2
    ad = np.diff(c.d, 2) / h ** 2
    tol = 1e-6
    if np.any(v < kc.s_dot_min - tol) or np.any(v > kc.s_dot_max + tol):
        return False
    if np.any(a < -kc.s_ddot_dec_max - tol) or np.any(a > kc.s_ddot_acc_max + tol):
        return False
    if np.any(np.abs(ad) > kc.d_ddot_max + tol) or np.any(c.d < lo - 1e-9) or np.any(c.d > hi + 1e-9):
        return False
    return not (len(actors) and np.any(ellipses_overlap(actors[:, :, 0] - c.s, actors[:, :, 1] - c.d)))


def test_criterion_09_baseline_soundness():
    checked, problems, infeasible = 0, [], 0
    p = PotentialParams()
    for seed in range(12):
        sc = gen_traffic(sorted(DENSITY_BANDS)[seed % 3], seed)
        ks = np.arange(51)
        ego = sc.ego_init
        kc = kinematic_constraints(sc.regs, identify_neighbors(ego, [a.state(0) for a in sc.actors], sc.lane_of),
                                   sc.task)
        lo, hi = sc.ego_bounds(ks * sc.t_s)
        d_targets = [sc.lane_center(i) for i in range(sc.lanes) if lo[-1] - 1e-9 <= sc.lane_center(i) <= hi[-1] + 1e-9]
        cands = generate_candidates(ego, target_grid(d_targets, kc.s_dot_min, kc.s_dot_max))
        actors = np.stack([np.stack([a.s[ks], a.d[ks]], axis=-1) for a in sc.actors])
        costs = [(_oracle_cost(c, actors, p, kc.s_dot_max), i) for i, c in enumerate(cands)
                 if _oracle_ok(c, kc, actors, lo, hi)]
        try:
            traj = plan_baseline(sc, PlanConfig())
        except Infeasible:
            infeasible += 1
            if costs:
                problems.append(f"{sc.id}: Infeasible but the oracle keeps {len(costs)} candidates")
            continue
        checked += 1
        best_cost, best = min(costs)
        if not np.allclose(traj.s, cands[best].s, atol=1e-9) or not np.allclose(traj.d, cands[best].d, atol=1e-9):
            problems.append(f"{sc.id}: not the oracle minimum")
        if abs(traj.u_total - best_cost) > 1e-9 * best_cost:
            problems.append(f"{sc.id}: cost {traj.u_total} vs oracle {best_cost}")
        if not _oracle_ok(cands[best], kc, actors, lo, hi) or not traj.feasible:
            problems.append(f"{sc.id}: bounds violated")
    # all lanes walled off by stopped vehicles just ahead; the ego must keep at least v_min
    wall = [ActorTrack.constant_velocity(f"w{i}", 32.0, 3.6 * i, 0.0, 6.0) for i in range(3)]
    blocked = Scenario(id="blocked", path=straight_path(600.0), d_lower=-1.8, lane_width=3.6, lanes=3,
                       ego_init=FrenetState(20.0, 0.0, 20.0, 0.0), actors=wall,
                       regs=SafetyParams(s_safe=10.0, a_max_long=2.0, a_max_lat=1.5, v_max=30.0, v_min=15.0),
                       task="DTT", duration=6.0)
    try:
        plan_baseline(blocked, PlanConfig())
        problems.append("blocked scenario returned a plan")
    except Infeasible as exc:
        if sum(exc.counts.values()) == 0:
            problems.append(f"blocked counts {exc.counts}")
    verdict(9, not problems and checked >= 6,
            f"{checked} plans match the exhaustive oracle, {infeasible} agreed Infeasible, blocked road raises Infeasible"
            + (f"; {problems}" if problems else ""))


# -- 11 --------------------------------------------------------------------------------------------

def test_criterion_11_determinism(tmp_path):
    mismatches = []
    runs = [["--builtin", "exit"], ["--density", "high", "--seed", "5"], ["--builtin", "merging", "--planner", "baseline"]]
    for i, extra in enumerate(runs):
        a, b, r = (tmp_path / f"{i}{x}" for x in "abr")
        for out in (a, b):
            assert main(["run", *extra, "--iters", "30", "--out-dir", str(out)]) == 0
        assert main(["replay", str(a / "manifest.json"), "--out-dir", str(r)]) == 0
        recorded = json.loads((a / "manifest.json").read_text())["outputs"]
        for name in recorded:
            blobs = {(d / name).read_bytes() for d in (a, b, r)}
            if len(blobs) != 1:
                mismatches.append(f"{extra} {name}")
    verdict(11, not mismatches, f"{len(runs)} runs repeated and replayed from their manifests, all outputs "
                                "bit-identical" if not mismatches else f"differs: {mismatches}")


# -- 12 --------------------------------------------------------------------------------------------

def test_criterion_12_exit_attention():
    sc = builtin_exit()
    trajs = plan_batch([sc] * 10, PlanConfig(), seeds=list(range(10))).trajectories
    tail = int(round(2.0 / sc.t_s))
    series = np.array([[step["exiting_lead"] for step in t.attention_log] for t in trajs])
    rising = [bool(np.all(np.diff(row[-tail:]) >= 0.0)) for row in series]
    OUT.mkdir(parents=True, exist_ok=True)
    with open(OUT / "exit_attention.csv", "w") as fh:
        fh.write("t," + ",".join(f"seed{i}" for i in range(10)) + "\n")
        for k in range(series.shape[1]):
            fh.write(f"{(k + 1) * sc.t_s:.1f}," + ",".join(repr(float(x)) for x in series[:, k]) + "\n")
    assert all(t.feasible for t in trajs)
    verdict(12, sum(rising) >= 8,
            f"alpha(ego, exiting lead) non-decreasing over the final 2 s in {sum(rising)}/10 seeds "
            f"(tail change per seed: {', '.join(f'{x:+.3f}' for x in series[:, -1] - series[:, -tail])}); "
            f"plot data in {OUT / 'exit_attention.csv'}", gated=False)
