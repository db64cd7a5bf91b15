"""Command line: ``stgplan run | bench | gen | replay``."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import Infeasible, plan_baseline
from .config import ConfigError, Settings, load_config
from .metrics import RunResult, batch_report, discomfort, longitudinal_distance, risk
from .planner import Trajectory, plan, plan_batch
from .scenario import BUILTINS, DENSITY_BANDS, Scenario, ScenarioError, gen_traffic, load_scenario


class UsageError(Exception):
    pass


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _scenario_bytes(sc: Scenario) -> bytes:
    return json.dumps(sc.to_json(), sort_keys=True).encode()


def _actors_window(sc: Scenario, traj: Trajectory) -> np.ndarray:
    k0 = int(round(traj.t0 / sc.t_s))
    ks = np.arange(k0, k0 + len(traj))
    if not sc.actors:
        return np.zeros((0, len(ks), 2))
    return np.stack([np.stack([a.s[ks], a.d[ks]], axis=-1) for a in sc.actors])


def evaluate(sc: Scenario, traj: Trajectory, settings: Settings, traffic: str = "") -> RunResult:
    return RunResult(
        scenario_id=sc.id, planner=traj.planner, feasible=traj.feasible,
        discomfort=discomfort(traj), risk=risk(traj, _actors_window(sc, traj), settings.plan.potential),
        distance=longitudinal_distance(traj), traffic=traffic,
    )


def metrics_line(r: RunResult, u_total: float) -> str:
    return (f"scenario={r.scenario_id} planner={r.planner} feasible={int(r.feasible)} "
            f"discomfort={r.discomfort!r} risk={r.risk!r} distance={r.distance!r} u_total={u_total!r}")


def parse_metrics_line(line: str) -> dict:
    out = {}
    for item in line.split():
        key, _, value = item.partition("=")
        try:
            out[key] = float(value)
        except ValueError:
            out[key] = value
    return out


def _settings(args) -> Settings:
    settings = load_config(args.config) if args.config else Settings()
    plan_cfg = settings.plan
    if args.seed is not None:
        plan_cfg = replace(plan_cfg, seed=args.seed)
    if args.iters is not None:
        plan_cfg = replace(plan_cfg, iters=args.iters)
    if args.warm_start:
        plan_cfg = replace(plan_cfg, warm_start=True)
    return replace(settings, plan=plan_cfg)


def _load_source(source: dict, settings: Settings) -> Scenario:
    kind = source["kind"]
    if kind == "builtin":
        if source["name"] not in BUILTINS:
            raise UsageError(f"unknown builtin {source['name']!r}; choose from {sorted(BUILTINS)}")
        return BUILTINS[source["name"]]()
    if kind == "file":
        return load_scenario(source["path"])
    if kind == "generated":
        return gen_traffic(source["density"], int(source["seed"]), regs=settings.safety)
    raise UsageError(f"unknown scenario source {kind!r}")


def _write_atomic(out_dir: Path, files: dict[str, bytes]) -> None:
    """Write all files into a staging directory first, then move them into place."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out_dir))
    try:
        for name, data in files.items():
            (stage / name).write_bytes(data)
        for name in files:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _versions() -> dict:
    return {"stgplan": __version__, "numpy": np.__version__, "python": platform.python_version()}


def execute_run(source: dict, planner: str, settings: Settings, out_dir: Path, argv: list[str]) -> int:
    sc = _load_source(source, settings)
    cfg = settings.plan
    manifest = {
        "command": "run", "argv": argv, "source": source, "planner": planner,
        "scenario_sha256": _sha(_scenario_bytes(sc)), "seed": cfg.seed,
        "settings": settings.to_dict(), "config_hash": settings.digest(), "versions": _versions(),
    }
    files: dict[str, bytes] = {}
    try:
        traj = plan(sc, cfg) if planner == "stg" else plan_baseline(sc, cfg)
    except Infeasible as exc:
        files["metrics.txt"] = f"scenario={sc.id} planner={planner} feasible=0 reason=infeasible\n".encode()
        files["manifest.json"] = json.dumps(manifest, indent=1).encode()
        _write_atomic(out_dir, files)
        print(f"{planner}: no feasible trajectory ({exc})", file=sys.stderr)
        return 3
    result = evaluate(sc, traj, settings)
    tmp = Path(tempfile.mkdtemp())
    try:
        traj.to_csv(tmp / "trajectory.csv")
        files["trajectory.csv"] = (tmp / "trajectory.csv").read_bytes()
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    files["metrics.txt"] = (metrics_line(result, traj.u_total) + "\n").encode()
    if planner == "stg":
        files["attention.json"] = json.dumps(traj.attention_json(), indent=1).encode()
    manifest["outputs"] = {name: _sha(data) for name, data in files.items()}
    files["manifest.json"] = json.dumps(manifest, indent=1).encode()
    _write_atomic(out_dir, files)
    print(metrics_line(result, traj.u_total))
    return 0


def cmd_run(args) -> int:
    settings = _settings(args)
    given = [x for x in (args.scenario, args.builtin, args.density) if x]
    if len(given) != 1:
        raise UsageError("give exactly one of --scenario, --builtin or --density")
    if args.scenario:
        source = {"kind": "file", "path": str(Path(args.scenario).resolve())}
    elif args.builtin:
        source = {"kind": "builtin", "name": args.builtin}
    else:
        source = {"kind": "generated", "density": args.density, "seed": args.seed or 0}
    return execute_run(source, args.planner, settings, Path(args.out_dir), sys.argv[1:] if args.argv is None else args.argv)


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    settings = Settings.from_dict(manifest["settings"])
    sc = _load_source(manifest["source"], settings)
    if _sha(_scenario_bytes(sc)) != manifest["scenario_sha256"]:
        raise UsageError("scenario differs from the one recorded in the manifest")
    return execute_run(manifest["source"], manifest["planner"], settings, Path(args.out_dir), manifest["argv"])


def _stg_chunk(payload):
    """Worker: plan a chunk of generated scenarios; falls back to one-by-one on failure."""
    densities_seeds, settings_dict = payload
    settings = Settings.from_dict(settings_dict)
    scs = [gen_traffic(d, s, regs=settings.safety) for d, s in densities_seeds]
    cfg = settings.plan
    seeds = [cfg.seed + s for _, s in densities_seeds]
    try:
        trajs = plan_batch(scs, cfg, seeds=seeds).trajectories
        return [(t, None) for t in trajs]
    except Exception:
        out = []
        for sc, seed in zip(scs, seeds):
            try:
                out.append((plan_batch([sc], cfg, seeds=[seed]).trajectories[0], None))
            except Exception as exc:                    # recorded as infeasible, run continues
                out.append((None, f"{type(exc).__name__}: {exc}"))
        return out


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("STG_THREADS", "1")))
    except ValueError:
        return 1


def run_bench(densities: list[str], count: int, seed: int, planners: list[str], settings: Settings,
              out_dir: Path | None = None, log=print):
    results: list[RunResult] = []
    workers = _threads()
    for density in densities:
        seeds = [seed + i for i in range(count)]
        scs = [gen_traffic(density, s, regs=settings.safety) for s in seeds]
        for planner in planners:
            if planner == "stg":
                if settings.plan.warm_start:
                    outcomes, params = [], None
                    for sc, s in zip(scs, seeds):
                        try:
                            bp = plan_batch([sc], settings.plan, params=params, seeds=[settings.plan.seed + s])
                            outcomes.append((bp.trajectories[0], None))
                            params = bp.params
                        except Exception as exc:
                            outcomes.append((None, f"{type(exc).__name__}: {exc}"))
                else:
                    size = -(-count // workers)
                    chunks = [[(density, s) for s in seeds[i:i + size]] for i in range(0, count, size)]
                    payloads = [(c, settings.to_dict()) for c in chunks]
                    if workers > 1 and len(chunks) > 1:
                        with ProcessPoolExecutor(max_workers=workers) as pool:
                            parts = list(pool.map(_stg_chunk, payloads))
                    else:
                        parts = [_stg_chunk(p) for p in payloads]
                    outcomes = [o for part in parts for o in part]
            else:
                outcomes = []
                for sc in scs:
                    try:
                        outcomes.append((plan_baseline(sc, settings.plan), None))
                    except Exception as exc:
                        outcomes.append((None, f"{type(exc).__name__}: {exc}"))
            for sc, (traj, err) in zip(scs, outcomes):
                if traj is None:
                    results.append(RunResult(sc.id, planner, False, traffic=density, note=err or ""))
                    continue
                results.append(evaluate(sc, traj, settings, traffic=density))
                if out_dir is not None:
                    buf = Path(tempfile.mkdtemp())
                    try:
                        traj.to_csv(buf / "t.csv")
                        _write_atomic(out_dir / "trajectories" / planner, {f"{sc.id}.csv": (buf / "t.csv").read_bytes()})
                    finally:
                        shutil.rmtree(buf, ignore_errors=True)
            log(f"{density}/{planner}: {sum(r.feasible for r in results if r.traffic == density and r.planner == planner)}"
                f"/{count} feasible")
    report = batch_report(results)
    if out_dir is not None:
        tmp = Path(tempfile.mkdtemp())
        try:
            report.write_runs_csv(tmp / "runs.csv")
            report.write_summary_csv(tmp / "report.csv")
            files = {n: (tmp / n).read_bytes() for n in ("runs.csv", "report.csv")}
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
        files["report.txt"] = (report.table() + "\n").encode()
        files["manifest.json"] = json.dumps({
            "command": "bench", "densities": densities, "count": count, "seed": seed, "planners": planners,
            "settings": settings.to_dict(), "config_hash": settings.digest(), "versions": _versions(),
        }, indent=1).encode()
        _write_atomic(out_dir, files)
    return report


def cmd_bench(args) -> int:
    settings = _settings(args)
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    densities = list(DENSITY_BANDS) if args.density in (None, "all") else args.density.split(",")
    for d in densities:
        if d not in DENSITY_BANDS:
            raise UsageError(f"unknown density {d!r}")
    planners = args.planners.split(",")
    for p in planners:
        if p not in ("stg", "baseline"):
            raise UsageError(f"unknown planner {p!r}")
    report = run_bench(densities, args.count, args.seed or 0, planners, settings, Path(args.out_dir),
                       log=lambda m: print(m, file=sys.stderr))
    print(report.table())
    return 0


def cmd_gen(args) -> int:
    settings = load_config(args.config) if args.config else Settings()
    if args.builtin:
        sc = BUILTINS[args.builtin]()
    else:
        sc = gen_traffic(args.density or "medium", args.seed or 0, regs=settings.safety)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(out.parent, {out.name: json.dumps(sc.to_json(), indent=1).encode()})
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stgplan", description="Graph-network online trajectory planner")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file with planner/network/potential/safety settings")
        p.add_argument("--seed", type=int, help="planner (and generator) seed")
        p.add_argument("--iters", type=int, help="optimization iterations per plan")
        p.add_argument("--warm-start", action="store_true", help="carry parameters over between plans")
        p.add_argument("--out-dir", default="out", help="output directory")

    run = sub.add_parser("run", help="plan one scenario")
    run.add_argument("--scenario", help="scenario JSON file")
    run.add_argument("--builtin", choices=sorted(BUILTINS), help="builtin scenario")
    run.add_argument("--density", choices=sorted(DENSITY_BANDS), help="generate a scenario (uses --seed)")
    run.add_argument("--planner", choices=["stg", "baseline"], default="stg")
    run.set_defaults(func=cmd_run, argv=None)
    common(run)

    bench = sub.add_parser("bench", help="plan generated scenarios and report medians")
    bench.add_argument("--density", default="medium", help="low, medium, high, comma list, or all")
    bench.add_argument("--count", type=int, default=100)
    bench.add_argument("--planners", "--planner", dest="planners", default="stg,baseline")
    bench.set_defaults(func=cmd_bench)
    common(bench)

    gen = sub.add_parser("gen", help="write a scenario file")
    gen.add_argument("--density", choices=sorted(DENSITY_BANDS))
    gen.add_argument("--builtin", choices=sorted(BUILTINS))
    gen.add_argument("--seed", type=int)
    gen.add_argument("--config")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    replay = sub.add_parser("replay", help="re-run the command recorded in a run manifest")
    replay.add_argument("manifest")
    replay.add_argument("--out-dir", required=True)
    replay.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "argv", 0) is None:
        args.argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.func(args)
    except (UsageError, ScenarioError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"stgplan: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
