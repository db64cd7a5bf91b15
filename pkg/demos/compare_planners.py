"""Graph planner against the polynomial sampling baseline on generated traffic.

Plans a handful of seeds per density band with both planners and prints the medians of
risk, discomfort and distance together with the share of feasible plans. A larger run is
``stgplan bench --density all --count 100``.

    python demos/compare_planners.py [count] [iters]
"""
import sys

from stgplan.cli import run_bench
from stgplan.config import Settings
from stgplan.planner import PlanConfig

count = int(sys.argv[1]) if len(sys.argv) > 1 else 5
iters = int(sys.argv[2]) if len(sys.argv) > 2 else 100

settings = Settings(plan=PlanConfig(iters=iters))
report = run_bench(["low", "medium", "high"], count, 0, ["stg", "baseline"], settings)
print()
print(report.table())

failed = [r for r in report.results if not r.feasible]
for r in failed:
    print(f"{r.planner} on {r.scenario_id}: {r.note or 'infeasible'}")
