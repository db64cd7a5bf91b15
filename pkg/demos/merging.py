"""On-ramp merge.

The ego starts at 50 km/h in a ramp lane that ends 100 m ahead. The behavioral layer asks
for 60 km/h and the corridor closes the ramp lane after a few seconds, so the planner has
to accelerate and move into the highway lane behind the car already there.

    python demos/merging.py
"""
import time

import numpy as np

from stgplan.planner import PlanConfig, plan
from stgplan.scenario import builtin_merging

sc = builtin_merging()
print(f"ego at s={sc.ego_init.s:.0f} m, {sc.ego_init.s_dot * 3.6:.0f} km/h; ramp ends at s={sc.meta['lane_end_s']:.0f} m")
for a in sc.actors:
    print(f"  {a.id:18s} s={a.s[0]:6.1f}  d={a.d[0]:4.1f}  {a.s_dot[0] * 3.6:5.1f} km/h")

t0 = time.perf_counter()
traj = plan(sc, PlanConfig())
print(f"\nplanned 50 steps in {time.perf_counter() - t0:.1f}s, U_total {traj.u_total:.3f} "
      f"(first iteration {traj.history[0]:.3f})")

v = np.diff(traj.s) / traj.t_s * 3.6
print("\n   t     s      d   km/h  lane")
for k in range(0, len(v), 5):
    print(f"{traj.times[k + 1]:4.1f} {traj.s[k + 1]:6.1f} {traj.d[k + 1]:6.2f} {v[k]:6.1f}  {sc.lane_of(traj.d[k + 1])}")

print(f"\nfeasible: {traj.feasible}; ends in lane {sc.lane_of(traj.d[-1])} at {v[-1]:.1f} km/h")
