"""Highway exit and what the graph attention looks at.

The ego drives 80 km/h in the exit lane behind a car that slows from 55 to 50 km/h. The
corridor keeps the ego in its lane, so the only way to stay clear is to slow down. Each
step logs the attention weight between the ego and every actor; the exiting lead and the
car in the next lane are printed side by side.

    python demos/exit_attention.py [seed]
"""
import sys

import numpy as np

from stgplan.planner import PlanConfig, plan
from stgplan.scenario import builtin_exit

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
sc = builtin_exit()
traj = plan(sc, PlanConfig(seed=seed))
lead = next(a for a in sc.actors if a.id == "exiting_lead")

v = np.diff(traj.s) / traj.t_s * 3.6
print("   t   ego km/h  gap m  alpha(lead)  alpha(adjacent)")
for k in range(0, len(traj.attention_log), 5):
    att = traj.attention_log[k]
    gap = lead.s[k + 1] - traj.s[k + 1]
    print(f"{traj.times[k + 1]:4.1f}   {v[k]:7.1f}  {gap:5.1f}  {att['exiting_lead']:11.3f}  {att['adjacent_actor']:15.3f}")

print(f"\nfinal speed {v[-1]:.1f} km/h, feasible: {traj.feasible}")
