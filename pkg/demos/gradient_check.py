"""Autodiff through one short rollout, checked against central differences.

The planner loss is the summed potential over a 5-step rollout. Here the obstacle term is
kept differentiable inside the velocity term (``detach_risk=False``) so the tape gradient is
the exact derivative of the loss, which makes a plain finite-difference comparison fair.

    python demos/gradient_check.py
"""
import numpy as np

from stgplan.gatnet import GatParams
from stgplan.planner import PlanConfig, _compile, rollout, rollout_loss
from stgplan.scenario import gen_traffic

sc = gen_traffic("medium", 3)
cfg = PlanConfig(horizon=5, iters=1, detach_risk=False)
params = GatParams.init(cfg.network, 0)
batch = _compile([sc], [sc.ego_init], [0], cfg)
res, grads = rollout_loss(params, batch, cfg)
print(f"U_total over 5 steps: {res.u_total.value[0]:.6f}")

rng = np.random.default_rng(0)
names = params.names()
h = 1e-4
print("\nparameter         index        autodiff        central FD")
for name in ("W1", "W0", "W_att", "att_src", "W_ego", "W_virtual"):
    arr = params[name].value
    idx = tuple(int(rng.integers(0, n)) for n in arr.shape)
    orig = arr[idx]
    arr[idx] = orig + h
    up = rollout(params, batch, cfg).u_total.value[0]
    arr[idx] = orig - h
    dn = rollout(params, batch, cfg).u_total.value[0]
    arr[idx] = orig
    print(f"{name:10s} {str(idx):>16s} {grads[names.index(name)][idx]: .6e} {(up - dn) / (2 * h): .6e}")
