"""
Trading on beliefs
==================

The regime is hidden; the trader sees arrival times and sizes only and
carries a belief over the three regimes. Values live on a mesh of the
belief simplex.
"""

import numpy as np

from liquidation import DepthFunction, solve_markov, solve_partial, table1_model
from liquidation.simulator import execute, mc_cost, simulate_path

F = DepthFunction(0.5, 2.0)
M = table1_model()

belief = solve_partial(M, F, 20, 1.0, dt=0.01, h=1 / 20)
full = solve_markov(M, F, 20, 1.0)
print("mesh nodes:", len(belief.mesh))
for i, node in enumerate(belief.mesh.corners()):
    print(f"known regime {i}: hidden {belief.v[20, -1, node]:.2f}  visible {full.v[i, 20, -1]:.2f}")
print("uniform belief:", round(belief.value(20, 1.0, [1 / 3, 1 / 3, 1 / 3]), 2))

# one path: the belief moves between arrivals and jumps at each one
path = simulate_path(M, 1.0, seed=3, start=2)
rep = execute(path, belief, 20, use_filter=True, pi0=[0, 0, 1])
for (t, a), pi in zip(rep.trades, rep.beliefs):
    print(f"t={t:.3f} sold {a:2d}  belief {np.round(pi, 3)}")
print("leftover at the deadline:", rep.leftover, " cost:", round(rep.cost, 2))

# the solved value is what the filtered policy costs on average
res = mc_cost(M, belief, 20, 1.0, 200_000, seed=11, start=0, use_filter=True)
print(f"simulated {res.mean:.2f} ± {res.se:.2f}  vs solved {belief.v[20, -1, belief.mesh.corners()[0]]:.2f}")
