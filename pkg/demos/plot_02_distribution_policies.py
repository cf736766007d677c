"""
How controllers share worker memory
===================================

A distribution policy decides how much of each worker a controller may
fill.  The grants below are for the two-region benchmark cluster.
"""

import numpy as np

from tapp import DistributionPolicy, builtin_topology, compute_allotment

topology = builtin_topology("benchmark")
controllers = [c.id for c in topology.controllers]
workers = [w.id for w in topology.workers]

for policy in DistributionPolicy:
    allotment = compute_allotment(topology, policy)
    grid = np.array([[allotment.grant(c, w).memory_share for w in workers] for c in controllers])
    tiers = [[allotment.grant(c, w).tier.value[0] for w in workers] for c in controllers]
    print(f"\n{policy.value}  (MB; p=primary o=overflow d=denied)")
    print("            " + "  ".join(f"{w:>8}" for w in workers))
    for c, row, t in zip(controllers, grid, tiers):
        print(f"{c:>10}  " + "  ".join(f"{v:>7}{k}" for v, k in zip(row, t)))

# primary grants never exceed a worker's memory
for policy in DistributionPolicy:
    allotment = compute_allotment(topology, policy)
    assert all(allotment.primary_total(w.id) <= w.memory_capacity for w in topology.workers)
