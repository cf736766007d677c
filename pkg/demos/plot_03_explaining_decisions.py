"""
Following one scheduling decision
=================================

Every decision carries a trace of the steps that led to it.  Here we
replay the case-study tags on an idle cluster, then knock nodes out.
"""

import numpy as np

from tapp import (
    ClusterState,
    InvocationRequest,
    Scheduler,
    SchedulingFailure,
    builtin_script,
    builtin_topology,
    snapshot,
)

topology = builtin_topology("case-study")
script = builtin_script("case-study")
scheduler = Scheduler(topology, "default")


def explain(tag, down=()):
    snap = snapshot(topology, {n: False for n in down})
    state = ClusterState.fresh(topology)
    request = InvocationRequest(0, "fn", tag)
    print(f"\n--- tag={tag} down={list(down)}")
    try:
        decision = scheduler.schedule(request, script, snap, state, np.random.default_rng(0))
        trace = decision.trace
        outcome = f"{decision.controller} -> {decision.worker}"
    except SchedulingFailure as exc:
        trace, outcome = exc.trace, f"failed: {exc.reason.value}"
    for step in trace:
        print("  ", step)
    print("  =>", outcome)


explain("critical")
# no edge worker left and the tag says fail: the default tag is never tried
explain("critical", down=["W1", "W2"])
# the cloud controller is down; failover keeps the request in the cloud zone
explain("machine_learning", down=["CloudCtl"])
# no script at all: gateway round robin plus the co-prime preference list
print("\n--- no script")
decision = scheduler.schedule(InvocationRequest(1, "fn"), None, snapshot(topology), ClusterState.fresh(topology), 0)
for step in decision.trace:
    print("  ", step)
