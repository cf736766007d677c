"""
Cold starts and live policy reloads
===================================

Containers stay warm for ten minutes after their last use.  Policies can
be replaced while the cluster is serving traffic; each decision records
the script version it used.
"""

from dataclasses import replace

from tapp import builtin_profiles, builtin_topology, run_simulation
from tapp.fixtures import builtin_script_text
from tapp.watcher import NodeDown, PolicyUpdated

topology = builtin_topology("benchmark")
cold = builtin_profiles()["cold-start"]

for pause in (660.0, 300.0):
    report = run_simulation(topology, "vanilla", None, replace(cold, pause_s=pause), seed=1)
    print(f"one request every {pause / 60:.0f} min:", ["cold" if r.cold else "warm" for r in report.records])

# swap in a script after 3 s, take an East US worker down after 6 s
timeline = [
    (3000.0, PolicyUpdated(builtin_script_text("data-locality"))),
    (6000.0, NodeDown("EW1")),
]
profile = replace(builtin_profiles()["hellojs"], repetitions=60, pause_s=0.2)
report = run_simulation(topology, "shared", None, profile, timeline, seed=1, tag="data_locality", audit=True)
print("\nfailures:", report.failures)
for second in range(0, 14, 2):
    recs = [r for r in report.records if second * 1e6 <= r.arrival_us < (second + 2) * 1e6]
    versions = sorted({r.script_version for r in recs})
    placed = sorted({r.worker for r in recs})
    print(f"t={second:2d}-{second + 2:2d}s  script versions {versions}  workers {placed}")
