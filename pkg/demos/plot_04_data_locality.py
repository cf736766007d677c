"""
Running functions next to their data
====================================

The data-locality workload reads about 124 MB from a database in East US.
A tagged script pins it to the East US controller and workers; vanilla
scheduling ignores where the data lives.
"""

import numpy as np

from tapp import CampaignConfig, DistributionPolicy, Variant, builtin_profiles, builtin_script, builtin_topology, run_campaign

topology = builtin_topology("benchmark")
profile = builtin_profiles()["data-locality"]
variants = [
    Variant("vanilla", None),
    Variant("tagged", DistributionPolicy.SHARED, builtin_script("data-locality"), "data_locality"),
]
result = run_campaign(CampaignConfig(topology, [profile], variants))

for row in result.table("data-locality"):
    print("  ".join(f"{c:>18}" for c in row))

vanilla = np.array([r.mean_ms for r in result.runs_of("data-locality", "vanilla")])
tagged = np.array([r.mean_ms for r in result.runs_of("data-locality", "tagged")])
print(f"\ntagged wins {int((tagged < vanilla).sum())} of {len(vanilla)} runs")
print(f"mean reduction {100 * (1 - tagged.mean() / vanilla.mean()):.1f}%")
