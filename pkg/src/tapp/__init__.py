"""Topology-aware scheduling policies for serverless platforms.

Parse and validate TAPP scripts, split worker memory among controllers,
schedule invocations, and simulate multi-zone clusters.
"""

from .lang import (
    AppScript,
    Diagnostic,
    ParseError,
    canonicalize,
    load_script,
    parse_script,
    render_script,
    validate_script,
)
from .topology import (
    AllotmentError,
    ClusterTopology,
    DistributionPolicy,
    Tier,
    TopologyError,
    compute_allotment,
    load_topology,
    read_topology,
)
from .watcher import PolicyStore, TopologySnapshot, Watcher, apply_event, snapshot
from .scheduler import (
    ClusterState,
    FailureReason,
    InvocationRequest,
    ScheduleDecision,
    Scheduler,
    SchedulingFailure,
    coprime_fallback,
    schedule,
)
from .simulator import (
    CampaignConfig,
    LatencyModel,
    MetricsReport,
    Variant,
    WorkloadProfile,
    builtin_profiles,
    run_campaign,
    run_simulation,
)
from .fixtures import builtin_script, builtin_topology

__version__ = "0.1.0"

__all__ = [
    "AppScript",
    "Diagnostic",
    "ParseError",
    "canonicalize",
    "load_script",
    "parse_script",
    "render_script",
    "validate_script",
    "AllotmentError",
    "ClusterTopology",
    "DistributionPolicy",
    "Tier",
    "TopologyError",
    "compute_allotment",
    "load_topology",
    "read_topology",
    "ClusterState",
    "FailureReason",
    "InvocationRequest",
    "ScheduleDecision",
    "Scheduler",
    "SchedulingFailure",
    "coprime_fallback",
    "schedule",
    "CampaignConfig",
    "LatencyModel",
    "MetricsReport",
    "Variant",
    "WorkloadProfile",
    "builtin_profiles",
    "run_campaign",
    "run_simulation",
    "PolicyStore",
    "TopologySnapshot",
    "Watcher",
    "apply_event",
    "snapshot",
    "builtin_script",
    "builtin_topology",
]
