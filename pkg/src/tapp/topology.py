"""Cluster topology model and per-controller worker allotments."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import yaml

from .lang import NamedWorker, WorkerSet

DEFAULT_INVOCATION_SLOT_MB = 256
DEFAULT_MEMORY_MB = 2048


class TopologyError(ValueError):
    pass


class AllotmentError(ValueError):
    pass


class DistributionPolicy(str, enum.Enum):
    DEFAULT = "default"
    MIN_MEMORY = "min_memory"
    ISOLATED = "isolated"
    SHARED = "shared"


class Tier(str, enum.Enum):
    PRIMARY = "primary"
    OVERFLOW = "overflow"
    DENIED = "denied"


@dataclass(frozen=True)
class ControllerNode:
    id: str
    label: str
    zone: Optional[str] = None
    alive: bool = True


@dataclass(frozen=True)
class WorkerNode:
    id: str
    labels: frozenset
    zone: Optional[str] = None
    memory_capacity: int = DEFAULT_MEMORY_MB
    invocation_slot: int = DEFAULT_INVOCATION_SLOT_MB
    alive: bool = True


@dataclass(frozen=True)
class ExternalService:
    name: str
    zone: str


@dataclass(frozen=True)
class ClusterTopology:
    zones: tuple
    controllers: tuple
    workers: tuple
    # round-trip time in ms for every unordered zone pair, stored both ways
    latency: dict = field(default_factory=dict)
    services: tuple = ()
    gateway_zone: Optional[str] = None
    # optional MB/s overrides per zone pair, stored both ways
    bandwidth: dict = field(default_factory=dict)

    def controller(self, node_id: str) -> ControllerNode:
        for c in self.controllers:
            if c.id == node_id:
                return c
        raise KeyError(node_id)

    def worker(self, node_id: str) -> WorkerNode:
        for w in self.workers:
            if w.id == node_id:
                return w
        raise KeyError(node_id)

    def service(self, name: str) -> ExternalService:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)

    def controllers_with_label(self, label: str) -> list:
        return [c for c in self.controllers if c.label == label or c.id == label]

    def workers_with_label(self, label: str) -> list:
        return [w for w in self.workers if label in w.labels]

    def rtt(self, a: Optional[str], b: Optional[str]) -> float:
        """Round-trip latency between two zones in ms; zone-less ends cost nothing."""
        if a is None or b is None:
            return 0.0
        return self.latency[(a, b)]

    def with_worker_order(self, order: Iterable[str]) -> "ClusterTopology":
        by_id = {w.id: w for w in self.workers}
        return replace(self, workers=tuple(by_id[i] for i in order))


def colocated(controller: ControllerNode, worker: WorkerNode) -> bool:
    return controller.zone is not None and controller.zone == worker.zone


# --------------------------------------------------------------------------
# loading

_TOP_KEYS = {"zones", "controllers", "workers", "latency_ms", "services", "gateway_zone", "bandwidth_mbps"}


def _zone_pairs(entries, zones, what) -> dict:
    out: dict = {}
    for entry in entries or []:
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise TopologyError(f"{what} entries must be [zoneA, zoneB, value], got {entry!r}")
        a, b, v = entry
        for z in (a, b):
            if z not in zones:
                raise TopologyError(f"{what} references unknown zone {z!r}")
        v = float(v)
        if v < 0 or (what == "bandwidth_mbps" and v <= 0):
            raise TopologyError(f"{what} value for {a}/{b} must be positive")
        for key in ((a, b), (b, a)):
            if key in out and out[key] != v:
                raise TopologyError(f"asymmetric {what} entry for {a}/{b}: {out[key]} vs {v}")
        out[(a, b)] = out[(b, a)] = v
    return out


def topology_from_dict(doc: dict) -> ClusterTopology:
    if not isinstance(doc, dict):
        raise TopologyError("topology document must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise TopologyError(f"unknown top-level keys: {sorted(unknown)}")
    zones = tuple(str(z) for z in doc.get("zones") or [])
    if len(set(zones)) != len(zones):
        raise TopologyError("duplicate zone names")
    seen_ids: set = set()

    def zone_of(node) -> Optional[str]:
        z = node.get("zone")
        if z is not None and z not in zones:
            raise TopologyError(f"node {node.get('id')!r} references unknown zone {z!r}")
        return z

    def node_id(node) -> str:
        if not isinstance(node, dict) or "id" not in node:
            raise TopologyError(f"node entries need an 'id': {node!r}")
        nid = str(node["id"])
        if nid in seen_ids:
            raise TopologyError(f"duplicate node id {nid!r}")
        seen_ids.add(nid)
        return nid

    controllers = []
    for node in doc.get("controllers") or []:
        nid = node_id(node)
        controllers.append(
            ControllerNode(nid, str(node.get("label", nid)), zone_of(node), bool(node.get("alive", True)))
        )
    labels = [c.label for c in controllers]
    if len(set(labels)) != len(labels):
        raise TopologyError("controller labels must be unique")

    workers = []
    for node in doc.get("workers") or []:
        nid = node_id(node)
        capacity = int(node.get("memory_mb", DEFAULT_MEMORY_MB))
        slot = int(node.get("invocation_slot_mb", DEFAULT_INVOCATION_SLOT_MB))
        if slot <= 0 or capacity < slot:
            raise TopologyError(f"worker {nid!r}: memory_mb must be >= invocation_slot_mb > 0")
        # a worker's id doubles as its singleton label
        wl = frozenset([nid, *(str(x) for x in node.get("labels") or [])])
        workers.append(WorkerNode(nid, wl, zone_of(node), capacity, slot, bool(node.get("alive", True))))

    latency = _zone_pairs(doc.get("latency_ms"), zones, "latency_ms")
    for a, b in itertools.combinations_with_replacement(zones, 2):
        if (a, b) not in latency:
            raise TopologyError(f"latency_ms lacks the pair {a}/{b}")
    bandwidth = _zone_pairs(doc.get("bandwidth_mbps"), zones, "bandwidth_mbps")

    services = []
    for s in doc.get("services") or []:
        if s.get("zone") not in zones:
            raise TopologyError(f"service {s.get('name')!r} references unknown zone {s.get('zone')!r}")
        services.append(ExternalService(str(s["name"]), s["zone"]))

    gw = doc.get("gateway_zone")
    if gw is not None and gw not in zones:
        raise TopologyError(f"gateway_zone references unknown zone {gw!r}")
    return ClusterTopology(zones, tuple(controllers), tuple(workers), latency, tuple(services), gw, bandwidth)


def load_topology(text: str) -> ClusterTopology:
    """Parse a topology document (YAML text) into a resolved topology."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise TopologyError(f"malformed topology document: {exc}") from None
    return topology_from_dict(doc)


def read_topology(path) -> ClusterTopology:
    with open(path, encoding="utf-8") as fh:
        return load_topology(fh.read())


def resolve_selector(topology, clause) -> list:
    """Workers matched by a worker clause, in declaration order."""
    if isinstance(clause, NamedWorker):
        return topology.workers_with_label(clause.label)
    if isinstance(clause, WorkerSet):
        if clause.scope is None:
            return list(topology.workers)
        return topology.workers_with_label(clause.scope)
    raise TypeError(f"not a worker clause: {clause!r}")


# --------------------------------------------------------------------------
# allotments


@dataclass(frozen=True)
class Grant:
    memory_share: int
    tier: Tier


DENIED = Grant(0, Tier.DENIED)


@dataclass(frozen=True)
class Allotment:
    policy: DistributionPolicy
    grants: dict

    def grant(self, controller_id: str, worker_id: str) -> Grant:
        return self.grants.get((controller_id, worker_id), DENIED)

    def primary_total(self, worker_id: str) -> int:
        return sum(g.memory_share for (_, w), g in self.grants.items() if w == worker_id and g.tier is Tier.PRIMARY)


def compute_allotment(topology: ClusterTopology, policy) -> Allotment:
    """Split each worker's memory among controllers according to ``policy``.

    Shares are whole MB (floor division), so granted memory never exceeds a
    worker's capacity.  Overflow grants under ``shared`` carry the full
    capacity; the scheduler bounds their real use by what is free.
    """
    policy = DistributionPolicy(policy)
    controllers = topology.controllers
    grants: dict = {}
    n = len(controllers)
    for w in topology.workers:
        local = [c for c in controllers if colocated(c, w)]
        foreign = [c for c in controllers if not colocated(c, w)]
        cap = w.memory_capacity
        if n == 0:
            continue
        if policy is DistributionPolicy.DEFAULT or (policy is DistributionPolicy.MIN_MEMORY and not local):
            for c in controllers:
                grants[(c.id, w.id)] = Grant(cap // n, Tier.PRIMARY)
        elif policy is DistributionPolicy.MIN_MEMORY:
            reserved = w.invocation_slot * len(foreign)
            if reserved > cap:
                raise AllotmentError(
                    f"worker {w.id!r}: {len(foreign)} foreign slots of {w.invocation_slot} MB exceed {cap} MB"
                )
            for c in local:
                grants[(c.id, w.id)] = Grant((cap - reserved) // len(local), Tier.PRIMARY)
            for c in foreign:
                grants[(c.id, w.id)] = Grant(w.invocation_slot, Tier.PRIMARY)
        elif policy is DistributionPolicy.ISOLATED:
            for c in local:
                grants[(c.id, w.id)] = Grant(cap // len(local), Tier.PRIMARY)
            for c in foreign:
                grants[(c.id, w.id)] = DENIED
        else:
            for c in local:
                grants[(c.id, w.id)] = Grant(cap // len(local), Tier.PRIMARY)
            for c in foreign:
                grants[(c.id, w.id)] = Grant(cap, Tier.OVERFLOW)
    return Allotment(policy, grants)
