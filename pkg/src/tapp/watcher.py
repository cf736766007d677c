"""Versioned cluster snapshots and the live-reloadable policy store.

This is an in-process stand-in for a watcher that polls the orchestrator for
node labels and zones and publishes them, together with the active TAPP
script, to the gateway and the controllers.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, replace
from types import MappingProxyType
from typing import Callable, Optional

import yaml

from .lang import AppScript, canonicalize, parse_script

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NodeUp:
    node: str
    # only used when the node was unknown to the snapshot
    labels: tuple = ()
    zone: Optional[str] = None
    role: str = "worker"


@dataclass(frozen=True)
class NodeDown:
    node: str


@dataclass(frozen=True)
class LabelChanged:
    node: str
    labels: tuple


@dataclass(frozen=True)
class ZoneChanged:
    node: str
    zone: Optional[str]


@dataclass(frozen=True)
class PolicyUpdated:
    text: str


@dataclass(frozen=True)
class TopologySnapshot:
    version: int
    label_map: MappingProxyType
    zone_map: MappingProxyType
    liveness: MappingProxyType
    controllers: tuple  # ids, declaration order
    workers: tuple

    def alive(self, node: str) -> bool:
        return self.liveness.get(node, False)

    def zone(self, node: str) -> Optional[str]:
        return self.zone_map.get(node)

    def _has_label(self, node: str, label: str) -> bool:
        return node in self.label_map.get(label, ())

    def controllers_with_label(self, label: str) -> list:
        return [c for c in self.controllers if self._has_label(c, label)]

    def workers_with_label(self, label: str) -> list:
        return [w for w in self.workers if self._has_label(w, label)]

    def alive_controllers(self) -> list:
        return [c for c in self.controllers if self.alive(c)]


def _freeze(label_map: dict) -> MappingProxyType:
    return MappingProxyType({k: frozenset(v) for k, v in label_map.items() if v})


def snapshot(topology, liveness: Optional[dict] = None, version: int = 1) -> TopologySnapshot:
    """Build a snapshot of ``topology`` with optional liveness overrides."""
    labels: dict = {}
    zones: dict = {}
    alive: dict = {}
    for c in topology.controllers:
        for lab in {c.id, c.label}:
            labels.setdefault(lab, set()).add(c.id)
        zones[c.id] = c.zone
        alive[c.id] = c.alive
    for w in topology.workers:
        for lab in w.labels:
            labels.setdefault(lab, set()).add(w.id)
        zones[w.id] = w.zone
        alive[w.id] = w.alive
    for node, up in (liveness or {}).items():
        if node not in alive:
            raise KeyError(f"liveness override for unknown node {node!r}")
        alive[node] = bool(up)
    return TopologySnapshot(
        version,
        _freeze(labels),
        MappingProxyType(zones),
        MappingProxyType(alive),
        tuple(c.id for c in topology.controllers),
        tuple(w.id for w in topology.workers),
    )


def apply_event(snap: TopologySnapshot, event) -> TopologySnapshot:
    """Return the next snapshot version with ``event`` applied."""
    if isinstance(event, PolicyUpdated):
        raise TypeError("policy updates go through PolicyStore.update_policy, not apply_event")
    node = event.node
    known = node in snap.liveness
    if not known and not isinstance(event, NodeUp):
        raise KeyError(f"event references unknown node {node!r}")
    labels = {k: set(v) for k, v in snap.label_map.items()}
    zones = dict(snap.zone_map)
    alive = dict(snap.liveness)
    controllers, workers = snap.controllers, snap.workers
    if isinstance(event, NodeUp):
        alive[node] = True
        if not known:
            zones[node] = event.zone
            for lab in {node, *event.labels}:
                labels.setdefault(lab, set()).add(node)
            if event.role == "controller":
                controllers = controllers + (node,)
            else:
                workers = workers + (node,)
    elif isinstance(event, NodeDown):
        alive[node] = False
    elif isinstance(event, LabelChanged):
        for members in labels.values():
            members.discard(node)
        for lab in {node, *event.labels}:
            labels.setdefault(lab, set()).add(node)
    elif isinstance(event, ZoneChanged):
        zones[node] = event.zone
    else:
        raise TypeError(f"unknown cluster event {event!r}")
    return TopologySnapshot(
        snap.version + 1,
        _freeze(labels),
        MappingProxyType(zones),
        MappingProxyType(alive),
        controllers,
        workers,
    )


class Watcher:
    """Owns the current snapshot of one topology and notifies subscribers."""

    def __init__(self, topology, liveness: Optional[dict] = None):
        self.topology = topology
        self._lock = threading.Lock()
        self._current = snapshot(topology, liveness, version=1)
        self._subscribers: list = []

    @property
    def current(self) -> TopologySnapshot:
        return self._current

    def subscribe(self, callback: Callable[[int], None]) -> None:
        self._subscribers.append(callback)

    def resnapshot(self, liveness: Optional[dict] = None) -> TopologySnapshot:
        with self._lock:
            self._current = snapshot(self.topology, liveness, self._current.version + 1)
            snap = self._current
        self._notify(snap.version)
        return snap

    def apply(self, event) -> TopologySnapshot:
        with self._lock:
            self._current = apply_event(self._current, event)
            snap = self._current
        self._notify(snap.version)
        return snap

    def _notify(self, version: int) -> None:
        for cb in list(self._subscribers):
            cb(version)


class PolicyStore:
    """Single global copy of the active TAPP script.

    One writer, many readers.  ``current`` returns an immutable
    ``(script, version)`` pair swapped in one assignment, so a reader sees a
    whole version or the next one, never a mix.  Subscribers are called with
    the new version after each successful update (level-triggered: they
    re-read ``current``).
    """

    def __init__(self, script: Optional[AppScript] = None):
        self._write_lock = threading.Lock()
        self._current = (None, 0) if script is None else (replace(script, source_version=1), 1)
        self._subscribers: list = []

    @property
    def current(self) -> tuple:
        return self._current

    @property
    def version(self) -> int:
        return self._current[1]

    def subscribe(self, callback: Callable[[int], None]) -> None:
        self._subscribers.append(callback)

    def unsubscribe(self, callback) -> None:
        self._subscribers.remove(callback)

    def update_policy(self, text: str) -> int:
        """Parse ``text`` and make it the current script; returns the new version.

        Raises ``ParseError`` and leaves the store untouched if ``text`` is
        invalid.
        """
        script = canonicalize(parse_script(text))
        with self._write_lock:
            version = self._current[1] + 1
            self._current = (replace(script, source_version=version), version)
        log.debug("policy store now at version %d", version)
        for cb in list(self._subscribers):
            cb(version)
        return version


# --------------------------------------------------------------------------
# event timelines

_EVENT_TYPES = {
    "node_up": NodeUp,
    "node_down": NodeDown,
    "label_changed": LabelChanged,
    "zone_changed": ZoneChanged,
    "policy_updated": PolicyUpdated,
}


def event_from_dict(doc: dict, base_dir=None):
    kind = doc.get("type")
    if kind not in _EVENT_TYPES:
        raise ValueError(f"unknown event type {kind!r}; expected one of {sorted(_EVENT_TYPES)}")
    if kind == "policy_updated":
        if "text" in doc:
            return PolicyUpdated(doc["text"])
        path = doc["script"]
        if base_dir is not None and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        with open(path, encoding="utf-8") as fh:
            return PolicyUpdated(fh.read())
    if kind == "label_changed":
        return LabelChanged(doc["node"], tuple(doc.get("labels") or ()))
    if kind == "zone_changed":
        return ZoneChanged(doc["node"], doc.get("zone"))
    if kind == "node_up":
        return NodeUp(doc["node"], tuple(doc.get("labels") or ()), doc.get("zone"), doc.get("role", "worker"))
    return NodeDown(doc["node"])


def load_timeline(text: str, base_dir=None) -> list:
    """Parse an event timeline: a YAML list of ``{time_ms, type, ...}`` records.

    Returns ``(time_ms, event)`` pairs sorted by time (stable).
    """
    doc = yaml.safe_load(text) or []
    if not isinstance(doc, list):
        raise ValueError("timeline must be a list of events")
    out = []
    for rec in doc:
        if "time_ms" not in rec:
            raise ValueError(f"timeline record without time_ms: {rec!r}")
        t = float(rec["time_ms"])
        if t < 0:
            raise ValueError("timeline times must be >= 0")
        out.append((t, event_from_dict(rec, base_dir)))
    out.sort(key=lambda pair: pair[0])
    return out
