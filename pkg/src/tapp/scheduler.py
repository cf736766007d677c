"""TAPP scheduling semantics.

A request is routed by the gateway to a policy tag, the tag's blocks are
tried in the order given by the tag strategy, each block names (or defaults)
a controller, and the controller walks the block's worker clauses until it
finds a valid worker.  Exhausted tags follow up on the ``default`` tag or
abort.  Without an applicable script the controllers fall back to
the co-prime walk, preferring co-located workers.
"""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lang import (
    AppScript,
    Block,
    CapacityUsed,
    Followup,
    MaxConcurrentInvocations,
    NamedWorker,
    Overload,
    Strategy,
    Tolerance,
    WorkerSet,
)
from .topology import DEFAULT_INVOCATION_SLOT_MB, DistributionPolicy, Tier, compute_allotment

PLATFORM_OVERLOAD_THRESHOLD = 16


class FailureReason(str, enum.Enum):
    TAG_FAILED_WITH_FAIL = "TagFailedWithFail"
    DEFAULT_EXHAUSTED = "DefaultExhausted"
    CONTROLLER_UNAVAILABLE_TOLERANCE_NONE = "ControllerUnavailableToleranceNone"
    NO_ELIGIBLE_WORKERS = "NoEligibleWorkers"


@dataclass(frozen=True)
class TraceStep:
    kind: str
    detail: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"step": self.kind, **self.detail}

    def __str__(self) -> str:
        parts = ", ".join(f"{k}={v}" for k, v in self.detail.items())
        return f"{self.kind}({parts})"


class SchedulingFailure(Exception):
    def __init__(self, reason: FailureReason, trace: list):
        super().__init__(reason.value)
        self.reason = reason
        self.trace = trace


@dataclass
class InvocationRequest:
    request_id: int
    function_id: str
    tag: Optional[str] = None
    memory_demand: int = DEFAULT_INVOCATION_SLOT_MB
    arrival_time: float = 0.0

    def __post_init__(self):
        if self.memory_demand <= 0:
            raise ValueError("memory_demand must be positive")


@dataclass
class WorkerRuntimeState:
    worker_id: str
    committed: dict = field(default_factory=dict)  # controller id -> MB
    queued_invocations: int = 0  # running plus buffered
    warm_functions: dict = field(default_factory=dict)  # function id -> last completion (ms)

    def committed_by(self, controller: str) -> int:
        return self.committed.get(controller, 0)

    @property
    def total_committed(self) -> int:
        return sum(self.committed.values())


@dataclass
class ClusterState:
    workers: dict
    gateway_cursor: int = 0
    failover_cursor: int = 0

    @classmethod
    def fresh(cls, topology) -> "ClusterState":
        return cls({w.id: WorkerRuntimeState(w.id) for w in topology.workers})

    def copy(self) -> "ClusterState":
        return copy.deepcopy(self)

    def commit(self, controller: str, worker: str, mb: int) -> None:
        ws = self.workers[worker]
        ws.committed[controller] = ws.committed_by(controller) + mb

    def release(self, controller: str, worker: str, mb: int) -> None:
        ws = self.workers[worker]
        left = ws.committed_by(controller) - mb
        if left < 0:
            raise ValueError(f"releasing more memory than committed on {worker} for {controller}")
        if left:
            ws.committed[controller] = left
        else:
            ws.committed.pop(controller, None)


@dataclass
class ScheduleDecision:
    controller: str
    worker: str
    trace: list
    script_version: Optional[int]
    snapshot_version: int
    tag: Optional[str] = None
    block: Optional[int] = None
    tier: Tier = Tier.PRIMARY
    queued: bool = False  # no headroom anywhere: wait in the worker's FIFO queue
    retries: int = 0  # gateway-level re-dispatches to other controllers


@dataclass
class RoutePlan:
    tag_name: str
    blocks: list  # block indices in the order they will be tried


def check_invalid(worker_state: WorkerRuntimeState, grant, rule, controller: str,
                  overload_threshold: int = PLATFORM_OVERLOAD_THRESHOLD) -> bool:
    """Whether ``rule`` makes the worker ineligible for ``controller``.

    Thresholds are inclusive: a worker exactly at the limit is invalid.
    """
    if grant.memory_share <= 0:
        return True
    if rule is None:
        return False
    if isinstance(rule, CapacityUsed):
        return worker_state.committed_by(controller) * 100 >= rule.percent * grant.memory_share
    if isinstance(rule, MaxConcurrentInvocations):
        return worker_state.queued_invocations >= rule.n
    if isinstance(rule, Overload):
        return worker_state.queued_invocations >= overload_threshold
    raise TypeError(f"unknown invalidation rule {rule!r}")


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def coprimes(n: int) -> list:
    """Step sizes that generate all of Z_n."""
    return [k for k in range(n) if math.gcd(k, n) == 1]


def coprime_order(n: int, home: int, step: int) -> list:
    return [(home + i * step) % n for i in range(n)]


def coprime_fallback(function_id: str, workers, salt: str = "") -> list:
    """Worker preference list of co-prime scheduling.

    A hash of the function picks the home worker; a second hash picks a step
    co-prime with the number of workers, so walking home, home+step, ...
    visits every worker exactly once.
    """
    workers = list(workers)
    n = len(workers)
    if n == 0:
        return []
    home = _stable_hash(f"{salt}|{function_id}") % n
    steps = coprimes(n)
    step = steps[_stable_hash(f"{salt}|{function_id}|step") % len(steps)]
    return [workers[i] for i in coprime_order(n, home, step)]


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class _BlockFailed(Exception):
    def __init__(self, reason: FailureReason):
        self.reason = reason


class Scheduler:
    """Gateway plus controllers for one deployment.

    ``prefer_colocated=False`` with the ``default`` policy reproduces the
    topology-agnostic vanilla behaviour on the no-script path: no
    co-location preference and no gateway re-dispatch.
    """

    def __init__(self, topology, policy=DistributionPolicy.DEFAULT, *, allotment=None, salt: str = "",
                 prefer_colocated: bool = True, overload_threshold: int = PLATFORM_OVERLOAD_THRESHOLD):
        self.topology = topology
        self.policy = DistributionPolicy(policy)
        self.allotment = allotment if allotment is not None else compute_allotment(topology, self.policy)
        self.salt = salt
        self.prefer_colocated = prefer_colocated
        self.overload_threshold = overload_threshold
        self._workers = {w.id: w for w in topology.workers}
        self._controllers = {c.id: c for c in topology.controllers}

    # -- helpers -----------------------------------------------------------

    def _order(self, items, strategy, rng, function_id: str) -> list:
        items = list(items)
        if strategy is Strategy.RANDOM:
            return [items[i] for i in rng.permutation(len(items))]
        if strategy is Strategy.PLATFORM:
            return coprime_fallback(function_id, items, self.salt)
        return items

    def headroom(self, state: ClusterState, controller: str, worker: str) -> int:
        w = self._workers[worker]
        ws = state.workers[worker]
        grant = self.allotment.grant(controller, worker)
        free = w.memory_capacity - ws.total_committed
        if grant.tier is Tier.DENIED:
            return 0
        if grant.tier is Tier.OVERFLOW:
            return free
        return min(grant.memory_share - ws.committed_by(controller), free)

    def _commit(self, state: ClusterState, decision: ScheduleDecision, demand: int) -> None:
        state.workers[decision.worker].queued_invocations += 1
        if not decision.queued:
            state.commit(decision.controller, decision.worker, demand)

    # -- gateway -----------------------------------------------------------

    def route(self, request: InvocationRequest, script: Optional[AppScript], snap, rng, trace=None):
        """Pick the policy tag and the order of its blocks; ``None`` means fallback."""
        trace = [] if trace is None else trace
        if script is None or not script.tags:
            trace.append(TraceStep("fallback", {"why": "no script"}))
            return None
        if request.tag is not None and request.tag in script.tags:
            name = request.tag
        elif "default" in script.tags:
            name = "default"
        else:
            trace.append(TraceStep("fallback", {"why": "no matching tag and no default tag", "tag": request.tag}))
            return None
        trace.append(TraceStep("tag", {"tag": name, "requested": request.tag}))
        return self._plan(name, script, request, snap, rng, trace)

    def _plan(self, name: str, script: AppScript, request, snap, rng, trace) -> RoutePlan:
        tag = script.tags[name]
        order = self._order(range(len(tag.blocks)), tag.strategy, rng, request.function_id)
        usable = []
        for idx in order:
            if self._a_priori_empty(tag.blocks[idx], snap):
                trace.append(TraceStep("block-skip", {"tag": name, "block": idx, "why": "no live worker matches"}))
            else:
                usable.append(idx)
        return RoutePlan(name, usable)

    def _members(self, clause, snap) -> list:
        if isinstance(clause, NamedWorker):
            ids = snap.workers_with_label(clause.label)
        elif clause.scope is None:
            ids = list(snap.workers)
        else:
            ids = snap.workers_with_label(clause.scope)
        return [w for w in ids if w in self._workers]

    def _a_priori_empty(self, block: Block, snap) -> bool:
        return not any(snap.alive(w) for c in block.workers for w in self._members(c, snap))

    def _round_robin(self, snap, state: ClusterState, exclude=None) -> Optional[str]:
        alive = [c for c in snap.alive_controllers() if c != exclude]
        if not alive:
            return None
        ctl = alive[state.gateway_cursor % len(alive)]
        state.gateway_cursor += 1
        return ctl

    def failover(self, block: Block, faulty: str, snap, state: ClusterState, trace: list):
        """Replacement controller and zone restriction for a dead block controller.

        Returns ``(controller, restriction)`` where ``restriction`` is a
        frozenset of zones every chosen worker must lie in.
        """
        tolerance = block.controller.tolerance or Tolerance.ALL
        if tolerance is Tolerance.NONE:
            trace.append(TraceStep("failover", {"faulty": faulty, "tolerance": "none", "outcome": "forbidden"}))
            raise _BlockFailed(FailureReason.CONTROLLER_UNAVAILABLE_TOLERANCE_NONE)
        alive = [c for c in snap.alive_controllers() if c != faulty]
        if not alive:
            trace.append(TraceStep("failover", {"faulty": faulty, "tolerance": tolerance.value, "outcome": "no live controller"}))
            raise _BlockFailed(FailureReason.NO_ELIGIBLE_WORKERS)
        ctl = alive[state.failover_cursor % len(alive)]
        state.failover_cursor += 1
        restriction = frozenset([snap.zone(faulty)]) if tolerance is Tolerance.SAME else frozenset()
        trace.append(
            TraceStep(
                "failover",
                {"faulty": faulty, "tolerance": tolerance.value, "controller": ctl,
                 "zone_restriction": sorted(restriction, key=str)},
            )
        )
        return ctl, restriction

    # -- controller --------------------------------------------------------

    def _verdict(self, worker, rule, controller, restriction, state, snap, demand, phase) -> Optional[str]:
        if not snap.alive(worker):
            return "down"
        grant = self.allotment.grant(controller, worker)
        if grant.tier is Tier.DENIED:
            return "denied"
        if phase is Tier.PRIMARY and grant.tier is Tier.OVERFLOW:
            return "overflow-deferred"
        if any(snap.zone(worker) != z for z in restriction):
            return "zone"
        if check_invalid(state.workers[worker], grant, rule, controller, self.overload_threshold):
            return "invalid"
        if self.headroom(state, controller, worker) < demand:
            return "no-headroom"
        return None

    def select_worker(self, block: Block, controller: str, restriction, state: ClusterState, snap, rng,
                      request: InvocationRequest, trace: list):
        """First eligible worker of ``block`` for ``controller``, or ``None`` when exhausted.

        Overflow-tier workers are considered only once every primary-tier
        worker of the block has been ruled out.
        """
        fid = request.function_id
        candidates = []
        seen = set()
        for clause in self._order(block.workers, block.strategy, rng, fid):
            if isinstance(clause, WorkerSet):
                strategy = clause.strategy or block.strategy
                rule = clause.invalidate if clause.invalidate is not None else block.invalidate
            else:
                strategy, rule = block.strategy, block.invalidate
            for w in self._order(self._members(clause, snap), strategy, rng, fid):
                if w not in seen:
                    seen.add(w)
                    candidates.append((w, rule))
        for phase in (Tier.PRIMARY, Tier.OVERFLOW):
            for w, rule in candidates:
                if phase is Tier.OVERFLOW and self.allotment.grant(controller, w).tier is not Tier.OVERFLOW:
                    continue
                why = self._verdict(w, rule, controller, restriction, state, snap, request.memory_demand, phase)
                if why is None:
                    ws = state.workers[w]
                    grant = self.allotment.grant(controller, w)
                    trace.append(
                        TraceStep(
                            "accept",
                            {
                                "controller": controller,
                                "worker": w,
                                "tier": grant.tier.value,
                                "zone": snap.zone(w),
                                "zone_restriction": sorted(restriction, key=str),
                                "rule": None if rule is None else rule.render(),
                                "grant_mb": grant.memory_share,
                                "committed_mb": ws.committed_by(controller),
                                "worker_committed_mb": ws.total_committed,
                                "capacity_mb": self._workers[w].memory_capacity,
                                "queued": ws.queued_invocations,
                                "demand_mb": request.memory_demand,
                            },
                        )
                    )
                    return w
                trace.append(TraceStep("skip", {"worker": w, "why": why}))
        return None

    def _try_block(self, name, idx, block, request, snap, state, rng, restriction, trace):
        trace.append(TraceStep("block", {"tag": name, "block": idx}))
        new_restriction = frozenset()
        if block.controller is None:
            ctl = self._round_robin(snap, state)
            if ctl is None:
                trace.append(TraceStep("controller", {"outcome": "no live controller"}))
                raise _BlockFailed(FailureReason.NO_ELIGIBLE_WORKERS)
            trace.append(TraceStep("controller", {"controller": ctl, "via": "round-robin"}))
        else:
            matches = snap.controllers_with_label(block.controller.label)
            if not matches:
                trace.append(TraceStep("controller", {"label": block.controller.label, "outcome": "unresolved"}))
                raise _BlockFailed(FailureReason.NO_ELIGIBLE_WORKERS)
            ctl = matches[0]
            if snap.alive(ctl):
                trace.append(TraceStep("controller", {"controller": ctl, "via": "label"}))
            else:
                ctl, new_restriction = self.failover(block, ctl, snap, state, trace)
        effective = restriction | new_restriction
        worker = self.select_worker(block, ctl, effective, state, snap, rng, request, trace)
        return ctl, worker, new_restriction

    def apply_followup(self, name: str, script: AppScript, entered_default: bool, trace: list) -> str:
        """Next tag to try after ``name`` is exhausted; raises on abort."""
        tag = script.tags[name]
        if name == "default" or entered_default:
            trace.append(TraceStep("failure", {"reason": FailureReason.DEFAULT_EXHAUSTED.value}))
            raise SchedulingFailure(FailureReason.DEFAULT_EXHAUSTED, trace)
        if (tag.followup or Followup.DEFAULT) is Followup.FAIL:
            trace.append(TraceStep("failure", {"reason": FailureReason.TAG_FAILED_WITH_FAIL.value, "tag": name}))
            raise SchedulingFailure(FailureReason.TAG_FAILED_WITH_FAIL, trace)
        if "default" not in script.tags:
            trace.append(TraceStep("failure", {"reason": FailureReason.NO_ELIGIBLE_WORKERS.value, "why": "no default tag"}))
            raise SchedulingFailure(FailureReason.NO_ELIGIBLE_WORKERS, trace)
        trace.append(TraceStep("followup", {"from": name, "to": "default"}))
        return "default"

    # -- whole pipeline ----------------------------------------------------

    def schedule(self, request: InvocationRequest, script: Optional[AppScript], snap, state: ClusterState, rng,
                 *, script_version: Optional[int] = None) -> ScheduleDecision:
        """Schedule one request, committing its memory in ``state`` on success.

        Raises :class:`SchedulingFailure` when the request cannot run.
        """
        rng = as_rng(rng)
        trace: list = []
        if script_version is None and script is not None:
            script_version = script.source_version
        plan = self.route(request, script, snap, rng, trace)
        if plan is None:
            return self._fallback(request, snap, state, trace, script_version)
        inherited = frozenset()  # zone restriction carried over from a failed-over tag
        entered_default = False
        while True:
            name = plan.tag_name
            entered_default = entered_default or name == "default"
            tag = script.tags[name]
            forbidden = False
            carried = inherited
            for idx in plan.blocks:
                try:
                    ctl, worker, new_r = self._try_block(
                        name, idx, tag.blocks[idx], request, snap, state, rng, inherited, trace
                    )
                except _BlockFailed as exc:
                    forbidden |= exc.reason is FailureReason.CONTROLLER_UNAVAILABLE_TOLERANCE_NONE
                    continue
                carried |= new_r
                if worker is not None:
                    decision = ScheduleDecision(
                        ctl, worker, trace, script_version, snap.version, tag=name, block=idx,
                        tier=self.allotment.grant(ctl, worker).tier,
                    )
                    self._commit(state, decision, request.memory_demand)
                    return decision
            trace.append(TraceStep("exhausted", {"tag": name}))
            if forbidden:
                reason = FailureReason.CONTROLLER_UNAVAILABLE_TOLERANCE_NONE
                trace.append(TraceStep("failure", {"reason": reason.value, "tag": name}))
                raise SchedulingFailure(reason, trace)
            nxt = self.apply_followup(name, script, entered_default, trace)
            inherited = carried
            if inherited:
                trace.append(TraceStep("zone-restriction", {"zones": sorted(inherited, key=str)}))
            plan = self._plan(nxt, script, request, snap, rng, trace)

    def preference(self, controller: str, function_id: str, snap) -> list:
        """Co-prime worker order for the no-script path, filtered by allotment tier."""
        live = [w for w in snap.workers if w in self._workers and snap.alive(w)]
        order = coprime_fallback(function_id, live, self.salt)
        order = [w for w in order if self.allotment.grant(controller, w).tier is not Tier.DENIED]
        if not self.prefer_colocated:
            return order

        def rank(w):
            tier = self.allotment.grant(controller, w).tier
            near = snap.zone(w) is not None and snap.zone(w) == snap.zone(controller)
            return (tier is Tier.OVERFLOW, not near)

        return sorted(order, key=rank)

    def _fallback(self, request, snap, state, trace, script_version) -> ScheduleDecision:
        alive = snap.alive_controllers()
        if not alive:
            trace.append(TraceStep("failure", {"reason": FailureReason.NO_ELIGIBLE_WORKERS.value, "why": "no live controller"}))
            raise SchedulingFailure(FailureReason.NO_ELIGIBLE_WORKERS, trace)
        start = state.gateway_cursor % len(alive)
        state.gateway_cursor += 1
        ring = alive[start:] + alive[:start]
        if not self.prefer_colocated:
            ring = ring[:1]  # vanilla controllers never hand a request back
        forced = None
        for attempt, ctl in enumerate(ring):
            if attempt:
                trace.append(TraceStep("gateway-retry", {"controller": ctl}))
            else:
                trace.append(TraceStep("controller", {"controller": ctl, "via": "round-robin"}))
            prefs = self.preference(ctl, request.function_id, snap)
            trace.append(TraceStep("coprime", {"controller": ctl, "order": prefs}))
            if forced is None and prefs:
                forced = (ctl, prefs[0])
            for w in prefs:
                if self.headroom(state, ctl, w) >= request.memory_demand:
                    decision = self._accept_fallback(request, snap, state, trace, script_version, ctl, w, attempt, False)
                    return decision
                trace.append(TraceStep("skip", {"worker": w, "why": "no-headroom"}))
            trace.append(TraceStep("controller-full", {"controller": ctl}))
        if forced is None:
            trace.append(TraceStep("failure", {"reason": FailureReason.NO_ELIGIBLE_WORKERS.value}))
            raise SchedulingFailure(FailureReason.NO_ELIGIBLE_WORKERS, trace)
        ctl, w = forced
        return self._accept_fallback(request, snap, state, trace, script_version, ctl, w, len(ring) - 1, True)

    def _accept_fallback(self, request, snap, state, trace, script_version, ctl, w, retries, queued):
        ws = state.workers[w]
        grant = self.allotment.grant(ctl, w)
        trace.append(
            TraceStep(
                "accept",
                {
                    "controller": ctl,
                    "worker": w,
                    "tier": grant.tier.value,
                    "zone": snap.zone(w),
                    "zone_restriction": [],
                    "rule": None,
                    "grant_mb": grant.memory_share,
                    "committed_mb": ws.committed_by(ctl),
                    "worker_committed_mb": ws.total_committed,
                    "capacity_mb": self._workers[w].memory_capacity,
                    "queued": ws.queued_invocations,
                    "demand_mb": request.memory_demand,
                    "enqueued": queued,
                },
            )
        )
        decision = ScheduleDecision(ctl, w, trace, script_version, snap.version, tier=grant.tier,
                                    queued=queued, retries=retries)
        self._commit(state, decision, request.memory_demand)
        return decision


def schedule(request, script, snap, topology, policy, state, rng, **kwargs) -> ScheduleDecision:
    """One-shot convenience wrapper around :class:`Scheduler`."""
    return Scheduler(topology, policy, **kwargs).schedule(request, script, snap, state, rng)


def trace_records(trace: list, request_id=None) -> list:
    out = []
    for i, step in enumerate(trace):
        rec = {"request": request_id, "seq": i, **step.to_record()}
        out.append(rec)
    return out


def trace_to_jsonl(trace: list, request_id=None) -> str:
    return "".join(json.dumps(r, sort_keys=True, default=str) + "\n" for r in trace_records(trace, request_id))
