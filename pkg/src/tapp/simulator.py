"""Discrete-event simulation of a multi-zone serverless cluster.

Closed-loop users send invocations through the gateway; each request is
scheduled (with or without a TAPP script), travels to its worker, possibly
waits in the worker's FIFO queue, pays a cold start when no warm container
is cached, fetches its data and executes.  The clock counts integer
microseconds so event ordering never depends on float rounding.
"""

from __future__ import annotations

import csv
import heapq
import io
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .audit import audit_trace
from .lang import AppScript, ParseError
from .scheduler import (
    ClusterState,
    InvocationRequest,
    SchedulingFailure,
    Scheduler,
    trace_records,
)
from .topology import DistributionPolicy, Tier, compute_allotment
from .watcher import PolicyStore, PolicyUpdated, Watcher

log = logging.getLogger(__name__)

US_PER_MS = 1000
US_PER_S = 1_000_000
DEFAULT_SEED = 1
VANILLA = "vanilla"


class SimulationError(ValueError):
    pass


def _us(ms: float) -> int:
    return int(round(ms * US_PER_MS))


@dataclass(frozen=True)
class ExecTime:
    """Normal distribution truncated at zero; ``stddev_ms=0`` is a constant."""

    mean_ms: float
    stddev_ms: float = 0.0

    def __post_init__(self):
        if self.mean_ms < 0 or self.stddev_ms < 0:
            raise ValueError("execution times must be >= 0")

    def sample_us(self, rng: np.random.Generator) -> int:
        if self.stddev_ms == 0:
            return _us(self.mean_ms)
        return max(0, _us(rng.normal(self.mean_ms, self.stddev_ms)))


@dataclass(frozen=True)
class FunctionSpec:
    exec_time: ExecTime
    memory_demand: int = 256
    init_time_ms: float = 300.0
    payload_bytes: int = 0
    data_service: Optional[str] = None
    data_bytes: int = 0
    data_round_trips: int = 1

    def __post_init__(self):
        if self.memory_demand <= 0:
            raise ValueError("memory_demand must be positive")
        if min(self.init_time_ms, self.payload_bytes, self.data_bytes, self.data_round_trips) < 0:
            raise ValueError("function times and sizes must be >= 0")


@dataclass(frozen=True)
class WorkloadProfile:
    name: str
    users: int
    ramp_up_s: float
    repetitions: int
    pause_s: float
    function: FunctionSpec
    function_id: Optional[str] = None
    runs: int = 10

    def __post_init__(self):
        if self.users < 1 or self.repetitions < 1:
            raise ValueError("a workload needs at least one user and one repetition")
        if self.ramp_up_s < 0 or self.pause_s < 0:
            raise ValueError("ramp-up and pause must be >= 0")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")

    @property
    def fid(self) -> str:
        return self.function_id or self.name

    @property
    def total_requests(self) -> int:
        return self.users * self.repetitions


@dataclass(frozen=True)
class LatencyModel:
    """Costs that are not in the topology's round-trip matrix.

    Control traffic between a controller and its worker takes
    ``control_round_trips`` round trips (dispatch through the message bus
    plus the completion acknowledgement).  Scheduling itself costs
    ``vanilla_sched_ms``; the topology-aware path adds
    ``topology_sched_ms`` and interpreting a script adds ``script_sched_ms``.
    """

    intra_zone_mbps: float = 100.0
    cross_zone_mbps: float = 20.0
    cache_ttl_s: float = 600.0
    control_round_trips: int = 2
    vanilla_sched_ms: float = 1.0
    topology_sched_ms: float = 0.2
    script_sched_ms: float = 1.0

    def __post_init__(self):
        if self.intra_zone_mbps <= 0 or self.cross_zone_mbps <= 0:
            raise ValueError("bandwidths must be positive")
        if self.cache_ttl_s < 0 or self.control_round_trips < 0:
            raise ValueError("ttl and round trips must be >= 0")
        if min(self.vanilla_sched_ms, self.topology_sched_ms, self.script_sched_ms) < 0:
            raise ValueError("scheduling costs must be >= 0")

    def bandwidth(self, topology, a, b) -> float:
        """MB/s between two zones (MB = 10**6 bytes)."""
        if (a, b) in topology.bandwidth:
            return topology.bandwidth[(a, b)]
        return self.intra_zone_mbps if a == b else self.cross_zone_mbps

    def transfer_us(self, topology, a, b, nbytes: int) -> int:
        if nbytes <= 0:
            return 0
        return int(round(nbytes / (self.bandwidth(topology, a, b) * 1e6) * US_PER_S))

    def rtt_us(self, topology, a, b) -> int:
        return _us(topology.rtt(a, b))


# --------------------------------------------------------------------------
# built-in workloads

_INIT_MS = 300.0


def builtin_profiles() -> dict:
    """The eight benchmark workloads, keyed by name."""

    def adhoc(name, fn, **kw):
        base = dict(users=4, ramp_up_s=10.0, repetitions=200, pause_s=0.0)
        base.update(kw)
        return WorkloadProfile(name, function=fn, **base)

    return {
        "hellojs": adhoc("hellojs", FunctionSpec(ExecTime(5.0, 1.0), init_time_ms=_INIT_MS)),
        "sleep": adhoc("sleep", FunctionSpec(ExecTime(3000.0), init_time_ms=_INIT_MS), repetitions=25),
        "matrixMult": adhoc("matrixMult", FunctionSpec(ExecTime(40.0, 5.0), init_time_ms=_INIT_MS)),
        "cold-start": WorkloadProfile(
            "cold-start", 1, 0.0, 3, 660.0, FunctionSpec(ExecTime(5.0), init_time_ms=2500.0), runs=3
        ),
        "slackpost": WorkloadProfile("slackpost", 1, 0.0, 100, 1.0, FunctionSpec(ExecTime(5.0, 1.0), init_time_ms=_INIT_MS)),
        "pycatj": adhoc("pycatj", FunctionSpec(ExecTime(5.0, 1.0), init_time_ms=_INIT_MS)),
        "mongoDB": adhoc(
            "mongoDB",
            FunctionSpec(ExecTime(5.0, 1.0), init_time_ms=_INIT_MS, data_service="mongodb", data_bytes=106),
        ),
        "data-locality": adhoc(
            "data-locality",
            FunctionSpec(
                ExecTime(200.0, 20.0), memory_demand=1024, init_time_ms=_INIT_MS,
                data_service="mongodb", data_bytes=124_380_000,
            ),
            repetitions=50,
        ),
    }


def profile_from_dict(doc: dict) -> WorkloadProfile:
    """Build a workload from a mapping (e.g. a YAML workload file)."""
    doc = dict(doc)
    fn = dict(doc.pop("function", {}))
    exec_doc = fn.pop("exec_time_ms", 0.0)
    if isinstance(exec_doc, dict):
        exec_time = ExecTime(float(exec_doc.get("mean", 0.0)), float(exec_doc.get("stddev", 0.0)))
    else:
        exec_time = ExecTime(float(exec_doc))
    unknown = set(fn) - {"memory_demand", "init_time_ms", "payload_bytes", "data_service", "data_bytes", "data_round_trips"}
    if unknown:
        raise ValueError(f"unknown function keys: {sorted(unknown)}")
    spec = FunctionSpec(exec_time, **fn)
    extra = set(doc) - {"name", "users", "ramp_up_s", "repetitions", "pause_s", "function_id", "runs"}
    if extra:
        raise ValueError(f"unknown workload keys: {sorted(extra)}")
    if "name" not in doc:
        raise ValueError("workload needs a name")
    return WorkloadProfile(
        name=str(doc["name"]),
        users=int(doc.get("users", 4)),
        ramp_up_s=float(doc.get("ramp_up_s", 10.0)),
        repetitions=int(doc.get("repetitions", 200)),
        pause_s=float(doc.get("pause_s", 0.0)),
        function=spec,
        function_id=doc.get("function_id"),
        runs=int(doc.get("runs", 10)),
    )


# --------------------------------------------------------------------------
# results


@dataclass
class RequestRecord:
    request_id: int
    user: int
    arrival_us: int
    latency_us: int = 0
    ok: bool = False
    failure: Optional[str] = None
    controller: Optional[str] = None
    worker: Optional[str] = None
    tag: Optional[str] = None
    script_version: Optional[int] = None
    snapshot_version: Optional[int] = None
    retries: int = 0
    cold: bool = False
    queued: bool = False
    start_us: Optional[int] = None  # execution slot taken on the worker
    done_us: Optional[int] = None  # execution finished
    components: dict = field(default_factory=dict)  # name -> us
    trace: Optional[list] = None
    # engine bookkeeping, not reported
    _reps_left: int = field(default=0, repr=False)
    _out_us: int = field(default=0, repr=False)
    _enqueued_at: int = field(default=0, repr=False)

    @property
    def latency_ms(self) -> float:
        return self.latency_us / US_PER_MS

    def to_record(self) -> dict:
        rec = asdict(self)
        for k in ("trace", "_reps_left", "_out_us", "_enqueued_at"):
            rec.pop(k)
        return rec


@dataclass
class MetricsReport:
    profile: str
    variant: str
    seed: int
    run: int
    successes: int
    failures: int
    retries: int
    cold_starts: int
    mean_ms: float
    stddev_ms: float
    p50_ms: float
    p95_ms: float
    max_ms: float
    records: list = field(default_factory=list, repr=False, compare=False)

    @property
    def total(self) -> int:
        return self.successes + self.failures

    def summary_line(self) -> str:
        return f"{self.mean_ms:.3f};{self.stddev_ms:.3f}"

    def to_record(self) -> dict:
        rec = asdict(self)
        rec.pop("records")
        return rec


def _stats(values_ms) -> tuple:
    if len(values_ms) == 0:
        return (float("nan"),) * 5
    a = np.asarray(values_ms, dtype=float)
    return (
        float(a.mean()),
        float(a.std()),
        float(np.percentile(a, 50)),
        float(np.percentile(a, 95)),
        float(a.max()),
    )


def aggregate(reports) -> tuple:
    """Mean of the run means and their standard deviation."""
    means = np.asarray([r.mean_ms for r in reports], dtype=float)
    if means.size == 0:
        return float("nan"), float("nan")
    return float(means.mean()), float(means.std())


# --------------------------------------------------------------------------
# engine

# tie-break rank: cluster and policy changes first, then completions so that
# freed memory is visible to arrivals at the same instant
_CLUSTER, _DONE, _DATA, _COLD, _AT_WORKER, _ARRIVAL = range(6)


class _Run:
    def __init__(self, topology, policy, script, workload, timeline, seed, *, tag, latency, salt,
                 staleness_ms, keep_traces, audit, overload_threshold):
        self.vanilla = policy is None or policy == VANILLA
        if self.vanilla and script is not None:
            raise SimulationError("the vanilla baseline does not interpret TAPP scripts")
        self.topology = topology
        self.workload = workload
        self.latency = latency or LatencyModel()
        self.tag = tag
        self.keep_traces = keep_traces
        self.audit = audit
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        policy = DistributionPolicy.DEFAULT if self.vanilla else DistributionPolicy(policy)
        self.allotment = compute_allotment(topology, policy)
        self.scheduler = Scheduler(
            topology, policy, allotment=self.allotment, salt=salt,
            prefer_colocated=not self.vanilla, overload_threshold=overload_threshold,
        )
        self.watcher = Watcher(topology)
        self.store = PolicyStore(script)
        self.history = [(0, *self.store.current)]  # (visible from us, script, version)
        self.staleness_us = _us(staleness_ms)
        self.state = ClusterState.fresh(topology)
        self.queues = {w.id: [] for w in topology.workers}
        self.events: list = []
        self.seq = 0
        self.records: list = []
        self.sent = [0] * workload.users
        self.now = 0
        self._check_inputs(timeline)
        for t_ms, ev in timeline or []:
            self._push(_us(t_ms), _CLUSTER, -1, ("cluster", ev))

    def _check_inputs(self, timeline):
        fn = self.workload.function
        zones = {c.zone for c in self.topology.controllers} | {w.zone for w in self.topology.workers}
        if fn.data_service is not None:
            try:
                zones.add(self.topology.service(fn.data_service).zone)
            except KeyError:
                raise SimulationError(f"workload {self.workload.name!r} references unknown service {fn.data_service!r}") from None
        zones.add(self.topology.gateway_zone)
        zones.discard(None)
        for a in zones:
            for b in zones:
                if (a, b) not in self.topology.latency:
                    raise SimulationError(f"topology lacks the latency pair {a}/{b}")

    def _push(self, t, rank, rid, payload):
        self.seq += 1
        heapq.heappush(self.events, (t, rank, rid, self.seq, payload))

    # -- policy visibility -----------------------------------------------

    def _visible_script(self, t):
        """Newest script that has been visible for at least the staleness window."""
        chosen = self.history[0]
        for entry in self.history:
            if entry[0] + self.staleness_us <= t:
                chosen = entry
        return chosen[1], chosen[2]

    # -- main loop --------------------------------------------------------

    def run(self) -> list:
        w = self.workload
        for u in range(w.users):
            start = int(round(w.ramp_up_s * US_PER_S * u / w.users))
            self._push(start, _ARRIVAL, self._new_request(u, start), ("arrival",))
        while self.events:
            t, _rank, rid, _seq, payload = heapq.heappop(self.events)
            if t < self.now:
                raise AssertionError("event timestamps went backwards")
            self.now = t
            kind = payload[0]
            if kind == "cluster":
                self._on_cluster(payload[1])
            elif kind == "arrival":
                self._on_arrival(self.records[rid])
            elif kind == "at-worker":
                self._on_at_worker(self.records[rid])
            elif kind == "cold-done":
                self._on_cold_done(self.records[rid])
            elif kind == "data-done":
                self._on_data_done(self.records[rid])
            elif kind == "done":
                self._on_done(self.records[rid])
            if self.audit:
                self._check_memory()
        return self.records

    def _new_request(self, user, t) -> int:
        rec = RequestRecord(len(self.records), user, t)
        self.sent[user] += 1
        rec._reps_left = self.workload.repetitions - self.sent[user]
        self.records.append(rec)
        return rec.request_id

    def _on_cluster(self, event):
        if isinstance(event, PolicyUpdated):
            try:
                self.store.update_policy(event.text)
            except ParseError as exc:
                log.warning("policy update rejected at %d us: %s", self.now, exc)
                return
            self.history.append((self.now, *self.store.current))
        else:
            self.watcher.apply(event)

    def _sched_cost_us(self, decision_trace) -> int:
        lat = self.latency
        cost = lat.vanilla_sched_ms
        if not self.vanilla:
            cost += lat.topology_sched_ms
            if any(s.kind == "tag" for s in decision_trace):
                cost += lat.script_sched_ms
        return _us(cost)

    def _on_arrival(self, rec: RequestRecord):
        fn = self.workload.function
        req = InvocationRequest(rec.request_id, self.workload.fid, self.tag, fn.memory_demand, rec.arrival_us / US_PER_MS)
        script, version = self._visible_script(self.now)
        snap = self.watcher.current
        topo = self.topology
        gw = topo.gateway_zone
        try:
            decision = self.scheduler.schedule(req, script, snap, self.state, self.rng, script_version=version)
        except SchedulingFailure as exc:
            rec.failure = exc.reason.value
            rec.script_version = version
            rec.snapshot_version = snap.version
            if self.keep_traces or self.audit:
                rec.trace = exc.trace
            sched = self._sched_cost_us(exc.trace)
            rec.components = {"sched": sched}
            rec.latency_us = sched
            self._finish(rec)
            return
        rec.controller, rec.worker, rec.tag = decision.controller, decision.worker, decision.tag
        rec.script_version, rec.snapshot_version = decision.script_version, decision.snapshot_version
        rec.retries, rec.queued = decision.retries, decision.queued
        if self.keep_traces or self.audit:
            rec.trace = decision.trace
        if self.audit:
            problems = audit_trace(decision.trace, self.scheduler.overload_threshold)
            if problems:
                raise AssertionError(f"request {rec.request_id}: {problems}")
        ctl_zone = topo.controller(decision.controller).zone
        w_zone = topo.worker(decision.worker).zone
        # each re-dispatch costs another gateway round trip and another scheduling pass
        sched = self._sched_cost_us(decision.trace)
        retried = [s.detail["controller"] for s in decision.trace if s.kind == "gateway-retry"]
        retry = sum(self.latency.rtt_us(topo, gw, topo.controller(c).zone) + sched for c in retried)
        gw_rtt = self.latency.rtt_us(topo, gw, ctl_zone)
        control = self.latency.control_round_trips * self.latency.rtt_us(topo, ctl_zone, w_zone)
        payload = self.latency.transfer_us(topo, gw, w_zone, fn.payload_bytes)
        rec.components = {"sched": sched, "retry": retry, "gateway": gw_rtt, "control": control + payload}
        rec._out_us = gw_rtt - gw_rtt // 2 + control - control // 2
        inbound = sched + retry + gw_rtt // 2 + control // 2 + payload
        self._push(self.now + inbound, _AT_WORKER, rec.request_id, ("at-worker",))

    def _on_at_worker(self, rec):
        if rec.queued:
            rec._enqueued_at = self.now
            self.queues[rec.worker].append(rec)
            self._admit(rec.worker)
        else:
            rec.components["queue"] = 0
            self._start(rec)

    def _admit(self, worker):
        q = self.queues[worker]
        demand = self.workload.function.memory_demand
        i = 0
        while i < len(q):
            rec = q[i]
            if self.scheduler.headroom(self.state, rec.controller, worker) >= demand:
                q.pop(i)
                self.state.commit(rec.controller, worker, demand)
                rec.components["queue"] = self.now - rec._enqueued_at
                self._start(rec)
            else:
                i += 1

    def _start(self, rec):
        fn = self.workload.function
        rec.start_us = self.now
        ws = self.state.workers[rec.worker]
        last = ws.warm_functions.get(self.workload.fid)
        ttl = int(round(self.latency.cache_ttl_s * US_PER_S))
        rec.cold = last is None or self.now - last > ttl
        init = _us(fn.init_time_ms) if rec.cold else 0
        rec.components["init"] = init
        if init:
            self._push(self.now + init, _COLD, rec.request_id, ("cold-done",))
        else:
            self._on_cold_done(rec)

    def _on_cold_done(self, rec):
        fn = self.workload.function
        topo = self.topology
        data = 0
        if fn.data_service is not None:
            w_zone = topo.worker(rec.worker).zone
            s_zone = topo.service(fn.data_service).zone
            data = fn.data_round_trips * self.latency.rtt_us(topo, w_zone, s_zone)
            data += self.latency.transfer_us(topo, w_zone, s_zone, fn.data_bytes)
        rec.components["data"] = data
        if data:
            self._push(self.now + data, _DATA, rec.request_id, ("data-done",))
        else:
            self._on_data_done(rec)

    def _on_data_done(self, rec):
        exec_us = self.workload.function.exec_time.sample_us(self.rng)
        rec.components["exec"] = exec_us
        self._push(self.now + exec_us, _DONE, rec.request_id, ("done",))

    def _on_done(self, rec):
        demand = self.workload.function.memory_demand
        self.state.release(rec.controller, rec.worker, demand)
        ws = self.state.workers[rec.worker]
        ws.queued_invocations -= 1
        ws.warm_functions[self.workload.fid] = self.now
        rec.ok = True
        rec.done_us = self.now
        rec.latency_us = self.now + rec._out_us - rec.arrival_us
        self._finish(rec)
        self._admit(rec.worker)

    def _finish(self, rec):
        if rec.ok and sum(rec.components.values()) != rec.latency_us:
            raise AssertionError(f"request {rec.request_id}: latency components do not add up")
        if rec._reps_left > 0:
            nxt = rec.arrival_us + rec.latency_us + int(round(self.workload.pause_s * US_PER_S))
            self._push(nxt, _ARRIVAL, self._new_request(rec.user, nxt), ("arrival",))

    def _check_memory(self):
        for w in self.topology.workers:
            ws = self.state.workers[w.id]
            if ws.total_committed > w.memory_capacity:
                raise AssertionError(f"worker {w.id} over capacity at {self.now} us")
            for ctl, mb in ws.committed.items():
                g = self.allotment.grant(ctl, w.id)
                if g.tier is Tier.DENIED or (g.tier is Tier.PRIMARY and mb > g.memory_share):
                    raise AssertionError(f"{ctl} over its grant on {w.id} at {self.now} us")


def run_simulation(topology, policy: Union[DistributionPolicy, str, None], script: Optional[AppScript] = None,
                   workload: Optional[WorkloadProfile] = None, timeline=None, seed: int = DEFAULT_SEED, *,
                   tag: Optional[str] = None, latency: Optional[LatencyModel] = None, salt: str = "",
                   staleness_ms: float = 0.0, keep_traces: bool = False, audit: bool = False,
                   overload_threshold: int = 16, variant: Optional[str] = None, run: int = 0) -> MetricsReport:
    """Simulate one run of ``workload``.

    ``policy`` is a distribution policy or ``"vanilla"`` for the
    topology-agnostic baseline.  ``timeline`` is a list of ``(time_ms,
    event)`` pairs.  ``audit=True`` re-checks every decision trace and the
    memory accounting after every event.
    """
    if workload is None:
        raise SimulationError("a workload profile is required")
    sim = _Run(topology, policy, script, workload, timeline, seed, tag=tag, latency=latency, salt=salt,
               staleness_ms=staleness_ms, keep_traces=keep_traces, audit=audit,
               overload_threshold=overload_threshold)
    records = sim.run()
    done = [r.latency_ms for r in records if r.ok]
    mean, std, p50, p95, mx = _stats(done)
    if variant is None:
        variant = VANILLA if sim.vanilla else DistributionPolicy(policy).value
    return MetricsReport(
        profile=workload.name,
        variant=variant,
        seed=seed,
        run=run,
        successes=len(done),
        failures=sum(1 for r in records if not r.ok),
        retries=sum(r.retries for r in records),
        cold_starts=sum(1 for r in records if r.ok and r.cold),
        mean_ms=mean,
        stddev_ms=std,
        p50_ms=p50,
        p95_ms=p95,
        max_ms=mx,
        records=records,
    )


def records_to_jsonl(report: MetricsReport, with_traces: bool = False) -> str:
    import json

    lines = []
    for r in report.records:
        rec = r.to_record()
        if with_traces and r.trace is not None:
            rec["trace"] = trace_records(r.trace, r.request_id)
        lines.append(json.dumps(rec, sort_keys=True, default=str))
    return "".join(line + "\n" for line in lines)


# --------------------------------------------------------------------------
# campaigns


@dataclass(frozen=True)
class Variant:
    name: str
    policy: Union[DistributionPolicy, str, None]  # None or "vanilla" for the baseline
    script: Optional[AppScript] = None
    tag: Optional[str] = None

    @property
    def vanilla(self) -> bool:
        return self.policy is None or self.policy == VANILLA


def standard_variants() -> list:
    """Vanilla baseline followed by the four distribution policies."""
    order = (DistributionPolicy.DEFAULT, DistributionPolicy.ISOLATED, DistributionPolicy.MIN_MEMORY,
             DistributionPolicy.SHARED)
    return [Variant(VANILLA, None)] + [Variant(p.value, p) for p in order]


@dataclass
class CampaignConfig:
    topology: object
    profiles: list
    variants: list = field(default_factory=standard_variants)
    runs: Optional[int] = None  # None: each profile's own default
    seed: int = DEFAULT_SEED
    redeploy_every: int = 2
    latency: Optional[LatencyModel] = None
    timeline: Optional[list] = None
    staleness_ms: float = 0.0
    jobs: int = 1
    keep_records: bool = False  # per-request records are dropped by default to keep results small
    audit: bool = False


def _key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def deployment(topology, seed: int, profile: str, index: int):
    """Worker order and co-prime salt of one re-deployment."""
    rng = np.random.default_rng([seed, _key(profile), index])
    order = [topology.workers[i].id for i in rng.permutation(len(topology.workers))]
    return topology.with_worker_order(order), f"deploy-{seed}-{profile}-{index}"


def _run_job(job) -> MetricsReport:
    cfg, profile, variant, run = job
    topo, salt = deployment(cfg.topology, cfg.seed, profile.name, run // cfg.redeploy_every)
    # runs are paired across variants: same deployment, same request stream seed
    seed = int(np.random.SeedSequence([cfg.seed, _key(profile.name), run]).generate_state(1)[0])
    report = run_simulation(
        topo, variant.policy, variant.script, profile, cfg.timeline, seed,
        tag=variant.tag, latency=cfg.latency, salt=salt, staleness_ms=cfg.staleness_ms,
        variant=variant.name, run=run, audit=cfg.audit,
    )
    if not cfg.keep_records:
        report.records = []
    return report


@dataclass
class CampaignResult:
    reports: list
    variants: list
    profiles: list

    def runs_of(self, profile: str, variant: str) -> list:
        return sorted((r for r in self.reports if r.profile == profile and r.variant == variant), key=lambda r: r.run)

    def aggregate(self, profile: str, variant: str) -> tuple:
        return aggregate(self.runs_of(profile, variant))

    def table(self, profile: str) -> list:
        """Rows of "mean;stddev" cells, one column per variant, plus the aggregate row."""
        names = [v.name for v in self.variants]
        per = {n: self.runs_of(profile, n) for n in names}
        n_runs = max((len(v) for v in per.values()), default=0)
        rows = [["run", *names]]
        for i in range(n_runs):
            rows.append([str(i + 1), *(per[n][i].summary_line() if i < len(per[n]) else "" for n in names)])
        agg = []
        for n in names:
            m, s = aggregate(per[n])
            agg.append(f"{m:.3f};{s:.3f}")
        rows.append(["avg", *agg])
        return rows

    def to_csv(self, profile: str) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.table(profile))
        return buf.getvalue()


def run_campaign(config: CampaignConfig) -> CampaignResult:
    jobs = []
    for profile in config.profiles:
        runs = config.runs if config.runs is not None else profile.runs
        for run in range(runs):
            for variant in config.variants:
                jobs.append((config, profile, variant, run))
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            reports = list(pool.map(_run_job, jobs))
    else:
        reports = [_run_job(j) for j in jobs]
    return CampaignResult(reports, list(config.variants), [p.name for p in config.profiles])


def with_spacing(profile: WorkloadProfile, pause_s: float) -> WorkloadProfile:
    return replace(profile, pause_s=pause_s)
