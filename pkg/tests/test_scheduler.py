from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _gen import oracle_eligible, random_state, random_topology
from tapp.audit import audit_trace, followup_fail_respected
from tapp.lang import (
    CapacityUsed,
    MaxConcurrentInvocations,
    Overload,
    canonicalize,
    parse_script,
)
from tapp.scheduler import (
    ClusterState,
    FailureReason,
    InvocationRequest,
    Scheduler,
    SchedulingFailure,
    WorkerRuntimeState,
    check_invalid,
    coprime_fallback,
    coprime_order,
    coprimes,
    schedule,
    trace_to_jsonl,
)
from tapp.topology import Grant, Tier, compute_allotment
from tapp.watcher import snapshot


def req(tag=None, fid="f", demand=256, rid=0):
    return InvocationRequest(rid, fid, tag, demand)


def run(topology, script, tag=None, policy="default", liveness=None, state=None, seed=0, **kw):
    snap = snapshot(topology, liveness)
    state = state or ClusterState.fresh(topology)
    return Scheduler(topology, policy, **kw).schedule(req(tag), script, snap, state, np.random.default_rng(seed))


# --------------------------------------------------------------------------
# check_invalid


def test_check_invalid_examples():
    ws = WorkerRuntimeState("w", {"c": 512}, queued_invocations=3)
    assert check_invalid(ws, Grant(1024, Tier.PRIMARY), CapacityUsed(50), "c")
    assert not check_invalid(ws, Grant(1025, Tier.PRIMARY), CapacityUsed(50), "c")
    assert not check_invalid(ws, Grant(1024, Tier.PRIMARY), MaxConcurrentInvocations(4), "c")
    assert check_invalid(ws, Grant(1024, Tier.PRIMARY), MaxConcurrentInvocations(3), "c")
    ws.queued_invocations = 16
    assert check_invalid(ws, Grant(1024, Tier.PRIMARY), Overload(), "c")
    ws.queued_invocations = 15
    assert not check_invalid(ws, Grant(1024, Tier.PRIMARY), Overload(), "c")
    assert check_invalid(ws, Grant(0, Tier.DENIED), None, "c")


def test_capacity_used_100_admits_empty_worker():
    ws = WorkerRuntimeState("w")
    assert not check_invalid(ws, Grant(256, Tier.PRIMARY), CapacityUsed(100), "c")


# --------------------------------------------------------------------------
# co-prime fallback


def test_coprime_permutation_exhaustive():
    for n in range(1, 51):
        steps = coprimes(n)
        assert steps, n
        for home in range(n):
            for step in steps:
                assert sorted(coprime_order(n, home, step)) == list(range(n))


def test_coprime_singleton_and_stability():
    assert coprime_fallback("f", ["only"]) == ["only"]
    ws = [f"w{i}" for i in range(7)]
    assert coprime_fallback("f", ws, "s") == coprime_fallback("f", ws, "s")
    assert sorted(coprime_fallback("g", ws)) == sorted(ws)
    assert coprime_fallback("f", []) == []


@given(st.text(max_size=20), st.text(max_size=8), st.integers(1, 50))
def test_coprime_fallback_permutation(fid, salt, n):
    ws = [f"w{i}" for i in range(n)]
    assert sorted(coprime_fallback(fid, ws, salt)) == sorted(ws)


# --------------------------------------------------------------------------
# case-study script semantics


def test_route_critical(case_topology, case_script):
    d = run(case_topology, case_script, "critical")
    assert (d.controller, d.tag, d.block) == ("LocalCtl_1", "critical", 0)
    assert d.worker in ("W1", "W2")
    assert d.trace[-1].kind == "accept"


def test_untagged_uses_default_tag_random_blocks(case_topology, case_script):
    ctls = Counter(run(case_topology, case_script, None, seed=s).controller for s in range(200))
    assert set(ctls) == {"LocalCtl_1", "LocalCtl_2"}
    assert min(ctls.values()) > 60


def test_unknown_tag_goes_to_default(case_topology, case_script):
    assert run(case_topology, case_script, "nope").tag == "default"


def test_no_script_fallback(case_topology):
    d = run(case_topology, None)
    kinds = [s.kind for s in d.trace]
    assert kinds[0] == "fallback" and "coprime" in kinds and d.controller == "LocalCtl_1"


def test_critical_fails_without_default(case_topology, case_script):
    with pytest.raises(SchedulingFailure) as info:
        run(case_topology, case_script, "critical", liveness={"W1": False, "W2": False})
    assert info.value.reason is FailureReason.TAG_FAILED_WITH_FAIL
    assert not any(s.detail.get("tag") == "default" for s in info.value.trace)


def test_default_offloads_to_cloud_when_internal_full(case_topology, case_script):
    state = ClusterState.fresh(case_topology)
    allot = compute_allotment(case_topology, "default")
    for w in ("W3", "W4"):
        for c in ("LocalCtl_1", "LocalCtl_2"):
            state.commit(c, w, allot.grant(c, w).memory_share)
    d = run(case_topology, case_script, None, state=state)
    assert d.worker in ("W5", "W6")


def test_failover_same_restricts_zone(case_topology, case_script):
    d = run(case_topology, case_script, "machine_learning", liveness={"CloudCtl": False})
    assert d.controller in ("LocalCtl_1", "LocalCtl_2")
    assert d.worker in ("W5", "W6")
    fo = next(s for s in d.trace if s.kind == "failover")
    assert fo.detail["zone_restriction"] == ["cloud"]


def test_followup_keeps_zone_restriction(case_topology, case_script):
    state = ClusterState.fresh(case_topology)
    for w in ("W5", "W6"):
        state.commit("CloudCtl", w, 4096)
    with pytest.raises(SchedulingFailure) as info:
        run(case_topology, case_script, "machine_learning", liveness={"CloudCtl": False}, state=state)
    trace = info.value.trace
    assert info.value.reason is FailureReason.DEFAULT_EXHAUSTED
    assert any(s.kind == "zone-restriction" and s.detail["zones"] == ["cloud"] for s in trace)
    # local workers were free but outside the inherited zone
    assert any(s.kind == "skip" and s.detail["why"] == "zone" for s in trace)


def test_tolerance_none():
    from tapp.fixtures import builtin_topology

    topo = builtin_topology("case-study")
    script = canonicalize(parse_script(
        "t:\n  - controller: CloudCtl\n    topology_tolerance: none\n    workers:\n      - *cloud\n"
        "default:\n  - workers:\n      - *\n"
    ))
    with pytest.raises(SchedulingFailure) as info:
        run(topo, script, "t", liveness={"CloudCtl": False})
    assert info.value.reason is FailureReason.CONTROLLER_UNAVAILABLE_TOLERANCE_NONE
    assert run(topo, script, "t").controller == "CloudCtl"


def test_followup_default_without_default_tag(case_topology):
    script = canonicalize(parse_script("t:\n  - workers:\n      - W1\n"))
    with pytest.raises(SchedulingFailure) as info:
        run(case_topology, script, "t", liveness={"W1": False})
    assert info.value.reason is FailureReason.NO_ELIGIBLE_WORKERS


def test_capacity_boundary_skips_worker(case_topology):
    script = canonicalize(parse_script(
        "t:\n  - controller: LocalCtl_1\n    workers:\n      - W3\n      - W4\n    invalidate: capacity_used: 50%\n"
    ))
    state = ClusterState.fresh(case_topology)
    allot = compute_allotment(case_topology, "isolated")  # LocalCtl_1 gets 1024 of W3
    state.commit("LocalCtl_1", "W3", 512)
    d = run(case_topology, script, "t", policy="isolated", state=state)
    assert d.worker == "W4"
    assert allot.grant("LocalCtl_1", "W3").memory_share == 1024


def test_random_strategy_is_uniform(case_topology):
    script = canonicalize(parse_script(
        "t:\n  - controller: CloudCtl\n    workers:\n      - W4\n      - W5\n      - W6\n    strategy: random\n"
    ))
    sched = Scheduler(case_topology, "default")
    snap = snapshot(case_topology)
    rng = np.random.default_rng(12345)
    counts = Counter(sched.schedule(req("t"), script, snap, ClusterState.fresh(case_topology), rng).worker for _ in range(3000))
    assert set(counts) == {"W4", "W5", "W6"}
    assert all(900 <= c <= 1100 for c in counts.values()), counts


def test_gateway_retries_other_controller_under_isolated(bench_topology):
    state = ClusterState.fresh(bench_topology)
    state.commit("FranceCtl", "FW1", 2048)
    d = run(bench_topology, None, policy="isolated", state=state)
    assert d.controller == "EastCtl" and d.retries == 1
    assert any(s.kind == "gateway-retry" for s in d.trace)


def test_vanilla_queues_without_retry(bench_topology):
    state = ClusterState.fresh(bench_topology)
    for w in ("FW1", "EW1", "EW2"):
        state.commit("FranceCtl", w, 1024)
    d = run(bench_topology, None, state=state, prefer_colocated=False)
    assert d.controller == "FranceCtl" and d.queued and d.retries == 0


def test_colocated_first_in_fallback(bench_topology):
    sched = Scheduler(bench_topology, "default")
    snap = snapshot(bench_topology)
    assert sched.preference("FranceCtl", "f", snap)[0] == "FW1"
    assert set(sched.preference("EastCtl", "f", snap)[:2]) == {"EW1", "EW2"}


def test_shared_overflow_after_primary(bench_topology):
    script = canonicalize(parse_script("t:\n  - controller: FranceCtl\n    workers:\n      - *\n"))
    state = ClusterState.fresh(bench_topology)
    d = run(bench_topology, script, "t", policy="shared", state=state)
    assert d.worker == "FW1" and d.tier is Tier.PRIMARY
    state.commit("FranceCtl", "FW1", 2048 - 256)
    d = run(bench_topology, script, "t", policy="shared", state=state)
    assert d.worker in ("EW1", "EW2") and d.tier is Tier.OVERFLOW


def test_module_level_schedule_commits(case_topology, case_script):
    state = ClusterState.fresh(case_topology)
    d = schedule(req("critical"), case_script, snapshot(case_topology), case_topology, "default", state, 3)
    assert state.workers[d.worker].committed_by(d.controller) == 256
    assert state.workers[d.worker].queued_invocations == 1


def test_trace_jsonl(case_topology, case_script):
    import json

    d = run(case_topology, case_script, "critical")
    lines = trace_to_jsonl(d.trace, 7).splitlines()
    assert len(lines) == len(d.trace)
    assert json.loads(lines[-1])["step"] == "accept" and json.loads(lines[0])["request"] == 7


# --------------------------------------------------------------------------
# properties


@given(st.integers(0, 2**32 - 1))
def test_determinism(seed):
    from _gen import random_liveness, random_script

    rng = np.random.default_rng(seed)
    topo = random_topology(rng)
    script = random_script(rng, topo) if rng.random() < 0.8 else None
    allot = compute_allotment(topo, "default")
    state = random_state(rng, topo, allot)
    snap = snapshot(topo, random_liveness(rng, topo))
    outs = []
    for _ in range(2):
        st_ = state.copy()
        try:
            d = Scheduler(topo, "default", allotment=allot).schedule(req("t0"), script, snap, st_, np.random.default_rng(seed))
            outs.append((d.controller, d.worker, [str(s) for s in d.trace]))
        except SchedulingFailure as exc:
            outs.append((exc.reason, [str(s) for s in exc.trace]))
    assert outs[0] == outs[1]


@given(st.integers(0, 2**32 - 1))
def test_universal_script_matches_vanilla_eligibility(seed):
    """A single ``*`` block with defaults accepts exactly when co-prime fallback finds room."""
    rng = np.random.default_rng(seed)
    topo = random_topology(rng)
    allot = compute_allotment(topo, "default")
    state = random_state(rng, topo, allot)
    from _gen import random_liveness

    snap = snapshot(topo, random_liveness(rng, topo))
    script = canonicalize(parse_script("default:\n  - workers:\n      - *\n"))
    sched = Scheduler(topo, "default", allotment=allot, prefer_colocated=False)
    s1, s2 = state.copy(), state.copy()
    try:
        tapp_worker = sched.schedule(req(), script, snap, s1, np.random.default_rng(0)).worker
    except SchedulingFailure:
        tapp_worker = None
    if not snap.alive_controllers():
        return
    try:
        fb = sched.schedule(req(), None, snap, s2, np.random.default_rng(0))
    except SchedulingFailure:
        assert tapp_worker is None  # no live worker at all
        return
    assert (tapp_worker is None) == fb.queued
    ctl = fb.controller
    for w in [tapp_worker, None if fb.queued else fb.worker]:
        if w is not None:
            assert oracle_eligible(topo, allot, state, snap, ctl, w, None, (), 256)


def test_audit_flags_violations(case_topology, case_script):
    d = run(case_topology, case_script, "critical")
    assert audit_trace(d.trace) == []
    assert followup_fail_respected(d.trace, case_script)
    for key, value in [("tier", "denied"), ("committed_mb", 10_000), ("zone_restriction", ["cloud"]),
                       ("rule", "max_concurrent_invocations: 1"), ("worker_committed_mb", 1024)]:
        bad = [type(s)(s.kind, dict(s.detail)) for s in d.trace]
        bad[-1].detail[key] = value
        if key == "rule":
            bad[-1].detail["queued"] = 1
        assert len(audit_trace(bad)) == 1, key
