"""Independent re-checks of scheduling decisions from their traces.

The scheduler records, in each ``accept`` step, the raw numbers it saw when
it picked the worker.  These functions re-derive eligibility from those
numbers alone, without calling into the scheduler.
"""

from __future__ import annotations

import re


def _rule_violated(rule, committed, grant, queued, overload_threshold) -> bool:
    if rule is None:
        return False
    if rule == "overload":
        return queued >= overload_threshold
    m = re.fullmatch(r"capacity_used: (\d+)%", rule)
    if m:
        return grant <= 0 or committed / grant >= int(m.group(1)) / 100
    m = re.fullmatch(r"max_concurrent_invocations: (\d+)", rule)
    if m:
        return queued >= int(m.group(1))
    raise ValueError(f"unrecognised rule {rule!r}")


def audit_trace(trace, overload_threshold: int = 16) -> list:
    """Return human-readable violations found in one decision trace."""
    problems = []
    if not trace:
        return ["empty trace"]
    if trace[-1].kind not in ("accept", "failure"):
        problems.append(f"trace ends with {trace[-1].kind!r}")
    kinds = [s.kind for s in trace]
    first_tag = next((s.detail["tag"] for s in trace if s.kind == "tag"), None)
    if "followup" in kinds:
        i = kinds.index("followup")
        if first_tag is not None and first_tag != "default" and any(
            s.kind == "failure" and s.detail.get("reason") == "TagFailedWithFail" for s in trace[:i]
        ):
            problems.append("followup after a fail followup")
    for step in trace:
        if step.kind != "accept":
            continue
        d = step.detail
        if d["tier"] == "denied":
            problems.append(f"denied worker {d['worker']} chosen")
        for zone in d["zone_restriction"]:
            if d["zone"] != zone:
                problems.append(f"worker {d['worker']} in zone {d['zone']} violates restriction {zone}")
        if _rule_violated(d["rule"], d["committed_mb"], d["grant_mb"], d["queued"], overload_threshold):
            problems.append(f"worker {d['worker']} was invalid under {d['rule']}")
        if not d.get("enqueued"):
            if d["worker_committed_mb"] + d["demand_mb"] > d["capacity_mb"]:
                problems.append(f"worker {d['worker']} over capacity")
            if d["tier"] == "primary" and d["committed_mb"] + d["demand_mb"] > d["grant_mb"]:
                problems.append(f"worker {d['worker']} over the controller grant")
    return problems


def followup_fail_respected(trace, script) -> bool:
    """A request whose tag says ``followup: fail`` never reaches the default tag."""
    tags = [s.detail["tag"] for s in trace if s.kind in ("tag", "block") and "tag" in s.detail]
    if not tags:
        return True
    first = tags[0]
    if first == "default" or first not in script.tags:
        return True
    if script.tags[first].followup is not None and script.tags[first].followup.value == "fail":
        return "default" not in tags and not any(s.kind == "followup" for s in trace)
    return True
