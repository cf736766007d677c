"""Command-line front end: ``tapp validate|simulate|campaign|explain``.

Exit codes: 0 success, 1 domain error (bad script, failed schedule,
simulation error), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import fixtures
from .lang import ParseError, canonicalize, errors, parse_script, validate_script
from .scheduler import ClusterState, InvocationRequest, Scheduler, SchedulingFailure, trace_to_jsonl
from .simulator import (
    DEFAULT_SEED,
    VANILLA,
    CampaignConfig,
    SimulationError,
    Variant,
    builtin_profiles,
    profile_from_dict,
    records_to_jsonl,
    run_campaign,
    run_simulation,
    standard_variants,
)
from .topology import AllotmentError, DistributionPolicy, TopologyError, load_topology
from .watcher import load_timeline, snapshot

log = logging.getLogger("tapp")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
POLICIES = [VANILLA, *(p.value for p in DistributionPolicy)]
FORMATS = ["pretty-table", "csv", "records"]


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("TAPP_SIM_SEED")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"TAPP_SIM_SEED must be an integer, got {raw!r}") from None


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _script_text(ref: str) -> str:
    """A file path, or the name of a bundled script."""
    if os.path.exists(ref) or ref not in fixtures.SCRIPTS:
        return _read(ref)
    return fixtures.builtin_script_text(ref)


def _topology(ref: str):
    if os.path.exists(ref) or ref not in fixtures.TOPOLOGIES:
        return load_topology(_read(ref))
    return fixtures.builtin_topology(ref)


def _script(ref):
    return None if ref is None else canonicalize(parse_script(_script_text(ref)))


def _profile(name, workload_path):
    if workload_path is not None:
        return profile_from_dict(yaml.safe_load(_read(workload_path)))
    profiles = builtin_profiles()
    if name not in profiles:
        raise UsageError(f"unknown profile {name!r}; available: {', '.join(profiles)}")
    return profiles[name]


def _timeline(path):
    if path is None:
        return None
    return load_timeline(_read(path), base_dir=os.path.dirname(os.path.abspath(path)))


def _emit(text: str, out_dir, filename: str, stdout) -> None:
    if out_dir is None:
        stdout.write(text)
        return
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    with open(Path(out_dir) / filename, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _pretty(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "".join("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(args, stdout) -> int:
    ref = args.script or args.script_pos
    if ref is None:
        raise UsageError("validate needs a script (--script PATH)")
    text = _script_text(ref)
    topology = _topology(args.topology) if args.topology else None
    try:
        script = canonicalize(parse_script(text))
    except ParseError as exc:
        stdout.write(f"{ref}:{exc.line}:{exc.column}: error: {exc.kind}: {exc.message}\n")
        return EXIT_DOMAIN
    diags = validate_script(script, topology)
    for d in diags:
        stdout.write(f"{ref}:{d}\n")
    bad = errors(diags)
    stdout.write(f"{ref}: {len(bad)} error(s), {len(diags) - len(bad)} warning(s)\n")
    return EXIT_DOMAIN if bad else EXIT_OK


def cmd_simulate(args, stdout) -> int:
    topology = _topology(args.topology)
    profile = _profile(args.profile, args.workload)
    script = _script(args.script)
    report = run_simulation(
        topology, args.policy, script, profile, _timeline(args.timeline), args.seed,
        tag=args.tag, staleness_ms=args.staleness_ms, audit=True, keep_traces=args.traces,
    )
    stdout.write(
        f"{profile.name} [{report.variant}] {report.summary_line()} "
        f"(ok={report.successes} failed={report.failures} retries={report.retries} cold={report.cold_starts})\n"
    )
    summary = report.to_record()
    if args.format == "records":
        _emit(records_to_jsonl(report, with_traces=args.traces), args.out, f"{profile.name}.jsonl", stdout)
    elif args.format == "csv":
        _emit(_csv([list(summary), list(summary.values())]), args.out, f"{profile.name}.csv", stdout)
    else:
        _emit(_pretty([[k, v] for k, v in summary.items()]), args.out, f"{profile.name}.txt", stdout)
    return EXIT_OK


def _variant_from(item) -> Variant:
    if isinstance(item, str):
        return Variant(item, None if item == VANILLA else DistributionPolicy(item))
    policy = item.get("policy", VANILLA)
    policy = None if policy == VANILLA else DistributionPolicy(policy)
    return Variant(str(item.get("name", policy.value if policy else VANILLA)), policy,
                   _script(item.get("script")), item.get("tag"))


def _campaign_config(args) -> CampaignConfig:
    doc = {}
    if args.config is not None:
        doc = yaml.safe_load(_read(args.config)) or {}
        unknown = set(doc) - {"topology", "profiles", "variants", "runs", "seed", "redeploy_every", "timeline",
                              "staleness_ms"}
        if unknown:
            raise UsageError(f"unknown campaign keys: {sorted(unknown)}")
    topology = _topology(args.topology or doc.get("topology", "benchmark"))
    names = args.profile or doc.get("profiles")
    if names is None:
        names = list(builtin_profiles())
    profiles = [profile_from_dict(p) if isinstance(p, dict) else _profile(p, None) for p in names]
    if args.policy:
        variants = [_variant_from(p) for p in args.policy]
    elif "variants" in doc:
        variants = [_variant_from(v) for v in doc["variants"]]
    else:
        variants = standard_variants()
    if args.script is not None:
        variants.append(Variant("tapp", DistributionPolicy.SHARED, _script(args.script), args.tag))
    timeline_path = args.timeline or doc.get("timeline")
    return CampaignConfig(
        topology=topology,
        profiles=profiles,
        variants=variants,
        runs=args.runs if args.runs is not None else doc.get("runs"),
        seed=args.seed if args.seed_given else int(doc.get("seed", args.seed)),
        redeploy_every=int(doc.get("redeploy_every", 2)),
        timeline=_timeline(timeline_path),
        staleness_ms=float(doc.get("staleness_ms", 0.0)),
        jobs=args.jobs,
    )


def cmd_campaign(args, stdout) -> int:
    cfg = _campaign_config(args)
    result = run_campaign(cfg)
    for profile in result.profiles:
        if args.format == "records":
            text = "".join(
                json.dumps(r.to_record(), sort_keys=True) + "\n" for r in result.reports if r.profile == profile
            )
            _emit(text, args.out, f"{profile}.jsonl", stdout)
        elif args.format == "csv":
            if args.out is None:
                stdout.write(f"# {profile}\n")
            _emit(result.to_csv(profile), args.out, f"{profile}.csv", stdout)
        else:
            _emit(f"== {profile} ==\n" + _pretty(result.table(profile)), args.out, f"{profile}.txt", stdout)
    return EXIT_OK


def cmd_explain(args, stdout) -> int:
    topology = _topology(args.topology)
    script = _script(args.script)
    vanilla = args.policy == VANILLA
    if vanilla and script is not None:
        raise UsageError("the vanilla baseline does not interpret TAPP scripts")
    policy = DistributionPolicy.DEFAULT if vanilla else DistributionPolicy(args.policy)
    liveness = {}
    for node in args.down or []:
        liveness[node] = False
    snap = snapshot(topology, liveness)
    scheduler = Scheduler(topology, policy, prefer_colocated=not vanilla)
    state = ClusterState.fresh(topology)
    request = InvocationRequest(0, args.function, args.tag, args.memory)
    rng = np.random.default_rng(args.seed)
    try:
        decision = scheduler.schedule(request, script, snap, state, rng)
        trace, outcome, code = decision.trace, f"-> {decision.controller} / {decision.worker}", EXIT_OK
    except SchedulingFailure as exc:
        trace, outcome, code = exc.trace, f"-> failed: {exc.reason.value}", EXIT_DOMAIN
    if args.format == "records":
        stdout.write(trace_to_jsonl(trace, 0))
    else:
        for i, step in enumerate(trace, 1):
            stdout.write(f"{i:3d}. {step}\n")
        stdout.write(outcome + "\n")
    return code


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tapp", description="Topology-aware scheduling policies: validate, simulate, explain.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, topology_default=None):
        sp.add_argument("--script", help="TAPP script file (or a bundled name: case-study, data-locality)")
        sp.add_argument("--topology", default=topology_default,
                        help="topology file (or a bundled name: case-study, benchmark)")
        sp.add_argument("--seed", type=int, default=None, help="random seed (default: $TAPP_SIM_SEED or %d)" % DEFAULT_SEED)
        sp.add_argument("--format", choices=FORMATS, default="pretty-table")

    v = sub.add_parser("validate", help="parse and check a TAPP script")
    v.add_argument("script_pos", nargs="?", metavar="SCRIPT")
    v.add_argument("--script")
    v.add_argument("--topology", help="check labels against this topology")
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="run one simulation")
    common(s, "benchmark")
    s.add_argument("--policy", choices=POLICIES, default=DistributionPolicy.DEFAULT.value)
    s.add_argument("--profile", default="hellojs", help="built-in workload name")
    s.add_argument("--workload", help="workload YAML file (overrides --profile)")
    s.add_argument("--tag", help="tag attached to every request")
    s.add_argument("--timeline", help="YAML timeline of cluster and policy events")
    s.add_argument("--staleness-ms", type=float, default=0.0, help="delay before a new script becomes visible")
    s.add_argument("--traces", action="store_true", help="include decision traces in record output")
    s.add_argument("--out", help="write the report into this directory")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("campaign", help="run every variant on every profile several times")
    common(c)
    c.add_argument("--config", help="campaign YAML file")
    c.add_argument("--profile", action="append", help="built-in profile (repeatable; default: all)")
    c.add_argument("--policy", action="append", choices=POLICIES, help="variant (repeatable; default: all five)")
    c.add_argument("--tag", help="tag for the extra TAPP variant added by --script")
    c.add_argument("--timeline")
    c.add_argument("--runs", type=int, help="runs per variant (default: 10, cold-start 3)")
    c.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    c.add_argument("--out", help="write one file per profile into this directory")
    c.set_defaults(func=cmd_campaign)

    e = sub.add_parser("explain", help="trace one scheduling decision on an idle cluster")
    common(e, "case-study")
    e.add_argument("--policy", choices=POLICIES, default=DistributionPolicy.DEFAULT.value)
    e.add_argument("--tag")
    e.add_argument("--function", default="fn", help="function id (drives co-prime hashing)")
    e.add_argument("--memory", type=int, default=256, help="memory demand in MB")
    e.add_argument("--down", action="append", metavar="NODE", help="mark a node as down (repeatable)")
    e.set_defaults(func=cmd_explain)
    return p


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "seed"):
            args.seed_given = args.seed is not None
            if args.seed is None:
                args.seed = _default_seed()
        return args.func(args, stdout)
    except UsageError as exc:
        print(f"tapp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"tapp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, TopologyError, AllotmentError, SimulationError) as exc:
        print(f"tapp: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (ValueError, KeyError, yaml.YAMLError) as exc:
        print(f"tapp: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
