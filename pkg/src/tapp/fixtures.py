"""Topologies and scripts shipped with the package."""

from __future__ import annotations

from importlib import resources

from .lang import AppScript, canonicalize, parse_script
from .topology import ClusterTopology, load_topology

TOPOLOGIES = {
    "case-study": "case_study.topology.yml",
    "benchmark": "benchmark.topology.yml",
}

SCRIPTS = {
    "case-study": "case_study.tapp.yml",
    "data-locality": "data_locality.tapp.yml",
}


def data_text(filename: str) -> str:
    return resources.files("tapp").joinpath("data", filename).read_text(encoding="utf-8")


def builtin_topology(name: str) -> ClusterTopology:
    if name not in TOPOLOGIES:
        raise KeyError(f"unknown built-in topology {name!r}; choose from {sorted(TOPOLOGIES)}")
    return load_topology(data_text(TOPOLOGIES[name]))


def builtin_script_text(name: str) -> str:
    if name not in SCRIPTS:
        raise KeyError(f"unknown built-in script {name!r}; choose from {sorted(SCRIPTS)}")
    return data_text(SCRIPTS[name])


def builtin_script(name: str) -> AppScript:
    return canonicalize(parse_script(builtin_script_text(name)))
