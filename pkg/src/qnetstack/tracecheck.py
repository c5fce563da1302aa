"""Offline checks over a simulation trace (list of records or a JSONL file)."""

from __future__ import annotations

import json

from .link import TdmaSchedule

__all__ = ["load_trace", "check_handshake", "check_tdma", "check_no_correction", "check_trace"]


def load_trace(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def check_handshake(trace) -> list:
    """Every batch starts only after both nodes announced ready for the same request."""
    pending = {}
    problems = []
    for rec in trace:
        ev, node, data = rec["event"], rec["node"], rec["data"]
        if ev == "ready":
            if node in pending:
                problems.append(f"t={rec['t']}: {node} ready twice without resolution")
            pending[node] = data["tag"]
        elif ev == "sync_ok":
            tags = {pending.get("client"), pending.get("server")}
            if tags != {data["tag"]}:
                problems.append(f"t={rec['t']}: batch {data['batch']} started with ready tags {pending}")
            pending.clear()
        elif ev == "mismatch":
            pending.clear()
        elif ev == "outcome" and data["code"] == "ENT_SYNC_FAILURE":
            pending.pop(node, None)
    return problems


def check_tdma(trace, schedule: TdmaSchedule) -> list:
    """Entanglement attempts are only issued inside bins assigned to the request's class."""
    problems = []
    for rec in trace:
        if rec["event"] == "ent_issue":
            cls = tuple(rec["data"]["cls"])
            if not schedule.allows(rec["t"], cls):
                problems.append(f"t={rec['t']}: {rec['node']} issued {cls} outside its bins")
    return problems


def check_no_correction(trace, types=("M", "R")) -> list:
    """No Pauli-correction gate is ever applied for requests of the given types."""
    kind = {}
    problems = []
    for rec in trace:
        d = rec["data"]
        if rec["event"] == "create":
            kind[d["request"]] = d["type"]
        elif rec["event"] == "command" and d.get("correction") and kind.get(d["tag"]) in types:
            problems.append(f"t={rec['t']}: correction gate for {kind[d['tag']]}-type {d['tag']}")
    return problems


def check_trace(trace, schedule: TdmaSchedule) -> list:
    return check_handshake(trace) + check_tdma(trace, schedule) + check_no_correction(trace)
