"""Scripted two-node applications and the instruction processor that runs them.

Programs use five instructions::

    CREATE_ENT type=<K|M|R> fid=<float|$fid> [basis=<basis|$client|$server>]
    RECV_ENT   type=<K|M|R> fid=<float|$fid>
    ROTATE_BASIS <basis|$client|$server>
    MEASURE
    STORE <tag>

and are written in a line-oriented text format::

    # comment
    name tomography
    reps 125
    fidelities 0.8            # one or more requested fidelities
    settings +X:+X +X:-X ...  # client:server basis pairs, may repeat the keyword
    order reps settings       # loop nesting, outermost first
    submit_jitter 0           # ms; random wait before each client instruction list
    client CREATE_ENT type=K fid=$fid ; ROTATE_BASIS $client ; MEASURE ; STORE bit
    server RECV_ENT type=K fid=$fid ; ROTATE_BASIS $server ; MEASURE ; STORE bit

``$client``/``$server`` expand to the bases of the current setting and
``$fid`` to the current requested fidelity.  ``STORE`` saves the most recent
bit: the outcome of the last ``MEASURE`` or, right after an M/R-type
``CREATE_ENT``, the link layer's corrected outcome.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .link import DeliveryRecord, DeliveryType, EntRequest, RequestError
from .phys import Command, OutcomeCode, Verb
from .qstate import MeasBasis, Node, basis_change
from .stack import Network
from .units import MS

__all__ = [
    "Instruction", "AppProgram", "AppError", "parse_program", "InstructionProcessor",
    "run_program", "tomography_program", "fidelity_sweep_program", "rsp_program",
    "latency_program", "run_tomography", "run_fidelity_sweep", "run_rsp", "run_latency",
    "CARDINAL_BASES", "SWEEP_FIDELITIES",
]

OPS = ("CREATE_ENT", "RECV_ENT", "ROTATE_BASIS", "MEASURE", "STORE")
LOOPS = ("reps", "fidelities", "settings")

CARDINAL_BASES = ("+X", "-X", "+Y", "-Y", "+Z", "-Z")
SWEEP_FIDELITIES = (0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80)


class AppError(RuntimeError):
    """An instruction failed on the device or the link layer."""


@dataclass(frozen=True)
class Instruction:
    op: str
    args: tuple = ()
    params: tuple = ()  # sorted (key, value) pairs

    def param(self, key, default=None):
        return dict(self.params).get(key, default)

    def __str__(self):
        parts = [self.op, *self.args, *(f"{k}={v}" for k, v in self.params)]
        return " ".join(parts)


def _parse_instruction(text: str) -> Instruction:
    words = text.split()
    if not words:
        raise ValueError("empty instruction")
    op = words[0].upper()
    if op not in OPS:
        raise ValueError(f"unknown instruction {words[0]!r}")
    args, params = [], {}
    for w in words[1:]:
        if "=" in w:
            k, v = w.split("=", 1)
            params[k] = v
        else:
            args.append(w)
    ins = Instruction(op, tuple(args), tuple(sorted(params.items())))
    if op in ("CREATE_ENT", "RECV_ENT"):
        if set(params) - {"type", "fid", "basis"} or args:
            raise ValueError(f"bad arguments in {text!r}")
        if "type" not in params or "fid" not in params:
            raise ValueError(f"{op} needs type= and fid=")
        DeliveryType(params["type"])
        if op == "RECV_ENT" and "basis" in params:
            raise ValueError("RECV_ENT takes no basis")
    elif op in ("ROTATE_BASIS", "STORE"):
        if len(args) != 1 or params:
            raise ValueError(f"{op} takes exactly one argument")
    elif args or params:
        raise ValueError("MEASURE takes no arguments")
    return ins


@dataclass
class AppProgram:
    name: str = "custom"
    reps: int = 1
    fidelities: tuple = (0.8,)
    settings: tuple = ((MeasBasis.parse("+Z"), MeasBasis.parse("+Z")),)
    order: tuple = ("reps", "fidelities", "settings")
    submit_jitter: int = 0  # ns
    client: tuple = ()
    server: tuple = ()

    def __post_init__(self):
        self.validate()

    def body(self, node) -> tuple:
        return self.client if Node(node) is Node.CLIENT else self.server

    def validate(self) -> None:
        if self.reps < 1:
            raise ValueError("reps must be positive")
        if sorted(self.order) != sorted(LOOPS):
            raise ValueError(f"order must be a permutation of {LOOPS}")
        if not self.fidelities or not self.settings:
            raise ValueError("need at least one fidelity and one setting")
        for fid in self.fidelities:
            EntRequest(Node.SERVER, min_fidelity=fid)  # range check
        ent_ops = {n: [i for i in self.body(n) if i.op in ("CREATE_ENT", "RECV_ENT")]
                   for n in Node}
        c, s = ent_ops[Node.CLIENT], ent_ops[Node.SERVER]
        if len(c) != len(s):
            raise ValueError("CREATE_ENT/RECV_ENT counts differ between client and server")
        for a, b in zip(c, s):
            if {a.op, b.op} != {"CREATE_ENT", "RECV_ENT"}:
                raise ValueError(f"{a} on the client does not pair with {b} on the server")
            if (a.param("type"), a.param("fid")) != (b.param("type"), b.param("fid")):
                raise ValueError(f"type/fid of {a} and {b} differ")
            create = a if a.op == "CREATE_ENT" else b
            kind = DeliveryType(create.param("type"))
            if kind is DeliveryType.K and create.param("basis") is not None:
                raise ValueError("K-type CREATE_ENT takes no basis; use ROTATE_BASIS")
            if kind is not DeliveryType.K and create.param("basis") is None:
                raise ValueError(f"{kind.value}-type CREATE_ENT needs basis=")

    def iterations(self):
        """``(index, rep, fid, setting_index)`` in program loop order."""
        ranges = {"reps": range(self.reps), "fidelities": range(len(self.fidelities)),
                  "settings": range(len(self.settings))}
        for i, combo in enumerate(itertools.product(*(ranges[k] for k in self.order))):
            d = dict(zip(self.order, combo))
            yield i, d["reps"], self.fidelities[d["fidelities"]], d["settings"]

    @property
    def n_iterations(self) -> int:
        return self.reps * len(self.fidelities) * len(self.settings)


def parse_program(text: str) -> AppProgram:
    kw = {"settings": []}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if key == "name":
                kw["name"] = rest
            elif key == "reps":
                kw["reps"] = int(rest)
            elif key == "fidelities":
                kw["fidelities"] = tuple(float(x) for x in rest.split())
            elif key == "settings":
                for pair in rest.split():
                    c, s = pair.split(":")
                    kw["settings"].append((MeasBasis.parse(c), MeasBasis.parse(s)))
            elif key == "order":
                kw["order"] = tuple(rest.split())
            elif key == "submit_jitter":
                kw["submit_jitter"] = int(round(float(rest) * MS))
            elif key in ("client", "server"):
                kw[key] = tuple(_parse_instruction(p) for p in rest.split(";") if p.strip())
            else:
                raise ValueError(f"unknown keyword {key!r}")
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if kw["settings"]:
        kw["settings"] = tuple(kw["settings"])
    else:
        del kw["settings"]
    return AppProgram(**kw)


# -- built-in programs -------------------------------------------------------

def _settings_line(pairs) -> str:
    return "settings " + " ".join(f"{c}:{s}" for c, s in pairs)


def tomography_program(shots_per_setting: int = 125, min_fidelity: float = 0.8) -> AppProgram:
    pairs = [(c, s) for c in CARDINAL_BASES for s in CARDINAL_BASES]
    return parse_program(f"""
name tomography
reps {shots_per_setting}
fidelities {min_fidelity}
{_settings_line(pairs)}
order reps fidelities settings
client CREATE_ENT type=K fid=$fid ; ROTATE_BASIS $client ; MEASURE ; STORE bit
server RECV_ENT type=K fid=$fid ; ROTATE_BASIS $server ; MEASURE ; STORE bit
""")


def fidelity_sweep_program(shots_per_setting: int = 125, fidelities=SWEEP_FIDELITIES) -> AppProgram:
    pairs = [(c + a, s + a) for a in "XYZ" for c in "+-" for s in "+-"]
    return parse_program(f"""
name fidelity_sweep
reps {shots_per_setting}
fidelities {' '.join(str(f) for f in fidelities)}
{_settings_line(pairs)}
order reps fidelities settings
client CREATE_ENT type=K fid=$fid ; ROTATE_BASIS $client ; MEASURE ; STORE bit
server RECV_ENT type=K fid=$fid ; ROTATE_BASIS $server ; MEASURE ; STORE bit
""")


def rsp_program(shots_per_setting: int = 125, min_fidelity: float = 0.8) -> AppProgram:
    pairs = [(c, s) for c in CARDINAL_BASES for s in CARDINAL_BASES]
    return parse_program(f"""
name rsp
reps {shots_per_setting}
fidelities {min_fidelity}
{_settings_line(pairs)}
order reps fidelities settings
client CREATE_ENT type=R fid=$fid basis=$client ; STORE bit
server RECV_ENT type=R fid=$fid ; ROTATE_BASIS $server ; MEASURE ; STORE bit
""")


def latency_program(n_requests: int = 1000, min_fidelity: float = 0.8,
                    jitter_ms: float = 20.0) -> AppProgram:
    return parse_program(f"""
name latency
reps {n_requests}
fidelities {min_fidelity}
settings +Z:+Z
submit_jitter {jitter_ms}
client CREATE_ENT type=K fid=$fid ; MEASURE ; STORE bit
server RECV_ENT type=K fid=$fid ; MEASURE ; STORE bit
""")


# -- execution ---------------------------------------------------------------

@dataclass
class _Slot:
    """What one node did during one program iteration."""
    record: Optional[DeliveryRecord] = None
    basis: Optional[str] = None
    values: dict = field(default_factory=dict)


class InstructionProcessor:
    """Runs one node's half of a program against its link layer and device."""

    def __init__(self, net: Network, node: Node, physical_sign: Optional[bool] = None):
        self.net = net
        self.sim = net.sim
        self.node = Node(node)
        self.qegp = net.qegp[self.node]
        self.device = net.devices[self.node]
        self.physical_sign = (net.link_cfg.physical_sign if physical_sign is None
                              else physical_sign)
        self._flip = False
        self._last = None

    def _resolve(self, value: str, env: dict) -> str:
        return str(env[value[1:]]) if value.startswith("$") else value

    def _command(self, cmd: Command):
        yield self.net.link_cfg.interface_latency
        out = yield from self.device.execute(cmd)
        if out.code is OutcomeCode.HARDWARE_FAILURE:
            raise AppError(f"HARDWARE_FAILURE on {self.node.value} executing {cmd.verb.name}")
        return out

    def dispatch(self, ins: Instruction, env: dict, slot: _Slot):
        """Execute one instruction (generator)."""
        op = ins.op
        if op in ("CREATE_ENT", "RECV_ENT"):
            kind = DeliveryType(ins.param("type"))
            fid = float(self._resolve(ins.param("fid"), env))
            if op == "CREATE_ENT":
                basis = ins.param("basis")
                basis = None if basis is None else MeasBasis.parse(self._resolve(basis, env))
                if basis is not None:
                    slot.basis = str(basis)
                self.qegp.create(EntRequest(self.node.peer, 1, fid, kind, basis))
            rec = yield self.qegp.wait_delivery()
            if isinstance(rec, RequestError):
                raise AppError(f"request {rec.request_id} failed: {rec.kind}")
            if op == "RECV_ENT" and (rec.delivery_type is not kind or rec.min_fidelity != fid):
                raise AppError(f"{self.node.value} expected {kind.value}@{fid}, got "
                               f"{rec.delivery_type.value}@{rec.min_fidelity}")
            slot.record = rec
            self._flip = False
            self._last = rec.meas_outcome
        elif op == "ROTATE_BASIS":
            basis = MeasBasis.parse(self._resolve(ins.args[0], env))
            gates, flip = basis_change(basis, self.physical_sign)
            for g in gates:
                yield from self._command(Command(Verb.SQG, rotation=g))
            self._flip = flip
            slot.basis = str(basis)
        elif op == "MEASURE":
            out = yield from self._command(Command(Verb.MSR))
            bit = out.code.bit ^ int(self._flip)
            self._flip = False
            self._last = bit
            if slot.basis is None:
                slot.basis = "+Z"
        elif op == "STORE":
            slot.values[ins.args[0]] = self._last
        else:  # pragma: no cover - rejected by the parser
            raise AppError(f"unknown instruction {op}")

    def run(self, program: AppProgram, out: list):
        """Run every iteration of this node's body, appending one _Slot each (generator)."""
        body = program.body(self.node)
        jitter = self.sim.rng(f"app.jitter.{self.node.value}") if program.submit_jitter else None
        for _, _, fid, si in program.iterations():
            c, s = program.settings[si]
            env = {"fid": fid, "client": c, "server": s}
            if jitter is not None and any(i.op == "CREATE_ENT" for i in body):
                yield int(jitter.integers(0, program.submit_jitter))
            slot = _Slot()
            for ins in body:
                yield from self.dispatch(ins, env, slot)
            out.append(slot)


def _merge_rows(program: AppProgram, slots: dict) -> list:
    rows = []
    cs, ss = slots[Node.CLIENT], slots[Node.SERVER]
    if len(cs) != program.n_iterations or len(ss) != program.n_iterations:
        raise AppError(f"incomplete run: client {len(cs)}, server {len(ss)} of "
                       f"{program.n_iterations} iterations")
    for (i, rep, fid, si), c, s in zip(program.iterations(), cs, ss):
        cb, sb = program.settings[si]
        if c.record is None or s.record is None:
            raise AppError(f"iteration {i} produced no delivery")
        if c.record.ent_id != s.record.ent_id:
            raise AppError(f"iteration {i}: nodes disagree on entanglement id")
        origin = c.record if c.record.origin is Node.CLIENT else s.record
        row = {
            "index": i, "rep": rep, "fid": fid, "setting": si,
            "client_setting": str(cb), "server_setting": str(sb),
            "client_basis": c.basis, "server_basis": s.basis,
            "ent_id": list(c.record.ent_id), "type": origin.delivery_type.value,
            "heralded": origin.raw_heralded.value,
            "client_charge_flag": c.record.charge_flag, "server_charge_flag": s.record.charge_flag,
            "created_at": origin.created_at, "delivered_at": origin.delivered_at,
            "latency": origin.latency, "latency_breakdown": dict(origin.latency_breakdown),
        }
        for k, v in c.values.items():
            row[f"client_{k}"] = v
        for k, v in s.values.items():
            row[f"server_{k}"] = v
        rows.append(row)
    return rows


def run_program(net: Network, program: AppProgram) -> list:
    """Run ``program`` on both nodes to completion and return one row per iteration."""
    slots = {Node.CLIENT: [], Node.SERVER: []}
    for node in Node:
        net.sim.process(InstructionProcessor(net, node).run(program, slots[node]),
                        f"app.{node.value}")
    net.run()
    # the last deliveries only learn their charge flag at the next CR check
    for node in Node:
        net.sim.process(net.qegp[node].final_check(), f"final_check.{node.value}")
    net.run()
    return _merge_rows(program, slots)


def run_tomography(net: Network, shots_per_setting: int = 125) -> list:
    return run_program(net, tomography_program(shots_per_setting))


def run_fidelity_sweep(net: Network, shots_per_setting: int = 125,
                       fidelities=SWEEP_FIDELITIES) -> list:
    return run_program(net, fidelity_sweep_program(shots_per_setting, fidelities))


def run_rsp(net: Network, shots_per_setting: int = 125) -> list:
    return run_program(net, rsp_program(shots_per_setting))


def run_latency(net: Network, n_requests: int = 1000, min_fidelity: float = 0.8) -> list:
    jitter = net.schedule.bin_duration / MS
    return run_program(net, latency_program(n_requests, min_fidelity, jitter))
