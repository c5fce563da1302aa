"""Link layer: the revised entanglement generation protocol (QEGP).

One :class:`QEGP` instance runs per node.  A request submitted on one node is
forwarded to the peer over the classical channel; both nodes queue it in the
same canonical order and start serving it at the first TDMA bin assigned to
its class.  Serving a request means looping CR check -> ENT/ENM until the
physical layer heralds a pair, then turning the heralded Psi state into the
PHI_PLUS service state: a pi gate for keep-type requests, a classical bit
flip for measure-type ones.  Only the node where the request originated
applies the correction.
"""

from __future__ import annotations

import enum
import heapq
import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

from .netsim import ClassicalChannel, MsgType, Simulator, decode_message, encode_message
from .noise import fidelity_to_phys_target
from .phys import Command, DeviceController, OutcomeCode, Verb
from .qstate import PI_STEPS, Axis, BellState, MeasBasis, Node, Rotation, basis_change
from .units import MS, US, S

__all__ = [
    "DeliveryType", "EntRequest", "DeliveryRecord", "RequestError", "TdmaSchedule",
    "LinkConfig", "QEGP", "RequestHandle", "classical_flip", "correction_rotation",
    "latency_report", "LatencyReport", "BUCKETS", "constant_schedule",
]

BUCKETS = ("link_layer", "cr_check", "ent_generation", "interface")


class DeliveryType(str, enum.Enum):
    K = "K"
    M = "M"
    R = "R"


@dataclass(frozen=True)
class EntRequest:
    remote_node_id: Node
    num_pairs: int = 1
    min_fidelity: float = 0.8
    delivery_type: DeliveryType = DeliveryType.K
    meas_basis: Optional[MeasBasis] = None
    timeout: Optional[int] = None
    priority: int = 0  # carried, ignored by FIFO service
    app_id: str = "app"

    def __post_init__(self):
        object.__setattr__(self, "remote_node_id", Node(self.remote_node_id))
        object.__setattr__(self, "delivery_type", DeliveryType(self.delivery_type))
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be at least 1")
        if not 0.25 < self.min_fidelity <= 0.97:
            raise ValueError(f"min_fidelity {self.min_fidelity} outside (0.25, 0.97]")
        if self.delivery_type is DeliveryType.K and self.meas_basis is not None:
            raise ValueError("K-type requests carry no measurement basis")
        if self.delivery_type is not DeliveryType.K and self.meas_basis is None:
            raise ValueError(f"{self.delivery_type.value}-type requests need a measurement basis")
        if self.timeout is not None and self.timeout <= 0:
            raise ValueError("timeout must be positive")

    @property
    def request_class(self):
        return (self.app_id, self.min_fidelity)

    def to_dict(self) -> dict:
        return {"remote_node_id": self.remote_node_id.value, "num_pairs": self.num_pairs,
                "min_fidelity": self.min_fidelity, "delivery_type": self.delivery_type.value,
                "meas_basis": None if self.meas_basis is None else str(self.meas_basis),
                "timeout": self.timeout, "priority": self.priority, "app_id": self.app_id}

    @classmethod
    def from_dict(cls, d: dict) -> "EntRequest":
        d = dict(d)
        if d.get("meas_basis") is not None:
            d["meas_basis"] = MeasBasis.parse(d["meas_basis"])
        return cls(**d)


@dataclass
class DeliveryRecord:
    ent_id: tuple
    node: Node
    request_id: str
    origin: Node
    delivery_type: DeliveryType
    delivered_bell: BellState
    raw_heralded: BellState
    meas_outcome: Optional[int]
    created_at: int
    delivered_at: int
    latency_breakdown: dict
    charge_flag: bool = False
    min_fidelity: float = 0.0

    @property
    def latency(self) -> int:
        return self.delivered_at - self.created_at

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ent_id"] = list(self.ent_id)
        for k in ("node", "origin", "delivery_type", "delivered_bell", "raw_heralded"):
            d[k] = getattr(self, k).value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class RequestError:
    request_id: str
    kind: str  # "timeout" or "mismatch"
    delivered: int = 0


def classical_flip(heralded: BellState, basis_axis) -> bool:
    """Whether the originator must invert its outcome to get PHI_PLUS statistics."""
    heralded = BellState(heralded)
    axis = Axis(basis_axis)
    if heralded not in (BellState.PSI_PLUS, BellState.PSI_MINUS):
        raise ValueError(f"no correction rule for {heralded.value}")
    if axis is Axis.Z:
        return True
    if axis is Axis.X:
        return heralded is BellState.PSI_MINUS
    return heralded is BellState.PSI_PLUS


def correction_rotation(heralded: BellState) -> Rotation:
    heralded = BellState(heralded)
    if heralded is BellState.PSI_PLUS:
        return Rotation(Axis.X, PI_STEPS)
    if heralded is BellState.PSI_MINUS:
        return Rotation(Axis.Y, PI_STEPS)
    raise ValueError(f"no correction rule for {heralded.value}")


class TdmaSchedule:
    """Cyclic list of bin assignments.

    Each entry is ``None`` (any class), an application id (any fidelity of
    that application) or an ``(app_id, min_fidelity)`` class.
    """

    def __init__(self, bin_duration: int = 20 * MS, assignment: Sequence = (None,)):
        if bin_duration <= 0:
            raise ValueError("bin_duration must be positive")
        if not assignment:
            raise ValueError("assignment must not be empty")
        self.bin_duration = int(bin_duration)
        self.assignment = tuple(tuple(a) if isinstance(a, list) else a for a in assignment)

    def bin_index(self, t: int) -> int:
        return t // self.bin_duration

    def assigned(self, index: int, cls) -> bool:
        a = self.assignment[index % len(self.assignment)]
        if a is None:
            return True
        if isinstance(a, tuple):
            return a == tuple(cls)
        return a == cls[0]

    def allows(self, t: int, cls) -> bool:
        return self.assigned(self.bin_index(t), cls)

    def next_bin_start(self, t: int, cls) -> int:
        """First start of a bin assigned to ``cls`` at or after ``t``."""
        i = -(-t // self.bin_duration)
        for j in range(i, i + len(self.assignment) + 1):
            if self.assigned(j, cls):
                return j * self.bin_duration
        raise ValueError(f"no bin assigned to class {cls!r}")

    def next_allowed(self, t: int, cls) -> int:
        return t if self.allows(t, cls) else self.next_bin_start(t, cls)

    def to_dict(self) -> dict:
        return {"bin_duration": self.bin_duration,
                "assignment": [list(a) if isinstance(a, tuple) else a for a in self.assignment]}

    @classmethod
    def from_dict(cls, d: dict) -> "TdmaSchedule":
        return cls(d.get("bin_duration", 20 * MS), d.get("assignment", [None]))


def constant_schedule(bin_duration: int = 20 * MS, app_id: Optional[str] = None) -> TdmaSchedule:
    """Every bin reserved to one application (or to anything)."""
    return TdmaSchedule(bin_duration, (app_id,))


@dataclass
class LinkConfig:
    interface_latency: int = 20 * US
    physical_sign: bool = True
    pair_id: str = "client-server"


class _Stopwatch:
    def __init__(self, start: int):
        self.start = start
        self.cursor = start
        self.buckets = dict.fromkeys(BUCKETS, 0)

    def lap(self, bucket: str, now: int) -> None:
        self.buckets[bucket] += now - self.cursor
        self.cursor = now


@dataclass
class RequestHandle:
    request_id: str
    request: EntRequest
    records: list = field(default_factory=list)
    error: Optional[RequestError] = None


@dataclass(order=True)
class _Queued:
    key: tuple
    request_id: str = field(compare=False)
    request: EntRequest = field(compare=False)
    origin: Node = field(compare=False)
    created_at: int = field(compare=False)
    eligible_at: int = field(compare=False)
    known_at: int = field(compare=False)


class QEGP:
    def __init__(self, sim: Simulator, node: Node, device: DeviceController,
                 channel: ClassicalChannel, schedule: TdmaSchedule, cfg: LinkConfig = None):
        self.sim = sim
        self.node = Node(node)
        self.device = device
        self.channel = channel
        self.schedule = schedule
        self.cfg = cfg or LinkConfig()
        self.handles = {}
        self.records = []
        self._queue = []
        self._seq = 0
        self._ent_seq = 0
        self._wake = None
        self._deliveries = []
        self._delivery_waiters = []
        self._post_check = None
        channel.connect(self.node, self._on_frame)
        sim.process(self._worker(), f"qegp.{self.node.value}")

    # -- service interface -------------------------------------------------

    def create(self, req: EntRequest) -> RequestHandle:
        if req.remote_node_id is self.node:
            raise ValueError("cannot request entanglement with self")
        fidelity_to_phys_target(req.min_fidelity)
        self._seq += 1
        rid = f"{self.node.value}:{self._seq}"
        handle = self.handles[rid] = RequestHandle(rid, req)
        now = self.sim.now
        self.sim.log(self.node, "create", request=rid, type=req.delivery_type.value,
                     min_fidelity=req.min_fidelity)
        payload = {"id": rid, "origin": self.node.value, "created_at": now, **req.to_dict()}
        self.channel.send(self.node, req.remote_node_id,
                          encode_message(MsgType.FORWARD_CREATE, payload))
        self._enqueue(rid, req, self.node, now)
        return handle

    def wait_delivery(self):
        """Event resolving to the next DeliveryRecord (or RequestError) on this node."""
        ev = self.sim.event()
        if self._deliveries:
            ev.succeed(self._deliveries.pop(0))
        else:
            self._delivery_waiters.append(ev)
        return ev

    def final_check(self):
        """Run one CR check so the last delivery gets its charge flag (generator)."""
        if self._post_check is not None:
            yield self.device.wait_free()
            yield from self._cr_check()

    # -- internals -----------------------------------------------------------

    def _push_delivery(self, item):
        if self._delivery_waiters:
            self._delivery_waiters.pop(0).succeed(item)
        else:
            self._deliveries.append(item)

    def _on_frame(self, sender, frame: bytes):
        kind, payload = decode_message(frame)
        if kind is MsgType.FORWARD_CREATE:
            rid = payload.pop("id")
            origin = Node(payload.pop("origin"))
            created = payload.pop("created_at")
            req = EntRequest.from_dict({**payload, "remote_node_id": origin.value})
            self.sim.log(self.node, "forward_received", request=rid)
            self._enqueue(rid, req, origin, created)

    def _enqueue(self, rid, req, origin, created_at):
        eligible = self.schedule.next_bin_start(created_at, req.request_class)
        key = (eligible, created_at, origin.index, int(rid.split(":")[1]))
        heapq.heappush(self._queue, _Queued(key, rid, req, origin, created_at, eligible,
                                            self.sim.now))
        if self._wake is not None and not self._wake.triggered:
            self._wake.succeed()

    def _worker(self):
        while True:
            while not self._queue:
                self._wake = self.sim.event()
                yield self._wake
            q = self._queue[0]
            if self.sim.now < q.eligible_at:
                # a request with an earlier slot may still arrive while we wait
                self._wake = self.sim.event()
                self.sim.schedule(q.eligible_at, self._poke, self._wake)
                yield self._wake
                continue
            heapq.heappop(self._queue)
            yield from self._serve(q)

    @staticmethod
    def _poke(ev):
        if not ev.triggered:
            ev.succeed()

    def _cr_check(self):
        cr = yield from self.device.cr_check()
        if self._post_check is not None:
            if cr.zero_counts:
                self._post_check.charge_flag = True
                self.sim.log(self.node, "charge_flag", ent_id=list(self._post_check.ent_id))
            self._post_check = None
        return cr

    def _serve(self, q: _Queued):
        req, rid = q.request, q.request_id
        is_origin = q.origin is self.node
        sw = _Stopwatch(q.created_at if is_origin else q.known_at)
        cls = req.request_class
        target = fidelity_to_phys_target(req.min_fidelity)
        verb = self._verb(req, is_origin)
        handle = self.handles.get(rid)
        deadline = None if req.timeout is None else q.created_at + req.timeout
        flip_sign = False
        self.sim.log(self.node, "serve", request=rid)

        if verb is Verb.ENM:
            gates, flip_sign = basis_change(req.meas_basis, self.cfg.physical_sign)
            yield self.cfg.interface_latency
            yield from self.device.execute(Command(Verb.PMG, gates=gates))

        delivered = 0
        while delivered < req.num_pairs:
            yield self.device.wait_free()
            sw.lap("link_layer", self.sim.now)
            outcome = None
            while True:
                if deadline is not None and self.sim.now >= deadline:
                    break
                start = self.schedule.next_allowed(self.sim.now, cls)
                if start > self.sim.now:
                    yield start - self.sim.now
                sw.lap("link_layer", self.sim.now)
                yield from self._cr_check()
                sw.lap("cr_check", self.sim.now)
                self.sim.log(self.node, "ent_issue", request=rid, cls=list(cls),
                             bin=self.schedule.bin_index(self.sim.now))
                yield self.cfg.interface_latency
                sw.lap("interface", self.sim.now)
                out = yield from self.device.execute(
                    Command(verb, tag=rid, target_fidelity=target))
                sw.lap("ent_generation", self.sim.now)
                if out.code.heralded is not None:
                    outcome = out.code
                    break
                if out.code is OutcomeCode.MISMATCH_FAILURE:
                    self._fail(rid, handle, "mismatch", delivered)
                    return
                if out.code is OutcomeCode.HARDWARE_FAILURE:
                    raise RuntimeError(f"hardware failure on {self.node.value} serving {rid}")
            if outcome is None:
                self._fail(rid, handle, "timeout", delivered)
                return
            delivered += 1
            self._ent_seq += 1
            record = self._make_record(q, outcome, sw, is_origin, flip_sign)
            if is_origin and req.delivery_type is DeliveryType.K:
                yield self.cfg.interface_latency
                yield from self.device.execute(Command(
                    Verb.SQG, rotation=correction_rotation(outcome.heralded), tag=rid,
                    pauli_correction=True))
            self.records.append(record)
            self._post_check = record
            if handle is not None:
                handle.records.append(record)
            self.sim.log(self.node, "deliver", request=rid, ent_id=list(record.ent_id),
                         heralded=record.raw_heralded.value, outcome=record.meas_outcome)
            self._push_delivery(record)
            sw = _Stopwatch(self.sim.now)
            if verb is Verb.ENM and delivered < req.num_pairs:
                # each measurement consumes the pre-measurement gates
                yield self.cfg.interface_latency
                yield from self.device.execute(Command(Verb.PMG, gates=gates))

    def _verb(self, req: EntRequest, is_origin: bool) -> Verb:
        if req.delivery_type is DeliveryType.M:
            return Verb.ENM
        if req.delivery_type is DeliveryType.R and is_origin:
            return Verb.ENM
        return Verb.ENT

    def _make_record(self, q, outcome: OutcomeCode, sw: _Stopwatch, is_origin, flip_sign):
        req = q.request
        heralded = outcome.heralded
        bit = outcome.bit
        if bit is not None:
            if flip_sign:
                bit ^= 1
            if is_origin and classical_flip(heralded, req.meas_basis.axis):
                bit ^= 1
        corrected = is_origin or req.delivery_type is not DeliveryType.K
        return DeliveryRecord(
            ent_id=(self.cfg.pair_id, self._ent_seq), node=self.node, request_id=q.request_id,
            origin=q.origin, delivery_type=req.delivery_type,
            delivered_bell=BellState.PHI_PLUS if corrected else heralded,
            raw_heralded=heralded, meas_outcome=bit, created_at=sw.start,
            delivered_at=self.sim.now, latency_breakdown=dict(sw.buckets),
            min_fidelity=req.min_fidelity)

    def _fail(self, rid, handle, kind, delivered):
        err = RequestError(rid, kind, delivered)
        self.sim.log(self.node, "request_error", request=rid, kind=kind)
        if handle is not None:
            handle.error = err
            self._push_delivery(err)


@dataclass
class LatencyReport:
    n: int
    excluded: int
    means: dict
    total_mean: float


def latency_report(records, exclusion_cutoff: int = 10 * S) -> Optional[LatencyReport]:
    """Mean latency per bucket over records not exceeding ``exclusion_cutoff``."""
    records = list(records)
    if not records:
        return None
    kept = [r for r in records if r.latency <= exclusion_cutoff]
    n = len(kept)
    if n == 0:
        return LatencyReport(0, len(records), dict.fromkeys(BUCKETS, 0.0), 0.0)
    means = {b: sum(r.latency_breakdown[b] for r in kept) / n for b in BUCKETS}
    return LatencyReport(n, len(records) - n, means, sum(means.values()))
