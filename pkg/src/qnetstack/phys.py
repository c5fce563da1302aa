"""Physical layer: per-node device controllers and the midpoint heralding link.

Each :class:`DeviceController` executes link-layer commands on its share of a
:class:`QuantumHardware` joint state.  Entanglement commands go through
:class:`MidpointLink`, which runs the ready-announcement handshake with its
0.5 ms timeout, checks that both sides serve the same request, and then
plays one batch of attempts for both nodes with a single shared heralding
draw.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import qstate
from .netsim import Simulator
from .noise import (ChargeState, NoiseParams, apply_readout_error, delivered_state,
                    step_charge, wrong_charge_state)
from .qstate import Axis, BellState, MeasBasis, Node, Rotation
from .units import MS, US

__all__ = [
    "Verb", "OutcomeCode", "Command", "Outcome", "DevicePhase", "PhysConfig",
    "QuantumHardware", "DeviceController", "MidpointLink", "BatchResult",
    "CRResult", "geometric_attempts",
]


class Verb(enum.IntEnum):
    INI = 1
    MSR = 2
    SQG = 3
    PMG = 4
    ENT = 5
    ENM = 6


class OutcomeCode(enum.IntEnum):
    SUCCESS = 0
    SUCCESS_0 = 1
    SUCCESS_1 = 2
    SUCCESS_PSI_PLUS = 3
    SUCCESS_PSI_MINUS = 4
    SUCCESS_PSI_PLUS_0 = 5
    SUCCESS_PSI_PLUS_1 = 6
    SUCCESS_PSI_MINUS_0 = 7
    SUCCESS_PSI_MINUS_1 = 8
    ENT_FAILURE = 9
    ENT_SYNC_FAILURE = 10
    HARDWARE_FAILURE = 11
    MISMATCH_FAILURE = 12

    @property
    def heralded(self) -> Optional[BellState]:
        if self.name.startswith("SUCCESS_PSI_PLUS"):
            return BellState.PSI_PLUS
        if self.name.startswith("SUCCESS_PSI_MINUS"):
            return BellState.PSI_MINUS
        return None

    @property
    def bit(self) -> Optional[int]:
        if self.name.startswith("SUCCESS") and self.name[-2:] in ("_0", "_1"):
            return int(self.name[-1])
        return None

    @classmethod
    def entangled(cls, heralded: BellState, bit: Optional[int] = None) -> "OutcomeCode":
        name = "SUCCESS_" + BellState(heralded).value
        if bit is not None:
            name += f"_{bit}"
        return cls[name]


@dataclass(frozen=True)
class Command:
    verb: Verb
    rotation: Optional[Rotation] = None
    gates: tuple = ()
    tag: str = ""
    target_fidelity: float = 1.0
    pauli_correction: bool = False

    def __post_init__(self):
        object.__setattr__(self, "verb", Verb(self.verb))
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.verb is Verb.SQG and not isinstance(self.rotation, Rotation):
            raise ValueError("SQG carries exactly one rotation")
        if self.verb is Verb.PMG and len(self.gates) > 3:
            raise ValueError("PMG carries at most three rotations")
        if self.verb in (Verb.ENT, Verb.ENM) and not self.tag:
            raise ValueError(f"{self.verb.name} needs a non-empty request tag")


@dataclass(frozen=True)
class Outcome:
    code: OutcomeCode
    elapsed: int


class DevicePhase(str, enum.Enum):
    CR_CHECK = "CR_CHECK"
    AWAIT_COMMAND = "AWAIT_COMMAND"
    ENT_SYNC = "ENT_SYNC"
    ENT_ATTEMPTING = "ENT_ATTEMPTING"
    PROTECTED_IDLE = "PROTECTED_IDLE"


@dataclass
class PhysConfig:
    batch_size: int = 1000
    attempt_duration: int = 3800  # ns
    sync_timeout: int = MS // 2
    phase_stabilization: int = MS
    ini_duration: int = 100 * US
    msr_duration: int = 10 * US
    sqg_duration: int = 100
    pmg_duration: int = 0
    mismatch_check: bool = True
    hardware_z: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


class CRResult(NamedTuple):
    passed: bool
    elapsed: int
    zero_counts: bool


@dataclass
class BatchResult:
    batch_id: int
    success: bool
    attempts: int
    heralded: Optional[BellState] = None
    charge_after: dict = field(default_factory=dict)


def geometric_attempts(p: float, u: float) -> int:
    """Index of the first successful Bernoulli(p) attempt, from one uniform draw."""
    if p >= 1:
        return 1
    if p <= 0:
        return math.inf
    return int(math.floor(math.log1p(-u) / math.log1p(-p))) + 1


class QuantumHardware:
    """Joint client-server state plus which qubits currently hold data."""

    def __init__(self):
        self.rho = qstate.product_state([1, 0], [1, 0])
        self.live = {Node.CLIENT: False, Node.SERVER: False}

    def install(self, rho: np.ndarray) -> None:
        self.rho = rho
        self.live[Node.CLIENT] = self.live[Node.SERVER] = True


class DeviceController:
    def __init__(self, sim: Simulator, node: Node, hw: QuantumHardware, params: NoiseParams,
                 cfg: PhysConfig, link: "MidpointLink"):
        self.sim = sim
        self.node = Node(node)
        self.hw = hw
        self.params = params
        self.cfg = cfg
        self.link = link
        self.phase = DevicePhase.AWAIT_COMMAND
        self.charge = ChargeState.RESONANT
        self.pending_gates = ()
        self._outage_left = 0
        self._protected_since = None
        self._free_waiters = []
        self._rng_cr = sim.rng(f"cr.{self.node.value}")
        self._rng_charge = sim.rng(f"charge.{self.node.value}")
        self._rng_measure = sim.rng(f"measure.{self.node.value}")
        self._rng_readout = sim.rng(f"readout.{self.node.value}")
        link.attach(self)

    @property
    def has_qubit(self) -> bool:
        return self.hw.live[self.node]

    def _set_idle(self):
        self.phase = DevicePhase.PROTECTED_IDLE if self.has_qubit else DevicePhase.AWAIT_COMMAND

    def _release(self):
        self.hw.live[self.node] = False
        self._protected_since = None
        waiters, self._free_waiters = self._free_waiters, []
        for ev in waiters:
            ev.succeed()

    def wait_free(self):
        """Event that fires once this node's qubit no longer holds data."""
        ev = self.sim.event()
        if self.has_qubit:
            self._free_waiters.append(ev)
        else:
            ev.succeed()
        return ev

    def _settle_storage(self):
        """Apply protected-storage decay accumulated since the last operation."""
        rate = self.params.protected_decay_rate
        if self._protected_since is not None and rate > 0:
            dt = (self.sim.now - self._protected_since) / 1e9
            self.hw.rho = qstate.depolarize_qubit(self.hw.rho, self.node, -math.expm1(-rate * dt))
        self._protected_since = self.sim.now if self.has_qubit else None

    def cr_check(self):
        """Repeat charge-and-resonance tries until one passes (generator)."""
        if self.phase is DevicePhase.ENT_ATTEMPTING:
            raise RuntimeError("CR check during entanglement attempts")
        t0 = self.sim.now
        self.phase = DevicePhase.CR_CHECK
        cp = self.params.charge(self.node)
        zero_counts = self.charge is not ChargeState.RESONANT
        while True:
            if self.charge is ChargeState.LONG_OUTAGE:
                self.sim.log(self.node, "long_outage", duration=self._outage_left)
                yield self._outage_left
                self._outage_left = 0
                self.charge = ChargeState.RESONANT
            elif self.charge is ChargeState.WRONG_CHARGE:
                yield cp.recovery_try_duration
                self.charge = step_charge(self.charge, self.node, "cr_try", self.params,
                                          self._rng_charge.random())
                if self.charge is ChargeState.LONG_OUTAGE:
                    self._outage_left = cp.outage_duration(self._rng_charge.random())
            else:
                yield self.params.cr_try_duration
                if self._rng_cr.random() < self.params.cr_pass_prob:
                    break
        self._set_idle()
        elapsed = self.sim.now - t0
        self.sim.log(self.node, "cr_check", elapsed=elapsed, zero_counts=zero_counts)
        return CRResult(True, elapsed, zero_counts)

    def execute(self, cmd: Command):
        """Run one command and return its :class:`Outcome` (generator)."""
        t0 = self.sim.now
        self.sim.log(self.node, "command", verb=cmd.verb.name, tag=cmd.tag,
                     correction=cmd.pauli_correction)
        code = yield from self._dispatch(cmd)
        outcome = Outcome(code, self.sim.now - t0)
        self.sim.log(self.node, "outcome", verb=cmd.verb.name, code=code.name, elapsed=outcome.elapsed)
        return outcome

    def _dispatch(self, cmd: Command):
        if self.phase not in (DevicePhase.AWAIT_COMMAND, DevicePhase.PROTECTED_IDLE):
            return OutcomeCode.HARDWARE_FAILURE
        v = cmd.verb
        if v is Verb.INI:
            yield self.cfg.ini_duration
            self.hw.rho = qstate.reset_qubit(self.hw.rho, self.node)
            self.hw.live[self.node] = True
            self._protected_since = self.sim.now
            self._set_idle()
            return OutcomeCode.SUCCESS
        if v is Verb.PMG:
            yield self.cfg.pmg_duration
            self.pending_gates = cmd.gates
            return OutcomeCode.SUCCESS
        if v is Verb.SQG:
            if not self.has_qubit:
                return OutcomeCode.HARDWARE_FAILURE
            if cmd.rotation.axis is Axis.Z and not self.cfg.hardware_z:
                return OutcomeCode.HARDWARE_FAILURE
            yield self.cfg.sqg_duration
            self._settle_storage()
            self.hw.rho = qstate.apply_local_rotation(self.hw.rho, self.node, cmd.rotation)
            if cmd.pauli_correction:
                self.hw.rho = qstate.depolarize_qubit(self.hw.rho, self.node,
                                                      self.params.correction_gate_error)
            return OutcomeCode.SUCCESS
        if v is Verb.MSR:
            if not self.has_qubit:
                return OutcomeCode.HARDWARE_FAILURE
            bit = yield from self._measure()
            return OutcomeCode.SUCCESS_1 if bit else OutcomeCode.SUCCESS_0
        if v in (Verb.ENT, Verb.ENM):
            return (yield from self._entangle(cmd))
        return OutcomeCode.HARDWARE_FAILURE

    def _measure(self):
        yield self.cfg.msr_duration
        self._settle_storage()
        rho = self.hw.rho
        for g in self.pending_gates:
            rho = qstate.apply_local_rotation(rho, self.node, g)
        self.pending_gates = ()
        bit, rho = qstate.measure_qubit(rho, self.node, MeasBasis(Axis.Z, 1),
                                        self._rng_measure.random())
        self.hw.rho = rho
        self._release()
        self._set_idle()
        f0, f1 = self.params.readout(self.node)
        return apply_readout_error(bit, f0, f1, self._rng_readout.random())

    def _entangle(self, cmd: Command):
        if self.has_qubit:
            return OutcomeCode.HARDWARE_FAILURE
        self.phase = DevicePhase.ENT_SYNC
        result = yield self.link.announce(self, cmd)
        if isinstance(result, OutcomeCode):
            self._set_idle()
            return result
        # announce() resolves only after the batch has been played
        if not result.success:
            self._set_idle()
            return OutcomeCode.ENT_FAILURE
        self._protected_since = self.sim.now
        self._set_idle()
        if cmd.verb is Verb.ENM:
            bit = yield from self._measure()
            return OutcomeCode.entangled(result.heralded, bit)
        return OutcomeCode.entangled(result.heralded)

    def mark_attempting(self):
        self.phase = DevicePhase.ENT_ATTEMPTING


class MidpointLink:
    """Handshake, mismatch check and shared heralding for the two controllers."""

    def __init__(self, sim: Simulator, hw: QuantumHardware, params: NoiseParams, cfg: PhysConfig):
        self.sim = sim
        self.hw = hw
        self.params = params
        self.cfg = cfg
        self.devices = {}
        self._waiting = {}
        self._rng = sim.rng("heralding")
        self.batches = 0

    def attach(self, dev: DeviceController) -> None:
        self.devices[dev.node] = dev

    def announce(self, dev: DeviceController, cmd: Command):
        ev = self.sim.event()
        peer = dev.node.peer
        waiting = self._waiting.pop(peer, None)
        self.sim.log(dev.node, "ready", tag=cmd.tag)
        if waiting is None:
            entry = (cmd, ev)
            self._waiting[dev.node] = entry
            self.sim.call_in(self.cfg.sync_timeout, self._timeout, dev.node, entry)
            return ev
        peer_cmd, peer_ev = waiting
        if self.cfg.mismatch_check and peer_cmd.tag != cmd.tag:
            self.sim.log(None, "mismatch", tags={dev.node.value: cmd.tag, peer.value: peer_cmd.tag})
            ev.succeed(OutcomeCode.MISMATCH_FAILURE)
            peer_ev.succeed(OutcomeCode.MISMATCH_FAILURE)
            return ev
        cmds = {dev.node: cmd, peer: peer_cmd}
        self.sim.process(self._play_batch(cmds, {dev.node: ev, peer: peer_ev}), "batch")
        return ev

    def _timeout(self, node, entry):
        if self._waiting.get(node) is entry:
            del self._waiting[node]
            entry[1].succeed(OutcomeCode.ENT_SYNC_FAILURE)

    def _play_batch(self, cmds, events):
        self.batches += 1
        batch_id = self.batches
        self.sim.log(None, "sync_ok", batch=batch_id, tag=cmds[Node.CLIENT].tag)
        for node in cmds:
            self.devices[node].mark_attempting()
        row = self.params.fid_table.lookup(cmds[Node.CLIENT].target_fidelity)
        k = geometric_attempts(self.params.success_probability(row), self._rng.random())
        success = k <= self.cfg.batch_size
        attempts = k if success else self.cfg.batch_size
        heralded = None
        if success:
            heralded = (BellState.PSI_PLUS if self._rng.random() < self.params.psi_plus_fraction
                        else BellState.PSI_MINUS)
        self.sim.log(None, "attempt_batch", batch=batch_id, attempts=attempts, success=success)
        yield self.cfg.phase_stabilization + attempts * self.cfg.attempt_duration
        charge_after = {}
        for node in (Node.CLIENT, Node.SERVER):
            dev = self.devices[node]
            dev.charge = step_charge(dev.charge, node, "batch_completed", self.params,
                                     dev._rng_charge.random())
            charge_after[node] = dev.charge
        result = BatchResult(batch_id, success, attempts, heralded, charge_after)
        if success:
            rho = delivered_state(row.model, heralded)
            for node, ch in charge_after.items():
                if ch is not ChargeState.RESONANT:
                    rho = wrong_charge_state(rho, node)
            self.hw.install(rho)
            self.sim.log(None, "herald", batch=batch_id, state=heralded.value)
        for node in (Node.CLIENT, Node.SERVER):
            self.devices[node].phase = DevicePhase.AWAIT_COMMAND
            events[node].succeed(result)
