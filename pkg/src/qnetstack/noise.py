"""Hardware error models for the simulated NV-center nodes.

Covers the heralded-state model, readout error, charge-state dynamics and the
map from a requested link-layer fidelity to physical-layer parameters.
"""

from __future__ import annotations

import enum
from bisect import bisect_left
from dataclasses import dataclass, field, asdict, replace
from typing import Optional, Sequence

import numpy as np

from .qstate import (BellState, Node, Rotation, Axis, bell_density, fidelity_with_pure,
                     apply_local_rotation, replace_qubit, I2, PI_STEPS)
from .units import US, S

__all__ = [
    "DeliveredModel", "FidelityRow", "FidelityTable", "ChargeState", "ChargeParams",
    "NoiseParams", "delivered_state", "corrected_fidelity", "calibrate_row",
    "default_fidelity_table", "apply_readout_error", "step_charge",
    "fidelity_to_phys_target", "FIDELITY_OFFSET", "wrong_charge_state",
]

FIDELITY_OFFSET = 0.03
MIN_REQUESTED_FIDELITY = 0.25
MAX_REQUESTED_FIDELITY = 0.97

# Shape of the heralded state at the top calibration point: off-diagonal
# damping and the share of the incoherent weight that ends up as extra |00>
# population (double-excitation error).
_DEFAULT_DEPHASE = 0.8629
_DEFAULT_ASYM_RATIO = 0.1742


@dataclass(frozen=True)
class DeliveredModel:
    bell_weight: float = 1.0
    pop_asym: float = 0.0
    dephase: float = 1.0

    def __post_init__(self):
        if not 0 <= self.bell_weight <= 1:
            raise ValueError("bell_weight must lie in [0, 1]")
        if not 0 <= self.dephase <= 1:
            raise ValueError("dephase must lie in [0, 1]")
        if self.pop_asym < 0:
            raise ValueError("pop_asym must be non-negative")


def delivered_state(m: DeliveredModel, heralded: BellState) -> np.ndarray:
    """Joint state right after a heralded success, before any correction.

    The Bell projector (coherences damped by ``dephase``) is mixed with the
    maximally mixed state, then ``pop_asym`` of population is moved from
    ``|10>`` into ``|00>``.
    """
    heralded = BellState(heralded)
    if heralded not in (BellState.PSI_PLUS, BellState.PSI_MINUS):
        raise ValueError(f"the physical layer only heralds PSI states, not {heralded.value}")
    bell = bell_density(heralded)
    bell[1, 2] *= m.dephase
    bell[2, 1] *= m.dephase
    rho = m.bell_weight * bell + (1 - m.bell_weight) * np.eye(4, dtype=complex) / 4
    delta = min(m.pop_asym, rho[2, 2].real)
    rho[2, 2] -= delta
    rho[0, 0] += delta
    rho /= np.trace(rho).real
    return rho


def _correction_rotation(heralded: BellState) -> Rotation:
    return Rotation(Axis.X if heralded == BellState.PSI_PLUS else Axis.Y, PI_STEPS)


def corrected_fidelity(m: DeliveredModel, heralded: BellState = BellState.PSI_PLUS) -> float:
    """PHI_PLUS fidelity after an ideal pi correction on the client."""
    rho = apply_local_rotation(delivered_state(m, heralded), Node.CLIENT,
                               _correction_rotation(heralded))
    return fidelity_with_pure(rho, BellState.PHI_PLUS)


def calibrate_row(target: float, dephase: float = _DEFAULT_DEPHASE,
                  asym_ratio: float = _DEFAULT_ASYM_RATIO, tol: float = 1e-10) -> DeliveredModel:
    """Bisect on the Bell weight until the corrected fidelity hits ``target``."""
    def model(w):
        return DeliveredModel(w, asym_ratio * (1 - w), dephase)

    lo, hi = 0.0, 1.0
    if not corrected_fidelity(model(lo)) <= target <= corrected_fidelity(model(hi)):
        raise ValueError(f"target {target} unreachable with dephase={dephase}")
    while hi - lo > tol:
        mid = (lo + hi) / 2
        if corrected_fidelity(model(mid)) < target:
            lo = mid
        else:
            hi = mid
    return model((lo + hi) / 2)


@dataclass(frozen=True)
class FidelityRow:
    target: float
    bell_weight: float
    pop_asym: float
    dephase: float
    p_succ: float

    @property
    def model(self) -> DeliveredModel:
        return DeliveredModel(self.bell_weight, self.pop_asym, self.dephase)


class FidelityTable:
    """Piecewise-linear map from physical target fidelity to state model and p_succ."""

    def __init__(self, rows: Sequence[FidelityRow]):
        rows = sorted(rows, key=lambda r: r.target)
        if not rows:
            raise ValueError("fidelity table needs at least one row")
        for r in rows:
            if not 0.25 < r.target <= 1:
                raise ValueError(f"table key {r.target} outside (0.25, 1]")
            if not 0 <= r.p_succ <= 1:
                raise ValueError("p_succ must be a probability")
        self.rows = tuple(rows)
        self._keys = [r.target for r in rows]

    def __len__(self):
        return len(self.rows)

    @property
    def domain(self):
        return self._keys[0], self._keys[-1]

    def lookup(self, target: float) -> FidelityRow:
        lo, hi = self.domain
        if not lo - 1e-12 <= target <= hi + 1e-12:
            raise ValueError(f"target fidelity {target} outside table domain [{lo}, {hi}]")
        i = bisect_left(self._keys, target - 1e-12)
        if abs(self._keys[i] - target) <= 1e-12 or i == 0:
            return self.rows[i]
        a, b = self.rows[i - 1], self.rows[i]
        t = (target - a.target) / (b.target - a.target)

        def lerp(x, y):
            return x + t * (y - x)

        return FidelityRow(target, lerp(a.bell_weight, b.bell_weight),
                           lerp(a.pop_asym, b.pop_asym), lerp(a.dephase, b.dephase),
                           lerp(a.p_succ, b.p_succ))

    def to_list(self):
        return [asdict(r) for r in self.rows]

    @classmethod
    def from_list(cls, rows):
        return cls([FidelityRow(**r) for r in rows])

    def noiseless(self) -> "FidelityTable":
        """Same success probabilities, but every row delivers a pure Bell state."""
        return FidelityTable([replace(r, bell_weight=1.0, pop_asym=0.0, dephase=1.0)
                              for r in self.rows])


def _default_p_succ(target: float) -> float:
    # linear stand-in: 5e-5 at 0.83 rising to 1e-4 at 0.53
    return max(5e-5 + (0.83 - target) / 0.30 * 5e-5, 1e-6)


def default_fidelity_table() -> FidelityTable:
    rows = []
    for k in range(14):
        target = round(0.28 + 0.05 * k, 2)
        m = calibrate_row(target)
        rows.append(FidelityRow(target, m.bell_weight, m.pop_asym, m.dephase,
                                _default_p_succ(target)))
    rows.append(FidelityRow(1.0, 1.0, 0.0, 1.0, _default_p_succ(1.0)))
    return FidelityTable(rows)


class ChargeState(str, enum.Enum):
    RESONANT = "RESONANT"
    WRONG_CHARGE = "WRONG_CHARGE"
    LONG_OUTAGE = "LONG_OUTAGE"


@dataclass(frozen=True)
class ChargeParams:
    """Per-node charge dynamics.

    ``entry`` is the chance of leaving resonance per completed attempt batch,
    ``recovery`` the chance one recovery try (of ``recovery_try_duration`` ns)
    brings the node back.  ``long_outage`` is the per-try chance of a jump
    that needs tens of seconds of retuning.
    """

    entry: float = 0.0
    recovery: float = 1.0
    recovery_try_duration: int = 10 * US
    long_outage: float = 0.0
    long_outage_range: tuple = (10 * S, 60 * S)

    def __post_init__(self):
        for name in ("entry", "recovery", "long_outage"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"charge {name} probability {v} outside [0, 1]")
        object.__setattr__(self, "long_outage_range", tuple(int(x) for x in self.long_outage_range))

    def outage_duration(self, rand: float) -> int:
        lo, hi = self.long_outage_range
        return int(lo + rand * (hi - lo))


def _default_client_charge():
    # 37 flagged deliveries out of 4500
    return ChargeParams(entry=37 / 4500, recovery=0.05, long_outage=1e-4)


def _default_server_charge():
    # 380 flagged deliveries out of 4500; green-laser randomization never gets stuck
    return ChargeParams(entry=380 / 4500, recovery=0.08)


@dataclass
class NoiseParams:
    """Calibration bundle for both nodes.

    Durations are integer nanoseconds.  ``readout_*`` hold ``(F0, F1)``, the
    probabilities of reading 0 given 0 and 1 given 1.
    """

    p_succ: Optional[float] = None  # overrides the table's per-row value when set
    psi_plus_fraction: float = 0.5
    fid_table: FidelityTable = field(default_factory=default_fidelity_table)
    readout_client: tuple = (0.928, 0.997)
    readout_server: tuple = (0.960, 0.988)
    charge_client: ChargeParams = field(default_factory=_default_client_charge)
    charge_server: ChargeParams = field(default_factory=_default_server_charge)
    cr_pass_prob: float = 0.2
    cr_try_duration: int = 100 * US
    correction_gate_error: float = 0.081
    protected_decay_rate: float = 0.0

    def __post_init__(self):
        for name in ("p_succ", "psi_plus_fraction", "cr_pass_prob", "correction_gate_error"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise ValueError(f"{name}={v} is not a probability")
        for name in ("readout_client", "readout_server"):
            f0, f1 = getattr(self, name)
            if not (0.5 < f0 <= 1 and 0.5 < f1 <= 1):
                raise ValueError(f"{name} fidelities must lie in (0.5, 1]")
            setattr(self, name, (float(f0), float(f1)))
        if self.protected_decay_rate < 0:
            raise ValueError("protected_decay_rate must be non-negative")

    def success_probability(self, row: FidelityRow) -> float:
        return row.p_succ if self.p_succ is None else self.p_succ

    def readout(self, node) -> tuple:
        return self.readout_client if Node(node) is Node.CLIENT else self.readout_server

    def charge(self, node) -> ChargeParams:
        return self.charge_client if Node(node) is Node.CLIENT else self.charge_server

    @classmethod
    def noiseless(cls, **overrides) -> "NoiseParams":
        """Perfect states, perfect readout and no charge jumps."""
        base = dict(fid_table=default_fidelity_table().noiseless(),
                    readout_client=(1.0, 1.0), readout_server=(1.0, 1.0),
                    charge_client=ChargeParams(), charge_server=ChargeParams(),
                    cr_pass_prob=1.0, correction_gate_error=0.0)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["fid_table"] = self.fid_table.to_list()
        d["readout_client"] = list(self.readout_client)
        d["readout_server"] = list(self.readout_server)
        d["charge_client"] = asdict(self.charge_client)
        d["charge_server"] = asdict(self.charge_server)
        for k in ("charge_client", "charge_server"):
            d[k]["long_outage_range"] = list(d[k]["long_outage_range"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseParams":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown noise parameters: {sorted(unknown)}")
        if "fid_table" in d and not isinstance(d["fid_table"], FidelityTable):
            d["fid_table"] = FidelityTable.from_list(d["fid_table"])
        for k in ("charge_client", "charge_server"):
            if k in d and isinstance(d[k], dict):
                defaults = asdict(_default_client_charge() if k == "charge_client"
                                  else _default_server_charge())
                defaults.update(d[k])
                d[k] = ChargeParams(**defaults)
        for k in ("readout_client", "readout_server"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


def apply_readout_error(true_bit: int, f0: float, f1: float, rand: float) -> int:
    keep = f0 if true_bit == 0 else f1
    return true_bit if rand < keep else 1 - true_bit


def step_charge(state: ChargeState, node, event: str, p: NoiseParams, rand: float) -> ChargeState:
    """Advance one node's charge state on ``'batch_completed'`` or ``'cr_try'``."""
    cp = p.charge(node)
    state = ChargeState(state)
    if event == "batch_completed":
        if state is ChargeState.RESONANT and rand < cp.entry:
            return ChargeState.WRONG_CHARGE
        return state
    if event == "cr_try":
        if state is ChargeState.WRONG_CHARGE:
            if rand < cp.long_outage:
                return ChargeState.LONG_OUTAGE
            if rand < cp.long_outage + cp.recovery:
                return ChargeState.RESONANT
        return state
    raise ValueError(f"unknown charge event {event!r}")


def fidelity_to_phys_target(requested_min_fidelity: float) -> float:
    if not MIN_REQUESTED_FIDELITY <= requested_min_fidelity <= MAX_REQUESTED_FIDELITY:
        raise ValueError(f"requested fidelity {requested_min_fidelity} outside "
                         f"[{MIN_REQUESTED_FIDELITY}, {MAX_REQUESTED_FIDELITY}]")
    return min(round(requested_min_fidelity + FIDELITY_OFFSET, 12), 1.0)


def wrong_charge_state(rho: np.ndarray, node) -> np.ndarray:
    """A node in the wrong charge state holds a maximally mixed qubit."""
    return replace_qubit(rho, node, I2 / 2)
