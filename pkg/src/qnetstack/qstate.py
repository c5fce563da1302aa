"""Exact two-qubit density-matrix engine.

States are plain ``(4, 4)`` complex numpy arrays in the computational basis
``|00>, |01>, |10>, |11>``.  The left tensor factor is always the client
qubit and the right factor the server qubit, so ``rho[2*i + j, 2*m + n]`` is
``<ij|rho|mn>`` with ``i, m`` on the client and ``j, n`` on the server.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Node", "BellState", "STEP", "PI_STEPS", "Axis", "MeasBasis", "Rotation",
    "I2", "PAULI", "bell_vector", "bell_density", "product_state",
    "maximally_mixed", "validate_density", "is_density", "local_unitary",
    "rotation_matrix", "apply_local_rotation", "apply_local_unitary",
    "measure_qubit", "outcome_probability", "pauli_expectation",
    "fidelity_with_pure", "partial_trace", "reset_qubit",
    "depolarize_qubit", "replace_qubit", "basis_change",
]

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-9

STEP = np.pi / 16
PI_STEPS = 16

I2 = np.eye(2, dtype=complex)
PAULI = {
    "I": I2,
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class Node(str, enum.Enum):
    CLIENT = "client"
    SERVER = "server"

    @property
    def index(self) -> int:
        return 0 if self is Node.CLIENT else 1

    @property
    def peer(self) -> "Node":
        return Node.SERVER if self is Node.CLIENT else Node.CLIENT


class BellState(str, enum.Enum):
    PHI_PLUS = "PHI_PLUS"
    PHI_MINUS = "PHI_MINUS"
    PSI_PLUS = "PSI_PLUS"
    PSI_MINUS = "PSI_MINUS"


class Axis(str, enum.Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


@dataclass(frozen=True)
class MeasBasis:
    """Measurement of ``sign * sigma_axis``; bit 0 is the +1 eigenvalue."""

    axis: Axis
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        if self.sign not in (1, -1):
            raise ValueError(f"basis sign must be +1 or -1, got {self.sign!r}")

    @classmethod
    def parse(cls, text: str) -> "MeasBasis":
        """Parse ``"+X"``, ``"-Y"`` or a bare ``"Z"``."""
        text = text.strip()
        sign = 1
        if text[:1] in "+-":
            sign = -1 if text[0] == "-" else 1
            text = text[1:]
        return cls(Axis(text.upper()), sign)

    def __str__(self) -> str:
        return ("+" if self.sign > 0 else "-") + self.axis.value


@dataclass(frozen=True)
class Rotation:
    """Rotation about ``axis`` by ``steps * pi/16``."""

    axis: Axis
    steps: int

    MIN_STEPS = -31
    MAX_STEPS = 32

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        if not isinstance(self.steps, (int, np.integer)):
            raise TypeError("rotation steps must be an integer")
        if not self.MIN_STEPS <= self.steps <= self.MAX_STEPS:
            raise ValueError(
                f"rotation steps {self.steps} outside [{self.MIN_STEPS}, {self.MAX_STEPS}]")

    @property
    def angle(self) -> float:
        return self.steps * STEP

    def inverse(self) -> "Rotation":
        # -32 is outside the range; a full turn is its own inverse up to phase
        steps = -self.steps if self.steps != 32 else 32
        return Rotation(self.axis, steps)


_BELL_VECTORS = {
    BellState.PHI_PLUS: np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2),
    BellState.PHI_MINUS: np.array([1, 0, 0, -1], dtype=complex) / np.sqrt(2),
    BellState.PSI_PLUS: np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2),
    BellState.PSI_MINUS: np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2),
}


def _qubit_index(qubit) -> int:
    try:
        return Node(qubit).index
    except ValueError:
        raise ValueError(f"invalid qubit label {qubit!r}; expected 'client' or 'server'") from None


def bell_vector(b: BellState) -> np.ndarray:
    return _BELL_VECTORS[BellState(b)].copy()


def bell_density(b: BellState) -> np.ndarray:
    v = _BELL_VECTORS[BellState(b)]
    return np.outer(v, v.conj())


def product_state(client: np.ndarray, server: np.ndarray) -> np.ndarray:
    """Tensor two single-qubit density matrices (or kets) into a joint state."""
    def as_dm(s):
        s = np.asarray(s, dtype=complex)
        return np.outer(s, s.conj()) if s.ndim == 1 else s
    return np.kron(as_dm(client), as_dm(server))


def maximally_mixed() -> np.ndarray:
    return np.eye(4, dtype=complex) / 4


def validate_density(rho: np.ndarray) -> None:
    """Raise ``ValueError`` unless ``rho`` is a valid two-qubit density matrix."""
    rho = np.asarray(rho)
    if rho.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {rho.shape}")
    if np.max(np.abs(rho - rho.conj().T)) > HERMITIAN_TOL:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > TRACE_TOL:
        raise ValueError(f"density matrix trace {np.trace(rho).real:.15f} != 1")
    if np.linalg.eigvalsh(rho).min() < -PSD_TOL:
        raise ValueError("density matrix is not positive semidefinite")


def is_density(rho: np.ndarray) -> bool:
    try:
        validate_density(rho)
    except ValueError:
        return False
    return True


def rotation_matrix(r: Rotation) -> np.ndarray:
    """Single-qubit ``exp(-i * angle * sigma_axis / 2)``."""
    theta = r.angle
    return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * PAULI[r.axis.value]


def local_unitary(u: np.ndarray, qubit) -> np.ndarray:
    return np.kron(u, I2) if _qubit_index(qubit) == 0 else np.kron(I2, u)


def apply_local_unitary(rho: np.ndarray, qubit, u: np.ndarray) -> np.ndarray:
    full = local_unitary(u, qubit)
    return full @ rho @ full.conj().T


def apply_local_rotation(rho: np.ndarray, qubit, r: Rotation) -> np.ndarray:
    return apply_local_unitary(rho, qubit, rotation_matrix(r))


def _eigenprojector(basis: MeasBasis, bit: int) -> np.ndarray:
    sign = basis.sign * (1 if bit == 0 else -1)
    return (I2 + sign * PAULI[basis.axis.value]) / 2


def outcome_probability(rho: np.ndarray, qubit, basis: MeasBasis, bit: int = 0) -> float:
    proj = local_unitary(_eigenprojector(basis, bit), qubit)
    return float(np.real(np.trace(proj @ rho)))


def partial_trace(rho: np.ndarray, keep) -> np.ndarray:
    """Reduced 2x2 state of the qubit ``keep``."""
    t = np.asarray(rho).reshape(2, 2, 2, 2)
    if _qubit_index(keep) == 0:
        return np.einsum("ijkj->ik", t)
    return np.einsum("ijil->jl", t)


def replace_qubit(rho: np.ndarray, qubit, single: np.ndarray) -> np.ndarray:
    """Discard ``qubit`` and put it in the single-qubit state ``single``."""
    other = partial_trace(rho, Node(qubit).peer)
    if _qubit_index(qubit) == 0:
        return np.kron(single, other)
    return np.kron(other, single)


def reset_qubit(rho: np.ndarray, qubit) -> np.ndarray:
    return replace_qubit(rho, qubit, np.diag([1, 0]).astype(complex))


def depolarize_qubit(rho: np.ndarray, qubit, p: float) -> np.ndarray:
    """With probability ``p`` replace ``qubit`` by the maximally mixed state."""
    if p <= 0:
        return rho
    return (1 - p) * rho + p * replace_qubit(rho, qubit, I2 / 2)


def measure_qubit(rho: np.ndarray, qubit, basis: MeasBasis, rand: float):
    """Projectively measure one qubit.

    Returns ``(bit, post)`` where ``post`` is the measured eigenstate tensored
    with the normalized conditional state of the other qubit.  The outcome is
    0 iff ``rand < P(0)``.
    """
    if not 0 <= rand < 1:
        raise ValueError("rand must lie in [0, 1)")
    p0 = outcome_probability(rho, qubit, basis, 0)
    bit = 0 if rand < p0 else 1
    proj = local_unitary(_eigenprojector(basis, bit), qubit)
    post = proj @ rho @ proj
    post = post / np.real(np.trace(post))
    return bit, (post + post.conj().T) / 2


def pauli_expectation(rho: np.ndarray, client_obs: str, server_obs: str) -> float:
    op = np.kron(PAULI[str(getattr(client_obs, "value", client_obs))],
                 PAULI[str(getattr(server_obs, "value", server_obs))])
    return float(np.real(np.trace(rho @ op)))


def fidelity_with_pure(rho: np.ndarray, target: BellState) -> float:
    v = _BELL_VECTORS[BellState(target)]
    return float(np.real(v.conj() @ rho @ v))


_BASIS_GATES = {
    (Axis.X, 1): (Rotation(Axis.Y, -8),),
    (Axis.X, -1): (Rotation(Axis.Y, 8),),
    (Axis.Y, 1): (Rotation(Axis.X, 8),),
    (Axis.Y, -1): (Rotation(Axis.X, -8),),
    (Axis.Z, 1): (),
    (Axis.Z, -1): (Rotation(Axis.X, PI_STEPS),),
}


def basis_change(basis: MeasBasis, physical_sign: bool = True):
    """Gates that turn a Z measurement into a ``basis`` measurement.

    Returns ``(gates, flip)``.  With ``physical_sign`` the sign of the basis
    is realized by the rotation itself; otherwise the gates for the positive
    orientation are used and ``flip`` tells the caller to invert the bit.
    """
    if physical_sign:
        return _BASIS_GATES[(basis.axis, basis.sign)], False
    return _BASIS_GATES[(basis.axis, 1)], basis.sign < 0
