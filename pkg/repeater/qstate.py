"""Dense density-matrix algebra for registers of one to four qubits.

Qubit 0 is the most significant bit of the basis index (``np.kron`` order).
Bell outcomes are encoded by the two classical bits ``(x, z)`` of the Pauli
correction they require: Φ⁺=(0,0), Ψ⁺=(1,0), Φ⁻=(0,1), Ψ⁻=(1,1).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from django.conf import settings

from .engine import RandomStream
from .exceptions import QuantumStateError

MAX_QUBITS = 4
HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-10
POSITIVITY_TOL = 1e-10
COMPLETENESS_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, X, Y, Z)


class BellOutcome(enum.Enum):
    PHI_PLUS = (0, 0)
    PSI_PLUS = (1, 0)
    PHI_MINUS = (0, 1)
    PSI_MINUS = (1, 1)

    @property
    def x_bit(self) -> int:
        return self.value[0]

    @property
    def z_bit(self) -> int:
        return self.value[1]

    @property
    def index(self) -> int:
        return self.x_bit + 2 * self.z_bit

    @classmethod
    def from_bits(cls, x_bit: int, z_bit: int) -> "BellOutcome":
        return cls((int(x_bit), int(z_bit)))

    @property
    def label(self) -> str:
        return _BELL_LABELS[self]


_BELL_LABELS = {
    BellOutcome.PHI_PLUS: "Φ+",
    BellOutcome.PSI_PLUS: "Ψ+",
    BellOutcome.PHI_MINUS: "Φ-",
    BellOutcome.PSI_MINUS: "Ψ-",
}

# Fixed measurement order used when sampling the Born distribution.
BELL_ORDER = (
    BellOutcome.PHI_PLUS,
    BellOutcome.PSI_PLUS,
    BellOutcome.PHI_MINUS,
    BellOutcome.PSI_MINUS,
)


def _bell_vector(kind: BellOutcome) -> np.ndarray:
    s = 1 / np.sqrt(2)
    vectors = {
        BellOutcome.PHI_PLUS: [s, 0, 0, s],
        BellOutcome.PHI_MINUS: [s, 0, 0, -s],
        BellOutcome.PSI_PLUS: [0, s, s, 0],
        BellOutcome.PSI_MINUS: [0, s, -s, 0],
    }
    return np.array(vectors[kind], dtype=complex)


def _checks_enabled() -> bool:
    return bool(getattr(settings, "REPEATER_STATE_CHECKS", True))


class DensityMatrix:
    """Immutable density matrix over ``n_qubits`` qubits."""

    __slots__ = ("_data", "n_qubits")

    def __init__(self, data: np.ndarray, *, validate: bool | None = None):
        array = np.array(data, dtype=complex)
        if array.ndim != 2 or array.shape[0] != array.shape[1]:
            raise QuantumStateError(f"Matrice non carrée: {array.shape}.")
        n_qubits = int(round(np.log2(array.shape[0]))) if array.shape[0] else 0
        if 2 ** n_qubits != array.shape[0] or not 1 <= n_qubits <= MAX_QUBITS:
            raise QuantumStateError(f"Dimension {array.shape[0]} hors de 2..{2 ** MAX_QUBITS}.")
        array.setflags(write=False)
        self._data = array
        self.n_qubits = n_qubits
        if validate if validate is not None else _checks_enabled():
            self.check()

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[0]

    @classmethod
    def from_ket(cls, ket: Sequence[complex]) -> "DensityMatrix":
        vector = np.asarray(ket, dtype=complex)
        return cls(np.outer(vector, vector.conj()))

    @classmethod
    def maximally_mixed(cls, n_qubits: int) -> "DensityMatrix":
        dim = 2 ** n_qubits
        return cls(np.eye(dim, dtype=complex) / dim)

    def trace(self) -> float:
        return float(np.real(np.trace(self._data)))

    def purity(self) -> float:
        return float(np.real(np.trace(self._data @ self._data)))

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self._data)))

    def check(self) -> None:
        data = self._data
        if np.max(np.abs(data - data.conj().T)) > HERMITIAN_TOL:
            raise QuantumStateError("Matrice densité non hermitienne.")
        trace = self.trace()
        if abs(trace - 1.0) > TRACE_TOL:
            raise QuantumStateError(f"Trace {trace!r} différente de 1.")
        if self.min_eigenvalue() < -POSITIVITY_TOL:
            raise QuantumStateError("Valeur propre négative: état non positif.")

    def allclose(self, other: "DensityMatrix", atol: float = 1e-12) -> bool:
        return self.n_qubits == other.n_qubits and bool(np.allclose(self._data, other._data, atol=atol, rtol=0))

    def __repr__(self) -> str:
        return f"DensityMatrix(n_qubits={self.n_qubits})"


@dataclass(frozen=True)
class KrausChannel:
    operators: tuple[np.ndarray, ...]
    name: str = ""

    def __post_init__(self):
        if not self.operators:
            raise QuantumStateError("Canal sans opérateur de Kraus.")
        dim = self.operators[0].shape[0]
        if dim not in (2, 4):
            raise QuantumStateError(f"Opérateurs de Kraus {dim}x{dim} non supportés.")
        total = sum(op.conj().T @ op for op in self.operators)
        if np.max(np.abs(total - np.eye(dim))) > COMPLETENESS_TOL:
            raise QuantumStateError(f"Canal '{self.name}' non complet (Σ K†K ≠ 𝕀).")

    @property
    def arity(self) -> int:
        return 1 if self.operators[0].shape[0] == 2 else 2

    @classmethod
    def from_pauli_weights(cls, weights: dict[tuple[int, ...], float], name: str = "") -> "KrausChannel":
        """Channel ``ρ ↦ Σ w_P PρP`` from weights keyed by Pauli indices (0=I,1=X,2=Y,3=Z)."""
        operators = []
        for key, weight in sorted(weights.items()):
            if weight <= 0:
                continue
            op = np.array([[1.0]], dtype=complex)
            for index in key:
                op = np.kron(op, PAULIS[index])
            operators.append(np.sqrt(weight) * op)
        return cls(tuple(operators), name=name)


def identity_channel(arity: int = 1) -> KrausChannel:
    return KrausChannel((np.eye(2 ** arity, dtype=complex),), name="identity")


def lift(operator: np.ndarray, targets: Sequence[int], n_qubits: int) -> np.ndarray:
    """Embed an operator on ``targets`` into the full ``n_qubits`` register."""
    k = len(targets)
    if operator.shape != (2 ** k, 2 ** k):
        raise QuantumStateError("Arité de l'opérateur incompatible avec les cibles.")
    if k == n_qubits and list(targets) == list(range(n_qubits)):
        return operator
    rest = [q for q in range(n_qubits) if q not in targets]
    full = np.kron(operator, np.eye(2 ** (n_qubits - k), dtype=complex))
    perm = list(np.argsort(list(targets) + rest))
    tensor_form = full.reshape([2] * (2 * n_qubits))
    tensor_form = tensor_form.transpose(perm + [n_qubits + p for p in perm])
    return tensor_form.reshape(2 ** n_qubits, 2 ** n_qubits)


def _check_targets(rho: DensityMatrix, targets: Sequence[int]) -> None:
    if len(set(targets)) != len(targets):
        raise QuantumStateError(f"Cibles dupliquées: {list(targets)}.")
    for target in targets:
        if not 0 <= target < rho.n_qubits:
            raise QuantumStateError(f"Qubit {target} hors du registre de {rho.n_qubits} qubits.")


def apply_unitary(rho: DensityMatrix, targets: Sequence[int], unitary: np.ndarray) -> DensityMatrix:
    _check_targets(rho, targets)
    full = lift(unitary, targets, rho.n_qubits)
    return DensityMatrix(full @ rho.data @ full.conj().T)


def apply_channel(rho: DensityMatrix, targets: Sequence[int], ch: KrausChannel) -> DensityMatrix:
    _check_targets(rho, targets)
    if ch.arity != len(targets):
        raise QuantumStateError(
            f"Canal '{ch.name}' d'arité {ch.arity} appliqué à {len(targets)} qubit(s)."
        )
    result = np.zeros_like(rho.data)
    for operator in ch.operators:
        full = lift(operator, targets, rho.n_qubits)
        result += full @ rho.data @ full.conj().T
    return DensityMatrix(result)


def bell_state(kind: BellOutcome) -> DensityMatrix:
    return DensityMatrix.from_ket(_bell_vector(kind))


def tensor(rho1: DensityMatrix, rho2: DensityMatrix) -> DensityMatrix:
    if rho1.n_qubits + rho2.n_qubits > MAX_QUBITS:
        raise QuantumStateError(
            f"Registre de {rho1.n_qubits + rho2.n_qubits} qubits au-delà de la limite {MAX_QUBITS}."
        )
    return DensityMatrix(np.kron(rho1.data, rho2.data))


def partial_trace(rho: DensityMatrix, traced: Sequence[int]) -> DensityMatrix:
    _check_targets(rho, traced)
    n = rho.n_qubits
    keep = [q for q in range(n) if q not in traced]
    if not keep:
        raise QuantumStateError("Impossible de tracer tous les qubits.")
    tensor_form = rho.data.reshape([2] * (2 * n))
    # Trace out from the highest index down so remaining axis positions stay valid.
    current = n
    for qubit in sorted(traced, reverse=True):
        tensor_form = np.trace(tensor_form, axis1=qubit, axis2=qubit + current)
        current -= 1
    dim = 2 ** len(keep)
    return DensityMatrix(tensor_form.reshape(dim, dim))


def permute(rho: DensityMatrix, order: Sequence[int]) -> DensityMatrix:
    """Reorder qubits so that new qubit ``i`` is old qubit ``order[i]``."""
    n = rho.n_qubits
    if sorted(order) != list(range(n)):
        raise QuantumStateError(f"Permutation invalide {list(order)}.")
    tensor_form = rho.data.reshape([2] * (2 * n))
    tensor_form = tensor_form.transpose(list(order) + [n + q for q in order])
    return DensityMatrix(tensor_form.reshape(2 ** n, 2 ** n))


def bell_probabilities(rho: DensityMatrix, pair: tuple[int, int]) -> dict[BellOutcome, float]:
    probabilities = {}
    for outcome in BELL_ORDER:
        projector = lift(bell_state(outcome).data, list(pair), rho.n_qubits)
        probabilities[outcome] = float(np.real(np.trace(projector @ rho.data)))
    return probabilities


def project_bell(rho: DensityMatrix, pair: tuple[int, int], outcome: BellOutcome) -> tuple[float, DensityMatrix]:
    """Projects ``pair`` on ``outcome``; returns the branch probability and the renormalised rest."""
    projector = lift(bell_state(outcome).data, list(pair), rho.n_qubits)
    branch = projector @ rho.data @ projector
    probability = float(np.real(np.trace(branch)))
    if probability <= 1e-15:
        raise QuantumStateError(f"Branche {outcome.label} de probabilité nulle échantillonnée.")
    reduced = partial_trace(DensityMatrix(branch / probability, validate=False), list(pair))
    return probability, reduced


def bell_measure(
    rho: DensityMatrix, pair: tuple[int, int], stream: RandomStream
) -> tuple[BellOutcome, DensityMatrix]:
    if rho.n_qubits < 3:
        raise QuantumStateError("Une mesure de Bell requiert au moins un qubit spectateur.")
    _check_targets(rho, pair)
    if len(pair) != 2:
        raise QuantumStateError("La mesure de Bell porte sur exactement deux qubits.")
    probabilities = bell_probabilities(rho, pair)
    draw = stream.uniform()
    cumulative = 0.0
    chosen = [outcome for outcome in BELL_ORDER if probabilities[outcome] > 0][-1]
    for outcome in BELL_ORDER:
        cumulative += probabilities[outcome]
        if draw < cumulative:
            chosen = outcome
            break
    _, reduced = project_bell(rho, pair, chosen)
    return chosen, reduced


def correction_operator(outcome: BellOutcome) -> np.ndarray:
    op = I2
    if outcome.z_bit:
        op = Z @ op
    if outcome.x_bit:
        op = X @ op
    return op


def pauli_correct(rho: DensityMatrix, qubit: int, outcome: BellOutcome) -> DensityMatrix:
    """Φ⁺→𝕀, Ψ⁺→X, Φ⁻→Z, Ψ⁻→XZ on ``qubit``."""
    if outcome is BellOutcome.PHI_PLUS:
        return rho
    return apply_unitary(rho, [qubit], correction_operator(outcome))


def fidelity(rho: DensityMatrix, target: DensityMatrix) -> float:
    if abs(target.purity() - 1.0) > 1e-9:
        raise QuantumStateError("L'état cible d'une fidélité doit être pur.")
    if target.n_qubits != rho.n_qubits:
        raise QuantumStateError("Fidélité entre registres de tailles différentes.")
    value = float(np.real(np.trace(rho.data @ target.data)))
    return min(1.0, max(0.0, value))


PHI_PLUS = DensityMatrix(np.outer(_bell_vector(BellOutcome.PHI_PLUS), _bell_vector(BellOutcome.PHI_PLUS).conj()), validate=False)
