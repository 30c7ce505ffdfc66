"""Repeater registers, their state machine, link models and delivery records."""
from __future__ import annotations

import bisect
import enum
import logging
from dataclasses import dataclass
from typing import Callable, Mapping

from .engine import to_seconds
from .exceptions import ProtocolError
from .noise import CoherenceParams, decoherence_channel
from .qstate import DensityMatrix, apply_channel

logger = logging.getLogger(__name__)


class Phase(enum.Enum):
    IDLE_ATTEMPTING_DISTANT = "idle_attempting_distant"
    SWAPPING_TO_NUCLEAR = "swapping_to_nuclear"
    AWAITING_PAIR = "awaiting_pair"
    ATTEMPTING_LOCAL = "attempting_local"
    ATTEMPTING_SECOND_SIDE = "attempting_second_side"
    DELIVERING = "delivering"


class Bank(enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    UNASSIGNED = "unassigned"


STORING_PHASES = frozenset(
    {Phase.AWAITING_PAIR, Phase.ATTEMPTING_LOCAL, Phase.ATTEMPTING_SECOND_SIDE, Phase.DELIVERING}
)


class StoredEntanglement:
    """Two-qubit state plus the role of each qubit and the time it was last brought up to date.

    Roles are ``client``, ``electron`` or ``nuclear``; idle decoherence is applied
    lazily by :meth:`advance` with the coherence parameters of each role.
    """

    def __init__(self, state: DensityMatrix, roles: tuple[str, str], last_update: int):
        if state.n_qubits != 2:
            raise ProtocolError(f"Intrication stockée sur {state.n_qubits} qubits au lieu de 2.")
        self.state = state
        self.roles = roles
        self.last_update = int(last_update)
        self.attempt_noise_applications = 0

    def advance(self, now: int, coherence: Mapping[str, CoherenceParams], *, skip: frozenset[str] = frozenset()) -> None:
        elapsed = now - self.last_update
        if elapsed < 0:
            raise ProtocolError(f"Mise à jour d'état dans le passé ({elapsed} ns).")
        if elapsed:
            seconds = to_seconds(elapsed)
            for qubit, role in enumerate(self.roles):
                if role in skip:
                    continue
                params = coherence[role]
                if not params.is_perfect:
                    self.state = apply_channel(self.state, [qubit], decoherence_channel(seconds, params))
        self.last_update = now

    def relabel(self, qubit: int, role: str) -> None:
        roles = list(self.roles)
        roles[qubit] = role
        self.roles = tuple(roles)


@dataclass(eq=False)
class QubitRegister:
    """One electron (broker) + nuclear spin (storage) register of the repeater node."""

    id: int
    bank: Bank = Bank.UNASSIGNED
    phase: Phase = Phase.IDLE_ATTEMPTING_DISTANT
    stored: StoredEntanglement | None = None
    broker: StoredEntanglement | None = None
    success_time: int | None = None
    herald_time: int | None = None
    paired_time: int | None = None
    train_start: int = 0
    distant_attempts: int = 0
    attempt_count_while_stored: int = 0

    @property
    def label(self) -> str:
        return f"reg{self.id}"

    def _require(self, *phases: Phase) -> None:
        if self.phase not in phases:
            expected = ", ".join(phase.value for phase in phases)
            raise ProtocolError(f"{self.label}: phase {self.phase.value} (attendu: {expected}).")

    def _move(self, phase: Phase, now: int) -> None:
        self.phase = phase

    def check(self) -> None:
        holds = self.stored is not None
        if holds != (self.phase in STORING_PHASES):
            raise ProtocolError(f"{self.label}: état stocké incohérent avec la phase {self.phase.value}.")
        if (self.broker is not None) != (self.phase is Phase.SWAPPING_TO_NUCLEAR):
            raise ProtocolError(f"{self.label}: état d'électron incohérent avec la phase {self.phase.value}.")

    def start_train(self, start: int) -> None:
        self._require(Phase.IDLE_ATTEMPTING_DISTANT)
        self.train_start = start
        self.distant_attempts = 0

    def count_distant_attempt(self) -> None:
        self._require(Phase.IDLE_ATTEMPTING_DISTANT)
        self.distant_attempts += 1

    def herald(self, broker: StoredEntanglement, now: int) -> None:
        self._require(Phase.IDLE_ATTEMPTING_DISTANT)
        if self.stored is not None or self.broker is not None:
            raise ProtocolError(f"{self.label}: second état intriqué refusé.")
        self.broker = broker
        self.herald_time = now
        self._move(Phase.SWAPPING_TO_NUCLEAR, now)

    def store(self, now: int, next_phase: Phase) -> StoredEntanglement:
        self._require(Phase.SWAPPING_TO_NUCLEAR)
        if next_phase not in (Phase.AWAITING_PAIR, Phase.ATTEMPTING_SECOND_SIDE):
            raise ProtocolError(f"{self.label}: transition vers {next_phase.value} interdite après le transfert.")
        if next_phase is Phase.AWAITING_PAIR and self.bank is Bank.UNASSIGNED:
            raise ProtocolError(f"{self.label}: registre sans banque ne peut attendre un appariement.")
        self.stored, self.broker = self.broker, None
        self.success_time = now
        self.attempt_count_while_stored = 0
        self._move(next_phase, now)
        return self.stored

    def begin_local(self, now: int) -> None:
        self._require(Phase.AWAITING_PAIR)
        self.paired_time = now
        self._move(Phase.ATTEMPTING_LOCAL, now)

    def count_stored_attempt(self) -> None:
        self._require(Phase.ATTEMPTING_LOCAL, Phase.ATTEMPTING_SECOND_SIDE)
        self.attempt_count_while_stored += 1

    def begin_delivery(self, delivered: StoredEntanglement, now: int) -> None:
        self._require(Phase.ATTEMPTING_LOCAL, Phase.ATTEMPTING_SECOND_SIDE)
        self.stored = delivered
        self._move(Phase.DELIVERING, now)

    def reset(self, now: int) -> None:
        self._require(Phase.DELIVERING)
        self.stored = None
        self.success_time = None
        self.herald_time = None
        self.paired_time = None
        self.attempt_count_while_stored = 0
        self._move(Phase.IDLE_ATTEMPTING_DISTANT, now)


class PairingQueue:
    """Left and right queues of ``AWAITING_PAIR`` registers ordered by ``(success_time, id)``."""

    def __init__(self):
        self._queues: dict[Bank, list[tuple[int, int, QubitRegister]]] = {Bank.LEFT: [], Bank.RIGHT: []}
        self._members: set[int] = set()

    def push(self, reg: QubitRegister) -> None:
        if reg.phase is not Phase.AWAITING_PAIR:
            raise ProtocolError(f"{reg.label}: seuls les registres en attente d'appariement sont mis en file.")
        if reg.bank not in self._queues:
            raise ProtocolError(f"{reg.label}: banque {reg.bank.value} invalide pour l'appariement.")
        if reg.id in self._members:
            raise ProtocolError(f"{reg.label}: déjà en file.")
        bisect.insort(self._queues[reg.bank], (reg.success_time, reg.id, reg))
        self._members.add(reg.id)

    def __len__(self) -> int:
        return len(self._members)

    def waiting(self, bank: Bank) -> list[QubitRegister]:
        return [item[2] for item in self._queues[bank]]

    def pair_fifo(self, now: int = 0) -> list[tuple[QubitRegister, QubitRegister]]:
        """Pairs queue heads until one side is empty; paired registers move to ``ATTEMPTING_LOCAL``."""
        left, right = self._queues[Bank.LEFT], self._queues[Bank.RIGHT]
        pairs = []
        while left and right:
            _, _, left_reg = left.pop(0)
            _, _, right_reg = right.pop(0)
            self._members.difference_update({left_reg.id, right_reg.id})
            left_reg.begin_local(now)
            right_reg.begin_local(now)
            pairs.append((left_reg, right_reg))
        return pairs


HeraldedStateFactory = Callable[[], DensityMatrix]


@dataclass(frozen=True)
class LinkModel:
    """Success probability, attempt period and heralded state of one entanglement link."""

    name: str
    p_success: float
    attempt_period: float
    heralded_state_factory: HeraldedStateFactory
    flight_time: float = 0.0

    def __post_init__(self):
        if not 0 < self.p_success <= 1:
            raise ProtocolError(f"Lien '{self.name}': p_success={self.p_success} hors de ]0, 1].")
        if not self.attempt_period > 0:
            raise ProtocolError(f"Lien '{self.name}': période {self.attempt_period} non positive.")
        if not 0 <= self.flight_time <= self.attempt_period:
            raise ProtocolError(f"Lien '{self.name}': temps de vol incompatible avec la période.")


@dataclass(frozen=True)
class DeliveryRecord:
    completion_time: float
    fidelity: float
    idle_cycles_left: int
    idle_cycles_right: int
    stored_attempts: int
    architecture: str
    attempt_noise_left: int = 0
    attempt_noise_right: int = 0
    distant_attempts_left: int = 0
    distant_attempts_right: int = 0
    first_stage_cycles: float = 0.0
    register_ids: tuple[int, ...] = ()
    success_times: tuple[float, ...] = ()
    paired_time: float | None = None

    def __post_init__(self):
        if not 0 <= self.fidelity <= 1:
            raise ProtocolError(f"Fidélité {self.fidelity} hors de [0, 1].")

    @property
    def idle_cycles(self) -> int:
        return max(self.idle_cycles_left, self.idle_cycles_right)
