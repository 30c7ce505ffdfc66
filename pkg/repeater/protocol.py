"""Router and routerless repeater protocols driven by the event engine.

Both architectures share the distant stage: each register runs a train of
heralded attempts (resolved at the end of each period), transfers a success to
its nuclear spin and then either waits to be paired with the opposite bank
(router) or attempts the second link with its electron while the first one is
stored (routerless). Entanglement swapping happens at herald time; a pair is
delivered when the classical correction reaches Bob, one latency later.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from django.conf import settings

from . import fabric
from .config import SimConfig
from .engine import Event, RandomStream, Simulator, to_seconds, to_ticks
from .exceptions import ProtocolError, RepeaterError, SimulationError
from .noise import (
    CoherenceParams,
    attempt_noise_channel,
    flip_outcome,
    gate_noise_channel,
)
from .qstate import (
    PHI_PLUS,
    BellOutcome,
    DensityMatrix,
    KrausChannel,
    apply_channel,
    bell_measure,
    fidelity,
    pauli_correct,
    permute,
    tensor,
)
from .registers import (
    Bank,
    DeliveryRecord,
    LinkModel,
    PairingQueue,
    Phase,
    QubitRegister,
    StoredEntanglement,
)

logger = logging.getLogger(__name__)

MAX_HORIZON_TICKS = 2 ** 62


class BarrettKok:
    """Two-round heralding: success ½·η_A·η_B, heralded state Φ⁺ after the standard frame fix."""

    name = "barrett_kok"

    def distant_probability(self, fab: fabric.FabricSpec, ch: fabric.ChannelSpec, depth: int | None) -> float:
        return fabric.p_distant(fab, ch, depth=depth)

    def local_probability(self, fab: fabric.FabricSpec) -> float:
        return fabric.p_local(fab)

    def heralded_state(self) -> DensityMatrix:
        return PHI_PLUS


class SingleClick:
    """Bright-state heralding with population ``alpha``: higher rate, |11⟩ admixture of weight ``alpha``."""

    name = "single_click"

    def __init__(self, alpha: float):
        self.alpha = alpha
        mixed = (1 - alpha) * PHI_PLUS.data.copy()
        mixed[3, 3] += alpha
        self._state = DensityMatrix(mixed)

    def distant_probability(self, fab: fabric.FabricSpec, ch: fabric.ChannelSpec, depth: int | None) -> float:
        eta = math.sqrt(fabric.repeater_efficiency(fab, ch, depth=depth) * fabric.client_efficiency(fab, ch))
        return min(1.0, 2 * self.alpha * eta)

    def local_probability(self, fab: fabric.FabricSpec) -> float:
        eta = fabric.path_transmission(fabric.local_path_depth(fab.m), fab, fab.coupling_loss_db)
        return min(1.0, 2 * self.alpha * eta * fab.detector_efficiency)

    def heralded_state(self) -> DensityMatrix:
        return self._state


LINK_PROTOCOLS = {
    "barrett_kok": lambda link: BarrettKok(),
    "single_click": lambda link: SingleClick(link.bright_state_population),
}


@dataclass(frozen=True)
class LinkSet:
    left: LinkModel
    right: LinkModel
    local: LinkModel

    def distant(self, bank: Bank) -> LinkModel:
        return self.right if bank is Bank.RIGHT else self.left

    @property
    def local_is_faster(self) -> bool:
        """True while the on-chip link succeeds more often than either distant link."""
        return self.local.p_success > max(self.left.p_success, self.right.p_success)


def build_links(config: SimConfig) -> LinkSet:
    protocol = LINK_PROTOCOLS[config.link.protocol](config.link)
    depth = None
    if config.architecture == "routerless" and config.flags.routerless_fabric_depth:
        depth = fabric.routerless_depth(config.fabric.m, config.fabric.k)

    def distant(side: str, ch: fabric.ChannelSpec) -> LinkModel:
        p = config.link.p_distant
        if p is None:
            p = protocol.distant_probability(config.fabric, ch, depth)
        t_distant, _ = fabric.timings(ch)
        return LinkModel(
            name=f"distant.{side}",
            p_success=p,
            attempt_period=t_distant,
            heralded_state_factory=protocol.heralded_state,
            flight_time=2 * ch.one_way_delay,
        )

    local_p = config.link.p_local
    if local_p is None:
        local_p = protocol.local_probability(config.fabric)
    return LinkSet(
        left=distant("left", config.channel_left),
        right=distant("right", config.channel_right),
        local=LinkModel(
            name="local",
            p_success=local_p,
            attempt_period=fabric.timings(config.channel_left)[1],
            heralded_state_factory=protocol.heralded_state,
        ),
    )


@dataclass(frozen=True)
class NoiseModel:
    coherence: dict[str, CoherenceParams]
    attempt: KrausChannel
    gate: KrausChannel
    swap: KrausChannel
    eps_ro: float
    client_latency_decoherence: bool = False
    both_nuclei: bool = True

    @classmethod
    def from_config(cls, config: SimConfig) -> "NoiseModel":
        return cls(
            coherence=config.coherence.by_role(),
            attempt=attempt_noise_channel(config.attempt_noise),
            gate=gate_noise_channel(config.op_noise.p_gate, 2),
            swap=gate_noise_channel(config.op_noise.p_swap, 2),
            eps_ro=config.op_noise.eps_ro,
            client_latency_decoherence=config.flags.client_decoherence_during_correction,
            both_nuclei=config.flags.both_nuclei_attempt_noise,
        )


def _memory_index(stored: StoredEntanglement) -> int:
    for role in ("nuclear", "electron"):
        if role in stored.roles:
            return stored.roles.index(role)
    raise ProtocolError(f"Aucun qubit de mémoire parmi {stored.roles}.")


def apply_attempt_noise(stored: StoredEntanglement, now: int, noise: NoiseModel) -> None:
    stored.advance(now, noise.coherence)
    stored.state = apply_channel(stored.state, [_memory_index(stored)], noise.attempt)
    stored.attempt_noise_applications += 1


def attempt_distant(reg: QubitRegister, link: LinkModel, stream: RandomStream, now: int) -> bool:
    """One distant attempt resolved at ``now``; a success leaves the register ``SWAPPING_TO_NUCLEAR``."""
    reg.count_distant_attempt()
    if not stream.bernoulli(link.p_success):
        return False
    emitted = now - to_ticks(link.flight_time)
    reg.herald(StoredEntanglement(link.heralded_state_factory(), ("client", "electron"), emitted), now)
    return True


def swap_to_nuclear(reg: QubitRegister, now: int, noise: NoiseModel, next_phase: Phase) -> StoredEntanglement:
    if reg.phase is not Phase.SWAPPING_TO_NUCLEAR or reg.broker is None:
        raise ProtocolError(f"{reg.label}: aucun état d'électron à transférer.")
    broker = reg.broker
    broker.advance(now, noise.coherence)
    broker.state = apply_channel(broker.state, [0, 1], noise.swap)
    broker.relabel(1, "nuclear")
    return reg.store(now, next_phase)


def attempt_local(
    pair: tuple[QubitRegister, QubitRegister],
    link: LinkModel,
    stream: RandomStream,
    now: int,
    noise: NoiseModel,
) -> DensityMatrix | None:
    """One local attempt of a paired couple; returns the (electron, electron) state on success."""
    left, right = pair
    if left.paired_time is None or left.paired_time != right.paired_time:
        raise ProtocolError(f"{left.label} et {right.label} ne forment pas une paire.")
    for reg in pair:
        reg.count_stored_attempt()
    for reg in (pair if noise.both_nuclei else (left,)):
        apply_attempt_noise(reg.stored, now, noise)
    if stream.bernoulli(link.p_success):
        return link.heralded_state_factory()
    return None


def attempt_second_side(
    reg: QubitRegister, link: LinkModel, stream: RandomStream, now: int, noise: NoiseModel
) -> StoredEntanglement | None:
    """Routerless second-link attempt; the stored nuclear spin takes one dose of attempt noise."""
    if reg.phase is not Phase.ATTEMPTING_SECOND_SIDE:
        raise ProtocolError(f"{reg.label}: pas de second lien en cours (phase {reg.phase.value}).")
    reg.count_stored_attempt()
    apply_attempt_noise(reg.stored, now, noise)
    if not stream.bernoulli(link.p_success):
        return None
    emitted = now - to_ticks(link.flight_time)
    return StoredEntanglement(link.heralded_state_factory(), ("electron", "client"), emitted)


def noisy_bell_measure(
    rho: DensityMatrix, noise: NoiseModel, bsm_stream: RandomStream, readout_stream: RandomStream
) -> tuple[BellOutcome, DensityMatrix]:
    """Gate noise on qubits (1, 2), Bell measurement, then readout flips on the reported outcome."""
    rho = apply_channel(rho, [1, 2], noise.gate)
    outcome, reduced = bell_measure(rho, (1, 2), bsm_stream)
    return flip_outcome(outcome, noise.eps_ro, readout_stream), reduced


def _receive(delivered: StoredEntanglement, outcome: BellOutcome, receipt: int, noise: NoiseModel) -> float:
    if noise.client_latency_decoherence:
        delivered.advance(receipt, noise.coherence)
    else:
        delivered.last_update = receipt
    delivered.state = pauli_correct(delivered.state, 1, outcome)
    return fidelity(delivered.state, PHI_PLUS)


def _cycles(ticks: int, period: float) -> int:
    return int(round(to_seconds(ticks) / period))


def complete_router_delivery(
    pair: tuple[QubitRegister, QubitRegister],
    local_state: DensityMatrix,
    now: int,
    latency: int,
    noise: NoiseModel,
    streams: dict[str, RandomStream],
    links: LinkSet,
) -> DeliveryRecord:
    """Double teleportation through the paired registers; ``streams`` holds ``bsm``/``readout`` per bank."""
    left, right = pair
    if left.stored is None or right.stored is None:
        raise ProtocolError("Livraison sans états stockés sur les deux registres.")
    for reg in pair:
        reg.stored.advance(now, noise.coherence)
    stored_left, stored_right = left.stored, right.stored
    rho = tensor(stored_left.state, local_state)
    outcome, rho = noisy_bell_measure(rho, noise, streams["bsm.left"], streams["readout.left"])
    rho = pauli_correct(rho, 1, outcome)
    rho = tensor(rho, permute(stored_right.state, [1, 0]))
    outcome, rho = noisy_bell_measure(rho, noise, streams["bsm.right"], streams["readout.right"])
    if rho.n_qubits != 2:
        raise ProtocolError(f"État livré sur {rho.n_qubits} qubits.")

    delivered = StoredEntanglement(rho, ("client", "client"), now)
    left.begin_delivery(delivered, now)
    right.begin_delivery(delivered, now)
    receipt = now + latency
    value = _receive(delivered, outcome, receipt, noise)

    later = left if left.herald_time >= right.herald_time else right
    first_stage = max(left.herald_time, right.herald_time) - min(left.train_start, right.train_start)
    return DeliveryRecord(
        completion_time=to_seconds(receipt),
        fidelity=value,
        idle_cycles_left=_cycles(left.paired_time - left.success_time, links.left.attempt_period),
        idle_cycles_right=_cycles(right.paired_time - right.success_time, links.right.attempt_period),
        stored_attempts=left.attempt_count_while_stored,
        architecture="router",
        attempt_noise_left=stored_left.attempt_noise_applications,
        attempt_noise_right=stored_right.attempt_noise_applications,
        distant_attempts_left=left.distant_attempts,
        distant_attempts_right=right.distant_attempts,
        first_stage_cycles=to_seconds(first_stage) / links.distant(later.bank).attempt_period,
        register_ids=(left.id, right.id),
        success_times=(to_seconds(left.success_time), to_seconds(right.success_time)),
        paired_time=to_seconds(left.paired_time),
    )


def complete_routerless_delivery(
    reg: QubitRegister,
    bob: StoredEntanglement,
    now: int,
    latency: int,
    noise: NoiseModel,
    streams: dict[str, RandomStream],
    links: LinkSet,
) -> DeliveryRecord:
    """Electron-nuclear Bell measurement teleporting (Alice, nuclear) onto Bob's qubit."""
    if reg.phase is not Phase.ATTEMPTING_SECOND_SIDE or reg.stored is None:
        raise ProtocolError(f"{reg.label}: aucune intrication stockée à téléporter.")
    stored = reg.stored
    stored.advance(now, noise.coherence)
    bob.advance(now, noise.coherence)
    rho = tensor(stored.state, bob.state)
    outcome, rho = noisy_bell_measure(rho, noise, streams["bsm"], streams["readout"])
    if rho.n_qubits != 2:
        raise ProtocolError(f"État livré sur {rho.n_qubits} qubits.")

    delivered = StoredEntanglement(rho, ("client", "client"), now)
    attempts = reg.attempt_count_while_stored
    reg.begin_delivery(delivered, now)
    receipt = now + latency
    value = _receive(delivered, outcome, receipt, noise)
    return DeliveryRecord(
        completion_time=to_seconds(receipt),
        fidelity=value,
        idle_cycles_left=attempts,
        idle_cycles_right=0,
        stored_attempts=attempts,
        architecture="routerless",
        attempt_noise_left=stored.attempt_noise_applications,
        distant_attempts_left=reg.distant_attempts,
        distant_attempts_right=attempts,
        first_stage_cycles=to_seconds(reg.herald_time - reg.train_start) / links.left.attempt_period,
        register_ids=(reg.id,),
        success_times=(to_seconds(reg.success_time),),
    )


@dataclass(frozen=True)
class RunResult:
    records: list[DeliveryRecord]
    elapsed: float
    audit: dict[str, int]
    trace_digest: str = ""

    @property
    def rate(self) -> float:
        return len(self.records) / self.elapsed if self.elapsed > 0 else 0.0


class ArchitectureRun:
    """Shared machinery of one simulation run: registers, distant trains and delivery bookkeeping."""

    architecture = ""
    after_swap = Phase.AWAITING_PAIR

    def __init__(self, config: SimConfig, *, master_seed: int | None = None, record_trace: bool = False):
        if config.architecture != self.architecture:
            raise ProtocolError(f"Configuration '{config.architecture}' passée à l'orchestrateur {self.architecture}.")
        self.config = config
        self.sim = Simulator(config.master_seed if master_seed is None else master_seed, record_trace=record_trace)
        self.links = build_links(config)
        self.noise = NoiseModel.from_config(config)
        self.latency = to_ticks(fabric.correction_latency(*config.channels))
        self.swap_ticks = to_ticks(config.swap_time)
        self.periods = {
            link.name: to_ticks(link.attempt_period)
            for link in (self.links.left, self.links.right, self.links.local)
        }
        self.registers = self.build_registers()
        self.records: list[DeliveryRecord] = []
        self._pending: dict[int, tuple[DeliveryRecord, tuple[QubitRegister, ...]]] = {}
        self._delivery_keys = 0
        self._checks = bool(getattr(settings, "REPEATER_STATE_CHECKS", True))
        self.sim.on("distant_attempt", self._on_distant_attempt)
        self.sim.on("swap_done", self._on_swap_done)
        self.sim.on("delivery_received", self._on_delivery_received)

    def build_registers(self) -> list[QubitRegister]:
        return [QubitRegister(id=index) for index in range(self.config.m)]

    def after_store(self, reg: QubitRegister) -> None:
        raise NotImplementedError

    def period(self, link: LinkModel) -> int:
        return self.periods[link.name]

    def aligned(self, now: int, period: int) -> int:
        if not self.config.flags.cycle_synchronized:
            return now
        return -(-now // period) * period

    def stream(self, kind: str, reg: QubitRegister) -> RandomStream:
        return self.sim.stream(f"{kind}.{reg.label}")

    def _check(self, *registers: QubitRegister) -> None:
        if self._checks:
            for reg in registers:
                reg.check()

    def _register(self, event: Event) -> QubitRegister:
        return self.registers[event.payload.get("reg")]

    def start_distant(self, reg: QubitRegister, now: int) -> None:
        link = self.links.distant(reg.bank)
        period = self.period(link)
        start = self.aligned(now, period)
        reg.start_train(start)
        self.sim.call_at(start + period, "distant_attempt", reg.label, reg=reg.id)

    def _on_distant_attempt(self, event: Event) -> None:
        reg = self._register(event)
        link = self.links.distant(reg.bank)
        side = "right" if reg.bank is Bank.RIGHT else "left"
        if attempt_distant(reg, link, self.sim.stream(f"link.{side}.{reg.label}"), self.sim.now):
            self.sim.call_in(self.swap_ticks, "swap_done", reg.label, reg=reg.id)
        else:
            self.sim.call_in(self.period(link), "distant_attempt", reg.label, reg=reg.id)
        self._check(reg)

    def _on_swap_done(self, event: Event) -> None:
        reg = self._register(event)
        swap_to_nuclear(reg, self.sim.now, self.noise, self.after_swap)
        self._check(reg)
        self.after_store(reg)

    def schedule_delivery(self, record: DeliveryRecord, registers: tuple[QubitRegister, ...]) -> None:
        key = self._delivery_keys
        self._delivery_keys += 1
        self._pending[key] = (record, registers)
        self.sim.call_in(self.latency, "delivery_received", registers[0].label, key=key)

    def _on_delivery_received(self, event: Event) -> None:
        record, registers = self._pending.pop(event.payload.get("key"))
        self.records.append(record)
        logger.debug(
            "Paire %d livrée (%s) à t=%.6f s, F=%.6f.",
            len(self.records), self.architecture, record.completion_time, record.fidelity,
        )
        for reg in registers:
            reg.reset(self.sim.now)
            self._check(reg)
            self.start_distant(reg, self.sim.now)
        if self.config.n_pairs and len(self.records) >= self.config.n_pairs:
            self.sim.stop()

    def run(self) -> RunResult:
        for reg in self.registers:
            self.start_distant(reg, 0)
        horizon = to_ticks(self.config.t_max) if self.config.t_max > 0 else MAX_HORIZON_TICKS
        self.sim.run_until(horizon)
        return RunResult(
            records=list(self.records),
            elapsed=self.sim.now_seconds,
            audit=self.sim.audit(),
            trace_digest=self.sim.trace_digest() if self.sim.record_trace else "",
        )


class RouterRun(ArchitectureRun):
    """Two banks, FIFO pairing, and local entanglement on the shared on-chip BSM station."""

    architecture = "router"
    after_swap = Phase.AWAITING_PAIR

    def __init__(self, config: SimConfig, **kwargs):
        super().__init__(config, **kwargs)
        self.queue = PairingQueue()
        self._rotation: deque[tuple[QubitRegister, QubitRegister]] = deque()
        self._slot_scheduled = False
        self.sim.on("local_slot", self._on_local_slot)
        self.sim.on("local_attempt", self._on_local_attempt)

    def build_registers(self) -> list[QubitRegister]:
        left = self.config.bank_size("left")
        return [
            QubitRegister(id=index, bank=Bank.LEFT if index < left else Bank.RIGHT)
            for index in range(self.config.m)
        ]

    def after_store(self, reg: QubitRegister) -> None:
        self.queue.push(reg)
        for pair in self.queue.pair_fifo(self.sim.now):
            self._check(*pair)
            self._add_pair(pair)

    def _add_pair(self, pair: tuple[QubitRegister, QubitRegister]) -> None:
        t_local = self.period(self.links.local)
        if not self.config.flags.serialize_local:
            self.sim.call_in(t_local, "local_attempt", pair[0].label, left=pair[0].id, right=pair[1].id)
            return
        self._rotation.append(pair)
        if not self._slot_scheduled:
            self._slot_scheduled = True
            self.sim.call_in(t_local, "local_slot", "station")

    def _attempt(self, pair: tuple[QubitRegister, QubitRegister]) -> bool:
        state = attempt_local(pair, self.links.local, self.stream("local", pair[0]), self.sim.now, self.noise)
        if state is None:
            return False
        streams = {
            "bsm.left": self.stream("bsm", pair[0]),
            "readout.left": self.stream("readout", pair[0]),
            "bsm.right": self.stream("bsm", pair[1]),
            "readout.right": self.stream("readout", pair[1]),
        }
        record = complete_router_delivery(pair, state, self.sim.now, self.latency, self.noise, streams, self.links)
        self._check(*pair)
        self.schedule_delivery(record, pair)
        return True

    def _on_local_slot(self, event: Event) -> None:
        pair = self._rotation.popleft()
        if not self._attempt(pair):
            self._rotation.append(pair)
        if self._rotation:
            self.sim.call_in(self.period(self.links.local), "local_slot", "station")
        else:
            self._slot_scheduled = False

    def _on_local_attempt(self, event: Event) -> None:
        pair = (self.registers[event.payload.get("left")], self.registers[event.payload.get("right")])
        if not self._attempt(pair):
            self.sim.call_in(self.period(self.links.local), "local_attempt", pair[0].label,
                             left=pair[0].id, right=pair[1].id)


class RouterlessRun(ArchitectureRun):
    """Each register serves Alice then Bob on its own; registers never interact."""

    architecture = "routerless"
    after_swap = Phase.ATTEMPTING_SECOND_SIDE

    def __init__(self, config: SimConfig, **kwargs):
        super().__init__(config, **kwargs)
        self.sim.on("second_side_attempt", self._on_second_side_attempt)

    def after_store(self, reg: QubitRegister) -> None:
        period = self.period(self.links.right)
        start = self.aligned(self.sim.now, period)
        self.sim.call_at(start + period, "second_side_attempt", reg.label, reg=reg.id)

    def _on_second_side_attempt(self, event: Event) -> None:
        reg = self._register(event)
        now = self.sim.now
        bob = attempt_second_side(reg, self.links.right, self.sim.stream(f"link.right.{reg.label}"), now, self.noise)
        if bob is None:
            self.sim.call_in(self.period(self.links.right), "second_side_attempt", reg.label, reg=reg.id)
            return
        streams = {"bsm": self.stream("bsm", reg), "readout": self.stream("readout", reg)}
        record = complete_routerless_delivery(reg, bob, now, self.latency, self.noise, streams, self.links)
        self._check(reg)
        self.schedule_delivery(record, (reg,))


ORCHESTRATORS = {"router": RouterRun, "routerless": RouterlessRun}


def simulate(config: SimConfig, *, master_seed: int | None = None, record_trace: bool = False) -> RunResult:
    orchestrator = ORCHESTRATORS[config.architecture](config, master_seed=master_seed, record_trace=record_trace)
    try:
        return orchestrator.run()
    except RepeaterError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        logger.exception("Échec numérique de la simulation %s.", config.architecture)
        raise SimulationError(str(exc)) from exc


def run_architecture(config: SimConfig) -> list[DeliveryRecord]:
    return simulate(config).records
