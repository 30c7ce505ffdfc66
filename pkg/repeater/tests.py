import math
import tempfile
from io import StringIO
from pathlib import Path
from unittest.mock import MagicMock, patch

import numpy as np
from django.apps import apps
from django.core.management import call_command
from django.core.management.base import CommandError
from django.db import connections
from django.test import SimpleTestCase, override_settings
from scipy import stats

from . import fabric
from .config import (
    CoherenceSet,
    SimConfig,
    config_to_text,
    parse_config,
    with_m,
)
from .engine import RandomStream, Simulator, derive_seed, to_ticks, uniform
from .exceptions import (
    CausalityError,
    ConfigError,
    FabricError,
    OracleError,
    PlotError,
    ProtocolError,
    QuantumStateError,
    SimulationError,
    SweepAborted,
)
from .noise import (
    AttemptNoiseParams,
    CoherenceParams,
    OpNoiseParams,
    apply_flips,
    attempt_noise_channel,
    attempt_noise_weights,
    decoherence_channel,
    flip_outcome,
    gate_noise_channel,
)
from .oracles import (
    OracleReport,
    bell_weight_recursion,
    expected_abs_difference,
    expected_max_geometric,
    geometric_dephasing,
    oracle_check,
    readout_mixture_fidelity,
)
from .plots import emit_plot
from .protocol import (
    NoiseModel,
    RouterRun,
    SingleClick,
    attempt_distant,
    attempt_local,
    build_links,
    complete_router_delivery,
    simulate,
    swap_to_nuclear,
)
from .qstate import (
    BELL_ORDER,
    PHI_PLUS,
    BellOutcome,
    DensityMatrix,
    KrausChannel,
    apply_channel,
    bell_measure,
    bell_probabilities,
    bell_state,
    fidelity,
    identity_channel,
    partial_trace,
    pauli_correct,
    permute,
    project_bell,
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
from .sweep import (
    CSV_HEADER,
    PARTIAL_MARKER,
    SummaryRow,
    SweepGrid,
    infidelity_breakdown,
    isolate_source,
    linear_fit,
    parse_csv,
    point_configs,
    run_point,
    slow_local_points,
    sweep,
    write_csv,
)
from .tasks import simulate_point

PERFECT = CoherenceParams.perfect()


def _document(**values) -> str:
    """Simulation document from keyword arguments; ``__`` stands for a dot in the key."""
    return "".join(f"{key.replace('__', '.')} = {value}\n" for key, value in values.items())


def _quiet(config: SimConfig) -> SimConfig:
    return config.replace(
        coherence=CoherenceSet(electron=PERFECT, nuclear=PERFECT, client=PERFECT),
        attempt_noise=AttemptNoiseParams(a=0.0, b=0.0),
        op_noise=OpNoiseParams(p_gate=0.0, eps_ro=0.0, p_swap=0.0),
    )


def _noise(attempt: AttemptNoiseParams | None = None, p_swap: float = 0.0) -> NoiseModel:
    return NoiseModel(
        coherence={"electron": PERFECT, "nuclear": PERFECT, "client": PERFECT},
        attempt=attempt_noise_channel(attempt or AttemptNoiseParams(a=0.0, b=0.0)),
        gate=identity_channel(2),
        swap=gate_noise_channel(p_swap, 2),
        eps_ro=0.0,
    )


def _stored_register(reg_id: int, bank: Bank, success: int, noise: NoiseModel) -> QubitRegister:
    reg = QubitRegister(id=reg_id, bank=bank)
    reg.start_train(0)
    reg.count_distant_attempt()
    reg.herald(StoredEntanglement(PHI_PLUS, ("client", "electron"), success), success)
    swap_to_nuclear(reg, success, noise, Phase.AWAITING_PAIR)
    return reg


def _random_qubit(rng: np.random.Generator) -> DensityMatrix:
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = a @ a.conj().T
    return DensityMatrix(rho / np.trace(rho).real)


def _row(architecture="router", m=2, length=10.0, infidelity=0.1, rate=100.0) -> SummaryRow:
    return SummaryRow(
        architecture=architecture,
        m=m,
        L_km=length,
        runs=3,
        rate_hz_mean=rate,
        rate_hz_sem=rate / 20,
        fidelity_mean=1 - infidelity,
        fidelity_sem=0.01,
        infidelity_mean=infidelity,
        mean_idle_cycles=1.5,
        mean_stored_attempts=2.0,
        master_seed=1,
    )


class SimulatorTests(SimpleTestCase):
    def test_to_ticks_rejects_negative_and_infinite_durations(self):
        self.assertEqual(to_ticks(1e-6), 1000)
        with self.assertRaises(CausalityError):
            to_ticks(-1e-9)
        with self.assertRaises(CausalityError):
            to_ticks(math.inf)

    def test_same_fire_time_runs_in_insertion_order(self):
        sim = Simulator(1, record_trace=True)
        seen = []
        sim.on("tick", lambda event: seen.append(event.payload.target))
        for name in ("a", "b", "c"):
            sim.call_at(500, "tick", name)
        sim.call_at(100, "tick", "first")

        sim.run_until(1000)

        self.assertEqual(seen, ["first", "a", "b", "c"])
        self.assertEqual([entry[2] for entry in sim.trace], seen)

    def test_scheduling_in_the_past_is_a_causality_error(self):
        sim = Simulator()
        sim.run_until(10)
        with self.assertRaises(CausalityError):
            sim.call_at(9, "tick")

    def test_run_until_counts_only_events_up_to_horizon(self):
        sim = Simulator()
        sim.on("tick", lambda event: None)
        for micro in (1, 2, 3):
            sim.call_at(micro * 1000, "tick")

        self.assertEqual(sim.run_until(2000), 2)
        self.assertEqual(sim.pending, 1)

    def test_empty_queue_advances_clock_to_horizon(self):
        sim = Simulator()
        self.assertEqual(sim.run_until(to_ticks(1.0)), 0)
        self.assertEqual(sim.now_seconds, 1.0)

    def test_self_rescheduling_event_count(self):
        sim = Simulator()
        period = 106_000
        sim.on("attempt", lambda event: sim.call_in(period, "attempt"))
        sim.call_at(0, "attempt")

        processed = sim.run_until(1_000_000)

        self.assertEqual(processed, 1_000_000 // period + 1)

    def test_cancelled_event_never_runs_and_audit_balances(self):
        sim = Simulator()
        handler = MagicMock()
        sim.on("tick", handler)
        handle = sim.call_at(5, "tick")

        self.assertTrue(handle.cancel())
        self.assertFalse(handle.cancel())
        sim.run_until(10)

        handler.assert_not_called()
        self.assertEqual(sim.audit()["balanced"], 1)

    def test_stop_leaves_clock_at_stopping_event(self):
        sim = Simulator()
        sim.on("tick", lambda event: sim.stop())
        sim.call_at(7, "tick")
        sim.call_at(9, "tick")

        self.assertEqual(sim.run_until(100), 1)
        self.assertEqual(sim.now, 7)

    def test_streams_are_reproducible_and_label_dependent(self):
        first = RandomStream(42, "link.left.reg0")
        again = RandomStream(42, "link.left.reg0")
        other = RandomStream(42, "link.left.reg1")

        self.assertEqual([first.uniform() for _ in range(1000)], [again.uniform() for _ in range(1000)])
        self.assertNotEqual(derive_seed(42, "link.left.reg0"), derive_seed(42, "link.left.reg1"))
        self.assertNotEqual(RandomStream(42, "link.left.reg0").uniform(), other.uniform())

    def test_uniform_draws_average_one_half(self):
        stream = RandomStream(7, "link.left.reg0")
        draws = np.array([uniform(stream) for _ in range(1_000_000)])

        self.assertTrue(((draws >= 0) & (draws < 1)).all())
        self.assertLess(abs(draws.mean() - 0.5), 0.002)


class QuantumStateTests(SimpleTestCase):
    def test_phi_plus_has_four_corner_entries(self):
        expected = np.zeros((4, 4))
        for row in (0, 3):
            for col in (0, 3):
                expected[row, col] = 0.5
        self.assertTrue(np.allclose(bell_state(BellOutcome.PHI_PLUS).data, expected))

    def test_invalid_matrices_are_rejected(self):
        with self.assertRaises(QuantumStateError):
            DensityMatrix(np.eye(2), validate=True)
        with self.assertRaises(QuantumStateError):
            tensor(tensor(PHI_PLUS, PHI_PLUS), DensityMatrix.maximally_mixed(1))
        with self.assertRaises(QuantumStateError):
            KrausChannel((0.5 * np.eye(2, dtype=complex),))

    def test_partial_trace_of_bell_pair_is_maximally_mixed(self):
        reduced = partial_trace(PHI_PLUS, [0])
        self.assertTrue(reduced.allclose(DensityMatrix.maximally_mixed(1)))

    def test_permute_swaps_qubits(self):
        zero = DensityMatrix.from_ket([1, 0])
        one = DensityMatrix.from_ket([0, 1])
        self.assertTrue(permute(tensor(zero, one), [1, 0]).allclose(tensor(one, zero)))

    def test_identity_channel_leaves_state_unchanged(self):
        rho = apply_channel(PHI_PLUS, [1], identity_channel(1))
        self.assertLess(np.max(np.abs(rho.data - PHI_PLUS.data)), 1e-14)

    def test_entanglement_swap_every_outcome_restored_by_correction(self):
        joint = tensor(PHI_PLUS, PHI_PLUS)
        for outcome in BELL_ORDER:
            probability, reduced = project_bell(joint, (1, 2), outcome)
            self.assertAlmostEqual(probability, 0.25, places=12)
            self.assertAlmostEqual(fidelity(pauli_correct(reduced, 1, outcome), PHI_PLUS), 1.0, places=10)

    def test_missing_correction_after_phi_minus_is_orthogonal(self):
        _, reduced = project_bell(tensor(PHI_PLUS, PHI_PLUS), (1, 2), BellOutcome.PHI_MINUS)
        self.assertAlmostEqual(fidelity(reduced, PHI_PLUS), 0.0, places=12)

    def test_sampled_bell_measurement_teleports(self):
        stream = RandomStream(3, "bsm.reg0")
        for _ in range(8):
            outcome, reduced = bell_measure(tensor(PHI_PLUS, PHI_PLUS), (1, 2), stream)
            self.assertAlmostEqual(fidelity(pauli_correct(reduced, 1, outcome), PHI_PLUS), 1.0, places=10)

    @override_settings(REPEATER_STATE_CHECKS=False)
    def test_bell_measurement_frequencies_follow_born_rule(self):
        stream = RandomStream(4, "bsm.reg0")
        joint = tensor(PHI_PLUS, PHI_PLUS)
        trials = 20_000
        counts = {outcome: 0 for outcome in BELL_ORDER}
        for _ in range(trials):
            outcome, _ = bell_measure(joint, (1, 2), stream)
            counts[outcome] += 1

        sigma = math.sqrt(0.25 * 0.75 / trials)
        for outcome, count in counts.items():
            with self.subTest(outcome=outcome.label):
                self.assertLess(abs(count / trials - 0.25), 4 * sigma)

    @override_settings(REPEATER_STATE_CHECKS=False)
    def test_wrong_correction_rate_sets_mean_fidelity(self):
        bsm = RandomStream(6, "bsm.reg0")
        readout = RandomStream(6, "readout.reg0")
        joint = tensor(PHI_PLUS, PHI_PLUS)
        trials = 4000
        values = []
        for _ in range(trials):
            outcome, reduced = bell_measure(joint, (1, 2), bsm)
            reported = apply_flips(outcome, readout.bernoulli(0.1), False)
            values.append(fidelity(pauli_correct(reduced, 1, reported), PHI_PLUS))

        self.assertTrue(all(value < 1e-10 or value > 1 - 1e-10 for value in values))
        self.assertLess(abs(np.mean(values) - 0.9), 4 * math.sqrt(0.09 / trials))

    def test_bell_measurement_needs_a_spectator(self):
        with self.assertRaises(QuantumStateError):
            bell_measure(PHI_PLUS, (0, 1), RandomStream(1, "bsm"))

    def test_fidelity_examples(self):
        self.assertAlmostEqual(fidelity(DensityMatrix.maximally_mixed(2), PHI_PLUS), 0.25)
        mixture = 0.9 * PHI_PLUS.data + 0.1 * bell_state(BellOutcome.PHI_MINUS).data
        self.assertAlmostEqual(fidelity(DensityMatrix(mixture), PHI_PLUS), 0.9)
        self.assertEqual(tensor(DensityMatrix.maximally_mixed(1), DensityMatrix.maximally_mixed(1)).dim, 4)


class NoiseTests(SimpleTestCase):
    def test_zero_time_is_identity(self):
        channel = decoherence_channel(0.0, CoherenceParams(T1=1.0, T2=1.0))
        self.assertEqual(channel.name, "identity")

    def test_amplitude_damping_half_life(self):
        excited = DensityMatrix.from_ket([0, 1])
        params = CoherenceParams(T1=2.0, T2=1.0)
        rho = apply_channel(excited, [0], decoherence_channel(2.0 * math.log(2), params))
        self.assertAlmostEqual(float(np.real(rho.data[1, 1])), 0.5, places=12)

    def test_coherence_decays_with_T2(self):
        plus = DensityMatrix.from_ket(np.array([1, 1]) / math.sqrt(2))
        pure_dephasing = apply_channel(plus, [0], decoherence_channel(1.0, CoherenceParams(T1=math.inf, T2=1.0)))
        self.assertAlmostEqual(abs(pure_dephasing.data[0, 1]), 0.5 * math.exp(-1), places=12)

        with_damping = apply_channel(plus, [0], decoherence_channel(1.0, CoherenceParams(T1=2.0, T2=1.0)))
        self.assertAlmostEqual(abs(with_damping.data[0, 1]), 0.5 * math.exp(-1), places=12)
        self.assertAlmostEqual(float(np.real(with_damping.data[1, 1])), 0.5 * math.exp(-0.5), places=12)

    def test_decoherence_matches_matrix_map_on_random_states(self):
        t, T1, T2 = 0.7, 2.0, 1.5
        channel = decoherence_channel(t, CoherenceParams(T1=T1, T2=T2))
        rng = np.random.default_rng(2024)
        for _ in range(100):
            rho = _random_qubit(rng)
            d = rho.data
            expected = np.array([
                [1 - d[1, 1] * math.exp(-t / T1), d[0, 1] * math.exp(-t / T2)],
                [d[1, 0] * math.exp(-t / T2), d[1, 1] * math.exp(-t / T1)],
            ])
            self.assertLess(np.max(np.abs(apply_channel(rho, [0], channel).data - expected)), 1e-12)

    def test_decoherence_composes_over_time(self):
        params = CoherenceParams(T1=3.0, T2=0.8)
        rng = np.random.default_rng(7)
        for _ in range(20):
            rho = _random_qubit(rng)
            stepped = apply_channel(apply_channel(rho, [0], decoherence_channel(0.2, params)),
                                    [0], decoherence_channel(0.5, params))
            direct = apply_channel(rho, [0], decoherence_channel(0.7, params))
            self.assertTrue(stepped.allclose(direct))

    def test_complete_positivity_condition(self):
        with self.assertRaises(ConfigError):
            CoherenceParams(T1=1.0, T2=3.0)

    def test_attempt_noise_single_application(self):
        params = AttemptNoiseParams()
        rho = apply_channel(PHI_PLUS, [1], attempt_noise_channel(params))
        self.assertAlmostEqual(sum(attempt_noise_weights(params).values()), 1.0, places=15)
        self.assertAlmostEqual(fidelity(rho, PHI_PLUS), 0.9996, places=12)

    def test_silent_attempt_noise_is_identity(self):
        rho = apply_channel(PHI_PLUS, [1], attempt_noise_channel(AttemptNoiseParams(a=0.0, b=0.0)))
        self.assertTrue(rho.allclose(PHI_PLUS))

    def test_depolarizing_gate_noise(self):
        full = apply_channel(PHI_PLUS, [0, 1], gate_noise_channel(1.0, 2))
        self.assertTrue(full.allclose(DensityMatrix.maximally_mixed(2)))

        partial = apply_channel(PHI_PLUS, [0, 1], gate_noise_channel(0.02, 2))
        self.assertAlmostEqual(fidelity(partial, PHI_PLUS), 0.985, places=12)

        one_qubit = apply_channel(PHI_PLUS, [1], gate_noise_channel(1.0, 1))
        self.assertAlmostEqual(fidelity(one_qubit, PHI_PLUS), 0.25, places=12)

    def test_flip_outcome_extremes(self):
        stream = RandomStream(5, "readout.reg0")
        self.assertIs(flip_outcome(BellOutcome.PHI_PLUS, 0.0, stream), BellOutcome.PHI_PLUS)
        self.assertIs(flip_outcome(BellOutcome.PHI_PLUS, 1.0, stream), BellOutcome.PSI_MINUS)
        self.assertIs(flip_outcome(BellOutcome.PSI_MINUS, 1.0, stream), BellOutcome.PHI_PLUS)

    def test_flip_outcome_consumes_two_draws(self):
        used = RandomStream(5, "readout.reg0")
        flip_outcome(BellOutcome.PHI_PLUS, 0.0, used)
        reference = RandomStream(5, "readout.reg0")
        reference.uniform()
        reference.uniform()
        self.assertEqual(used.uniform(), reference.uniform())

    def test_flip_rate_per_bit(self):
        stream = RandomStream(11, "readout.reg0")
        trials = 20_000
        x_flips = sum(flip_outcome(BellOutcome.PHI_PLUS, 0.05, stream).x_bit for _ in range(trials))
        sigma = math.sqrt(0.05 * 0.95 / trials)
        self.assertLess(abs(x_flips / trials - 0.05), 5 * sigma)


class FabricTests(SimpleTestCase):
    def test_switch_depths(self):
        self.assertEqual(fabric.network_path_depth(8, 4), 7)
        self.assertEqual(fabric.network_path_depth(2, 1), 1)
        self.assertEqual(fabric.local_path_depth(8), 6)
        self.assertEqual(fabric.local_path_depth(2), 2)
        self.assertEqual(fabric.local_path_depth(16), 8)
        self.assertEqual(fabric.routerless_depth(8, 4), 5)
        self.assertEqual(fabric.routerless_depth(2, 1), 1)
        self.assertEqual(fabric.routerless_depth(16, 2), 5)

    def test_switch_layers_report(self):
        self.assertEqual(
            fabric.switch_layers(8, 2),
            {"register_routing": 4, "interposer": 1, "network_routing": 1, "local_bsm": 1},
        )

    def test_non_power_of_two_is_rejected(self):
        with self.assertRaises(FabricError):
            fabric.network_path_depth(6, 2)
        with self.assertRaises(ConfigError):
            fabric.FabricSpec(m=6)

    def test_path_transmission(self):
        spec = fabric.FabricSpec(loss_per_mzi_db=0.3)
        self.assertEqual(fabric.path_transmission(5, fabric.FabricSpec(loss_per_mzi_db=0.0)), 1.0)
        self.assertAlmostEqual(fabric.path_transmission(7, spec), 0.6166, places=4)
        self.assertAlmostEqual(fabric.path_transmission(6, spec, 1.0), 0.5248, places=4)

    def test_p_distant(self):
        lossless = fabric.FabricSpec(
            loss_per_mzi_db=0.0, coupling_loss_db=0.0, conversion_loss_db=0.0, detector_efficiency=1.0
        )
        self.assertAlmostEqual(fabric.p_distant(lossless, fabric.ChannelSpec(length_km=0.0)), 0.5)
        self.assertAlmostEqual(fabric.p_distant(lossless, fabric.ChannelSpec(length_km=10.0)), 0.1991, places=4)
        self.assertAlmostEqual(fabric.p_distant(lossless, fabric.ChannelSpec(length_km=30.0)), 0.03155, places=4)

    def test_p_distant_falls_with_chip_size(self):
        channel = fabric.ChannelSpec()
        small = fabric.p_distant(fabric.FabricSpec(m=4), channel)
        large = fabric.p_distant(fabric.FabricSpec(m=16), channel)
        self.assertLess(large, small)

    def test_p_local(self):
        lossless = fabric.FabricSpec(loss_per_mzi_db=0.0, coupling_loss_db=0.0, detector_efficiency=1.0)
        self.assertAlmostEqual(fabric.p_local(lossless), 0.5)
        lossy = fabric.FabricSpec(m=8, loss_per_mzi_db=0.3, coupling_loss_db=0.5, detector_efficiency=0.9)
        self.assertAlmostEqual(fabric.p_local(lossy), 0.5 * (10 ** (-2.3 / 10) * 0.9) ** 2, places=12)

    def test_timings(self):
        t_distant, t_local = fabric.timings(fabric.ChannelSpec(length_km=10.0))
        self.assertAlmostEqual(t_distant, 106e-6, places=12)
        self.assertAlmostEqual(t_local, 6e-6, places=12)
        self.assertAlmostEqual(fabric.timings(fabric.ChannelSpec(length_km=0.0))[0], 6e-6, places=12)

    def test_correction_latency_uses_longer_side(self):
        latency = fabric.correction_latency(fabric.ChannelSpec(length_km=10.0), fabric.ChannelSpec(length_km=30.0))
        self.assertAlmostEqual(latency, 1.5e-4, places=12)

    def test_mismatch_scale_grows_as_square_root_of_m(self):
        self.assertAlmostEqual(fabric.mismatch_scale(8, 0.2), math.sqrt(1.28), places=12)
        self.assertAlmostEqual(fabric.mismatch_scale(32, 0.2) / fabric.mismatch_scale(2, 0.2), 4.0, places=12)
        self.assertEqual(fabric.mismatch_scale(4, 1.0), 0.0)

    def test_local_link_against_distant_link_on_shared_chips(self):
        base = parse_config(_document(architecture="router", m=2))
        small_chips = SweepGrid(m_values=(2, 4, 8), lengths_km=(1.0, 10.0, 20.0, 30.0), architectures=("router",))
        full_grid = SweepGrid(m_values=(2, 4, 8, 16, 32), lengths_km=(10.0, 20.0, 30.0), architectures=("router",))
        for config in point_configs(small_chips, base) + point_configs(full_grid, base):
            with self.subTest(chip=config.fabric.m, m=config.m, length=config.channel_left.length_km):
                self.assertTrue(build_links(config).local_is_faster)

        # At 1 km the local path equals the distant budget on a 16-port chip and loses on 32 ports.
        links_16 = build_links(point_configs(
            SweepGrid(m_values=(2, 16), lengths_km=(1.0,), architectures=("router",)), base)[0])
        self.assertAlmostEqual(links_16.local.p_success, links_16.left.p_success, places=12)

        large = point_configs(SweepGrid(m_values=(2, 32), lengths_km=(1.0,), architectures=("router",)), base)
        links_32 = build_links(large[0])
        self.assertAlmostEqual(links_32.local.p_success, 0.405 * 10 ** -0.8, places=12)
        self.assertAlmostEqual(links_32.left.p_success, 0.405 * 10 ** -0.74, places=12)
        self.assertEqual(slow_local_points(large), large)


class RegisterTests(SimpleTestCase):
    def setUp(self):
        self.noise = _noise()

    def test_state_machine_guards(self):
        reg = QubitRegister(id=0, bank=Bank.LEFT)
        with self.assertRaises(ProtocolError):
            reg.store(0, Phase.AWAITING_PAIR)
        stored = _stored_register(1, Bank.LEFT, 100, self.noise)
        with self.assertRaises(ProtocolError):
            stored.count_distant_attempt()
        stored.check()

    def test_delivered_register_restarts_like_a_fresh_one(self):
        reg = _stored_register(0, Bank.LEFT, 100, self.noise)
        reg.begin_local(100)
        reg.count_stored_attempt()
        reg.begin_delivery(StoredEntanglement(PHI_PLUS, ("client", "client"), 200), 200)
        reg.reset(250)
        reg.start_train(300)

        fresh = QubitRegister(id=0, bank=Bank.LEFT)
        fresh.start_train(300)
        self.assertEqual(vars(reg), vars(fresh))

    def test_advance_only_moves_state_and_clock(self):
        coherence = {"client": PERFECT, "nuclear": CoherenceParams(T1=math.inf, T2=1.0)}
        stored = StoredEntanglement(PHI_PLUS, ("client", "nuclear"), 0)
        before = dict(vars(stored))
        stored.advance(to_ticks(0.5), coherence)

        self.assertEqual(set(vars(stored)), set(before))
        self.assertEqual(stored.last_update, to_ticks(0.5))
        self.assertAlmostEqual(fidelity(stored.state, PHI_PLUS), (1 + math.exp(-0.5)) / 2, places=12)

    def test_unassigned_register_cannot_wait_for_pairing(self):
        reg = QubitRegister(id=0)
        reg.herald(StoredEntanglement(PHI_PLUS, ("client", "electron"), 0), 0)
        with self.assertRaises(ProtocolError):
            reg.store(0, Phase.AWAITING_PAIR)

    def test_pairing_follows_success_time(self):
        queue = PairingQueue()
        late = _stored_register(0, Bank.LEFT, 3, self.noise)
        early = _stored_register(1, Bank.LEFT, 1, self.noise)
        right = _stored_register(2, Bank.RIGHT, 2, self.noise)
        for reg in (late, early, right):
            queue.push(reg)

        pairs = queue.pair_fifo(10)

        self.assertEqual(pairs, [(early, right)])
        self.assertEqual(queue.waiting(Bank.LEFT), [late])
        self.assertIs(early.phase, Phase.ATTEMPTING_LOCAL)
        self.assertIs(late.phase, Phase.AWAITING_PAIR)

    def test_single_side_queue_forms_no_pair(self):
        queue = PairingQueue()
        queue.push(_stored_register(0, Bank.LEFT, 1, self.noise))
        self.assertEqual(queue.pair_fifo(), [])
        self.assertEqual(len(queue), 1)

    def test_duplicate_push_is_rejected(self):
        queue = PairingQueue()
        reg = _stored_register(0, Bank.LEFT, 1, self.noise)
        queue.push(reg)
        with self.assertRaises(ProtocolError):
            queue.push(reg)

    def test_stored_state_cannot_move_back_in_time(self):
        stored = StoredEntanglement(PHI_PLUS, ("client", "nuclear"), 100)
        with self.assertRaises(ProtocolError):
            stored.advance(50, {"client": PERFECT, "nuclear": PERFECT})

    def test_link_and_record_validation(self):
        with self.assertRaises(ProtocolError):
            LinkModel("distant.left", 0.0, 1e-4, lambda: PHI_PLUS)
        with self.assertRaises(ProtocolError):
            DeliveryRecord(0.0, 1.5, 0, 0, 0, "router")


class ProtocolTests(SimpleTestCase):
    def test_certain_link_succeeds_on_first_attempt(self):
        reg = QubitRegister(id=0)
        reg.start_train(0)
        link = LinkModel("distant.left", 1.0, 1e-4, lambda: PHI_PLUS, flight_time=5e-5)

        self.assertTrue(attempt_distant(reg, link, RandomStream(1, "link.left.reg0"), 100_000))
        self.assertIs(reg.phase, Phase.SWAPPING_TO_NUCLEAR)
        self.assertEqual(reg.broker.last_update, 50_000)

    def test_mean_attempts_is_geometric(self):
        link = LinkModel("distant.left", 0.2, 1e-4, lambda: PHI_PLUS)
        stream = RandomStream(9, "link.left.reg0")
        counts = []
        for _ in range(4000):
            reg = QubitRegister(id=0)
            reg.start_train(0)
            while not attempt_distant(reg, link, stream, 0):
                pass
            counts.append(reg.distant_attempts)
        sigma = math.sqrt((1 - 0.2) / 0.2 ** 2 / len(counts))
        self.assertLess(abs(np.mean(counts) - 5.0), 5 * sigma)

    def test_attempt_rejected_while_waiting_for_pair(self):
        reg = _stored_register(0, Bank.LEFT, 10, _noise())
        link = LinkModel("distant.left", 1.0, 1e-4, lambda: PHI_PLUS)
        with self.assertRaises(ProtocolError):
            attempt_distant(reg, link, RandomStream(1, "link.left.reg0"), 20)

    def test_swap_noise_on_stored_pair(self):
        clean = _stored_register(0, Bank.LEFT, 10, _noise())
        noisy = _stored_register(1, Bank.LEFT, 10, _noise(p_swap=0.01))

        self.assertAlmostEqual(fidelity(clean.stored.state, PHI_PLUS), 1.0, places=12)
        self.assertAlmostEqual(fidelity(noisy.stored.state, PHI_PLUS), 0.9925, places=12)
        self.assertEqual(noisy.stored.roles, ("client", "nuclear"))

    def test_double_teleportation_with_attempt_noise_matches_recursion(self):
        params = AttemptNoiseParams()
        noise = _noise(attempt=params)
        left = _stored_register(0, Bank.LEFT, 10, noise)
        right = _stored_register(1, Bank.RIGHT, 10, noise)
        pair = (left, right)
        for reg in pair:
            reg.begin_local(10)
        links = build_links(SimConfig(architecture="router", m=2))
        stream = MagicMock()
        stream.bernoulli.side_effect = [False] * 9 + [True]

        state = None
        for now in range(11, 21):
            state = attempt_local(pair, links.local, stream, now, noise)
        streams = {name: RandomStream(2, name) for name in ("bsm.left", "readout.left", "bsm.right", "readout.right")}
        record = complete_router_delivery(pair, state, 20, 0, noise, streams, links)

        expected = bell_weight_recursion(attempt_noise_weights(params), 20)[0]
        self.assertAlmostEqual(record.fidelity, expected, places=10)
        self.assertEqual(record.stored_attempts, 10)
        self.assertEqual((record.attempt_noise_left, record.attempt_noise_right), (10, 10))
        self.assertIs(left.phase, Phase.DELIVERING)

    def test_certain_local_link_adds_no_noise(self):
        noise = _noise()
        pair = (_stored_register(0, Bank.LEFT, 5, noise), _stored_register(1, Bank.RIGHT, 5, noise))
        for reg in pair:
            reg.begin_local(5)
        link = LinkModel("local", 1.0, 6e-6, lambda: PHI_PLUS)

        state = attempt_local(pair, link, RandomStream(1, "local.reg0"), 6, noise)

        self.assertIs(state, PHI_PLUS)
        self.assertTrue(pair[0].stored.state.allclose(PHI_PLUS))

    def test_single_click_state_and_rate(self):
        protocol = SingleClick(0.1)
        self.assertAlmostEqual(fidelity(protocol.heralded_state(), PHI_PLUS), 0.95, places=12)
        lossless = fabric.FabricSpec(
            loss_per_mzi_db=0.0, coupling_loss_db=0.0, conversion_loss_db=0.0, detector_efficiency=1.0
        )
        channel = fabric.ChannelSpec(length_km=0.0)
        self.assertAlmostEqual(protocol.distant_probability(lossless, channel, None), 0.2, places=12)

    def test_router_deterministic_schedule(self):
        config = _quiet(parse_config(_document(
            architecture="router", m=2, n_pairs=4, link__p_distant=1, link__p_local=1,
            flags__cycle_synchronized="false",
        )))

        result = simulate(config)

        period = 106e-6 + 1e-6 + 6e-6 + 50e-6
        self.assertEqual(len(result.records), 4)
        for index, record in enumerate(result.records, start=1):
            self.assertAlmostEqual(record.completion_time, index * period, places=12)
            self.assertAlmostEqual(record.fidelity, 1.0, places=10)
            self.assertEqual(record.idle_cycles, 0)
        self.assertAlmostEqual(result.rate, 1 / period, delta=1e-6)
        self.assertEqual(result.audit["balanced"], 1)

    def test_routerless_deterministic_rate(self):
        config = _quiet(parse_config(_document(
            architecture="routerless", m=1, n_pairs=5, link__p_distant=1,
            flags__cycle_synchronized="false",
        )))

        result = simulate(config)

        self.assertAlmostEqual(result.rate, 1 / (2 * 106e-6 + 1e-6 + 50e-6), delta=1e-6)
        self.assertTrue(all(record.fidelity > 1 - 1e-10 for record in result.records))

    def test_runs_are_reproducible(self):
        config = parse_config(_document(architecture="router", m=4, n_pairs=10, link__p_distant=0.3))
        first = simulate(config, record_trace=True)
        second = simulate(config, record_trace=True)

        self.assertEqual(first.trace_digest, second.trace_digest)
        self.assertEqual(first.records, second.records)

    def test_noise_lowers_fidelity(self):
        config = parse_config(_document(architecture="router", m=2, n_pairs=20, link__p_distant=0.3))
        records = simulate(config).records
        self.assertEqual(len(records), 20)
        self.assertTrue(all(0 < record.fidelity < 1 for record in records))

    def test_t_max_stops_the_run(self):
        config = parse_config(_document(architecture="routerless", m=2, n_pairs=0, t_max=0.01))
        result = simulate(config)
        self.assertLessEqual(result.elapsed, 0.01)
        self.assertTrue(all(record.completion_time <= 0.01 for record in result.records))

    def test_serialized_station_shares_local_slots(self):
        document = _document(
            architecture="router", m=6, n_pairs=0, t_max=290e-6, link__p_distant=1, link__p_local=1e-9,
        )
        # Three pairs form at 107 µs; slots then run every 6 µs from 113 µs to 287 µs.
        serialized = RouterRun(_quiet(parse_config(document)))
        serialized.run()
        self.assertEqual([reg.attempt_count_while_stored for reg in serialized.registers], [10] * 6)

        parallel = RouterRun(_quiet(parse_config(document + "flags.serialize_local = false\n")))
        parallel.run()
        self.assertEqual([reg.attempt_count_while_stored for reg in parallel.registers], [30] * 6)

    @override_settings(REPEATER_STATE_CHECKS=False)
    def test_router_pairs_in_fifo_order(self):
        config = _quiet(parse_config(_document(architecture="router", m=8, n_pairs=300, link__p_distant=0.3)))
        records = sorted(simulate(config).records, key=lambda r: (r.paired_time, *r.success_times))

        self.assertEqual(len(records), 300)
        for side in (0, 1):
            times = [record.success_times[side] for record in records]
            self.assertEqual(times, sorted(times))
        self.assertTrue(any(record.idle_cycles > 0 for record in records))

    @override_settings(REPEATER_STATE_CHECKS=False)
    def test_routerless_registers_behave_as_independent_copies(self):
        def gaps(records, reg_id):
            times = [record.completion_time for record in records if record.register_ids == (reg_id,)]
            return np.diff(times)

        document = _document(architecture="routerless", m=4, n_pairs=1200, link__p_distant=0.2)
        pooled = simulate(_quiet(parse_config(document))).records
        single = simulate(_quiet(parse_config(document)).replace(m=1, n_pairs=300, master_seed=2)).records

        reference = gaps(single, 0)
        samples = np.concatenate([gaps(pooled, reg_id) for reg_id in range(4)])
        self.assertGreater(stats.ks_2samp(samples, reference).pvalue, 0.01)

    @override_settings(REPEATER_STATE_CHECKS=False)
    def test_mean_stored_attempts_follow_the_serving_link(self):
        router = _quiet(parse_config(_document(architecture="router", m=4, n_pairs=2000, link__p_distant=0.3)))
        routerless = _quiet(parse_config(_document(architecture="routerless", m=4, n_pairs=2000,
                                                   link__p_distant=0.2)))
        for config, link in ((router, "local"), (routerless, "right")):
            with self.subTest(architecture=config.architecture):
                p = getattr(build_links(config), link).p_success
                attempts = [record.stored_attempts for record in simulate(config).records]
                self.assertLess(abs(np.mean(attempts) - 1 / p), 4 * stats.sem(attempts))


class ConfigTests(SimpleTestCase):
    def test_minimal_document_takes_defaults(self):
        config = parse_config(_document(architecture="router", m=4))

        self.assertEqual(config.fabric.m, 4)
        self.assertEqual(config.bank_size("left"), 2)
        self.assertEqual(config.n_pairs, 500)
        self.assertEqual(config.attempt_noise, AttemptNoiseParams(a=0.00025, b=0.0002))
        self.assertTrue(math.isinf(config.coherence.client.T2))
        self.assertTrue(config.flags.serialize_local)

    def test_fabric_rounds_up_to_power_of_two(self):
        self.assertEqual(parse_config(_document(architecture="router", m=6)).fabric.m, 8)

    def test_unknown_key_names_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("architecture = router\nm = 4\nfoo = 1\n")
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("foo", 3))

    def test_duplicate_key_is_rejected(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("architecture = router\nm = 4\nm = 6\n")
        self.assertEqual(ctx.exception.line, 3)

    def test_missing_required_key(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("architecture = router\n")
        self.assertEqual(ctx.exception.key, "m")

    def test_cp_violation_points_to_T2(self):
        text = _document(architecture="router", m=2, coherence__nuclear__T1=1, coherence__nuclear__T2=3)
        with self.assertRaises(ConfigError) as ctx:
            parse_config(text)
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("coherence.nuclear.T2", 4))

    def test_router_needs_even_m(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(_document(architecture="router", m=3))
        self.assertEqual(ctx.exception.key, "m")

    def test_bad_boolean(self):
        with self.assertRaises(ConfigError):
            parse_config(_document(architecture="router", m=2, flags__serialize_local="peut-etre"))

    def test_serialised_document_parses_back(self):
        config = parse_config(_document(
            architecture="routerless", m=3, channel__right__length_km=20, coherence__nuclear__T2=2.5,
            link__protocol="single_click", master_seed=7,
        ))
        self.assertEqual(parse_config(config_to_text(config)), config)

    def test_with_m_keeps_explicit_chip(self):
        config = parse_config(_document(architecture="router", m=2, fabric__m=16))
        self.assertEqual(with_m(config, 8).fabric.m, 16)
        self.assertEqual(with_m(parse_config(_document(architecture="router", m=2)), 8).fabric.m, 8)


class SweepTests(SimpleTestCase):
    def setUp(self):
        self.base = parse_config(_document(architecture="router", m=2, n_pairs=5, link__p_distant=0.4))

    def test_grid_shares_one_chip(self):
        grid = SweepGrid(m_values=(2, 4, 6), lengths_km=(1.0,), architectures=("router",))
        configs = point_configs(grid, self.base)

        self.assertEqual(grid.fabric_m, 8)
        self.assertEqual({config.fabric.m for config in configs}, {8})
        self.assertEqual(parse_config(config_to_text(configs[0])).fabric.m, 8)

    def test_grid_rejects_unknown_architecture(self):
        with self.assertRaises(ConfigError):
            SweepGrid(m_values=(2,), lengths_km=(1.0,), architectures=("mesh",))

    def test_sweep_rows_follow_grid_order(self):
        grid = SweepGrid(m_values=(2, 4), lengths_km=(1.0, 10.0), runs_per_point=1)

        rows = parse_csv(sweep(grid, self.base))

        self.assertEqual(len(rows), 8)
        self.assertEqual(
            [(row.architecture, row.L_km, row.m) for row in rows[:4]],
            [("router", 1.0, 2), ("router", 1.0, 4), ("router", 10.0, 2), ("router", 10.0, 4)],
        )
        self.assertEqual(rows[-1].architecture, "routerless")

    def test_identical_point_gives_identical_row(self):
        self.assertEqual(run_point(self.base, 2), run_point(self.base, 2))

    def test_csv_header_and_float_format(self):
        document = write_csv([_row(rate=1 / 3)])
        header, line = document.splitlines()
        self.assertEqual(tuple(header.split(",")), CSV_HEADER)
        self.assertIn(format(1 / 3, ".17g"), line)
        self.assertNotIn("\r", document)

    def test_failed_point_aborts_with_partial_csv(self):
        grid = SweepGrid(m_values=(2, 4), lengths_km=(1.0,), architectures=("router",), runs_per_point=1)
        with patch("repeater.sweep.run_point", side_effect=[_row(), SimulationError("boom", run_index=0)]):
            with self.assertRaises(SweepAborted) as ctx:
                sweep(grid, self.base)

        partial = ctx.exception.partial_csv
        self.assertEqual(len(parse_csv(partial)), 1)
        self.assertTrue(partial.splitlines()[-1].startswith(PARTIAL_MARKER))

    def test_celery_dispatch_keeps_grid_order(self):
        grid = SweepGrid(m_values=(2, 4), lengths_km=(1.0,), architectures=("router",), runs_per_point=1)
        results = [MagicMock(), MagicMock()]
        results[0].get.return_value = _row(m=2).as_dict()
        results[1].get.return_value = _row(m=4).as_dict()

        with patch("repeater.tasks.simulate_point") as task:
            task.delay.side_effect = results
            rows = parse_csv(sweep(grid, self.base, inline=False))

        delay = task.delay

        self.assertEqual([row.m for row in rows], [2, 4])
        config_text, runs = delay.call_args_list[1].args
        self.assertEqual(parse_config(config_text).m, 4)
        self.assertEqual(runs, 1)

    def test_isolated_sources(self):
        only_gates = isolate_source(self.base, "gates_readout")
        self.assertTrue(only_gates.coherence.nuclear.is_perfect)
        self.assertTrue(only_gates.attempt_noise.is_silent)
        self.assertEqual(only_gates.op_noise, self.base.op_noise)
        with self.assertRaises(ConfigError):
            isolate_source(self.base, "cosmic_rays")

    def test_breakdown_reports_every_source(self):
        rows = infidelity_breakdown(self.base, 1)
        self.assertEqual([source for source, _ in rows], ["idle_decoherence", "attempt_noise", "gates_readout", "all"])

    def test_linear_fit(self):
        fit = linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
        self.assertAlmostEqual(fit["slope"], 2.0)
        self.assertAlmostEqual(fit["intercept"], 1.0)
        self.assertAlmostEqual(fit["r_squared"], 1.0)

    def test_repeated_sweep_is_byte_identical(self):
        grid = SweepGrid(m_values=(2, 4), lengths_km=(10.0,), runs_per_point=2)
        base = parse_config(_document(architecture="router", m=2, n_pairs=30))
        self.assertEqual(sweep(grid, base), sweep(grid, base))

    def test_sweep_warns_when_local_link_is_slower(self):
        grid = SweepGrid(m_values=(2, 32), lengths_km=(1.0,), architectures=("router",), runs_per_point=1)
        with patch("repeater.sweep.run_point", side_effect=[_row(m=2), _row(m=32)]):
            with self.assertLogs("repeater.sweep", level="WARNING") as logs:
                sweep(grid, parse_config(_document(architecture="router", m=2)))

        self.assertEqual(len(logs.records), 2)
        self.assertIn("Puce de 32 ports", logs.output[0])


@override_settings(REPEATER_STATE_CHECKS=False)
class ScalingTests(SimpleTestCase):
    """Rate and fidelity trends over m on one 16-port chip at 10 km."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        base = parse_config(_document(architecture="router", m=2, n_pairs=400, op_noise__eps_ro=0))
        grid = SweepGrid(m_values=(2, 4, 8, 16), lengths_km=(10.0,), runs_per_point=3)
        cls.rows = {(row.architecture, row.m): row for row in parse_csv(sweep(grid, base))}
        cls.m_values = grid.m_values

    def _series(self, architecture: str, field: str) -> list[float]:
        return [getattr(self.rows[architecture, m], field) for m in self.m_values]

    def test_routerless_rate_is_linear_in_m(self):
        rates = self._series("routerless", "rate_hz_mean")
        fit = linear_fit(self.m_values, rates)

        self.assertGreaterEqual(fit["r_squared"], 0.99)
        self.assertLess(abs(fit["intercept"]), 0.25 * rates[0])

    def test_router_closes_the_rate_gap(self):
        ratios, sigmas = [], []
        for m in (2, 4, 16):
            router, routerless = self.rows["router", m], self.rows["routerless", m]
            ratio = router.rate_hz_mean / routerless.rate_hz_mean
            ratios.append(ratio)
            sigmas.append(ratio * math.hypot(router.rate_hz_sem / router.rate_hz_mean,
                                             routerless.rate_hz_sem / routerless.rate_hz_mean))

        for index in range(1, len(ratios)):
            slack = max(2 * math.hypot(sigmas[index], sigmas[index - 1]), 0.03)
            self.assertGreaterEqual(ratios[index], ratios[index - 1] - slack)
        self.assertGreater(ratios[-1], 0.75)

    def test_routerless_infidelity_does_not_depend_on_m(self):
        infidelities = self._series("routerless", "infidelity_mean")
        self.assertLess(max(infidelities) / min(infidelities), 1.1)

    def test_idle_decoherence_falls_with_m_in_the_router(self):
        base = isolate_source(parse_config(_document(architecture="router", m=2, n_pairs=400)), "idle_decoherence")
        grid = SweepGrid(m_values=(2, 16), lengths_km=(10.0,), architectures=("router",))
        small, large = parse_csv(sweep(grid, base))

        self.assertGreater(small.infidelity_mean, 0)
        self.assertLess(large.infidelity_mean, 0.5 * small.infidelity_mean)

    def test_router_infidelity_does_not_depend_on_length_without_decoherence(self):
        base = parse_config(_document(architecture="router", m=8, n_pairs=300, op_noise__eps_ro=0)).replace(
            coherence=CoherenceSet(electron=PERFECT, nuclear=PERFECT, client=PERFECT),
        )
        grid = SweepGrid(m_values=(8,), lengths_km=(10.0, 20.0, 30.0), architectures=("router",))
        infidelities = [row.infidelity_mean for row in parse_csv(sweep(grid, base))]

        self.assertLess(max(infidelities) / min(infidelities), 1.1)


class OracleTests(SimpleTestCase):
    def test_closed_forms(self):
        self.assertAlmostEqual(expected_max_geometric(0.2), 7.2222, places=4)
        self.assertAlmostEqual(expected_abs_difference(0.2), 10 - 2 / 0.36, places=12)
        self.assertAlmostEqual(readout_mixture_fidelity(0.05), (0.95 ** 2 + 0.05 ** 2) ** 2, places=12)
        self.assertAlmostEqual(geometric_dephasing(1.0, 0.5), math.exp(-0.5), places=12)

    def test_recursion_matches_dense_channel(self):
        params = AttemptNoiseParams(a=0.01, b=0.02)
        rho = PHI_PLUS
        for _ in range(5):
            rho = apply_channel(rho, [1], attempt_noise_channel(params))
        weights = bell_weight_recursion(attempt_noise_weights(params), 5)
        for outcome, probability in bell_probabilities(rho, (0, 1)).items():
            self.assertAlmostEqual(probability, weights[outcome.index], places=12)

    def test_report_z_score(self):
        self.assertTrue(OracleReport("s", "x", 1.0, 1.0 + 1e-9, 0.0, 1, 3.0).passed)
        self.assertFalse(OracleReport("s", "x", 1.0, 0.9, 0.0, 1, 3.0).passed)
        self.assertAlmostEqual(OracleReport("s", "x", 5.3, 5.0, 0.1, 100, 3.0).z, 3.0)

    def test_unknown_scenario(self):
        with self.assertRaises(OracleError):
            oracle_check("wormhole", parse_config(_document(architecture="router", m=2)))

    def test_deterministic_scenarios(self):
        config = parse_config(_document(architecture="router", m=2, n_pairs=50))
        self.assertTrue(oracle_check("attempt_noise_single", config).passed)
        report = oracle_check("teleportation", config)
        self.assertTrue(report.passed)
        self.assertEqual(report.samples, 50)

    @override_settings(REPEATER_ORACLE_Z_LIMIT=5.0)
    def test_statistical_scenarios(self):
        config = parse_config(_document(architecture="router", m=2, n_pairs=400, link__p_distant=0.2))
        for scenario in ("geometric_attempts", "order_statistic", "idle_mismatch", "readout_mixture",
                         "stored_dephasing"):
            with self.subTest(scenario=scenario):
                report = oracle_check(scenario, config)
                self.assertTrue(report.passed, report.summary())

    @override_settings(REPEATER_ORACLE_Z_LIMIT=5.0)
    def test_bank_mismatch_variance(self):
        config = parse_config(_document(architecture="router", m=8, n_pairs=2000, link__p_distant=0.2))
        report = oracle_check("bank_mismatch", config)

        self.assertAlmostEqual(report.expected, 1.28, places=12)
        self.assertEqual(report.samples, 2000)
        self.assertTrue(report.passed, report.summary())


class PlotTests(SimpleTestCase):
    def setUp(self):
        self.csv = write_csv([
            _row("router", 2, 10.0, 0.05, 900.0),
            _row("router", 4, 10.0, 0.04, 1800.0),
            _row("routerless", 2, 10.0, 0.08, 400.0),
            _row("routerless", 4, 10.0, 0.08, 800.0),
        ])

    def test_every_kind_renders_svg(self):
        for kind in ("rate", "infidelity", "ratio"):
            with self.subTest(kind=kind):
                document = emit_plot(self.csv, kind)
                self.assertIn("<svg", document)

    def test_output_is_reproducible(self):
        self.assertEqual(emit_plot(self.csv, "rate"), emit_plot(self.csv, "rate"))

    def test_ratio_needs_both_architectures(self):
        with self.assertRaises(PlotError):
            emit_plot(write_csv([_row("router", 2)]), "ratio")

    def test_schema_errors(self):
        with self.assertRaises(PlotError):
            emit_plot("architecture,m\nrouter,2\n", "rate")
        with self.assertRaises(PlotError):
            emit_plot(self.csv, "histogram")


class SettingsTests(SimpleTestCase):
    def test_no_database_is_configured(self):
        self.assertEqual(connections["default"].settings_dict["ENGINE"], "django.db.backends.dummy")
        self.assertEqual(list(apps.get_app_config("repeater").get_models()), [])


class TaskTests(SimpleTestCase):
    @patch("repeater.tasks.run_point")
    def test_simulate_point_parses_document(self, mocked_run_point):
        mocked_run_point.return_value = _row(m=4)

        result = simulate_point.apply(args=(_document(architecture="router", m=4), 2)).get()

        self.assertEqual(result["m"], 4)
        config, runs = mocked_run_point.call_args.args
        self.assertEqual((config.architecture, config.m, runs), ("router", 4, 2))


class CommandTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        self.config_path = self._write(
            "router.conf", _document(architecture="router", m=2, n_pairs=4, link__p_distant=0.5)
        )
        settings_override = override_settings(REPEATER_OUTPUT_DIR=self.dir, REPEATER_RUNS_PER_POINT=1)
        settings_override.enable()
        self.addCleanup(settings_override.disable)

    def _write(self, name: str, text: str) -> str:
        path = self.dir / name
        path.write_text(text, encoding="utf-8")
        return str(path)

    def test_run_prints_layers_and_csv(self):
        out = StringIO()
        call_command("run", self.config_path, "--runs", "1", stdout=out)

        output = out.getvalue()
        self.assertIn("register_routing=0", output)
        self.assertIn(",".join(CSV_HEADER), output)

    def test_run_warns_when_local_link_is_slower(self):
        crowded = self._write("crowded.conf", _document(
            architecture="router", m=2, n_pairs=2, fabric__m=32, channel__length_km=1,
        ))
        out = StringIO()
        call_command("run", crowded, stdout=out)

        output = out.getvalue()
        self.assertIn("Attention: p_local=0.0641", output)
        self.assertIn("σ=0.37", output)

        out = StringIO()
        call_command("run", self._write("fast.conf", _document(architecture="router", m=2, n_pairs=2)), stdout=out)
        self.assertNotIn("Attention", out.getvalue())

    def test_run_writes_bare_name_in_output_dir(self):
        call_command("run", self.config_path, "--out", "point.csv", stdout=StringIO())
        self.assertEqual(len(parse_csv((self.dir / "point.csv").read_text(encoding="utf-8"))), 1)

    def test_config_errors_exit_with_2(self):
        bad = self._write("bad.conf", _document(architecture="router", m=3))
        for path in (bad, str(self.dir / "missing.conf")):
            with self.subTest(path=path):
                with self.assertRaises(CommandError) as ctx:
                    call_command("run", path, stdout=StringIO())
                self.assertEqual(ctx.exception.returncode, 2)

    def test_sweep_writes_csv(self):
        out = StringIO()
        call_command("sweep", self.config_path, "--m", "2,4", "--L", "1", "--arch", "router",
                     "--out", "sweep.csv", stdout=out)

        rows = parse_csv((self.dir / "sweep.csv").read_text(encoding="utf-8"))
        self.assertEqual([row.m for row in rows], [2, 4])
        self.assertIn("2 points", out.getvalue())

    def test_sweep_abort_exits_with_3_and_keeps_partial_csv(self):
        with patch("repeater.sweep.run_point", side_effect=SimulationError("boom", run_index=0)):
            with self.assertRaises(CommandError) as ctx:
                call_command("sweep", self.config_path, "--m", "2", "--L", "1", "--out", "sweep.csv",
                             stdout=StringIO(), stderr=StringIO())

        self.assertEqual(ctx.exception.returncode, 3)
        self.assertIn(PARTIAL_MARKER, (self.dir / "sweep.csv").read_text(encoding="utf-8"))

    def test_sweep_rejects_bad_list(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("sweep", self.config_path, "--m", "deux", stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_oracle_exit_codes(self):
        with self.assertRaises(CommandError) as ctx:
            call_command("oracle", "wormhole", self.config_path, stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

        failing = OracleReport("order_statistic", "x", 9.0, 7.2, 0.1, 100, 3.0)
        with patch("repeater.management.commands.oracle.oracle_check", return_value=failing):
            with self.assertRaises(CommandError) as ctx:
                call_command("oracle", "order_statistic", self.config_path, stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 4)

    def test_oracle_success(self):
        out = StringIO()
        call_command("oracle", "teleportation", self.config_path, "--pairs", "3", stdout=out)
        self.assertIn("teleportation", out.getvalue())

    def test_plot_command(self):
        csv_path = self._write("sweep.csv", write_csv([_row("router", 2), _row("router", 4)]))
        call_command("plot", csv_path, "--kind", "infidelity", "--out", "fig.svg", stdout=StringIO())
        self.assertIn("<svg", (self.dir / "fig.svg").read_text(encoding="utf-8"))

        with self.assertRaises(CommandError) as ctx:
            call_command("plot", csv_path, "--kind", "ratio", "--out", "ratio.svg", stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_defaults_table_and_skeleton(self):
        out = StringIO()
        call_command("defaults", stdout=out)
        self.assertIn("attempt_noise.a", out.getvalue())
        self.assertIn("placeholder", out.getvalue())

        skeleton = StringIO()
        call_command("defaults", "--conf", stdout=skeleton)
        config = parse_config(skeleton.getvalue() + _document(architecture="router", m=4))
        self.assertEqual(config.m, 4)

    def test_breakdown_command(self):
        out = StringIO()
        call_command("breakdown", self.config_path, "--runs", "1", stdout=out)
        output = out.getvalue()
        for source in ("idle_decoherence", "attempt_noise", "gates_readout", "all"):
            self.assertIn(source, output)
