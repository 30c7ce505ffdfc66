"""Analytic scenarios the simulator is checked against.

Each scenario takes a base document, switches off whatever the closed form does
not model, runs the simulator and compares one statistic with its expected
value. Stochastic statistics are judged by a z-score against their empirical
standard error; deterministic ones by an absolute tolerance.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from itertools import product
from typing import Callable

import numpy as np
from django.conf import settings
from scipy import stats

from .config import SimConfig
from .exceptions import OracleError
from .engine import RandomStream
from .fabric import mismatch_scale, timings
from .noise import (
    AttemptNoiseParams,
    CoherenceParams,
    OpNoiseParams,
    apply_flips,
    attempt_noise_channel,
    attempt_noise_weights,
)
from .protocol import simulate
from .qstate import PHI_PLUS, BellOutcome, apply_channel, apply_unitary, correction_operator, fidelity

logger = logging.getLogger(__name__)

DETERMINISTIC_TOLERANCE = 1e-6
PAULI_BELL_SHIFT = {0: 0, 1: 1, 2: 3, 3: 2}


@dataclass(frozen=True)
class OracleReport:
    scenario: str
    statistic: str
    observed: float
    expected: float
    stderr: float
    samples: int
    z_limit: float

    @property
    def z(self) -> float:
        diff = self.observed - self.expected
        if self.stderr > 0:
            return diff / self.stderr
        return 0.0 if abs(diff) <= DETERMINISTIC_TOLERANCE else math.copysign(math.inf, diff)

    @property
    def passed(self) -> bool:
        return abs(self.z) <= self.z_limit

    def summary(self) -> str:
        return (
            f"{self.scenario}: {self.statistic} observé={self.observed:.6g} attendu={self.expected:.6g} "
            f"(σ={self.stderr:.3g}, n={self.samples}, z={self.z:+.2f})"
        )


def expected_max_geometric(p: float) -> float:
    """E[max(G1, G2)] for two independent geometric attempt counts."""
    return 2 / p - 1 / (2 * p - p * p)


def expected_abs_difference(p: float) -> float:
    return 2 / p - 2 / (2 * p - p * p)


def geometric_dephasing(p: float, c: float) -> float:
    """E[e^{-cG}] with G geometric on {1, 2, ...}."""
    decay = math.exp(-c)
    return p * decay / (1 - (1 - p) * decay)


def bell_weight_recursion(weights: dict[tuple[int, ...], float], steps: int,
                          start: np.ndarray | None = None) -> np.ndarray:
    """Bell-diagonal weights after ``steps`` single-qubit Pauli channels on one half of the pair.

    Index ``x + 2z`` as in :class:`BellOutcome`; X, Y and Z shift it by xor 1, 3 and 2.
    """
    w = np.array([1.0, 0.0, 0.0, 0.0]) if start is None else np.asarray(start, dtype=float)
    for _ in range(steps):
        nxt = np.zeros(4)
        for (pauli,), prob in weights.items():
            shift = PAULI_BELL_SHIFT[pauli]
            for index in range(4):
                nxt[index ^ shift] += prob * w[index]
        w = nxt
    return w


def readout_mixture_fidelity(eps: float) -> float:
    """Mean delivered fidelity of the noiseless double swap when all four readout bits may flip."""
    total = 0.0
    for bits in product((0, 1), repeat=4):
        weight = math.prod(eps if bit else 1 - eps for bit in bits)
        first = apply_flips(BellOutcome.PHI_PLUS, bool(bits[0]), bool(bits[1]))
        second = apply_flips(BellOutcome.PHI_PLUS, bool(bits[2]), bool(bits[3]))
        residual = correction_operator(second) @ correction_operator(first)
        total += weight * fidelity(apply_unitary(PHI_PLUS, [1], residual), PHI_PLUS)
    return total


def noiseless(config: SimConfig) -> SimConfig:
    perfect = CoherenceParams.perfect()
    return config.replace(
        coherence=dataclasses.replace(config.coherence, electron=perfect, nuclear=perfect, client=perfect),
        attempt_noise=AttemptNoiseParams(a=0.0, b=0.0),
        op_noise=OpNoiseParams(p_gate=0.0, eps_ro=0.0, p_swap=0.0),
    )


def _router_m2(config: SimConfig, p_distant: float) -> SimConfig:
    return config.replace(
        architecture="router", m=2, left_bank_size=None,
        link=dataclasses.replace(config.link, p_distant=p_distant, p_local=1.0),
    )


def _z_limit() -> float:
    return float(getattr(settings, "REPEATER_ORACLE_Z_LIMIT", 3.0))


def _empirical(scenario: str, statistic: str, values: list[float], expected: float) -> OracleReport:
    if len(values) < 2:
        raise OracleError(f"{scenario}: trop peu de livraisons ({len(values)}) pour estimer l'erreur.")
    array = np.asarray(values, dtype=float)
    return OracleReport(
        scenario=scenario,
        statistic=statistic,
        observed=float(array.mean()),
        expected=expected,
        stderr=float(stats.sem(array)),
        samples=len(values),
        z_limit=_z_limit(),
    )


def _p(config: SimConfig, default: float = 0.2) -> float:
    return config.link.p_distant if config.link.p_distant is not None else default


def geometric_attempts(config: SimConfig) -> OracleReport:
    p = _p(config)
    run_config = noiseless(config).replace(
        architecture="routerless", m=1, left_bank_size=None,
        link=dataclasses.replace(config.link, p_distant=p),
    )
    records = simulate(run_config).records
    return _empirical("geometric_attempts", "tentatives distantes moyennes",
                      [r.distant_attempts_left for r in records], float(stats.geom(p).mean()))


def order_statistic(config: SimConfig) -> OracleReport:
    p = _p(config)
    records = simulate(_router_m2(noiseless(config), p)).records
    return _empirical("order_statistic", "cycles de premier étage",
                      [r.first_stage_cycles for r in records], expected_max_geometric(p))


def idle_mismatch(config: SimConfig) -> OracleReport:
    p = _p(config)
    records = simulate(_router_m2(noiseless(config), p)).records
    return _empirical("idle_mismatch", "cycles d'attente",
                      [r.idle_cycles for r in records], expected_abs_difference(p))


def attempt_noise_single(config: SimConfig) -> OracleReport:
    """One dose of attempt noise on half of Φ⁺, dense channel against the Bell-weight recursion."""
    params = config.attempt_noise
    dense = fidelity(apply_channel(PHI_PLUS, [1], attempt_noise_channel(params)), PHI_PLUS)
    expected = float(bell_weight_recursion(attempt_noise_weights(params), 1)[0])
    return OracleReport("attempt_noise_single", "fidélité après une tentative", dense, expected, 0.0, 1, _z_limit())


def readout_mixture(config: SimConfig) -> OracleReport:
    eps = config.op_noise.eps_ro
    base = _router_m2(noiseless(config), 1.0)
    run_config = base.replace(op_noise=OpNoiseParams(p_gate=0.0, eps_ro=eps, p_swap=0.0))
    records = simulate(run_config).records
    return _empirical("readout_mixture", "fidélité moyenne",
                      [r.fidelity for r in records], readout_mixture_fidelity(eps))


def teleportation(config: SimConfig) -> OracleReport:
    records = simulate(_router_m2(noiseless(config), 1.0)).records
    worst = min((r.fidelity for r in records), default=0.0)
    return OracleReport("teleportation", "fidélité minimale", worst, 1.0, 0.0, len(records), _z_limit())


def stored_dephasing(config: SimConfig) -> OracleReport:
    """Routerless storage under pure dephasing, averaged over the geometric second-link wait."""
    p = _p(config)
    nuclear = CoherenceParams(T1=math.inf, T2=config.coherence.nuclear.T2)
    base = noiseless(config)
    run_config = base.replace(
        architecture="routerless", m=1, left_bank_size=None,
        coherence=dataclasses.replace(base.coherence, nuclear=nuclear),
        link=dataclasses.replace(config.link, p_distant=p),
        flags=dataclasses.replace(config.flags, cycle_synchronized=False),
    )
    t_distant, _ = timings(run_config.channel_right)
    c = t_distant / nuclear.T2
    records = simulate(run_config).records
    return _empirical("stored_dephasing", "fidélité moyenne",
                      [r.fidelity for r in records], (1 + geometric_dephasing(p, c)) / 2)


def bank_mismatch(config: SimConfig) -> OracleReport:
    """Squared per-cycle success difference between the two banks when every register attempts."""
    p = _p(config)
    left = config.bank_size("left")
    right = config.m - left
    streams = []
    for index in range(config.m):
        side, sign = ("left", 1) if index < left else ("right", -1)
        streams.append((sign, RandomStream(config.master_seed, f"link.{side}.reg{index}")))
    offset = (left - right) * p
    values = []
    for _ in range(config.n_pairs or 2000):
        difference = sum(sign for sign, stream in streams if stream.bernoulli(p))
        values.append((difference - offset) ** 2)
    return _empirical("bank_mismatch", "variance de l'écart entre banques",
                      values, mismatch_scale(config.m, p) ** 2)


SCENARIOS: dict[str, Callable[[SimConfig], OracleReport]] = {
    "geometric_attempts": geometric_attempts,
    "order_statistic": order_statistic,
    "idle_mismatch": idle_mismatch,
    "attempt_noise_single": attempt_noise_single,
    "readout_mixture": readout_mixture,
    "teleportation": teleportation,
    "stored_dephasing": stored_dephasing,
    "bank_mismatch": bank_mismatch,
}


def oracle_check(scenario: str, config: SimConfig) -> OracleReport:
    check = SCENARIOS.get(scenario)
    if check is None:
        raise OracleError(f"Scénario inconnu '{scenario}' (disponibles: {', '.join(SCENARIOS)}).")
    report = check(config)
    log = logger.info if report.passed else logger.warning
    log("Oracle %s", report.summary())
    return report
