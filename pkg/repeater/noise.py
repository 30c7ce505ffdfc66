"""Noise channels acting on stored and flying qubits.

* idle decoherence: amplitude damping toward |0⟩ (T1) plus pure dephasing so
  that coherences decay as e^{-t/T2};
* attempt-induced noise on a nuclear spin each time its electron is excited:
  ρ ↦ (1-a-b)ρ + aZρZ + b𝕀/2;
* depolarising gate noise and classical readout flips.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .engine import RandomStream
from .exceptions import ConfigError, QuantumStateError
from .qstate import BellOutcome, KrausChannel, identity_channel

# Attempt-noise magnitudes quoted for NV centres.
NV_ATTEMPT_DEPHASING = 1 / 4000
NV_ATTEMPT_DEPOLARIZATION = 1 / 5000


@dataclass(frozen=True)
class CoherenceParams:
    T1: float
    T2: float

    def __post_init__(self):
        if not self.T1 > 0 or not self.T2 > 0:
            raise ConfigError(f"T1 et T2 doivent être > 0 (T1={self.T1}, T2={self.T2}).")
        if self.T2 > 2 * self.T1:
            raise ConfigError(
                f"T2={self.T2} > 2·T1={2 * self.T1}: condition de complète positivité violée."
            )

    @classmethod
    def perfect(cls) -> "CoherenceParams":
        return cls(T1=math.inf, T2=math.inf)

    @property
    def is_perfect(self) -> bool:
        return math.isinf(self.T1) and math.isinf(self.T2)


@dataclass(frozen=True)
class AttemptNoiseParams:
    a: float = NV_ATTEMPT_DEPHASING
    b: float = NV_ATTEMPT_DEPOLARIZATION

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or self.a + self.b > 1:
            raise ConfigError(f"Bruit de tentative invalide: a={self.a}, b={self.b} (a,b ≥ 0, a+b ≤ 1).")

    @property
    def is_silent(self) -> bool:
        return self.a == 0 and self.b == 0


@dataclass(frozen=True)
class OpNoiseParams:
    p_gate: float = 0.01
    eps_ro: float = 0.005
    p_swap: float = 0.01

    def __post_init__(self):
        for name in ("p_gate", "eps_ro", "p_swap"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ConfigError(f"{name}={value} hors de [0, 1].")


@lru_cache(maxsize=4096)
def _decoherence_operators(t: float, T1: float, T2: float) -> tuple[np.ndarray, ...]:
    amplitude = math.exp(-t / T1) if not math.isinf(T1) else 1.0
    gamma = 1.0 - amplitude
    # Amplitude damping alone already shrinks coherences by sqrt(1-γ) = e^{-t/2T1}.
    exponent = (1.0 / T2 if not math.isinf(T2) else 0.0) - (0.5 / T1 if not math.isinf(T1) else 0.0)
    if exponent < -1e-15:
        raise QuantumStateError("Canal de décohérence non complètement positif (T2 > 2·T1).")
    lam = math.exp(-t * max(exponent, 0.0))
    damping = (
        np.array([[1, 0], [0, math.sqrt(amplitude)]], dtype=complex),
        np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex),
    )
    dephasing = (
        math.sqrt((1 + lam) / 2) * np.eye(2, dtype=complex),
        math.sqrt((1 - lam) / 2) * np.diag([1, -1]).astype(complex),
    )
    operators = []
    for d in dephasing:
        for k in damping:
            op = d @ k
            if np.any(np.abs(op) > 0):
                operators.append(op)
    return tuple(operators)


def decoherence_channel(t: float, params: CoherenceParams) -> KrausChannel:
    if t < 0:
        raise QuantumStateError(f"Durée de décohérence négative: {t}.")
    if t == 0 or params.is_perfect:
        return identity_channel(1)
    return KrausChannel(_decoherence_operators(float(t), params.T1, params.T2), name="decoherence")


def attempt_noise_weights(params: AttemptNoiseParams) -> dict[tuple[int, ...], float]:
    a, b = params.a, params.b
    return {
        (0,): 1 - a - 0.75 * b,
        (1,): 0.25 * b,
        (2,): 0.25 * b,
        (3,): a + 0.25 * b,
    }


def attempt_noise_channel(params: AttemptNoiseParams) -> KrausChannel:
    if params.is_silent:
        return identity_channel(1)
    return KrausChannel.from_pauli_weights(attempt_noise_weights(params), name="attempt")


def gate_noise_channel(p: float, arity: int) -> KrausChannel:
    if not 0 <= p <= 1:
        raise QuantumStateError(f"Probabilité de dépolarisation {p} hors de [0, 1].")
    if arity not in (1, 2):
        raise QuantumStateError(f"Arité {arity} non supportée.")
    if p == 0:
        return identity_channel(arity)
    n_paulis = 4 ** arity
    weights = {}
    for flat in range(n_paulis):
        key = tuple((flat >> (2 * shift)) & 3 for shift in reversed(range(arity)))
        weights[key] = p / n_paulis
    weights[(0,) * arity] += 1 - p
    return KrausChannel.from_pauli_weights(weights, name=f"depolarizing{arity}")


def apply_flips(outcome: BellOutcome, x_flip: bool, z_flip: bool) -> BellOutcome:
    return BellOutcome.from_bits(outcome.x_bit ^ int(x_flip), outcome.z_bit ^ int(z_flip))


def flip_outcome(outcome: BellOutcome, eps: float, stream: RandomStream) -> BellOutcome:
    """Each of the two readout bits flips independently with probability ``eps``."""
    if not 0 <= eps <= 1:
        raise QuantumStateError(f"Probabilité d'erreur de lecture {eps} hors de [0, 1].")
    # Two draws every time, so the stream advances identically whatever eps is.
    x_flip = stream.uniform() < eps
    z_flip = stream.uniform() < eps
    return apply_flips(outcome, x_flip, z_flip)
