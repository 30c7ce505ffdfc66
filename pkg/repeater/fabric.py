"""Photonic switch depths, loss budgets, success probabilities and timings.

An ``m``-register, ``k``-way router is an MZI array made of a register routing
layer (depth 2·log2(m/2)), a one-layer interposer, a network routing layer
(depth log2(k)) and, for local Bell measurements, a BSM layer of depth 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .exceptions import ConfigError, FabricError

BARRETT_KOK_HERALD_FACTOR = 0.5


def _log2_exact(value: int, name: str) -> int:
    if not isinstance(value, int) or value < 1 or value & (value - 1):
        raise FabricError(f"{name}={value!r} doit être une puissance de 2.")
    return value.bit_length() - 1


def next_power_of_two(value: int) -> int:
    return 1 << max(0, (int(value) - 1).bit_length())


@dataclass(frozen=True)
class FabricSpec:
    m: int = 8
    k: int = 2
    loss_per_mzi_db: float = 0.3
    coupling_loss_db: float = 1.0
    conversion_loss_db: float = 3.0
    detector_efficiency: float = 0.9

    def __post_init__(self):
        if self.m < 2 or self.m % 2:
            raise ConfigError(f"fabric.m={self.m} doit être pair et ≥ 2.")
        try:
            _log2_exact(self.m, "fabric.m")
            _log2_exact(self.k, "fabric.k")
        except FabricError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("loss_per_mzi_db", "coupling_loss_db", "conversion_loss_db"):
            if getattr(self, name) < 0:
                raise ConfigError(f"fabric.{name} doit être ≥ 0.")
        if not 0 < self.detector_efficiency <= 1:
            raise ConfigError("fabric.detector_efficiency doit appartenir à ]0, 1].")


@dataclass(frozen=True)
class ChannelSpec:
    length_km: float = 10.0
    attenuation_db_per_km: float = 0.2
    fiber_light_speed: float = 2e8
    prep_time: float = 6e-6
    client_efficiency: float = 1.0

    def __post_init__(self):
        if self.length_km < 0:
            raise ConfigError(f"Longueur de lien négative: {self.length_km} km.")
        if self.attenuation_db_per_km < 0:
            raise ConfigError("channel.attenuation_db_per_km doit être ≥ 0.")
        if self.fiber_light_speed <= 0:
            raise ConfigError("channel.fiber_light_speed doit être > 0.")
        if self.prep_time <= 0:
            raise ConfigError("channel.prep_time doit être > 0.")
        if not 0 < self.client_efficiency <= 1:
            raise ConfigError("channel.client_efficiency doit appartenir à ]0, 1].")

    @property
    def fiber_transmission(self) -> float:
        return 10 ** (-self.attenuation_db_per_km * self.length_km / 10)

    @property
    def one_way_delay(self) -> float:
        return self.length_km * 1e3 / self.fiber_light_speed


def switch_layers(m: int, k: int) -> dict[str, int]:
    log_half_m = _log2_exact(m, "m") - 1
    if log_half_m < 0:
        raise FabricError("m doit être ≥ 2.")
    return {
        "register_routing": 2 * log_half_m,
        "interposer": 1,
        "network_routing": _log2_exact(k, "k"),
        "local_bsm": 1,
    }


def network_path_depth(m: int, k: int) -> int:
    layers = switch_layers(m, k)
    depth = layers["register_routing"] + layers["interposer"] + layers["network_routing"]
    closed_form = _log2_exact(m * m * k // 2, "m²k/2")
    if depth != closed_form:
        raise FabricError(f"Profondeur incohérente: {depth} ≠ log2(m²k/2)={closed_form}.")
    return depth


def local_path_depth(m: int) -> int:
    layers = switch_layers(m, 1)
    return layers["register_routing"] + layers["interposer"] + layers["local_bsm"]


def routerless_depth(m: int, k: int) -> int:
    return _log2_exact(m, "m") + _log2_exact(k, "k")


def path_transmission(depth: int, spec: FabricSpec, extra_db: float = 0.0) -> float:
    if depth < 0:
        raise FabricError(f"Profondeur négative: {depth}.")
    return 10 ** (-(depth * spec.loss_per_mzi_db + extra_db) / 10)


def repeater_efficiency(fab: FabricSpec, ch: ChannelSpec, *, depth: int | None = None) -> float:
    if depth is None:
        depth = network_path_depth(fab.m, fab.k)
    on_chip = path_transmission(depth, fab, fab.coupling_loss_db + fab.conversion_loss_db)
    return on_chip * ch.fiber_transmission * fab.detector_efficiency


def client_efficiency(fab: FabricSpec, ch: ChannelSpec) -> float:
    return ch.client_efficiency * ch.fiber_transmission * fab.detector_efficiency


def p_distant(fab: FabricSpec, ch: ChannelSpec, *, depth: int | None = None) -> float:
    p = BARRETT_KOK_HERALD_FACTOR * repeater_efficiency(fab, ch, depth=depth) * client_efficiency(fab, ch)
    if not 0 <= p <= 1:
        raise FabricError(f"p_distant={p} hors de [0, 1].")
    return p


def p_local(fab: FabricSpec) -> float:
    eta = path_transmission(local_path_depth(fab.m), fab, fab.coupling_loss_db) * fab.detector_efficiency
    return BARRETT_KOK_HERALD_FACTOR * eta * eta


def timings(ch: ChannelSpec) -> tuple[float, float]:
    """``(t_distant, t_local)``: heralding round trip to the station plus state preparation."""
    t_distant = 2 * ch.one_way_delay + ch.prep_time
    return t_distant, ch.prep_time


def correction_latency(*channels: ChannelSpec) -> float:
    return max((ch.one_way_delay for ch in channels), default=0.0)


def mismatch_scale(m: int, p: float) -> float:
    """Standard deviation of the per-cycle success difference between two banks of m/2 registers."""
    return math.sqrt(m * p * (1 - p))
