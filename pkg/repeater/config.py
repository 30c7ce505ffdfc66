"""Simulation documents: flat ``key = value`` files parsed into a validated :class:`SimConfig`.

Every key is declared in :data:`PARAMETER_TABLE` with its default and where the
default comes from (``published``, ``placeholder`` or ``harness``). Unknown keys,
duplicated keys and missing required keys are rejected with the offending line.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Callable

from .exceptions import ConfigError
from .fabric import ChannelSpec, FabricSpec, next_power_of_two
from .noise import AttemptNoiseParams, CoherenceParams, OpNoiseParams

ARCHITECTURES = ("router", "routerless")
LINK_PROTOCOL_NAMES = ("barrett_kok", "single_click")
AUTO = "auto"

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


@dataclass(frozen=True)
class Flags:
    serialize_local: bool = True
    client_decoherence_during_correction: bool = False
    both_nuclei_attempt_noise: bool = True
    cycle_synchronized: bool = True
    routerless_fabric_depth: bool = False


@dataclass(frozen=True)
class CoherenceSet:
    electron: CoherenceParams = CoherenceParams(T1=3600.0, T2=1.0)
    nuclear: CoherenceParams = CoherenceParams(T1=36000.0, T2=1.0)
    client: CoherenceParams = CoherenceParams(T1=math.inf, T2=math.inf)

    def by_role(self) -> dict[str, CoherenceParams]:
        return {"electron": self.electron, "nuclear": self.nuclear, "client": self.client}


@dataclass(frozen=True)
class LinkSettings:
    protocol: str = "barrett_kok"
    bright_state_population: float = 0.1
    p_distant: float | None = None
    p_local: float | None = None


@dataclass(frozen=True)
class SimConfig:
    architecture: str
    m: int
    fabric: FabricSpec = field(default_factory=FabricSpec)
    channel_left: ChannelSpec = field(default_factory=ChannelSpec)
    channel_right: ChannelSpec = field(default_factory=ChannelSpec)
    coherence: CoherenceSet = field(default_factory=CoherenceSet)
    attempt_noise: AttemptNoiseParams = field(default_factory=AttemptNoiseParams)
    op_noise: OpNoiseParams = field(default_factory=OpNoiseParams)
    link: LinkSettings = field(default_factory=LinkSettings)
    swap_time: float = 1e-6
    left_bank_size: int | None = None
    flags: Flags = field(default_factory=Flags)
    master_seed: int = 1
    n_pairs: int = 500
    t_max: float = 0.0
    fabric_m_explicit: bool = False

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"Architecture inconnue '{self.architecture}'.", key="architecture")
        if self.m < 1:
            raise ConfigError(f"m={self.m} doit être ≥ 1.", key="m")
        if self.architecture == "router":
            if self.m < 2 or self.m % 2:
                raise ConfigError(f"Le routeur exige m pair et ≥ 2 (m={self.m}).", key="m")
            if not 1 <= self.bank_size("left") <= self.m - 1:
                raise ConfigError(
                    f"router.left_bank_size={self.left_bank_size} hors de [1, {self.m - 1}].",
                    key="router.left_bank_size",
                )
        if self.fabric.m < self.m:
            raise ConfigError(f"fabric.m={self.fabric.m} inférieur à m={self.m}.", key="fabric.m")
        if self.n_pairs < 0 or self.t_max < 0:
            raise ConfigError("n_pairs et t_max doivent être positifs.", key="n_pairs")
        if self.n_pairs < 1 and not self.t_max > 0:
            raise ConfigError("Critère d'arrêt absent: n_pairs ≥ 1 ou t_max > 0 requis.", key="n_pairs")
        if not self.swap_time > 0:
            raise ConfigError("timing.swap_time doit être > 0.", key="timing.swap_time")
        if self.link.protocol not in LINK_PROTOCOL_NAMES:
            raise ConfigError(f"Protocole de lien inconnu '{self.link.protocol}'.", key="link.protocol")
        if not 0 < self.link.bright_state_population < 0.5:
            raise ConfigError("link.bright_state_population doit appartenir à ]0, 0.5[.",
                              key="link.bright_state_population")
        for name in ("p_distant", "p_local"):
            value = getattr(self.link, name)
            if value is not None and not 0 < value <= 1:
                raise ConfigError(f"link.{name}={value} hors de ]0, 1].", key=f"link.{name}")

    def bank_size(self, bank: str) -> int:
        left = self.left_bank_size if self.left_bank_size is not None else self.m // 2
        return left if bank == "left" else self.m - left

    def replace(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @property
    def channels(self) -> tuple[ChannelSpec, ChannelSpec]:
        return self.channel_left, self.channel_right


@dataclass(frozen=True)
class ParamSpec:
    key: str
    default: str
    kind: str
    provenance: str
    note: str = ""

    @property
    def required(self) -> bool:
        return self.default == ""


PARAMETER_TABLE: tuple[ParamSpec, ...] = (
    ParamSpec("architecture", "", "choice", "required", "router | routerless"),
    ParamSpec("m", "", "int", "required", "registres du répéteur (pair pour le routeur)"),
    ParamSpec("master_seed", "1", "int", "harness"),
    ParamSpec("n_pairs", "500", "int", "harness", "paires livrées par run (0 = désactivé)"),
    ParamSpec("t_max", "0", "float", "harness", "durée simulée max en s (0 = désactivé)"),
    ParamSpec("fabric.m", AUTO, "int_auto", "harness", "ports de la puce (auto = puissance de 2 ≥ m)"),
    ParamSpec("fabric.k", "2", "int", "published", "degré du nœud"),
    ParamSpec("fabric.loss_per_mzi_db", "0.3", "float", "placeholder"),
    ParamSpec("fabric.coupling_loss_db", "1.0", "float", "placeholder"),
    ParamSpec("fabric.conversion_loss_db", "3.0", "float", "placeholder"),
    ParamSpec("fabric.detector_efficiency", "0.9", "float", "placeholder"),
    ParamSpec("channel.length_km", "10", "float", "published", "grille 1, 10, 20, 30 km"),
    ParamSpec("channel.left.length_km", AUTO, "float_auto", "harness", "= channel.length_km"),
    ParamSpec("channel.right.length_km", AUTO, "float_auto", "harness", "= channel.length_km"),
    ParamSpec("channel.attenuation_db_per_km", "0.2", "float", "placeholder"),
    ParamSpec("channel.fiber_light_speed", "2e8", "float", "placeholder", "m/s"),
    ParamSpec("channel.prep_time", "6e-6", "float", "placeholder", "s"),
    ParamSpec("channel.client_efficiency", "1.0", "float", "placeholder"),
    ParamSpec("timing.swap_time", "1e-6", "float", "placeholder", "transfert électron → noyau, s"),
    ParamSpec("link.protocol", "barrett_kok", "choice", "harness", "barrett_kok | single_click"),
    ParamSpec("link.bright_state_population", "0.1", "float", "placeholder", "single_click uniquement"),
    ParamSpec("link.p_distant", AUTO, "float_auto", "harness", "forçage de p_distant"),
    ParamSpec("link.p_local", AUTO, "float_auto", "harness", "forçage de p_local"),
    ParamSpec("coherence.electron.T1", "3600", "float", "placeholder", "s"),
    ParamSpec("coherence.electron.T2", "1.0", "float", "placeholder", "s"),
    ParamSpec("coherence.nuclear.T1", "36000", "float", "placeholder", "s"),
    ParamSpec("coherence.nuclear.T2", "1.0", "float", "placeholder", "s"),
    ParamSpec("coherence.client.T1", "inf", "float", "placeholder", "s"),
    ParamSpec("coherence.client.T2", "inf", "float", "placeholder", "s"),
    ParamSpec("attempt_noise.a", "0.00025", "float", "published", "a ≈ 1/4000"),
    ParamSpec("attempt_noise.b", "0.0002", "float", "published", "b ≈ 1/5000"),
    ParamSpec("op_noise.p_gate", "0.01", "float", "placeholder"),
    ParamSpec("op_noise.p_swap", "0.01", "float", "placeholder"),
    ParamSpec("op_noise.eps_ro", "0.005", "float", "placeholder"),
    ParamSpec("router.left_bank_size", AUTO, "int_auto", "published", "m/2"),
    ParamSpec("flags.serialize_local", "true", "bool", "harness"),
    ParamSpec("flags.client_decoherence_during_correction", "false", "bool", "harness"),
    ParamSpec("flags.both_nuclei_attempt_noise", "true", "bool", "harness"),
    ParamSpec("flags.cycle_synchronized", "true", "bool", "harness"),
    ParamSpec("flags.routerless_fabric_depth", "false", "bool", "harness"),
)

PARAMETERS = {spec.key: spec for spec in PARAMETER_TABLE}

CHOICES = {"architecture": ARCHITECTURES, "link.protocol": LINK_PROTOCOL_NAMES}


def _to_float(raw: str) -> float:
    value = float(raw)
    if math.isnan(value):
        raise ValueError("nan")
    return value


def _convert(spec: ParamSpec, raw: str) -> Any:
    if spec.kind.endswith("_auto") and raw.lower() == AUTO:
        return None
    kind = spec.kind.removesuffix("_auto")
    if kind == "bool":
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"booléen attendu, reçu '{raw}'")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return _to_float(raw)
    if kind == "choice":
        if raw not in CHOICES[spec.key]:
            raise ValueError(f"valeur '{raw}' hors de {', '.join(CHOICES[spec.key])}")
        return raw
    raise ValueError(f"type '{spec.kind}' non géré")


def read_document(text: str) -> dict[str, tuple[Any, int]]:
    """Returns ``{key: (typed value, line number)}`` for every assignment of the document."""
    values: dict[str, tuple[Any, int]] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"Ligne sans '=': {raw_line.strip()!r}.", line=number)
        key, _, raw = (part.strip() for part in line.partition("="))
        spec = PARAMETERS.get(key)
        if spec is None:
            raise ConfigError("Clé inconnue.", key=key, line=number)
        if key in values:
            raise ConfigError(
                f"Clé dupliquée (déjà définie ligne {values[key][1]}).", key=key, line=number
            )
        if not raw:
            raise ConfigError("Valeur vide.", key=key, line=number)
        try:
            values[key] = (_convert(spec, raw), number)
        except ValueError as exc:
            raise ConfigError(f"Valeur invalide '{raw}': {exc}.", key=key, line=number) from exc
    for spec in PARAMETER_TABLE:
        if spec.required and spec.key not in values:
            raise ConfigError("Clé obligatoire manquante.", key=spec.key)
    return values


class _Resolver:
    def __init__(self, values: dict[str, tuple[Any, int]]):
        self.values = values

    def get(self, key: str) -> Any:
        if key in self.values:
            return self.values[key][0]
        spec = PARAMETERS[key]
        return _convert(spec, spec.default)

    def build(self, keys: tuple[str, ...], factory: Callable[[], Any]) -> Any:
        """Calls ``factory`` and pins any invariant failure on the first explicit key of ``keys``."""
        try:
            return factory()
        except ConfigError as exc:
            key = exc.key or next((key for key in keys if key in self.values), keys[0])
            line = exc.line or (self.values[key][1] if key in self.values else None)
            raise ConfigError(exc.message, key=key, line=line) from exc


def _coherence(resolve: _Resolver, role: str) -> CoherenceParams:
    keys = (f"coherence.{role}.T2", f"coherence.{role}.T1")
    return resolve.build(keys, lambda: CoherenceParams(T1=resolve.get(keys[1]), T2=resolve.get(keys[0])))


def _channel(resolve: _Resolver, side: str) -> ChannelSpec:
    length = resolve.get(f"channel.{side}.length_km")
    if length is None:
        length = resolve.get("channel.length_km")
    keys = (f"channel.{side}.length_km", "channel.length_km", "channel.attenuation_db_per_km",
            "channel.fiber_light_speed", "channel.prep_time", "channel.client_efficiency")
    return resolve.build(keys, lambda: ChannelSpec(
        length_km=length,
        attenuation_db_per_km=resolve.get("channel.attenuation_db_per_km"),
        fiber_light_speed=resolve.get("channel.fiber_light_speed"),
        prep_time=resolve.get("channel.prep_time"),
        client_efficiency=resolve.get("channel.client_efficiency"),
    ))


def parse_config(text: str) -> SimConfig:
    values = read_document(text)
    resolve = _Resolver(values)
    m = resolve.get("m")
    fabric_m = resolve.get("fabric.m")
    fabric = resolve.build(
        ("fabric.m", "fabric.k", "fabric.loss_per_mzi_db", "fabric.coupling_loss_db",
         "fabric.conversion_loss_db", "fabric.detector_efficiency"),
        lambda: FabricSpec(
            m=fabric_m if fabric_m is not None else next_power_of_two(max(m, 2)),
            k=resolve.get("fabric.k"),
            loss_per_mzi_db=resolve.get("fabric.loss_per_mzi_db"),
            coupling_loss_db=resolve.get("fabric.coupling_loss_db"),
            conversion_loss_db=resolve.get("fabric.conversion_loss_db"),
            detector_efficiency=resolve.get("fabric.detector_efficiency"),
        ),
    )
    coherence = CoherenceSet(
        electron=_coherence(resolve, "electron"),
        nuclear=_coherence(resolve, "nuclear"),
        client=_coherence(resolve, "client"),
    )
    attempt_noise = resolve.build(
        ("attempt_noise.a", "attempt_noise.b"),
        lambda: AttemptNoiseParams(a=resolve.get("attempt_noise.a"), b=resolve.get("attempt_noise.b")),
    )
    op_noise = resolve.build(
        ("op_noise.p_gate", "op_noise.eps_ro", "op_noise.p_swap"),
        lambda: OpNoiseParams(
            p_gate=resolve.get("op_noise.p_gate"),
            eps_ro=resolve.get("op_noise.eps_ro"),
            p_swap=resolve.get("op_noise.p_swap"),
        ),
    )
    link = LinkSettings(
        protocol=resolve.get("link.protocol"),
        bright_state_population=resolve.get("link.bright_state_population"),
        p_distant=resolve.get("link.p_distant"),
        p_local=resolve.get("link.p_local"),
    )
    flags = Flags(**{
        flag.name: resolve.get(f"flags.{flag.name}") for flag in dataclasses.fields(Flags)
    })
    top_level = ("m", "architecture", "router.left_bank_size", "fabric.m", "n_pairs", "t_max",
                 "timing.swap_time", "link.protocol", "link.bright_state_population",
                 "link.p_distant", "link.p_local")
    return resolve.build(top_level, lambda: SimConfig(
        architecture=resolve.get("architecture"),
        m=m,
        fabric=fabric,
        channel_left=_channel(resolve, "left"),
        channel_right=_channel(resolve, "right"),
        coherence=coherence,
        attempt_noise=attempt_noise,
        op_noise=op_noise,
        link=link,
        swap_time=resolve.get("timing.swap_time"),
        left_bank_size=resolve.get("router.left_bank_size"),
        flags=flags,
        master_seed=resolve.get("master_seed"),
        n_pairs=resolve.get("n_pairs"),
        t_max=resolve.get("t_max"),
        fabric_m_explicit=fabric_m is not None,
    ))


def _format(value: Any) -> str:
    if value is None:
        return AUTO
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def config_values(config: SimConfig) -> dict[str, Any]:
    values = {
        "architecture": config.architecture,
        "m": config.m,
        "master_seed": config.master_seed,
        "n_pairs": config.n_pairs,
        "t_max": float(config.t_max),
        "fabric.m": config.fabric.m if config.fabric_m_explicit else None,
        "fabric.k": config.fabric.k,
        "fabric.loss_per_mzi_db": config.fabric.loss_per_mzi_db,
        "fabric.coupling_loss_db": config.fabric.coupling_loss_db,
        "fabric.conversion_loss_db": config.fabric.conversion_loss_db,
        "fabric.detector_efficiency": config.fabric.detector_efficiency,
        "channel.length_km": config.channel_left.length_km,
        "channel.left.length_km": config.channel_left.length_km,
        "channel.right.length_km": config.channel_right.length_km,
        "channel.attenuation_db_per_km": config.channel_left.attenuation_db_per_km,
        "channel.fiber_light_speed": config.channel_left.fiber_light_speed,
        "channel.prep_time": config.channel_left.prep_time,
        "channel.client_efficiency": config.channel_left.client_efficiency,
        "timing.swap_time": config.swap_time,
        "link.protocol": config.link.protocol,
        "link.bright_state_population": config.link.bright_state_population,
        "link.p_distant": config.link.p_distant,
        "link.p_local": config.link.p_local,
        "attempt_noise.a": config.attempt_noise.a,
        "attempt_noise.b": config.attempt_noise.b,
        "op_noise.p_gate": config.op_noise.p_gate,
        "op_noise.p_swap": config.op_noise.p_swap,
        "op_noise.eps_ro": config.op_noise.eps_ro,
        "router.left_bank_size": config.left_bank_size,
    }
    for role, params in config.coherence.by_role().items():
        values[f"coherence.{role}.T1"] = params.T1
        values[f"coherence.{role}.T2"] = params.T2
    for flag in dataclasses.fields(Flags):
        values[f"flags.{flag.name}"] = getattr(config.flags, flag.name)
    return values


def config_to_text(config: SimConfig) -> str:
    """Serialises ``config`` back into a document that :func:`parse_config` accepts."""
    values = config_values(config)
    return "".join(f"{spec.key} = {_format(values[spec.key])}\n" for spec in PARAMETER_TABLE)


def defaults_table() -> list[ParamSpec]:
    return list(PARAMETER_TABLE)


def with_length(config: SimConfig, length_km: float) -> SimConfig:
    return config.replace(
        channel_left=dataclasses.replace(config.channel_left, length_km=length_km),
        channel_right=dataclasses.replace(config.channel_right, length_km=length_km),
    )


def with_m(config: SimConfig, m: int, *, fabric_m: int | None = None, architecture: str | None = None) -> SimConfig:
    """Same document with ``m`` registers.

    An explicit ``fabric.m`` is kept; otherwise the chip is sized by ``fabric_m`` when
    given (one chip for a whole sweep) or follows ``m``.
    """
    architecture = architecture or config.architecture
    fabric, explicit = config.fabric, config.fabric_m_explicit
    if not explicit:
        if fabric_m is not None:
            fabric, explicit = dataclasses.replace(fabric, m=fabric_m), True
        else:
            fabric = dataclasses.replace(fabric, m=next_power_of_two(max(m, 2)))
    left = config.left_bank_size
    if left is not None and not 1 <= left <= m - 1:
        left = None
    return config.replace(
        architecture=architecture, m=m, fabric=fabric, left_bank_size=left, fabric_m_explicit=explicit
    )
