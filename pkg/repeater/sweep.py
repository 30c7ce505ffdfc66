"""Independent runs per point, (architecture, L, m) sweeps and the results CSV."""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import stats

from .config import ARCHITECTURES, SimConfig, config_to_text, with_length, with_m
from .engine import derive_seed
from .exceptions import ConfigError, CsvSchemaError, RepeaterError, SimulationError, SweepAborted
from .fabric import next_power_of_two
from .noise import AttemptNoiseParams, CoherenceParams, OpNoiseParams
from .protocol import RunResult, build_links, simulate

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "architecture",
    "m",
    "L_km",
    "runs",
    "rate_hz_mean",
    "rate_hz_sem",
    "fidelity_mean",
    "fidelity_sem",
    "infidelity_mean",
    "mean_idle_cycles",
    "mean_stored_attempts",
    "master_seed",
)
PARTIAL_MARKER = "# PARTIAL"


@dataclass(frozen=True)
class SummaryRow:
    architecture: str
    m: int
    L_km: float
    runs: int
    rate_hz_mean: float
    rate_hz_sem: float
    fidelity_mean: float
    fidelity_sem: float
    infidelity_mean: float
    mean_idle_cycles: float
    mean_stored_attempts: float
    master_seed: int

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SweepGrid:
    m_values: tuple[int, ...]
    lengths_km: tuple[float, ...]
    architectures: tuple[str, ...] = ARCHITECTURES
    runs_per_point: int = 3

    def __post_init__(self):
        if not self.m_values or not self.lengths_km or not self.architectures:
            raise ConfigError("Grille de balayage vide.")
        unknown = [arch for arch in self.architectures if arch not in ARCHITECTURES]
        if unknown:
            raise ConfigError(f"Architecture(s) inconnue(s): {', '.join(unknown)}.")
        if self.runs_per_point < 1:
            raise ConfigError(f"runs={self.runs_per_point} doit être ≥ 1.")

    def points(self) -> Iterator[tuple[str, float, int]]:
        """Grid order: architecture, then L, then m."""
        for architecture in self.architectures:
            for length in self.lengths_km:
                for m in self.m_values:
                    yield architecture, length, m

    @property
    def fabric_m(self) -> int:
        return next_power_of_two(max(max(self.m_values), 2))


def sem(values: Sequence[float]) -> float:
    """Sample standard deviation over √n; zero for a single value."""
    if len(values) < 2:
        return 0.0
    return float(stats.sem(np.asarray(values, dtype=float), ddof=1))


def run_seeds(master_seed: int, runs: int) -> list[int]:
    return [derive_seed(master_seed, f"run{index}") for index in range(runs)]


def summarize(config: SimConfig, results: Sequence[RunResult]) -> SummaryRow:
    rates = [result.rate for result in results]
    fidelities = [float(np.mean([r.fidelity for r in result.records])) if result.records else 0.0
                  for result in results]
    records = [record for result in results for record in result.records]
    fidelity_mean = float(np.mean(fidelities))
    return SummaryRow(
        architecture=config.architecture,
        m=config.m,
        L_km=float(config.channel_left.length_km),
        runs=len(results),
        rate_hz_mean=float(np.mean(rates)),
        rate_hz_sem=sem(rates),
        fidelity_mean=fidelity_mean,
        fidelity_sem=sem(fidelities),
        infidelity_mean=1.0 - fidelity_mean,
        mean_idle_cycles=float(np.mean([r.idle_cycles for r in records])) if records else 0.0,
        mean_stored_attempts=float(np.mean([r.stored_attempts for r in records])) if records else 0.0,
        master_seed=config.master_seed,
    )


def run_many(config: SimConfig, runs: int) -> list[RunResult]:
    results = []
    for index, seed in enumerate(run_seeds(config.master_seed, runs)):
        try:
            results.append(simulate(config, master_seed=seed))
        except RepeaterError as exc:
            logger.exception("Run %d de %s m=%d en échec.", index, config.architecture, config.m)
            raise SimulationError(str(exc), run_index=index) from exc
    return results


def run_point(config: SimConfig, runs: int) -> SummaryRow:
    if runs < 1:
        raise ConfigError(f"runs={runs} doit être ≥ 1.")
    row = summarize(config, run_many(config, runs))
    logger.info(
        "%s m=%d L=%s km: %.6g Hz, F=%.6f (%d runs).",
        row.architecture, row.m, row.L_km, row.rate_hz_mean, row.fidelity_mean, runs,
    )
    return row


def point_configs(grid: SweepGrid, base: SimConfig) -> list[SimConfig]:
    """One config per grid point; every point shares a chip sized for the largest m."""
    return [
        with_m(with_length(base, length), m, fabric_m=grid.fabric_m, architecture=architecture)
        for architecture, length, m in grid.points()
    ]


def slow_local_points(configs: Iterable[SimConfig]) -> list[SimConfig]:
    """Router points whose shared chip makes the local link no faster than a distant one."""
    return [
        config
        for config in configs
        if config.architecture == "router" and not build_links(config).local_is_faster
    ]


def _format_cell(value) -> str:
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(rows: Iterable[SummaryRow], *, partial: str | None = None) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        values = row.as_dict()
        writer.writerow([_format_cell(values[column]) for column in CSV_HEADER])
    if partial is not None:
        buffer.write(f"{PARTIAL_MARKER}: {partial}\n")
    return buffer.getvalue()


def parse_csv(text: str) -> list[SummaryRow]:
    lines = [line for line in text.splitlines() if line and not line.startswith("#")]
    if not lines:
        raise CsvSchemaError("CSV vide.")
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    header = tuple(reader.fieldnames or ())
    missing = [column for column in CSV_HEADER if column not in header]
    if missing:
        raise CsvSchemaError(f"Colonnes manquantes: {', '.join(missing)}.")
    types = {f.name: f.type for f in dataclasses.fields(SummaryRow)}
    converters = {"str": str, "int": int, "float": float}
    rows = []
    for number, raw in enumerate(reader, start=2):
        try:
            rows.append(SummaryRow(**{
                column: converters[types[column]](raw[column]) for column in CSV_HEADER
            }))
        except (TypeError, ValueError) as exc:
            raise CsvSchemaError(f"Ligne {number} illisible: {exc}.") from exc
    return rows


def _dispatch_celery(configs: list[SimConfig], runs: int) -> Iterator[SummaryRow]:
    from .tasks import simulate_point

    pending = [simulate_point.delay(config_to_text(config), runs) for config in configs]
    for result in pending:
        yield SummaryRow(**result.get())


def sweep(grid: SweepGrid, base: SimConfig, *, inline: bool = True) -> str:
    """Runs every grid point and returns the CSV document.

    Rows follow :meth:`SweepGrid.points` whatever the completion order. A failing
    point aborts the sweep with :class:`SweepAborted` carrying the partial CSV.
    """
    configs = point_configs(grid, base)
    for config in slow_local_points(configs):
        logger.warning(
            "Puce de %d ports: p_local ne dépasse pas p_distant pour m=%d à L=%s km.",
            config.fabric.m,
            config.m,
            config.channel_left.length_km,
        )
    rows: list[SummaryRow] = []
    if inline:
        produced = (run_point(config, grid.runs_per_point) for config in configs)
    else:
        produced = _dispatch_celery(configs, grid.runs_per_point)
    try:
        for row in produced:
            rows.append(row)
    except RepeaterError as exc:
        failed = configs[len(rows)]
        message = f"{failed.architecture} m={failed.m} L={failed.channel_left.length_km} km: {exc}"
        logger.error("Balayage interrompu au point %d/%d: %s", len(rows) + 1, len(configs), message)
        raise SweepAborted(message, partial_csv=write_csv(rows, partial=message)) from exc
    return write_csv(rows)


INFIDELITY_SOURCES = ("idle_decoherence", "attempt_noise", "gates_readout")


def isolate_source(config: SimConfig, source: str) -> SimConfig:
    """``config`` with every infidelity source switched off except ``source``."""
    if source not in INFIDELITY_SOURCES:
        raise ConfigError(f"Source d'infidélité inconnue '{source}'.")
    perfect = CoherenceParams.perfect()
    changes = {}
    if source != "idle_decoherence":
        changes["coherence"] = dataclasses.replace(
            config.coherence, electron=perfect, nuclear=perfect, client=perfect
        )
    if source != "attempt_noise":
        changes["attempt_noise"] = AttemptNoiseParams(a=0.0, b=0.0)
    if source != "gates_readout":
        changes["op_noise"] = OpNoiseParams(p_gate=0.0, eps_ro=0.0, p_swap=0.0)
    return config.replace(**changes)


def infidelity_breakdown(config: SimConfig, runs: int) -> list[tuple[str, SummaryRow]]:
    """Point rerun once per infidelity source, plus the full model under ``all``."""
    rows = [(source, run_point(isolate_source(config, source), runs)) for source in INFIDELITY_SOURCES]
    rows.append(("all", run_point(config, runs)))
    return rows


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> dict[str, float]:
    fit = stats.linregress(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float))
    return {
        "slope": float(fit.slope),
        "intercept": float(fit.intercept),
        "r_squared": float(fit.rvalue ** 2) if not math.isnan(fit.rvalue) else 0.0,
        "slope_stderr": float(fit.stderr),
        "intercept_stderr": float(fit.intercept_stderr),
    }
