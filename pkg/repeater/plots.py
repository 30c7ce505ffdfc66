"""SVG figures built from a sweep CSV: rate, router infidelity and infidelity ratio against m."""
from __future__ import annotations

import io
import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .exceptions import CsvSchemaError, PlotError  # noqa: E402
from .sweep import SummaryRow, parse_csv  # noqa: E402

PLOT_KINDS = ("rate", "infidelity", "ratio")

# Fixed ids and no timestamp, so the same CSV always gives the same bytes.
_RC = {"svg.hashsalt": "repeater-plots", "svg.fonttype": "path"}


def _series(rows: list[SummaryRow], architecture: str | None = None) -> dict[tuple[str, float], list[SummaryRow]]:
    grouped: dict[tuple[str, float], list[SummaryRow]] = defaultdict(list)
    for row in rows:
        if architecture is None or row.architecture == architecture:
            grouped[(row.architecture, row.L_km)].append(row)
    return {key: sorted(value, key=lambda r: r.m) for key, value in sorted(grouped.items())}


def _rate(ax, rows: list[SummaryRow]) -> None:
    for (architecture, length), series in _series(rows).items():
        ax.errorbar(
            [r.m for r in series], [r.rate_hz_mean for r in series], yerr=[r.rate_hz_sem for r in series],
            marker="o" if architecture == "router" else "s", capsize=3,
            label=f"{architecture}, L={length:g} km",
        )
    ax.set_ylabel("Débit d'intrication (Hz)")


def _infidelity(ax, rows: list[SummaryRow]) -> None:
    series_by_length = _series(rows, "router")
    if not series_by_length:
        raise PlotError("Aucune ligne 'router' dans le CSV.")
    plateau = []
    for (_, length), series in series_by_length.items():
        ax.errorbar(
            [r.m for r in series], [r.infidelity_mean for r in series], yerr=[r.fidelity_sem for r in series],
            marker="o", capsize=3, label=f"router, L={length:g} km",
        )
        plateau.append(series[-1].infidelity_mean)
    ax.axhline(sum(plateau) / len(plateau), linestyle="--", color="grey", label="plateau (m max)")
    ax.set_ylabel("Infidélité du routeur")


def _ratio(ax, rows: list[SummaryRow]) -> None:
    by_point: dict[tuple[float, int], dict[str, SummaryRow]] = defaultdict(dict)
    for row in rows:
        by_point[(row.L_km, row.m)][row.architecture] = row
    lines: dict[float, list[tuple[int, float, float]]] = defaultdict(list)
    for (length, m), pair in sorted(by_point.items()):
        if set(pair) != {"router", "routerless"}:
            raise PlotError(f"Point m={m}, L={length:g} km sans les deux architectures.")
        router, routerless = pair["router"], pair["routerless"]
        if routerless.infidelity_mean <= 0 or router.infidelity_mean <= 0:
            raise PlotError(f"Infidélité nulle au point m={m}, L={length:g} km: rapport indéfini.")
        ratio = router.infidelity_mean / routerless.infidelity_mean
        spread = ratio * math.hypot(
            router.fidelity_sem / router.infidelity_mean, routerless.fidelity_sem / routerless.infidelity_mean
        )
        lines[length].append((m, ratio, spread))
    for length, points in lines.items():
        ax.errorbar([p[0] for p in points], [p[1] for p in points], yerr=[p[2] for p in points],
                    marker="o", capsize=3, label=f"L={length:g} km")
    ax.axhline(1.0, linestyle=":", color="grey")
    ax.set_ylabel("Infidélité routeur / sans routeur")


_DRAW = {"rate": _rate, "infidelity": _infidelity, "ratio": _ratio}


def emit_plot(csv_text: str, kind: str) -> str:
    """Returns the SVG document of ``kind`` drawn from a sweep CSV."""
    if kind not in _DRAW:
        raise PlotError(f"Type de graphique inconnu '{kind}' ({', '.join(PLOT_KINDS)}).")
    try:
        rows = parse_csv(csv_text)
    except CsvSchemaError as exc:
        raise PlotError(str(exc)) from exc
    if not rows:
        raise PlotError("CSV sans ligne de résultat.")
    buffer = io.StringIO()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        try:
            _DRAW[kind](ax, rows)
            ax.set_xscale("log", base=2)
            ax.set_xlabel("Registres m")
            ax.legend(fontsize="small")
            ax.grid(True, alpha=0.3)
            fig.tight_layout()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buffer.getvalue()
