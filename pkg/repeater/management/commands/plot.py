from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from repeater.cli import EXIT_CONFIG, write_output
from repeater.exceptions import PlotError
from repeater.plots import PLOT_KINDS, emit_plot


class Command(BaseCommand):
    help = "Draw a sweep CSV as an SVG figure."

    def add_arguments(self, parser):
        parser.add_argument("csv", help="CSV produced by the sweep command.")
        parser.add_argument("--kind", choices=PLOT_KINDS, default="rate")
        parser.add_argument("--out", default="plot.svg", help="SVG file (default: plot.svg).")

    def handle(self, *args, **options):
        try:
            text = Path(options["csv"]).read_text(encoding="utf-8")
        except OSError as exc:
            raise CommandError(f"Lecture impossible de {options['csv']}: {exc}", returncode=EXIT_CONFIG) from exc
        try:
            document = emit_plot(text, options["kind"])
        except PlotError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        path = write_output(options["out"], document)
        self.stdout.write(self.style.SUCCESS(f"Graphique {options['kind']} écrit dans {path}"))
