from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from repeater.cli import EXIT_CONFIG, EXIT_SIMULATION, load_config, parse_list, write_output
from repeater.config import ARCHITECTURES
from repeater.exceptions import ConfigError, RepeaterError, SweepAborted
from repeater.sweep import SweepGrid, sweep


class Command(BaseCommand):
    help = "Sweep (architecture, L, m) from a base document and write the results CSV."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Base simulation document.")
        parser.add_argument("--m", default="2,4,8,16", help="Register counts, comma separated.")
        parser.add_argument("--L", dest="lengths", default="1,10,20,30", help="Link lengths in km.")
        parser.add_argument(
            "--arch",
            default="both",
            choices=("both",) + ARCHITECTURES,
            help="Architectures to sweep (default: both).",
        )
        parser.add_argument("--runs", type=int, help="Runs per point (default: REPEATER_RUNS_PER_POINT).")
        parser.add_argument("--out", help="CSV file; printed on stdout when omitted.")
        parser.add_argument(
            "--celery",
            action="store_true",
            help="Dispatch points as Celery tasks instead of running them in this process.",
        )

    def handle(self, *args, **options):
        base = load_config(options["config"])
        architectures = ARCHITECTURES if options["arch"] == "both" else (options["arch"],)
        runs = options["runs"] or settings.REPEATER_RUNS_PER_POINT
        try:
            grid = SweepGrid(
                m_values=parse_list(options["m"], int, "--m"),
                lengths_km=parse_list(options["lengths"], float, "--L"),
                architectures=architectures,
                runs_per_point=runs,
            )
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc

        inline = settings.REPEATER_SWEEP_INLINE_RUN and not options["celery"]
        try:
            document = sweep(grid, base, inline=inline)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        except SweepAborted as exc:
            if options.get("out"):
                path = write_output(options["out"], exc.partial_csv)
                self.stderr.write(f"CSV partiel écrit dans {path}")
            raise CommandError(f"Balayage interrompu: {exc}", returncode=EXIT_SIMULATION) from exc
        except RepeaterError as exc:
            raise CommandError(str(exc), returncode=EXIT_SIMULATION) from exc

        if options.get("out"):
            path = write_output(options["out"], document)
            points = len(document.splitlines()) - 1
            self.stdout.write(self.style.SUCCESS(f"{points} points écrits dans {path}"))
        else:
            self.stdout.write(document, ending="")
