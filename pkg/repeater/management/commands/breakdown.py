from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from repeater.cli import EXIT_CONFIG, EXIT_SIMULATION, load_config
from repeater.exceptions import ConfigError, RepeaterError
from repeater.sweep import infidelity_breakdown


class Command(BaseCommand):
    help = "Rerun one point with each infidelity source isolated (idle decoherence, attempt noise, gates+readout)."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Simulation document.")
        parser.add_argument("--runs", type=int, help="Runs per source (default: REPEATER_RUNS_PER_POINT).")

    def handle(self, *args, **options):
        config = load_config(options["config"])
        runs = options["runs"] or settings.REPEATER_RUNS_PER_POINT
        try:
            rows = infidelity_breakdown(config, runs)
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        except RepeaterError as exc:
            raise CommandError(str(exc), returncode=EXIT_SIMULATION) from exc

        self.stdout.write(f"{config.architecture}, m={config.m}, L={config.channel_left.length_km:g} km, {runs} run(s)")
        for source, row in rows:
            self.stdout.write(
                f"{source:<18} infidélité={row.infidelity_mean:.6g} ± {row.fidelity_sem:.2g}"
                f"  débit={row.rate_hz_mean:.6g} Hz"
            )
        total = dict(rows)["all"].infidelity_mean
        partial = sum(row.infidelity_mean for source, row in rows if source != "all")
        self.stdout.write(self.style.SUCCESS(f"Somme des sources: {partial:.6g} (modèle complet: {total:.6g})"))
