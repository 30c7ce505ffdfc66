from django.core.management.base import BaseCommand, CommandError

from repeater.cli import EXIT_CONFIG, EXIT_ORACLE, EXIT_SIMULATION, load_config
from repeater.exceptions import OracleError, RepeaterError
from repeater.oracles import SCENARIOS, oracle_check


class Command(BaseCommand):
    help = "Compare simulator statistics with a closed-form scenario."

    def add_arguments(self, parser):
        parser.add_argument("scenario", help=f"One of: {', '.join(SCENARIOS)}.")
        parser.add_argument("config", help="Base simulation document.")
        parser.add_argument("--pairs", type=int, help="Override n_pairs for the scenario run.")

    def handle(self, *args, **options):
        config = load_config(options["config"])
        if options.get("pairs"):
            config = config.replace(n_pairs=options["pairs"], t_max=0.0)
        try:
            report = oracle_check(options["scenario"], config)
        except OracleError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        except RepeaterError as exc:
            raise CommandError(str(exc), returncode=EXIT_SIMULATION) from exc

        if not report.passed:
            raise CommandError(
                f"Oracle en échec (|z| > {report.z_limit:g}): {report.summary()}", returncode=EXIT_ORACLE
            )
        self.stdout.write(self.style.SUCCESS(report.summary()))
