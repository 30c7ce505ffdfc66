from django.core.management.base import BaseCommand

from repeater.config import defaults_table


class Command(BaseCommand):
    help = "Print every simulation parameter with its default and provenance."

    def add_arguments(self, parser):
        parser.add_argument(
            "--conf",
            action="store_true",
            help="Print a ready-to-edit document instead of the table.",
        )

    def handle(self, *args, **options):
        table = defaults_table()
        if options["conf"]:
            for spec in table:
                value = spec.default or "<obligatoire>"
                note = f"  # {spec.provenance}" + (f", {spec.note}" if spec.note else "")
                line = f"{spec.key} = {value}{note}"
                self.stdout.write(line if spec.default else f"# {line}")
            return

        width = max(len(spec.key) for spec in table)
        self.stdout.write(f"{'clé'.ljust(width)}  {'défaut':<12} {'provenance':<12} note")
        for spec in table:
            default = spec.default or "(obligatoire)"
            self.stdout.write(f"{spec.key.ljust(width)}  {default:<12} {spec.provenance:<12} {spec.note}")
        self.stdout.write(
            "published = valeur mesurée publiée; placeholder = valeur d'attente documentée; harness = choix du banc."
        )
