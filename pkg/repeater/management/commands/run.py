from django.core.management.base import BaseCommand, CommandError

from repeater import fabric
from repeater.cli import EXIT_CONFIG, EXIT_SIMULATION, load_config, write_output
from repeater.exceptions import ConfigError, RepeaterError
from repeater.protocol import build_links
from repeater.sweep import run_point, write_csv


class Command(BaseCommand):
    help = "Simulate one repeater configuration and print its summary row."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Simulation document (key = value).")
        parser.add_argument(
            "--runs",
            type=int,
            default=1,
            help="Independent runs, seeds derived from master_seed (default: 1).",
        )
        parser.add_argument("--out", help="Write the CSV here instead of stdout.")

    def handle(self, *args, **options):
        config = load_config(options["config"])
        try:
            layers = fabric.switch_layers(config.fabric.m, config.fabric.k)
            links = build_links(config)
        except RepeaterError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc

        self.stdout.write(
            f"{config.architecture}, m={config.m}, puce {config.fabric.m} ports, k={config.fabric.k}"
        )
        self.stdout.write("Couches MZI: " + ", ".join(f"{name}={depth}" for name, depth in layers.items()))
        for link in (links.left, links.right, links.local):
            self.stdout.write(f"  {link.name}: p={link.p_success:.6g}, période={link.attempt_period * 1e6:.3f} µs")
        if config.architecture == "router":
            p = min(links.left.p_success, links.right.p_success)
            p_best = max(links.left.p_success, links.right.p_success)
            self.stdout.write(
                f"Écart gauche/droite par cycle: σ={fabric.mismatch_scale(config.m, p):.3g} succès"
            )
            if not links.local_is_faster:
                self.stdout.write(self.style.WARNING(
                    f"Attention: p_local={links.local.p_success:.6g} ne dépasse pas p_distant={p_best:.6g} "
                    f"sur une puce de {config.fabric.m} ports."
                ))

        try:
            row = run_point(config, options["runs"])
        except ConfigError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG) from exc
        except RepeaterError as exc:
            raise CommandError(str(exc), returncode=EXIT_SIMULATION) from exc

        document = write_csv([row])
        if options.get("out"):
            path = write_output(options["out"], document)
            self.stdout.write(self.style.SUCCESS(f"Résultat écrit dans {path}"))
        else:
            self.stdout.write(document, ending="")
