"""Helpers shared by the management commands."""
from __future__ import annotations

from pathlib import Path

from django.conf import settings
from django.core.management.base import CommandError

from .config import SimConfig, parse_config
from .exceptions import ConfigError

EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_ORACLE = 4


def load_config(path: str) -> SimConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CommandError(f"Lecture impossible de {path}: {exc}", returncode=EXIT_CONFIG) from exc
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise CommandError(f"{path}: {exc}", returncode=EXIT_CONFIG) from exc


def output_path(name: str) -> Path:
    """Bare file names land in ``REPEATER_OUTPUT_DIR``; paths with a directory are kept."""
    path = Path(name)
    if path.parent == Path("."):
        path = Path(settings.REPEATER_OUTPUT_DIR) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_output(name: str, content: str) -> Path:
    path = output_path(name)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(content)
    return path


def parse_list(raw: str, cast, option: str) -> tuple:
    try:
        values = tuple(cast(item.strip()) for item in raw.split(",") if item.strip())
    except ValueError as exc:
        raise CommandError(f"{option}: liste invalide '{raw}'.", returncode=EXIT_CONFIG) from exc
    if not values:
        raise CommandError(f"{option}: liste vide.", returncode=EXIT_CONFIG)
    return values
