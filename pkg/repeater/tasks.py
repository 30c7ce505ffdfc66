from celery import shared_task

from .config import parse_config
from .sweep import run_point


@shared_task(bind=True, max_retries=0)
def simulate_point(self, config_text: str, runs: int) -> dict:
    """Runs one sweep point from its serialised document; the row comes back as a dict."""
    return run_point(parse_config(config_text), runs).as_dict()
