"""Shipped scenario files."""

from importlib import resources
from pathlib import Path

NAMES = ("onion-baseline", "onion-soap", "dns-flux-small", "dns-flux-blocklist")


def path(name: str) -> Path:
    return Path(str(resources.files(__name__) / f"{name}.conf"))
