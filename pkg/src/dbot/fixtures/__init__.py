"""Bundled sample data used by the tests, demos and CLI examples."""

from pathlib import Path

ROOT = Path(__file__).parent


def path(name: str) -> Path:
    return ROOT / name
