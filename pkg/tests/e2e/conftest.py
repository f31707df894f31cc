"""
E2E test configuration - no mocking, full benchmark runs through the CLI.
"""

from pathlib import Path

import pytest

CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"


@pytest.fixture
def bundled_config():
    """Path of a config shipped in configs/."""

    def _path(name):
        return CONFIG_DIR / name

    return _path
