"""
Shared pytest setup: keep the JSONL log of every test inside its tmp dir
"""

import pytest

from srg.logger import configure_log_dir


@pytest.fixture(autouse=True)
def isolated_log_dir(tmp_path):
    configure_log_dir(tmp_path / "logs")
    yield
