import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def manifest() -> dict:
    with (FIXTURES / "manifest.json").open() as fh:
        return json.load(fh)


@pytest.fixture()
def youcook_path() -> Path:
    return FIXTURES / "youcook3_mini.jsonl"


@pytest.fixture()
def craftbench_path() -> Path:
    return FIXTURES / "craftbench_mini.jsonl"
