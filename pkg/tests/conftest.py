import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from opinionsum.domain import Review

FIXTURES = Path(__file__).parent / "fixtures"
HDBSCAN_FIXTURES = sorted((FIXTURES / "hdbscan").glob("*.json"))


def load_hdbscan_fixture(path: Path):
    rec = json.loads(path.read_text())
    return rec, np.asarray(rec["points"], dtype=np.float64), np.asarray(rec["labels"])


@pytest.fixture
def corpus(tmp_path: Path) -> Path:
    """Writable copy of the 30-review corpus and its config."""
    for name in ("reviews.jsonl", "config.yaml"):
        shutil.copy(FIXTURES / "corpus" / name, tmp_path / name)
    return tmp_path


@pytest.fixture
def review() -> Review:
    return Review("r1", "p1", "The bed was very comfortable. The shower was broken.")


# criterion number -> (title, passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"AC{n:02d} {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
