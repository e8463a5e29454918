from pathlib import Path

import pytest

from fsibeam.solver.config import load_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "src" / "fsibeam" / "configs"


@pytest.fixture(scope="session")
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture(scope="session")
def bump_config():
    return load_config(CONFIG_DIR / "bump.toml")


@pytest.fixture(scope="session")
def rest_config():
    return load_config(CONFIG_DIR / "rest.toml")


@pytest.fixture(scope="session")
def contact_config():
    return load_config(CONFIG_DIR / "contact.toml")


_CRITERIA: dict = {}


class CriterionRecorder:
    """Context manager recording PASS/FAIL for one acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.details: list = []

    def note(self, text: str) -> None:
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc is not None:
            detail = (detail + "; " if detail else "") + str(exc).splitlines()[0][:200]
        line = f"{status} criterion {self.number:>2} ({self.title}): {detail}"
        _CRITERIA[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return CriterionRecorder


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
