import re

import pytest

from lora_lab import config


def smoke_config_text(**repl):
    """The shipped config shrunk to a few seconds of compute.

    Keyword arguments override further keys by name, e.g. ``steps="10"``.
    """
    changes = {
        "width": "32",
        "steps": "40",
        "n_train": "120",
        "n_test": "30",
        "widths": "16, 32, 64",
        "lrs": "2^[-8:-4]",
        "seeds": "0, 1",
        "lr": "2^-6",
    }
    changes.update(repl)
    lines = config.default_text().splitlines()
    for key, value in changes.items():
        hits = [i for i, ln in enumerate(lines) if re.match(rf"{re.escape(key)}\s*=", ln)]
        assert len(hits) == 1, key
        lines[hits[0]] = f"{key} = {value}"
    return "\n".join(lines) + "\n"


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.ini"
    path.write_text(smoke_config_text())
    return path


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the one-line outcome of an acceptance criterion."""

    def record(number, passed, detail):
        _CRITERIA[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
