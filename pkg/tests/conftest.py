from pathlib import Path

import pytest
import yaml

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

_VERDICTS = {}


@pytest.fixture
def scenario_copy(tmp_path):
    """Copy a shipped scenario into tmp_path, pointing its outputs there too.

    ``overrides`` is merged into the top level (and ``model`` one level deep).
    """

    def make(name, out_name="out", **overrides):
        raw = yaml.safe_load((SCENARIOS / f"{name}.yaml").read_text())
        model = overrides.pop("model", None)
        raw.update(overrides)
        if model:
            raw["model"].update(model)
        raw["output_dir"] = out_name
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(raw, sort_keys=False))
        return path, tmp_path / out_name

    return make


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _VERDICTS[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
