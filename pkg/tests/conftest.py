from dataclasses import replace
from pathlib import Path

import pytest

from xfemdur.io import parse_scenario

ROOT = Path(__file__).resolve().parents[1]
SCENARIO_FILES = sorted((ROOT / "scenarios").glob("*.scenario"))

# criterion number -> (passed, detail), filled by the acceptance suite
CRITERIA: dict = {}


class ScenarioRuns:
    """Lazily computed runs of the bundled scenarios, shared by the session."""

    def __init__(self):
        self._cache = {}

    def get(self, name: str, mode: str = "both", threshold: float | None = None):
        key = (name, mode, threshold)
        if key not in self._cache:
            from xfemdur.sim import run

            cfg = parse_scenario(ROOT / "scenarios" / f"{name}.scenario")
            cfg = replace(cfg, mode=mode)
            if threshold is not None:
                cfg = replace(cfg, threshold=threshold)
            self._cache[key] = run(cfg, snapshots=False)
        return self._cache[key]

    @property
    def names(self):
        return [p.stem for p in SCENARIO_FILES]


@pytest.fixture(scope="session")
def scenario_runs():
    return ScenarioRuns()


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
