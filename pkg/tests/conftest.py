import functools

import pytest

from incbf.config import load_preset
from incbf.harness import run_scenario


@functools.lru_cache(maxsize=None)
def _run(preset: str, overrides: tuple[tuple[str, str], ...]):
    return run_scenario(load_preset(preset, dict(overrides)))


def cached_run(preset: str, **overrides):
    """Run a preset with dotted overrides (``__`` stands for ``.``), memoized per session."""
    items = tuple(sorted((k.replace("__", "."), str(v)) for k, v in overrides.items()))
    return _run(preset, items)


@pytest.fixture(scope="session")
def scenario():
    return cached_run


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
