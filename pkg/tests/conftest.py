import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """Record one ``criterion N: PASS|FAIL  details`` line for the summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def report(number: int, checks: dict, details: str = "") -> bool:
        ok = all(checks.values())
        failed = [name for name, good in checks.items() if not good]
        text = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {details}"
        if failed:
            text += f"  [failed: {', '.join(failed)}]"
        lines.append((number, text))
        print(text)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)
