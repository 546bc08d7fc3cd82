import warnings

import numpy as np
import pytest
from hypothesis import settings

warnings.filterwarnings("ignore", message="The TBB threading layer")

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria: number -> list of (check, passed, detail)
_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance check and echo a PASS/FAIL line to the terminal."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(number, check, passed, detail=""):
        _CRITERIA.setdefault(number, []).append((check, bool(passed), detail))
        with capman.global_and_fixture_disabled():
            print(f"\n[criterion {number}] {'PASS' if passed else 'FAIL'}: {check}" + (f" ({detail})" if detail else ""))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        checks = _CRITERIA[number]
        ok = all(p for _, p, _ in checks)
        failed = [c for c, p, _ in checks if not p]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({len(checks) - len(failed)}/{len(checks)} checks)"
        if failed:
            line += " failing: " + "; ".join(failed)
        terminalreporter.write_line(line)
