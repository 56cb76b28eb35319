
import numpy as np
import pytest

from peerbench.synth import Scenario, generate


@pytest.fixture(scope="session")
def step_cohort():
    return generate(Scenario("step", n=200, seed=11))


@pytest.fixture(scope="session")
def mixed_cohort():
    return generate(Scenario("mixed14", n=200, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def step_replicates(step_cohort):
    from peerbench.bootstrap import oor_bootstrap
    return oor_bootstrap(step_cohort.data, n_tree=20, B=100, seed=3)


_ACCEPTANCE: dict = {}


@pytest.fixture
def record_criterion():
    """Record one part of an acceptance criterion; printed again in the summary."""

    def record(number, part, passed, detail):
        _ACCEPTANCE.setdefault(number, []).append((part, bool(passed), detail))
        print(f"criterion {number} [{part}]: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        parts = _ACCEPTANCE[number]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{p}: {'pass' if ok else 'FAIL'} ({d})" for p, ok, d in parts)
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
