import numpy as np
import pytest

from metacal.synthgen import GeneratorSpec, generate


@pytest.fixture(scope="session")
def synth_small():
    data, truth = generate(GeneratorSpec(k=10, n=5000, seed=11))
    return data, truth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, with what was measured."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_acceptance" not in rep.nodeid:
                continue
            props = dict(rep.user_properties)
            if "criterion" not in props:
                continue
            detail = props.get("detail", "")
            lines.append((props["criterion"], f"criterion {props['criterion']:>2}: {outcome.upper():6} {detail}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
