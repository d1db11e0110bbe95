import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from interplab.synthdata import DatasetConfig, generate_dataset

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_ds():
    return generate_dataset(DatasetConfig(k=3, n_total=9, dim=5, noise_sigma=0.2, seed=3))


@pytest.fixture
def clean_ds():
    return generate_dataset(DatasetConfig(k=3, n_total=6, dim=4, noise_sigma=0.0, seed=0))


_ACCEPTANCE = pytest.StashKey[dict]()


class _Criterion:
    def __init__(self):
        self.line = None

    def __call__(self, number: int, ok: bool, detail: str) -> bool:
        self.number = number
        self.line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(self.line)
        return ok


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    rec = _Criterion()
    yield rec
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})
    if rec.line is not None:
        lines[rec.number] = rec.line
    else:
        lines[request.node.name] = f"{request.node.name}: FAIL  (raised before reporting)"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for key in sorted(lines, key=str):
            terminalreporter.write_line(lines[key])
