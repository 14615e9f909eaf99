import numpy as np
import pytest

from strengthlab.dataset import reference_dataset, split
from strengthlab.explain import tree_shap

ADDITIVITY_TOL = 1e-6
ACCEPTANCE = pytest.StashKey[list]()


def assert_additive(model, X, phi, base):
    """base + sum(phi) must reproduce the model's prediction on every row."""
    X = np.atleast_2d(X)
    phi = np.atleast_2d(phi)
    pred = model.predict(X)
    gap = np.abs(base + phi.sum(axis=1) - pred)
    assert gap.max() <= ADDITIVITY_TOL, gap.max()


def shap_checked(model, X, mode="path", background=None):
    phi, base = tree_shap(model, X, mode, background)
    assert_additive(model, X, phi, base)
    return phi, base


@pytest.fixture(scope="session")
def reference():
    """Synthetic CS-like data (published marginals, smooth ground truth, 5% noise) with an 8:2 split."""
    ds = reference_dataset(1000, seed=0)
    return ds, split(ds, 0.8, 0)


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request, capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        request.config.stash[ACCEPTANCE].append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
