import sys

import numpy as np
import pytest

from metsk import connectome as cn
from metsk import numerics as nm


def fd_check(loss_fn, params, wrt=None, h=1e-5):
    """Largest per-leaf relative error between analytic and central-difference gradients."""
    analytic = nm.grad(loss_fn, params, wrt)
    numeric = nm.numerical_grad(loss_fn, params, wrt, h=h)
    return max(nm.relative_error(analytic[k], numeric[k]) for k in params)


def toy_record(rng, subject_id="s", n_rois=4, n_time=12, label=None):
    return cn.SubjectRecord(subject_id, rng.standard_normal((n_rois, n_time)), label)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
