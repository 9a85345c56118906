import sys

import numpy as np
import pytest

from specstab.models import make_model

FAMILY_PARAMS = [
    ("gaussian", {}),
    ("gamma", {"s": 1.0, "theta": 1.0}),
    ("gamma", {"s": 2.5, "theta": 0.7}),
    ("beta", {"N": 2.0}),
    ("beta", {"N": 3.0}),
    ("beta", {"N": 5.0}),
]


def family_id(item):
    fam, kw = item
    return fam + "".join(f"-{k}{v:g}" for k, v in kw.items())


@pytest.fixture(params=FAMILY_PARAMS, ids=family_id)
def model(request):
    fam, kw = request.param
    return make_model(fam, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def lipschitz_test_function(rng, law, n_knots=4):
    """Random smooth g with |g'| <= 1: g' is a sigmoid blend of slopes in [-1, 1]."""
    t, _, q = law.grid()
    knots = np.sort(np.interp(rng.uniform(0.01, 0.99, n_knots), q, t))
    slopes = rng.uniform(-1.0, 1.0, n_knots + 1)
    spread = float(np.ptp(np.interp([0.1, 0.9], q, t)))
    w = max(0.05 * spread, 1e-3)

    def g(x):
        x = np.asarray(x, dtype=float)
        out = slopes[0] * x
        for i, k in enumerate(knots):
            out = out + (slopes[i + 1] - slopes[i]) * w * np.logaddexp(0.0, (x - k) / w)
        return out

    return g


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
