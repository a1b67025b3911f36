import re

import numpy as np
import pytest

from iboss_clr.core import ClrParams

_CRITERIA: dict[int, tuple[str, str]] = {}


def random_params(rng, g, p, spread=2.0):
    beta = rng.normal(0.0, spread, size=(g, p + 1))
    sigma2 = rng.uniform(0.3, 3.0, size=g)
    pi = rng.dirichlet(np.full(g, 3.0))
    return ClrParams(beta, sigma2, pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA[int(m.group(1))] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}".rstrip())
