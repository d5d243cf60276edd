import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_series():
    """A 3000-reading synthetic series with its imputed feature frame."""
    from amiwatch import ingest
    syn = ingest.synthesize(3000, seed=7)
    ff = ingest.build_features(ingest.impute_records(syn.records))
    return syn, ff


# -- acceptance summary: one PASS/FAIL line per criterion ---------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if report.passed:
            status = "PASS"
        elif report.skipped:
            status = "SKIP"
        else:
            status = "FAIL"
        detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        _CRITERIA[name] = (status, detail, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        status, detail, dur = _CRITERIA[name]
        _, _, num, *label = name.split("_")
        line = f"criterion {int(num):2d} {' '.join(label):<26} {status}  ({dur:.1f}s)"
        terminalreporter.write_line(line + (f"  {detail}" if detail else ""))
