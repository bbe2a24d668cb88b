import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from popgnn.cohort import SubjectRecord  # noqa: E402

_acceptance = []


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    outcome = "PASS" if call.excinfo is None else "FAIL"
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
    _acceptance.append((marker.args[0], marker.args[1], outcome, detail))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome, detail in sorted(_acceptance):
        line = f"criterion {number:>2}  {outcome}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_subject(sid, label="NC", gender="M", age=70.0, apoe4=0, mmse=29, split="train"):
    return SubjectRecord(sid, label, gender, age, apoe4, mmse, split)


@pytest.fixture
def subject():
    return make_subject
