import numpy as np
import pytest

from topopain.hot import extract_features
from topopain.synth import synth_dataset, synth_source

_CRITERIA = {}


@pytest.fixture(scope="session")
def small_synth():
    """Two subjects, 60 frames each (one blink per sequence)."""
    return synth_dataset(1, 2, 60)


@pytest.fixture(scope="session")
def small_tables():
    """Feature tables: target (4 subjects x 60 frames, seed 7) and source (8 subjects)."""
    seqs, traces = synth_dataset(7, 4, 60)
    target = extract_features([f for s in seqs for f in s.frames])
    source = extract_features([f for s in synth_source(7, 8) for f in s.frames])
    return target, source, traces


@pytest.fixture(scope="session")
def lopo_seed7():
    """Full LOPO on 6 subjects x 120 frames (seed 7) with a 20-subject source set."""
    from topopain.config import PipelineConfig
    from topopain.evaluation import run_lopo

    seqs, traces = synth_dataset(7, 6, 120)
    target = extract_features([f for s in seqs for f in s.frames])
    source = extract_features([f for s in synth_source(7, 20) for f in s.frames])
    return run_lopo(target, source, PipelineConfig({"seed": 7})), traces


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    number, title = crit
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA[number] = (title, report.outcome, report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcome, duration, detail = _CRITERIA[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        tr.write_line(f"criterion {number:2d} {verdict}  {title} ({duration:.2f} s) {detail}")
