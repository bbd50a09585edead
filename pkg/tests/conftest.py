from pathlib import Path

import pytest

from deformkit.pipeline import PipelineConfig, run_pipeline

DATA = Path(__file__).parent / "data"

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA


@pytest.fixture(scope="session")
def paper_run(tmp_path_factory):
    """One default study run shared by the pipeline and acceptance tests."""
    out = tmp_path_factory.mktemp("paper_run")
    import time

    t0 = time.perf_counter()
    result = run_pipeline(PipelineConfig(threads=1), out)
    return result, time.perf_counter() - t0


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n = mark.args[0]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = "PASS" if rep.passed else "FAIL"
        prev = _criteria.get(n)
        if prev is None or prev[0] == "PASS":
            _criteria[n] = (status, detail if prev is None else f"{prev[1]}; {detail}".strip("; "))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        status, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f"  ({detail})" if detail else ""))
