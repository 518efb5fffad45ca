import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from retime.integrate import integrate_implicit_adaptive
from retime.reparam import reparameterize
from retime.systems import get_system

settings.register_profile(
    "retime",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("retime")


@functools.lru_cache(maxsize=None)
def trajectory(system: str, exponent: float):
    return integrate_implicit_adaptive(get_system(system), 10.0 ** exponent)


@functools.lru_cache(maxsize=None)
def reparam(system: str, exponent: float, method: str):
    return reparameterize(method, trajectory(system, exponent))


def held_out_cases():
    """Every (system, exponent) pair on the held-out grids."""
    return [(name, e) for name in ("sls", "vdp", "hires") for e in get_system(name).test_exponents]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting --------------------------------------------------------

_CRITERIA: dict = {}


def note(number: int, detail: str) -> None:
    """Attach a measured-value summary to an acceptance criterion's report line."""
    _CRITERIA.setdefault(number, {})["detail"] = detail


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {})
    entry["title"] = title
    if rep.when == "call" or rep.failed:
        entry["passed"] = rep.passed and entry.get("passed", True)
        crash = getattr(rep.longrepr, "reprcrash", None)
        if rep.failed and crash is not None:
            entry.setdefault("reason", crash.message.splitlines()[0])


def pytest_terminal_summary(terminalreporter):
    done = {k: v for k, v in _CRITERIA.items() if "passed" in v}
    if not done:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(done):
        e = done[number]
        status = "PASS" if e["passed"] else "FAIL"
        tr.write_line(f"criterion {number:2d} {status}  {e['title']}")
        if e.get("detail"):
            tr.write_line(f"              {e['detail']}")
        if not e["passed"] and e.get("reason"):
            tr.write_line(f"              {e['reason']}")
    passed = sum(e["passed"] for e in done.values())
    tr.write_line(f"{passed}/{len(done)} criteria passed")
