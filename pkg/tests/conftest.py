import os

import pytest
from hypothesis import HealthCheck, settings

from wpscatter.foundation import make_grid

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("WPSCATTER_CACHE_DIR", str(tmp_path / "cache"))


@pytest.fixture(scope="session")
def grid1():
    return make_grid(1, 40.0, 512)


@pytest.fixture(scope="session")
def grid2():
    return make_grid(2, 20.0, 128)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
