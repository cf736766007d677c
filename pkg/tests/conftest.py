import pytest
from hypothesis import HealthCheck, settings

from tapp.fixtures import builtin_script, builtin_script_text, builtin_topology

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def case_topology():
    return builtin_topology("case-study")


@pytest.fixture
def bench_topology():
    return builtin_topology("benchmark")


@pytest.fixture
def case_script():
    return builtin_script("case-study")


@pytest.fixture
def case_text():
    return builtin_script_text("case-study")
