import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def table():
    from mfkrig.data_io import default_table

    return default_table()


@pytest.fixture
def geometry():
    from mfkrig.empirical import ShipGeometry

    return ShipGeometry(
        length_overall=200.0,
        beam=32.0,
        air_draft=40.0,
        lateral_area=4400.0,
        transverse_area=900.0,
        lateral_perimeter=460.0,
        centroid_from_bow=100.0,
        superstructure_area=1100.0,
        container_groups=4,
    )


# acceptance verdicts collected by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
