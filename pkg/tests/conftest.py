import pytest
from hypothesis import HealthCheck, settings

from magbnf.maggeom import make_field

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

WELL2D = ["-q2*(1 + q1^2 + q2^2)/2", "q1*(1 + q1^2 + q2^2)/2"]
WELL3D = ["-q2*(1 + q1^2 + q2^2 + q3^2)/2", "q1*(1 + q1^2 + q2^2 + q3^2)/2", "0"]


@pytest.fixture(scope="session")
def field2d():
    return make_field(WELL2D, box=[2, 2], well_guess=[0.3, -0.2])


@pytest.fixture(scope="session")
def field3d():
    return make_field(WELL3D, box=[1, 1, 1], well_guess=[0.1, 0.1, 0.1])


@pytest.fixture(scope="session")
def analysis3d(field3d):
    from magbnf.wellframe import analyze_well
    return analyze_well(field3d)


@pytest.fixture(scope="session")
def analysis2d(field2d):
    from magbnf.wellframe import analyze_well
    return analyze_well(field2d)


# criterion -> list of (label, ok, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE, key=int):
        parts = ACCEPTANCE[crit]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{label}: {'ok' if good else 'FAIL'} ({info})" for label, good, info in parts)
        terminalreporter.write_line(f"criterion {crit:>2} {'PASS' if ok else 'FAIL'}  {detail}")
