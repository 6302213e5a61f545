import numpy as np
import pytest

from psr_gmti.forward import LiftedOperator
from psr_gmti.grids import desk_geometry, toy_geometry
from psr_gmti.psr import build_psr
from psr_gmti.scenegen import ExtendedTarget, GroundTruthScene, PointTarget


def recovery_scene():
    """Two stationary points, a 2x2 stationary block and two movers on 9x9."""
    return GroundTruthScene(
        (
            PointTarget((1, 1)),
            PointTarget((7, 2)),
            PointTarget((2, 6), (6.0, 0.0)),
            PointTarget((4, 4), (-6.0, 6.0)),
        ),
        (ExtendedTarget((6, 7), (6, 7)),),
    )


@pytest.fixture(scope="session")
def tiny_geometry():
    # 3x3 pixels, 3 velocities, 8 x 4 = 32 measurements
    return toy_geometry(n_pixels=3, n_velocities=3, n_slow=8, n_freq=4)


@pytest.fixture(scope="session")
def tiny_op(tiny_geometry):
    return LiftedOperator(tiny_geometry)


@pytest.fixture(scope="session")
def toy_op():
    return LiftedOperator(toy_geometry())


@pytest.fixture(scope="session")
def toy_problem(toy_op):
    g = toy_op.geometry
    scene = recovery_scene()
    truth = build_psr(scene, g.scene, g.velocities)
    return scene, truth, toy_op.measure(truth.total)


@pytest.fixture(scope="session")
def desk_op():
    return LiftedOperator(desk_geometry())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance report -------------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def check():
    """Record one acceptance criterion outcome, then assert it."""

    def record(number, ok, detail):
        ACCEPTANCE.setdefault(number, []).append((bool(ok), detail))
        assert ok, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        results = ACCEPTANCE[number]
        ok = all(r[0] for r in results)
        details = "; ".join(r[1] for r in results)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {details}")
