import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from irrdc import experiments as ex  # noqa: E402
from irrdc.benchmarks import aly_chan, second_order_singular  # noqa: E402


@pytest.fixture(scope="session")
def second_order_runs():
    """Open-loop DC and IRR-DC solutions of the double integrator at Z = 100."""
    ocp = second_order_singular()
    return {m: ex.solve_open_loop(ocp, m, 100) for m in ex.METHODS}


@pytest.fixture(scope="session")
def aly_chan_runs():
    ocp = aly_chan()
    return {m: ex.solve_open_loop(ocp, m, 100) for m in ex.METHODS}
