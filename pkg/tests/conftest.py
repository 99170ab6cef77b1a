import sys
import warnings

import numpy as np
import pytest

from cloudfill import kernels
from cloudfill.poisson import BorderCellsWarning

BACKENDS = [kernels.python_backend]
if kernels.compiled_backend is not None:
    BACKENDS.append(kernels.compiled_backend)


@pytest.fixture(params=BACKENDS, ids=lambda m: m.BACKEND)
def backend(request):
    """Run the test once per available kernel backend."""
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_border_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BorderCellsWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
