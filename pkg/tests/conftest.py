import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from kexpfam import IsotropicGaussian, KernelSpec, UniformBox  # noqa: E402

ALL_KERNELS = {
    "gaussian": KernelSpec.gaussian(1.3),
    "gaussian_poly2": KernelSpec.gaussian_poly2(1.3, 0.1, 0.5),
    "imq": KernelSpec.imq(1.5, 0.7),
}


@pytest.fixture(params=list(ALL_KERNELS), ids=list(ALL_KERNELS))
def any_kernel(request):
    return ALL_KERNELS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_instance(seed, n=None, d=None, sigma=None, base_kind=None):
    """Random small problem: ``(X, kernel, base)`` with a Gaussian kernel."""
    r = np.random.default_rng(seed)
    n = n or int(r.integers(3, 31))
    d = d or int(r.integers(1, 3))
    sigma = sigma or float(r.uniform(0.6, 1.0))
    X = r.standard_normal((n, d))
    if base_kind is None:
        base_kind = "gaussian" if r.random() < 0.5 else "uniform"
    if base_kind == "gaussian":
        base = IsotropicGaussian(r.normal(0, 0.3, d), float(r.uniform(1.0, 3.0)))
    else:
        base = UniformBox(np.full(d, -6.0), np.full(d, 6.0))
    return X, KernelSpec.gaussian(sigma), base


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
