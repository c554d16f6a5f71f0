import os
import subprocess
import sys

import numpy as np
import pytest

import kexpfam
from conftest import ALL_KERNELS
from kexpfam._backend import get_core

cython_core = pytest.importorskip("kexpfam._core", reason="compiled extension not built")
python_core = get_core("python")


@pytest.mark.parametrize("family", list(ALL_KERNELS))
@pytest.mark.parametrize("shape", [(1, 1), (7, 1), (13, 3), (40, 2)])
def test_pair_terms_agree(family, shape):
    X = np.random.default_rng(sum(shape)).standard_normal(shape)
    params = ALL_KERNELS[family].core_params()
    for a, b in zip(python_core.pair_terms(X, *params), cython_core.pair_terms(X, *params)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("family", list(ALL_KERNELS))
def test_model_terms_agree(family):
    rng = np.random.default_rng(1)
    X, W, Z = rng.standard_normal((20, 3)), rng.standard_normal((20, 3)), rng.standard_normal((300, 3))
    params = ALL_KERNELS[family].core_params()
    for a, b in zip(python_core.model_terms(Z, X, W, -0.4, *params),
                    cython_core.model_terms(Z, X, W, -0.4, *params)):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_selection():
    assert kexpfam.BACKEND in ("python", "cython")
    assert get_core("cython") is cython_core
    with pytest.raises(ValueError):
        get_core("fortran")


def test_env_forces_python():
    env = dict(os.environ, KEXPFAM_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import kexpfam; print(kexpfam.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
