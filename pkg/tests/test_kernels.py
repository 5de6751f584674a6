import os
import subprocess
import sys

import numpy as np
import pytest

from rp1 import _kernels_py, kernels


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


def test_env_var_forces_fallback():
    env = dict(os.environ, RP1_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import rp1; print(rp1.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_backends_agree(n):
    rng = np.random.default_rng(n)
    a = rng.standard_normal((n, n))
    m = a + a.T
    w1, V1, s1 = kernels.jacobi_eigh(m)
    w2, V2, s2 = _kernels_py.jacobi_eigh(m)
    assert s1 == s2
    np.testing.assert_allclose(w1, w2, rtol=0, atol=1e-12)
    np.testing.assert_allclose(V1, V2, rtol=0, atol=1e-12)


def test_jacobi_diagonal_input_needs_no_sweep():
    w, V, sweeps = kernels.jacobi_eigh(np.diag([3.0, -1.0, 2.0]))
    assert sweeps == 0
    np.testing.assert_array_equal(w, [3.0, -1.0, 2.0])
    np.testing.assert_array_equal(V, np.eye(3))
