import os
import subprocess
import sys

import numpy as np
import pytest

from cyforms import _kernels
from cyforms.exterior_algebra import hitchin_table

needs_numba = pytest.mark.skipif(_kernels.numba is None, reason="numba not importable")


@pytest.fixture
def force_numba(monkeypatch):
    monkeypatch.setattr(_kernels, "USE_NUMBA", True)


def test_lagrange_weights_reproduce_polynomials():
    t = np.array([0.0, 0.3, 0.77])
    for q in (5, 7):
        w = _kernels.lagrange_weights_np(t, q)
        nodes = np.arange(q)
        assert np.allclose(w.sum(axis=-1), 1, atol=1e-14)
        for p in range(q):
            assert np.allclose(w @ nodes.astype(float) ** p, t ** p, atol=1e-12)


@needs_numba
def test_interp_agrees(rng, force_numba):
    sizes = (8, 8, 8, 8)
    data = rng.standard_normal((2,) + sizes)
    upts = rng.uniform(-3, 11, size=(300, 4))
    for q in (5, 7):
        np.testing.assert_allclose(_kernels.interp(data, sizes, upts, q), _kernels.interp_numpy(data, sizes, upts, q),
                                   rtol=0, atol=1e-13)


@needs_numba
def test_fourier_agrees(rng, force_numba):
    kvec = rng.integers(-3, 4, size=(40, 4))
    amps = rng.standard_normal((3, 40)) + 1j * rng.standard_normal((3, 40))
    pts = rng.uniform(0, 2 * np.pi, size=(200, 4))
    np.testing.assert_allclose(_kernels.fourier(amps, kvec, pts), _kernels.fourier_numpy(amps, kvec, pts), rtol=0, atol=1e-12)


@needs_numba
def test_hitchin_agrees(rng, force_numba):
    table = hitchin_table()
    rho = rng.standard_normal((20, 50))
    np.testing.assert_allclose(_kernels.hitchin_K_field(rho, table), _kernels.hitchin_K_numpy(rho, table), rtol=0, atol=1e-12)


def test_env_switch_selects_numpy():
    env = dict(os.environ, CYFORMS_NUMBA="0")
    r = subprocess.run([sys.executable, "-c", "from cyforms import _kernels; print(_kernels.backend())"],
                       capture_output=True, text=True, env=env)
    assert r.returncode == 0 and r.stdout.strip() == "numpy"
