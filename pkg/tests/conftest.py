from __future__ import annotations

import numpy as np
import pytest

import picardwave as pw


@pytest.fixture
def small_target():
    return pw.gaussian_target(np.zeros(2), np.array([1.0, 4.0]))


@pytest.fixture
def small_scheme():
    return pw.uniform_scheme(6, 0.025, 8)


def finite_diff_grad(fun, x, step):
    """Centered finite differences of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return g
