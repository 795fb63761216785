import os

os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import numpy as np
import pytest

from multifbsde.model import (CoefficientSet, lq_default_params, lq_problem,
                              controlled_bm_problem, adr_problem)


@pytest.fixture(scope="session")
def lq_params():
    return lq_default_params()


@pytest.fixture(scope="session")
def lq(lq_params):
    return lq_problem(lq_params)


@pytest.fixture(scope="session")
def cbm():
    return controlled_bm_problem()


@pytest.fixture(scope="session")
def adr_quadratic():
    return adr_problem(alpha=0.0315, beta=0.6, gamma=0.0)


def make_frozen_problem(d=1):
    """All-zero dynamics: b = 0, sigma = 0, f = 0, g = 0.

    The terminal loss collapses to y0^2, which makes optimizer and
    landscape behavior exactly predictable.
    """
    def b(ops, t, x, y, z):
        return ops.scale(x, 0.0)

    def f(ops, t, x, y, z):
        return ops.scale(y, 0.0)

    def g(ops, x):
        return ops.scale(ops.inner(x, x), 0.0)

    return CoefficientSet(d=d, k=d, horizon=1.0, x0=np.zeros(d), b=b,
                          sigma=lambda t: np.zeros((d, d)), f=f, g=g, label="frozen")


@pytest.fixture()
def frozen_problem():
    return make_frozen_problem()
