import numpy as np
import pytest

from rareis import gauss, tgmm


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def std_normal_1d():
    support = gauss.Rect.unbounded(1)
    comp = gauss.GaussComponent([0.0], [[1.0]])
    return tgmm.TruncatedGMM([1.0], [comp], support)


@pytest.fixture
def std_normal_3d():
    support = gauss.Rect.unbounded(3)
    comp = gauss.GaussComponent(np.zeros(3), np.eye(3))
    return tgmm.TruncatedGMM([1.0], [comp], support)


@pytest.fixture
def truncated_2comp_2d():
    """The known 2-component truncated mixture used for recovery checks."""
    support = gauss.Rect([0.0, 0.0], [np.inf, np.inf])
    c1 = gauss.GaussComponent([1.0, 0.8], [[0.5, 0.2], [0.2, 0.4]])
    c2 = gauss.GaussComponent([3.0, 2.5], [[0.6, -0.15], [-0.15, 0.5]])
    return tgmm.TruncatedGMM([0.4, 0.6], [c1, c2], support)
