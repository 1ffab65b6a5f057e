from fisherattitude.matrix_fisher import MatrixFisher, uniform_rotations
from fisherattitude.so3 import exp_so3

import logging
import pytest
import numpy as np

from collections.abc import Callable
from typing import NamedTuple

logging.disable()


class HaarGrid(NamedTuple):
    rotations: np.ndarray
    weights: np.ndarray


def euler_haar_grid(n: int = 64) -> HaarGrid:
    """ZYZ Euler-angle quadrature of the normalized Haar measure.

    The first and last angles use the periodic trapezoid rule, the middle
    angle Gauss-Legendre nodes in cos(beta).
    """

    angles = 2.0 * np.pi * np.arange(n) / n
    nodes, gl_weights = np.polynomial.legendre.leggauss(n)
    betas = np.arccos(nodes)

    ez = np.array([0.0, 0.0, 1.0])
    ey = np.array([0.0, 1.0, 0.0])

    rz = exp_so3(angles[:, np.newaxis] * ez)
    ry = exp_so3(betas[:, np.newaxis] * ey)

    rots = np.einsum('aij,bjk,ckl->abcil', rz, ry, rz).reshape(-1, 3, 3)
    weights = (np.ones(n)[:, None, None] * gl_weights[None, :, None]
               * np.ones(n)[None, None, :]).reshape(-1)
    weights = weights / weights.sum()

    return HaarGrid(rots, weights)


@pytest.fixture(scope='session')
def haar_grid() -> HaarGrid:
    return euler_haar_grid(64)


@pytest.fixture(scope='function')
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture(scope='function')
def random_rotation(rng: np.random.Generator) -> Callable[[], np.ndarray]:
    def draw() -> np.ndarray:
        return uniform_rotations(rng, 1)[0]

    return draw


@pytest.fixture(scope='function')
def random_mf(rng: np.random.Generator) -> Callable[..., MatrixFisher]:
    """Matrix Fisher distributions with random principal axes."""

    def draw(s: tuple[float, float, float] | None = None) -> MatrixFisher:
        if s is None:
            s = tuple(np.sort(rng.uniform(-5.0, 10.0, 3))[::-1])
        u, v = uniform_rotations(rng, 2)
        return MatrixFisher.from_svd(u, np.array(s, dtype=np.float64), v)

    return draw


@pytest.fixture(scope='session')
def mf_samples() -> tuple[MatrixFisher, np.ndarray]:
    """A concentrated distribution and 20000 rejection samples from it."""

    from fisherattitude.matrix_fisher import sample

    gen = np.random.default_rng(7)
    u, v = uniform_rotations(gen, 2)
    mf = MatrixFisher.from_svd(u, np.array([5.0, 2.0, 1.0]), v)

    return mf, sample(mf, gen, 20000)
