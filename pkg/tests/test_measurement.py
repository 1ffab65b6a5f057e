from fisherattitude.matrix_fisher import (
    MatrixFisher, icosphere, log_density, uniform_rotations)
from fisherattitude.measurement import (
    DirectionMeasurement, InvalidMeasurementException, ReferenceKind,
    log_likelihood, mean_resultant_length, orthonormal_complement,
    sample_body, sample_inertial, sample_vmf, update, update_body,
    update_inertial)
from fisherattitude.so3 import exp_so3

import pytest
import numpy as np

from collections.abc import Callable

A = np.array([0.0, 0.6, 0.8])


@pytest.mark.parametrize('kind', list(ReferenceKind))
def test_update_is_conjugate(kind: ReferenceKind, rng: np.random.Generator,
                             random_mf: Callable[..., MatrixFisher]) -> None:
    for _ in range(50):
        prior = random_mf()
        reading = rng.normal(size=3)
        reading /= np.linalg.norm(reading)
        meas = DirectionMeasurement(kind, A, reading,
                                    float(rng.uniform(1.0, 200.0)))
        posterior = update(prior, meas)

        rots = uniform_rotations(rng, 500)
        gap = (log_density(prior, rots) + log_likelihood(meas, rots)
               - log_density(posterior, rots))

        assert np.max(np.abs(gap - gap.mean())) < 1e-10


def test_update_adds_rank_one_term() -> None:
    prior = MatrixFisher(np.diag([3.0, 2.0, 1.0]))
    x = np.array([1.0, 0.0, 0.0])

    inertial = update_inertial(prior, A, x, 10.0)
    body = update_body(prior, A, x, 10.0)

    assert np.allclose(inertial.f, prior.f + 10.0 * np.outer(A, x))
    assert np.allclose(body.f, prior.f + 10.0 * np.outer(x, A))


def test_update_from_uniform_is_rank_one() -> None:
    x = np.array([0.0, 0.0, 1.0])

    posterior = update_inertial(MatrixFisher.uniform(), A, x, 200.0)

    assert posterior.s[0] == pytest.approx(200.0)
    assert np.allclose(posterior.s[1:], 0.0, atol=1e-12)


def test_predicted_direction() -> None:
    rot = exp_so3(np.array([0.3, -0.7, 0.2]))
    b = np.array([1.0, 0.0, 0.0])

    inertial = DirectionMeasurement(ReferenceKind.INERTIAL_REF, A, b, 5.0)
    body = DirectionMeasurement(ReferenceKind.BODY_REF, b, A, 5.0)

    assert np.allclose(inertial.predicted(rot), rot.T @ A)
    assert np.allclose(body.predicted(rot), rot @ b)


def test_invalid_measurement() -> None:
    with pytest.raises(InvalidMeasurementException):
        DirectionMeasurement(ReferenceKind.INERTIAL_REF, A,
                             np.array([1.0, 1.0, 0.0]), 5.0)

    with pytest.raises(InvalidMeasurementException):
        DirectionMeasurement(ReferenceKind.BODY_REF, A, A, 0.0)

    with pytest.raises(InvalidMeasurementException):
        update_body(MatrixFisher.uniform(), 2.0 * A, A, 1.0)


def test_orthonormal_complement() -> None:
    for mu in (A, np.eye(3)[0], -np.eye(3)[2]):
        first, second = orthonormal_complement(mu)
        basis = np.stack([first, second, mu], axis=1)

        assert np.allclose(basis.T @ basis, np.eye(3))
        assert np.linalg.det(basis) == pytest.approx(1.0)


@pytest.mark.parametrize('kappa', [0.5, 5.0, 200.0])
def test_sample_vmf_mean_resultant_length(
        kappa: float, rng: np.random.Generator) -> None:
    draws = sample_vmf(A, kappa, rng, 100000)

    assert draws.shape == (100000, 3)
    assert np.allclose(np.linalg.norm(draws, axis=1), 1.0)
    assert float(np.mean(draws @ A)) == pytest.approx(
        mean_resultant_length(kappa), abs=0.01)

    # Symmetric about the mean direction
    mean = draws.mean(axis=0)
    assert np.allclose(mean - (mean @ A) * A, 0.0, atol=0.02)


def test_sample_vmf_large_concentration(rng: np.random.Generator) -> None:
    draw = sample_vmf(A, 1e6, rng)

    assert draw.shape == (3,)
    assert np.all(np.isfinite(draw))
    assert draw @ A > 0.999


def test_sample_vmf_invalid(rng: np.random.Generator) -> None:
    with pytest.raises(InvalidMeasurementException):
        sample_vmf(A, -1.0, rng)

    with pytest.raises(InvalidMeasurementException):
        sample_vmf(np.ones(3), 1.0, rng)


def test_sample_readings_follow_attitude(rng: np.random.Generator) -> None:
    rot = exp_so3(np.array([1.0, 0.5, -0.3]))

    x = sample_inertial(rot, A, 1e6, rng)
    y = sample_body(rot, A, 1e6, rng)

    assert np.allclose(x, rot.T @ A, atol=0.01)
    assert np.allclose(y, rot @ A, atol=0.01)


def test_log_likelihood_normalized() -> None:
    grid = icosphere(4)
    values = np.array([
        np.exp(log_likelihood(
            DirectionMeasurement(ReferenceKind.BODY_REF, A, p, 3.0),
            np.eye(3)))
        for p in grid.vertices
    ])

    assert float(grid.weights @ values) == pytest.approx(1.0, abs=5e-3)


@pytest.mark.parametrize('theta', [0.3, 1.0, 2.5, -np.pi])
def test_inertial_posterior_symmetric_about_reference(
        theta: float, rng: np.random.Generator) -> None:
    x = np.array([0.36, 0.48, 0.8])
    posterior = update_inertial(MatrixFisher.uniform(), A, x, 50.0)
    turn = exp_so3(theta * A)

    rots = uniform_rotations(rng, 200)

    assert np.allclose(log_density(posterior, turn @ rots),
                       log_density(posterior, rots), atol=1e-9)


@pytest.mark.parametrize('theta', [0.3, 1.0, 2.5, -np.pi])
def test_body_posterior_symmetric_about_reference(
        theta: float, rng: np.random.Generator) -> None:
    b = np.array([0.0, 0.0, 1.0])
    y = np.array([0.6, 0.0, 0.8])
    posterior = update_body(MatrixFisher.uniform(), b, y, 50.0)
    turn = exp_so3(theta * b)

    rots = uniform_rotations(rng, 200)

    assert np.allclose(log_density(posterior, rots @ turn),
                       log_density(posterior, rots), atol=1e-9)

    # Turning about an axis other than b changes the density
    other = exp_so3(theta * np.array([1.0, 0.0, 0.0]))
    assert not np.allclose(log_density(posterior, rots @ other),
                           log_density(posterior, rots), atol=1e-3)
