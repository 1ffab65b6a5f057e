from fisherattitude.matrix_fisher import MatrixFisher, mean_attitude
from fisherattitude.propagation import (
    AngularVelocitySignal, Frame, Interpolation, MagnusMethod, NoiseModel,
    Trivialization, advect_left, advect_right, diffuse, exact_first_moment,
    gramian, magnus_path, phi_magnus, propagate_mf_left, propagate_mf_right,
    simulate_sde, simulate_sde_ensemble, transition_left, transition_right)
from fisherattitude.so3 import exp_so3

import pytest
import numpy as np

W = np.array([0.3, -1.2, 2.0])
H = np.diag([0.8, 0.3, 0.1]) @ exp_so3(np.array([0.2, 0.5, -0.4]))


def linear_signal(frame: Frame, dt: float) -> AngularVelocitySignal:
    w0 = np.array([1.0, -0.5, 2.0])
    w1 = np.array([3.0, 2.0, -1.0])

    return AngularVelocitySignal(frame, np.array([0.0, dt]),
                                 np.stack([w0, w0 + w1 * dt]),
                                 Interpolation.LINEAR)


def test_frame_trivialization() -> None:
    assert Frame.INERTIAL.trivialization is Trivialization.RIGHT
    assert Frame.BODY.trivialization is Trivialization.LEFT


def test_signal_validation() -> None:
    with pytest.raises(ValueError):
        AngularVelocitySignal(Frame.BODY, np.array([0.0, 0.0]),
                              np.zeros((2, 3)))

    with pytest.raises(ValueError):
        AngularVelocitySignal(Frame.BODY, np.array([0.0, 1.0]),
                              np.zeros((3, 3)))

    with pytest.raises(ValueError):
        NoiseModel(np.array([0.0]), np.full((3, 3), np.nan))


def test_signal_interpolation() -> None:
    rates = np.array([[0.0, 0.0, 0.0], [2.0, 4.0, -2.0]])
    held = AngularVelocitySignal(Frame.INERTIAL, np.array([0.0, 1.0]), rates)
    linear = AngularVelocitySignal(Frame.INERTIAL, np.array([0.0, 1.0]),
                                   rates, Interpolation.LINEAR)

    assert np.array_equal(held.at(0.5), rates[0])
    assert np.array_equal(held.at(5.0), rates[1])
    assert np.allclose(linear.at(0.25), [0.5, 1.0, -0.5])


def test_phi_magnus_zero_order_hold_constant() -> None:
    signal = AngularVelocitySignal.constant(Frame.INERTIAL, W)

    assert np.allclose(phi_magnus(signal, 0.0, 0.3, Trivialization.RIGHT),
                       0.3 * W)
    assert np.array_equal(phi_magnus(signal, 0.4, 0.4, Trivialization.RIGHT),
                          np.zeros(3))


def test_phi_magnus_composes_segments() -> None:
    w1 = np.array([0.0, 0.0, 1.0])
    w2 = np.array([1.0, 0.0, 0.0])
    signal = AngularVelocitySignal(Frame.INERTIAL, np.array([0.0, 0.5]),
                                   np.stack([w1, w2]))
    first = exp_so3(0.5 * w1)
    second = exp_so3(0.5 * w2)

    right = exp_so3(phi_magnus(signal, 0.0, 1.0, Trivialization.RIGHT))
    left = exp_so3(phi_magnus(signal, 0.0, 1.0, Trivialization.LEFT))

    assert np.allclose(right, second @ first)
    assert np.allclose(left, first @ second)


def test_phi_magnus_rejects_backward() -> None:
    signal = AngularVelocitySignal.constant(Frame.INERTIAL, W)

    with pytest.raises(ValueError):
        phi_magnus(signal, 1.0, 0.5, Trivialization.RIGHT)


@pytest.mark.parametrize('frame', [Frame.INERTIAL, Frame.BODY])
def test_phi_magnus_linear_rate_order(frame: Frame) -> None:
    errors = []

    for dt in (0.4, 0.2):
        signal = linear_signal(frame, dt)
        triv = frame.trivialization
        approx = phi_magnus(signal, 0.0, dt, triv, MagnusMethod.SECOND_ORDER)
        exact = phi_magnus(signal, 0.0, dt, triv, MagnusMethod.EXACT)
        errors.append(np.linalg.norm(exp_so3(approx) - exp_so3(exact)))

    assert errors[0] / errors[1] >= 7.0


@pytest.mark.parametrize('frame', [Frame.INERTIAL, Frame.BODY])
def test_phi_magnus_bracket_sign(frame: Frame) -> None:
    dt = 0.4
    signal = linear_signal(frame, dt)
    triv = frame.trivialization

    exact = exp_so3(phi_magnus(signal, 0.0, dt, triv, MagnusMethod.EXACT))
    approx = exp_so3(phi_magnus(signal, 0.0, dt, triv))
    mean_only = exp_so3(0.5 * (signal.rates[0] + signal.rates[1]) * dt)

    assert np.linalg.norm(approx - exact) \
        < 0.1 * np.linalg.norm(mean_only - exact)


def test_gramian_special_cases() -> None:
    signal = AngularVelocitySignal.constant(Frame.INERTIAL, W)
    path = magnus_path(signal, 0.0, Trivialization.RIGHT)

    zero = gramian(NoiseModel.isotropic(0.0), path, 0.0, 0.5,
                   Trivialization.RIGHT)
    iso = gramian(NoiseModel.isotropic(0.2), path, 0.0, 0.5,
                  Trivialization.RIGHT)

    assert np.array_equal(zero, np.zeros((3, 3)))
    assert np.allclose(iso, 0.04 * 0.5 * np.eye(3))

    still = AngularVelocitySignal.constant(Frame.BODY, np.zeros(3))
    g = gramian(NoiseModel.constant(H),
                magnus_path(still, 0.0, Trivialization.LEFT), 0.0, 0.5,
                Trivialization.LEFT)

    assert np.allclose(g, 0.5 * H @ H.T)
    assert np.allclose(g, g.T)


def test_transition_isotropic_constant_rate() -> None:
    gamma = 0.3
    dt = 0.2
    noise = NoiseModel.isotropic(gamma)
    shrink = 1.0 - gamma**2 * dt

    right = transition_right(
        0.0, dt, AngularVelocitySignal.constant(Frame.INERTIAL, W), noise)
    left = transition_left(
        0.0, dt, AngularVelocitySignal.constant(Frame.BODY, W), noise)

    assert np.allclose(right, shrink * exp_so3(dt * W), atol=1e-12)
    assert np.allclose(left, shrink * exp_so3(dt * W), atol=1e-12)


def test_exact_first_moment_noise_free() -> None:
    e0 = exp_so3(np.array([0.1, 0.2, -0.3])) @ np.diag([0.9, 0.5, 0.2])
    noise = NoiseModel.isotropic(0.0)

    inertial = AngularVelocitySignal.constant(Frame.INERTIAL, W)
    body = AngularVelocitySignal.constant(Frame.BODY, W)

    right = exact_first_moment(e0, inertial, noise, 0.0, 1.0)
    left = exact_first_moment(e0, body, noise, 0.0, 1.0)

    assert np.allclose(right, exp_so3(W) @ e0, atol=1e-10)
    assert np.allclose(left, e0 @ exp_so3(W), atol=1e-10)


@pytest.mark.parametrize('frame', [Frame.INERTIAL, Frame.BODY])
def test_transition_local_error_is_second_order(frame: Frame) -> None:
    signal = AngularVelocitySignal.constant(frame, W)
    noise = NoiseModel.constant(H)
    e0 = exp_so3(np.array([0.4, -0.1, 0.7])) @ np.diag([0.9, 0.6, 0.2])
    steps = np.array([0.04, 0.02, 0.01])
    residuals = []

    for h in steps:
        exact = exact_first_moment(e0, signal, noise, 0.0, float(h))

        if frame is Frame.INERTIAL:
            predicted = transition_right(0.0, float(h), signal, noise) @ e0
        else:
            predicted = e0 @ transition_left(0.0, float(h), signal, noise)

        residuals.append(np.linalg.norm(predicted - exact))

    slopes = np.diff(np.log(residuals)) / np.diff(np.log(steps))

    assert np.all(slopes >= 1.8)


def test_simulate_sde_noise_free() -> None:
    r0 = exp_so3(np.array([0.5, 0.0, 0.1]))
    signal = AngularVelocitySignal.constant(Frame.INERTIAL, W)

    path = simulate_sde(r0, signal, NoiseModel.isotropic(0.0), 0.01, 1.0,
                        np.random.default_rng(1))

    assert len(path) == 101
    assert path[-1][0] == pytest.approx(1.0)
    assert np.allclose(path[-1][1], exp_so3(W) @ r0, atol=1e-12)


def test_simulate_sde_ensemble_matches_moment() -> None:
    gamma = 0.3
    h = 0.02
    signal = AngularVelocitySignal.constant(Frame.INERTIAL, W)
    noise = NoiseModel.isotropic(gamma)

    finals = simulate_sde_ensemble(np.eye(3), signal, noise, h, 1.0,
                                   np.random.default_rng(3), 4000)
    predicted = exact_first_moment(np.eye(3), signal, noise, 0.0, 1.0)

    assert finals.shape == (4000, 3, 3)
    assert np.allclose(finals.mean(axis=0), predicted, atol=0.05)


@pytest.mark.slow
@pytest.mark.parametrize('frame', [Frame.INERTIAL, Frame.BODY])
def test_transition_matches_ensemble(frame: Frame) -> None:
    gamma = 0.1
    h = 0.01
    n_paths = 100_000
    r0 = exp_so3(np.array([0.3, 0.2, -0.6]))
    signal = AngularVelocitySignal.constant(frame, W)
    noise = NoiseModel.isotropic(gamma)

    finals = simulate_sde_ensemble(r0, signal, noise, h, 1.0,
                                   np.random.default_rng(11), n_paths)

    predicted = r0
    for k in range(100):
        if frame is Frame.INERTIAL:
            predicted = transition_right(k * h, (k + 1) * h, signal,
                                         noise) @ predicted
        else:
            predicted = predicted @ transition_left(k * h, (k + 1) * h,
                                                    signal, noise)

    mean = finals.mean(axis=0)
    standard_error = finals.std(axis=0, ddof=1) / np.sqrt(n_paths)

    assert np.all(np.abs(mean - predicted) <= 3.0 * standard_error + 1e-4)


def test_propagation_axis_asymmetry() -> None:
    f0 = MatrixFisher(np.diag([150.0, 10.0, 0.0]))
    rate = np.array([0.0, 0.0, np.pi / 2])
    quarter = exp_so3(rate)
    h = 0.01

    right = f0
    left = f0
    for _ in range(100):
        right = propagate_mf_right(right, rate, h, 0.0)
        left = propagate_mf_left(left, rate, h, 0.0)

    assert np.allclose(right.v, np.eye(3), atol=1e-9)
    assert np.allclose(right.u, quarter, atol=1e-9)
    assert np.allclose(left.u, np.eye(3), atol=1e-9)
    assert np.allclose(left.v, quarter.T, atol=1e-9)
    assert np.allclose(right.s, f0.s)
    assert np.allclose(mean_attitude(right), quarter, atol=1e-9)
    assert np.allclose(mean_attitude(left), quarter, atol=1e-9)


def test_propagate_shrinks_moment() -> None:
    mf = MatrixFisher(np.diag([20.0, 8.0, 3.0]))
    gamma = 0.5
    h = 0.01

    stepped = propagate_mf_right(mf, W, h, gamma)

    assert np.allclose(stepped.moment_triple.d,
                       (1.0 - h * gamma**2) * mf.moment_triple.d, atol=1e-10)
    assert np.allclose(stepped.u, exp_so3(h * W) @ mf.u)
    assert np.all(stepped.s < mf.s)


def test_propagate_uniform_stays_uniform() -> None:
    stepped = propagate_mf_left(MatrixFisher.uniform(), W, 0.01, 0.5)

    assert np.array_equal(stepped.s, np.zeros(3))


def test_propagate_invalid_step() -> None:
    mf = MatrixFisher(np.diag([5.0, 1.0, 0.0]))

    with pytest.raises(ValueError):
        propagate_mf_right(mf, W, 0.0, 0.1)

    with pytest.raises(ValueError):
        propagate_mf_left(mf, W, 1.0, 2.0)


def test_advect_and_diffuse() -> None:
    mf = MatrixFisher(np.diag([9.0, 4.0, 1.0]))
    rot = exp_so3(np.array([0.2, -0.4, 0.1]))

    assert np.allclose(advect_right(mf, rot).f, rot @ mf.f)
    assert np.allclose(advect_left(mf, rot).f, mf.f @ rot)
    assert diffuse(mf, 1.0) is mf

    with pytest.raises(ValueError):
        diffuse(mf, 1.5)
