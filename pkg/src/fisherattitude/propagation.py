"""Uncertainty propagation through stochastic attitude kinematics.

Two forms of the kinematics are supported. The right-trivialized form is
driven by the inertial angular velocity (dR = (w dt + H dW)^ R) and the
left-trivialized form by the body angular velocity
(dR = R (W dt + H dW)^), both in the Stratonovich sense.
"""
from fisherattitude.matrix_fisher import MatrixFisher, solve_concentration
from fisherattitude.so3 import dexp_inv, exp_so3, hat, log_so3
from fisherattitude.utils import FloatArray

import numpy as np
import numpy.typing as npt
import enum
import logging

from collections.abc import Callable
from dataclasses import dataclass
from scipy import integrate

GRAMIAN_NODES = 16


class Frame(enum.Enum):
    INERTIAL = 'inertial'
    BODY = 'body'

    @property
    def trivialization(self) -> 'Trivialization':
        match self:
            case Frame.INERTIAL:
                return Trivialization.RIGHT
            case Frame.BODY:
                return Trivialization.LEFT


class Trivialization(enum.Enum):
    RIGHT = enum.auto()
    LEFT = enum.auto()


class Interpolation(enum.Enum):
    ZERO_ORDER_HOLD = 'zero_order_hold'
    LINEAR = 'linear'


class MagnusMethod(enum.Enum):
    SECOND_ORDER = enum.auto()
    EXACT = enum.auto()


def _segment_index(times: FloatArray, t: float) -> int:
    idx = int(np.searchsorted(times, t, side='right')) - 1
    return min(max(idx, 0), len(times) - 1)


@dataclass(frozen=True, eq=False)
class AngularVelocitySignal:
    """Sampled angular velocity resolved in the inertial or body frame.

    Outside the sampled range the first or last sample is held.
    """
    frame: Frame
    times: FloatArray
    rates: FloatArray
    interpolation: Interpolation = Interpolation.ZERO_ORDER_HOLD

    def __post_init__(self) -> None:
        times = np.atleast_1d(np.asarray(self.times, dtype=np.float64))
        rates = np.atleast_2d(np.asarray(self.rates, dtype=np.float64))

        if rates.shape != (len(times), 3):
            raise ValueError('Expected one 3-vector rate per timestamp')

        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(rates))):
            raise ValueError('Angular velocity samples must be finite')

        if np.any(np.diff(times) <= 0.0):
            raise ValueError('Timestamps must be strictly increasing')

        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'rates', rates)

    @classmethod
    def constant(cls, frame: Frame, w: npt.ArrayLike,
                 t0: float = 0.0) -> 'AngularVelocitySignal':
        return cls(frame, np.array([t0]), np.atleast_2d(w))

    @property
    def trivialization(self) -> Trivialization:
        return self.frame.trivialization

    def at(self, t: float) -> FloatArray:
        match self.interpolation:
            case Interpolation.ZERO_ORDER_HOLD:
                return self.rates[_segment_index(self.times, t)]
            case Interpolation.LINEAR:
                return np.array([np.interp(t, self.times, self.rates[:, i])
                                 for i in range(3)])

    def breakpoints(self, t: float, tau: float) -> FloatArray:
        inner = self.times[(self.times > t) & (self.times < tau)]
        return np.concatenate(([t], inner, [tau]))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Diffusion matrices H(t), held constant between timestamps."""
    times: FloatArray
    h_matrices: FloatArray
    isotropic_gamma: float | None = None

    def __post_init__(self) -> None:
        times = np.atleast_1d(np.asarray(self.times, dtype=np.float64))
        mats = np.asarray(self.h_matrices, dtype=np.float64)

        if mats.ndim == 2:
            mats = mats[np.newaxis]

        if mats.shape != (len(times), 3, 3):
            raise ValueError('Expected one 3x3 matrix per timestamp')

        if not np.all(np.isfinite(mats)):
            raise ValueError('Noise matrices must be finite')

        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'h_matrices', mats)

    @classmethod
    def isotropic(cls, gamma: float) -> 'NoiseModel':
        return cls(np.array([0.0]), gamma * np.eye(3), float(gamma))

    @classmethod
    def constant(cls, h: npt.ArrayLike) -> 'NoiseModel':
        return cls(np.array([0.0]), np.asarray(h, dtype=np.float64))

    def at(self, t: float) -> FloatArray:
        return self.h_matrices[_segment_index(self.times, t)]


def _segment_phi_second_order(signal: AngularVelocitySignal, ta: float,
                              tb: float, triv: Trivialization) -> FloatArray:
    dt = tb - ta

    match signal.interpolation:
        case Interpolation.ZERO_ORDER_HOLD:
            return signal.at(ta) * dt
        case Interpolation.LINEAR:
            wa = signal.at(ta)
            wb = signal.at(tb)
            bracket = dt**2 / 12.0 * np.cross(wa, wb)
            mean = 0.5 * (wa + wb) * dt

            if triv is Trivialization.RIGHT:
                return mean - bracket
            return mean + bracket


def _segment_phi_exact(signal: AngularVelocitySignal, ta: float, tb: float,
                       triv: Trivialization) -> FloatArray:
    sign = 1.0 if triv is Trivialization.RIGHT else -1.0
    # A held sample must not switch to the next one at the segment end
    held = (signal.at(ta)
            if signal.interpolation is Interpolation.ZERO_ORDER_HOLD
            else None)

    def rhs(sigma: float, phi: FloatArray) -> FloatArray:
        w = held if held is not None else signal.at(sigma)
        return dexp_inv(sign * phi, w)

    sol = integrate.solve_ivp(rhs, (ta, tb), np.zeros(3), method='DOP853',
                              rtol=1e-12, atol=1e-14)

    return sol.y[:, -1]


def phi_magnus(
    signal: AngularVelocitySignal,
    t: float,
    tau: float,
    triv: Trivialization,
    method: MagnusMethod = MagnusMethod.SECOND_ORDER
) -> FloatArray:
    """Rotation vector of the deterministic flow over [t, tau].

    Each sample segment uses the second-order Magnus term (exact for
    zero-order hold). Segments are composed by multiplying exponentials in
    time order: on the left for the right-trivialized flow, on the right
    for the left-trivialized flow.

    Args:
        signal (AngularVelocitySignal): Angular velocity samples.
        t (float): Start time.
        tau (float): End time, tau >= t.
        triv (Trivialization): Form of the kinematics.
        method (MagnusMethod): SECOND_ORDER, or EXACT to integrate the
            rotation-vector ODE with dexp^-1 per segment.

    Returns:
        FloatArray: phi with exp(phi^) the flow over [t, tau].
    """

    if tau < t:
        raise ValueError('Backward propagation is not supported')

    if tau == t:
        return np.zeros(3)

    segment = (_segment_phi_second_order
               if method is MagnusMethod.SECOND_ORDER else _segment_phi_exact)
    edges = signal.breakpoints(t, tau)

    if len(edges) == 2:
        return segment(signal, t, tau, triv)

    flow = np.eye(3)
    for ta, tb in zip(edges[:-1], edges[1:]):
        step = exp_so3(segment(signal, float(ta), float(tb), triv))

        if triv is Trivialization.RIGHT:
            flow = step @ flow
        else:
            flow = flow @ step

    return log_so3(flow)


def magnus_path(
    signal: AngularVelocitySignal,
    t: float,
    triv: Trivialization,
    method: MagnusMethod = MagnusMethod.SECOND_ORDER
) -> Callable[[float], FloatArray]:
    def path(sigma: float) -> FloatArray:
        return phi_magnus(signal, t, sigma, triv, method)

    return path


def gramian(
    noise: NoiseModel,
    phi_path: Callable[[float], FloatArray],
    t: float,
    tau: float,
    triv: Trivialization,
    nodes: int = GRAMIAN_NODES
) -> FloatArray:
    """Diffusion Gramian by the trapezoid rule.

    Right: int exp(-phi^) H H^T exp(phi^) dsigma.
    Left:  int exp(phi^) H H^T exp(-phi^) dsigma.
    """

    if tau < t:
        raise ValueError('Backward propagation is not supported')

    if tau == t:
        return np.zeros((3, 3))

    sigmas = np.linspace(t, tau, max(nodes, 2))
    kernel = np.empty((len(sigmas), 3, 3))

    for n, sigma in enumerate(sigmas):
        flow = exp_so3(phi_path(float(sigma)))
        h = noise.at(float(sigma))
        hh = h @ h.T

        if triv is Trivialization.RIGHT:
            kernel[n] = flow.T @ hh @ flow
        else:
            kernel[n] = flow @ hh @ flow.T

    g = integrate.trapezoid(kernel, sigmas, axis=0)

    return 0.5 * (g + g.T)


def _diffusion_factor(g: FloatArray) -> FloatArray:
    return np.eye(3) + 0.5 * (g - np.trace(g) * np.eye(3))


def transition_right(
    t: float,
    tau: float,
    signal: AngularVelocitySignal,
    noise: NoiseModel,
    nodes: int = GRAMIAN_NODES
) -> FloatArray:
    """First-moment transition with E[R(tau)] ~ Phi_R E[R(t)]."""

    phi = phi_magnus(signal, t, tau, Trivialization.RIGHT)
    g = gramian(noise, magnus_path(signal, t, Trivialization.RIGHT), t, tau,
                Trivialization.RIGHT, nodes)

    return exp_so3(phi) @ _diffusion_factor(g)


def transition_left(
    t: float,
    tau: float,
    signal: AngularVelocitySignal,
    noise: NoiseModel,
    nodes: int = GRAMIAN_NODES
) -> FloatArray:
    """First-moment transition with E[R(tau)] ~ E[R(t)] Phi_L."""

    phi = phi_magnus(signal, t, tau, Trivialization.LEFT)
    g = gramian(noise, magnus_path(signal, t, Trivialization.LEFT), t, tau,
                Trivialization.LEFT, nodes)

    return _diffusion_factor(g) @ exp_so3(phi)


def exact_first_moment(
    e0: npt.ArrayLike,
    signal: AngularVelocitySignal,
    noise: NoiseModel,
    t: float,
    tau: float
) -> FloatArray:
    """Integrates the linear ODE satisfied by E[R].

    With K = (H H^T - tr(H H^T) I) / 2 the mean obeys dE = (w^ + K) E dt
    (right) or dE = E (W^ + K) dt (left).
    """

    right = signal.trivialization is Trivialization.RIGHT
    linear = signal.interpolation is Interpolation.LINEAR
    moment = np.asarray(e0, dtype=np.float64).copy()

    edges = np.union1d(signal.breakpoints(t, tau),
                       noise.times[(noise.times > t) & (noise.times < tau)])

    for ta, tb in zip(edges[:-1], edges[1:]):
        # Held values are taken at the segment start
        h = noise.at(float(ta))
        hh = h @ h.T
        correction = 0.5 * (hh - np.trace(hh) * np.eye(3))
        held = hat(signal.at(float(ta)))

        def rhs(sigma: float, flat: FloatArray) -> FloatArray:
            e = flat.reshape(3, 3)
            rate = hat(signal.at(sigma)) if linear else held
            drift = rate + correction

            return (drift @ e).ravel() if right else (e @ drift).ravel()

        sol = integrate.solve_ivp(rhs, (float(ta), float(tb)), moment.ravel(),
                                  method='DOP853', rtol=1e-12, atol=1e-14)
        moment = sol.y[:, -1].reshape(3, 3)

    return moment


def _noise_increments(signal: AngularVelocitySignal, noise: NoiseModel,
                      t: float, h: float, rng: np.random.Generator,
                      n_paths: int) -> FloatArray:
    xi = rng.standard_normal((n_paths, 3))

    return signal.at(t) * h + (xi @ noise.at(t).T) * np.sqrt(h)


def _step_count(h: float, t_end: float) -> int:
    if h <= 0.0:
        raise ValueError('Step size must be positive')

    return int(round(t_end / h))


def simulate_sde(
    r0: npt.ArrayLike,
    signal: AngularVelocitySignal,
    noise: NoiseModel,
    h: float,
    t_end: float,
    rng: np.random.Generator
) -> list[tuple[float, FloatArray]]:
    """Samples one attitude path with geometric Euler-Maruyama steps.

    The signal frame selects the kinematics: inertial rates multiply on the
    left, body rates on the right.
    """

    steps = _step_count(h, t_end)
    right = signal.trivialization is Trivialization.RIGHT
    r = np.asarray(r0, dtype=np.float64).copy()
    path = [(0.0, r.copy())]

    for k in range(steps):
        inc = exp_so3(_noise_increments(signal, noise, k * h, h, rng, 1)[0])
        r = inc @ r if right else r @ inc
        path.append(((k + 1) * h, r.copy()))

    return path


def simulate_sde_ensemble(
    r0: npt.ArrayLike,
    signal: AngularVelocitySignal,
    noise: NoiseModel,
    h: float,
    t_end: float,
    rng: np.random.Generator,
    n_paths: int
) -> FloatArray:
    """Final attitudes of n_paths independent paths, shape (n_paths, 3, 3)."""

    logger = logging.getLogger('fisherattitude.propagation')

    steps = _step_count(h, t_end)
    right = signal.trivialization is Trivialization.RIGHT
    r = np.broadcast_to(np.asarray(r0, dtype=np.float64),
                        (n_paths, 3, 3)).copy()

    logger.info(f'Simulating {n_paths} paths over {steps} steps')

    for k in range(steps):
        inc = exp_so3(_noise_increments(signal, noise, k * h, h, rng,
                                        n_paths))
        r = inc @ r if right else r @ inc

    return r


def _check_step(h: float, gamma: float) -> float:
    if h <= 0.0:
        raise ValueError('Step size must be positive')

    factor = 1.0 - h * gamma**2

    if factor <= 0.0:
        raise ValueError(f'Step {h} too large for noise level {gamma}')

    return factor


def advect_right(mf: MatrixFisher, rotation: FloatArray) -> MatrixFisher:
    """Applies R -> rotation R, which rotates the inertial principal axes."""
    return MatrixFisher.from_svd(rotation @ mf.u, mf.s, mf.v)


def advect_left(mf: MatrixFisher, rotation: FloatArray) -> MatrixFisher:
    """Applies R -> R rotation, which rotates the body principal axes."""
    return MatrixFisher.from_svd(mf.u, mf.s, rotation.T @ mf.v)


def diffuse(mf: MatrixFisher, factor: float) -> MatrixFisher:
    """Shrinks the first moment by factor and refits S.

    Raises:
        NoConvergenceException: The refit did not converge.
    """

    if not 0.0 < factor <= 1.0:
        raise ValueError(f'Shrink factor {factor} outside (0, 1]')

    if factor == 1.0 or not np.any(mf.s):
        return mf

    d = factor * mf.moment_triple.d
    s = solve_concentration(d, s0=mf.s)

    return MatrixFisher.from_svd(mf.u, s, mf.v)


def propagate_mf_right(f_k: MatrixFisher, omega_k: npt.ArrayLike, h: float,
                       gamma: float) -> MatrixFisher:
    """One step of the inertial-rate matrix Fisher propagation.

    U is rotated by exp(h w^), V is kept and S is refit so that the proper
    singular values of the first moment shrink by 1 - h gamma^2.
    """

    factor = _check_step(h, gamma)
    rotation = exp_so3(h * np.asarray(omega_k, dtype=np.float64))

    return diffuse(advect_right(f_k, rotation), factor)


def propagate_mf_left(f_k: MatrixFisher, Omega_k: npt.ArrayLike, h: float,
                      gamma: float) -> MatrixFisher:
    """One step of the body-rate matrix Fisher propagation.

    V is rotated by exp(-h W^), U is kept and S shrinks as in the
    inertial-rate case.
    """

    factor = _check_step(h, gamma)
    rotation = exp_so3(h * np.asarray(Omega_k, dtype=np.float64))

    return diffuse(advect_left(f_k, rotation), factor)
