"""Multiplicative extended Kalman filter for attitude.

The state is a mean rotation and the covariance of a small error rotation
vector delta, with R = mean exp(delta^) for a body-frame error and
R = exp(delta^) mean for an inertial-frame error.
"""
from fisherattitude.measurement import (
    DirectionMeasurement, ReferenceKind, orthonormal_complement)
from fisherattitude.propagation import Frame
from fisherattitude.so3 import exp_so3, hat
from fisherattitude.utils import FloatArray

import numpy as np
import numpy.typing as npt

from dataclasses import dataclass

UNKNOWN_ATTITUDE_STD = 1e4
MAX_INNOVATION_CONDITION = 1e12


class MekfException(Exception):
    pass


class SingularInnovationCovException(MekfException):
    pass


@dataclass(frozen=True, eq=False)
class MekfState:
    mean: FloatArray
    cov: FloatArray
    frame_of_error: Frame = Frame.BODY

    @classmethod
    def initial(cls, large: float = UNKNOWN_ATTITUDE_STD,
                frame_of_error: Frame = Frame.BODY) -> 'MekfState':
        """Identity mean with a very wide covariance.

        A Gaussian error state cannot represent a uniform attitude; a huge
        isotropic covariance stands in for it.
        """
        return cls(np.eye(3), large**2 * np.eye(3), frame_of_error)

    def cov_in(self, frame: Frame) -> FloatArray:
        """Error covariance resolved in the given frame."""

        if frame is self.frame_of_error:
            return self.cov

        if frame is Frame.INERTIAL:
            return self.mean @ self.cov @ self.mean.T

        return self.mean.T @ self.cov @ self.mean


def _symmetric(m: FloatArray) -> FloatArray:
    return 0.5 * (m + m.T)


def mekf_predict(state: MekfState, w: npt.ArrayLike, frame: Frame, h: float,
                 gamma: float) -> MekfState:
    """Propagates the mean with the measured rate and inflates the covariance.

    The error transition is the inverse rate increment when the rate and
    the error share the body frame, the rate increment when both are
    inertial, and the identity otherwise.
    """

    if h <= 0.0:
        raise ValueError('Step size must be positive')

    increment = exp_so3(h * np.asarray(w, dtype=np.float64))

    match frame:
        case Frame.INERTIAL:
            mean = increment @ state.mean
        case Frame.BODY:
            mean = state.mean @ increment

    if frame is not state.frame_of_error:
        transition = np.eye(3)
    elif frame is Frame.BODY:
        transition = increment.T
    else:
        transition = increment

    cov = transition @ state.cov @ transition.T + h * gamma**2 * np.eye(3)

    return MekfState(mean, _symmetric(cov), state.frame_of_error)


def _measurement_jacobian(state: MekfState, meas: DirectionMeasurement,
                          predicted: FloatArray) -> FloatArray:
    match (meas.kind, state.frame_of_error):
        case (ReferenceKind.INERTIAL_REF, Frame.BODY):
            return hat(predicted)
        case (ReferenceKind.INERTIAL_REF, Frame.INERTIAL):
            return state.mean.T @ hat(meas.reference)
        case (ReferenceKind.BODY_REF, Frame.BODY):
            return -state.mean @ hat(meas.reference)
        case _:
            return -hat(predicted)


def mekf_update(state: MekfState, meas: DirectionMeasurement) -> MekfState:
    """Kalman update with one direction reading.

    The innovation is resolved in the tangent plane of the predicted
    direction, where the von Mises-Fisher noise is approximated by a
    Gaussian with covariance I / kappa.

    Raises:
        SingularInnovationCovException: The 2x2 innovation covariance
            cannot be inverted reliably.
    """

    predicted = meas.predicted(state.mean)
    tangent = np.column_stack(orthonormal_complement(predicted))

    innovation = tangent.T @ (meas.reading - predicted)
    jac = tangent.T @ _measurement_jacobian(state, meas, predicted)
    noise = np.eye(2) / meas.kappa

    innovation_cov = jac @ state.cov @ jac.T + noise

    if (not np.all(np.isfinite(innovation_cov))
            or np.linalg.cond(innovation_cov) > MAX_INNOVATION_CONDITION):
        raise SingularInnovationCovException(
            f'Innovation covariance is singular:\n{innovation_cov}')

    gain = np.linalg.solve(innovation_cov, jac @ state.cov).T
    correction = exp_so3(gain @ innovation)

    match state.frame_of_error:
        case Frame.BODY:
            mean = state.mean @ correction
        case Frame.INERTIAL:
            mean = correction @ state.mean

    joseph = np.eye(3) - gain @ jac
    cov = joseph @ state.cov @ joseph.T + gain @ noise @ gain.T

    return MekfState(mean, _symmetric(cov), state.frame_of_error)


def export_cov(state: MekfState, frame: Frame) -> FloatArray:
    """Attitude error covariance in the frame the estimate is reported in."""
    return state.cov_in(frame)
