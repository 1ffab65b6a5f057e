"""Single-direction measurements and their conjugate updates.

A direction reading follows a von Mises-Fisher distribution on the unit
sphere. For an inertial reference vector a the body-frame reading x has
mean direction R^T a; for a body-fixed reference b the inertial reading y
has mean direction R b. Both likelihoods are conjugate to the matrix Fisher
prior, so the update adds a rank-one term to F.
"""
from fisherattitude.matrix_fisher import MatrixFisher
from fisherattitude.utils import FloatArray

import numpy as np
import numpy.typing as npt
import enum
import math

from dataclasses import dataclass


class MeasurementException(Exception):
    pass


class InvalidMeasurementException(MeasurementException):
    pass


class ReferenceKind(enum.Enum):
    INERTIAL_REF = 'inertial_ref'
    BODY_REF = 'body_ref'


def _unit(v: npt.ArrayLike, name: str) -> FloatArray:
    arr = np.asarray(v, dtype=np.float64)

    if arr.shape != (3,) or abs(np.linalg.norm(arr) - 1.0) > 1e-9:
        raise InvalidMeasurementException(f'{name} must be a unit 3-vector')

    return arr


@dataclass(frozen=True, eq=False)
class DirectionMeasurement:
    kind: ReferenceKind
    reference: FloatArray
    reading: FloatArray
    kappa: float
    t: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, 'reference',
                           _unit(self.reference, 'Reference'))
        object.__setattr__(self, 'reading', _unit(self.reading, 'Reading'))

        if not self.kappa > 0.0:
            raise InvalidMeasurementException('kappa must be positive')

    def predicted(self, r: npt.ArrayLike) -> FloatArray:
        """Mean direction of the reading for attitude r."""

        rot = np.asarray(r, dtype=np.float64)

        match self.kind:
            case ReferenceKind.INERTIAL_REF:
                return rot.T @ self.reference
            case ReferenceKind.BODY_REF:
                return rot @ self.reference


def orthonormal_complement(mu: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Two unit vectors completing mu to a right-handed orthonormal basis."""

    helper = np.eye(3)[int(np.argmin(np.abs(mu)))]
    first = np.cross(mu, helper)
    first /= np.linalg.norm(first)

    return first, np.cross(mu, first)


def sample_vmf(mu: npt.ArrayLike, kappa: float, rng: np.random.Generator,
               n: int | None = None) -> FloatArray:
    """Draws from the von Mises-Fisher distribution on the unit sphere.

    The cosine to the mean direction is drawn by inverting its CDF and the
    azimuth uniformly.

    Returns:
        FloatArray: Shape (3,) when n is None, else (n, 3).
    """

    if not kappa > 0.0:
        raise InvalidMeasurementException('kappa must be positive')

    mean = _unit(mu, 'Mean direction')
    count = 1 if n is None else n

    xi = rng.random(count)
    azimuth = 2.0 * np.pi * rng.random(count)

    w = 1.0 + np.log1p(xi * np.expm1(-2.0 * kappa)) / kappa
    w = np.clip(w, -1.0, 1.0)
    radial = np.sqrt(1.0 - w**2)

    first, second = orthonormal_complement(mean)
    draws = (w[:, np.newaxis] * mean
             + radial[:, np.newaxis] * (np.cos(azimuth)[:, np.newaxis] * first
                                        + np.sin(azimuth)[:, np.newaxis]
                                        * second))

    return draws[0] if n is None else draws


def mean_resultant_length(kappa: float) -> float:
    """Expected cosine to the mean direction, coth(kappa) - 1/kappa."""
    return 1.0 / math.tanh(kappa) - 1.0 / kappa


def sample_inertial(r_true: npt.ArrayLike, a: npt.ArrayLike, kappa: float,
                    rng: np.random.Generator) -> FloatArray:
    rot = np.asarray(r_true, dtype=np.float64)
    return sample_vmf(rot.T @ np.asarray(a, dtype=np.float64), kappa, rng)


def sample_body(r_true: npt.ArrayLike, b: npt.ArrayLike, kappa: float,
                rng: np.random.Generator) -> FloatArray:
    rot = np.asarray(r_true, dtype=np.float64)
    return sample_vmf(rot @ np.asarray(b, dtype=np.float64), kappa, rng)


def _log_vmf_constant(kappa: float) -> float:
    log_sinh = kappa + math.log1p(-math.exp(-2.0 * kappa)) - math.log(2.0)
    return math.log(kappa) - math.log(4.0 * math.pi) - log_sinh


def log_likelihood(meas: DirectionMeasurement,
                   r: npt.ArrayLike) -> FloatArray:
    """Log-density of the reading given one attitude or a stack of them."""

    rot = np.asarray(r, dtype=np.float64)

    match meas.kind:
        case ReferenceKind.INERTIAL_REF:
            alignment = np.einsum('i,...ij,j->...', meas.reference, rot,
                                  meas.reading)
        case ReferenceKind.BODY_REF:
            alignment = np.einsum('i,...ij,j->...', meas.reading, rot,
                                  meas.reference)

    return _log_vmf_constant(meas.kappa) + meas.kappa * alignment


def update_inertial(prior: MatrixFisher, a: npt.ArrayLike, x: npt.ArrayLike,
                    kappa: float) -> MatrixFisher:
    """Posterior for a body-frame reading x of the inertial vector a."""

    av = _unit(a, 'Reference')
    xv = _unit(x, 'Reading')

    return MatrixFisher(prior.f + kappa * np.outer(av, xv))


def update_body(prior: MatrixFisher, b: npt.ArrayLike, y: npt.ArrayLike,
                kappa: float) -> MatrixFisher:
    """Posterior for an inertial reading y of the body-fixed vector b."""

    bv = _unit(b, 'Reference')
    yv = _unit(y, 'Reading')

    return MatrixFisher(prior.f + kappa * np.outer(yv, bv))


def update(prior: MatrixFisher, meas: DirectionMeasurement) -> MatrixFisher:
    match meas.kind:
        case ReferenceKind.INERTIAL_REF:
            return update_inertial(prior, meas.reference, meas.reading,
                                   meas.kappa)
        case ReferenceKind.BODY_REF:
            return update_body(prior, meas.reference, meas.reading,
                               meas.kappa)
