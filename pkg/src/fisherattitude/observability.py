"""Stochastic and deterministic attitude observability.

With the proper SVD E[R] = U D V^T the attitude is stochastically
observable when d2 + d3 > 0, that is when O = tr(D) I - D is positive
definite. The determinant of O is reported as a scalar measure.
"""
from fisherattitude.matrix_fisher import (
    MatrixFisher, MomentTriple, first_moment, log_c_hessian, mle_from_moment)
from fisherattitude.measurement import ReferenceKind
from fisherattitude.so3 import ProperSvd, exp_so3, hat, proper_svd
from fisherattitude.utils import FloatArray

import numpy as np
import numpy.typing as npt
import enum
import logging

from collections.abc import Callable
from typing import NamedTuple

ZERO_TOLERANCE = 1e-8
RANK_STEP = 1e-5
RANK_CUTOFF = 1e-7


class MmseCase(enum.Enum):
    UNIQUE = 'unique'
    AMBIGUOUS_1D = 'ambiguous_1d'
    AMBIGUOUS_2D = 'ambiguous_2d'
    UNIFORM_3D = 'uniform_3d'


class MmseClassification(NamedTuple):
    case: MmseCase
    representative: FloatArray
    ambiguity_axis: FloatArray | None = None


class ObservabilityReport(NamedTuple):
    d: FloatArray
    o_matrix: FloatArray
    rho: float
    fim_mean: FloatArray
    classification: MmseClassification

    def to_row(self, t: float) -> list[float | str]:
        return [t, *self.d.tolist(), self.rho,
                *np.diag(self.fim_mean).tolist(),
                self.classification.case.value]


def classify_mmse(ebar: npt.ArrayLike,
                  tol: float = ZERO_TOLERANCE) -> MmseClassification:
    """Minimum mean squared error attitude(s) for a first moment.

    The maximizers of tr(R^T E[R]) form a single rotation, a circle of
    rotations about U e1, a two-dimensional family, or all of SO(3).
    """

    svd = proper_svd(ebar)
    d = svd.s
    representative = svd.u @ svd.v.T

    if d[1] + d[2] > tol:
        return MmseClassification(MmseCase.UNIQUE, representative)

    if abs(d[0]) < tol:
        return MmseClassification(MmseCase.UNIFORM_3D, representative)

    if abs(d[0] - d[1]) < tol:
        return MmseClassification(MmseCase.AMBIGUOUS_2D, representative)

    return MmseClassification(MmseCase.AMBIGUOUS_1D, representative,
                              svd.u[:, 0].copy())


def _hat_d_hat(d: FloatArray) -> list[FloatArray]:
    # e_i^ D e_i^ for i = 1, 2, 3
    return [np.diag([0.0, -d[2], -d[1]]),
            np.diag([-d[2], 0.0, -d[0]]),
            np.diag([-d[1], -d[0], 0.0])]


def fim_full(svd: ProperSvd, moments: MomentTriple,
             d2_logc: npt.ArrayLike) -> FloatArray:
    """Fisher information of (U, S, V) in the order (u, s, v).

    The u and v coordinates perturb the principal axes as U exp(u^) and
    V exp(v^).
    """

    s = svd.s
    d = moments.d
    ds = np.diag(d * s)
    corner = np.trace(ds) * np.eye(3) - ds
    coupling = np.einsum('i,ijk->jk', s, np.array(_hat_d_hat(d)))

    fim = np.zeros((9, 9))
    fim[0:3, 0:3] = corner
    fim[3:6, 3:6] = np.asarray(d2_logc, dtype=np.float64)
    fim[6:9, 6:9] = corner
    fim[0:3, 6:9] = coupling
    fim[6:9, 0:3] = np.transpose(coupling)

    return 0.5 * (fim + fim.T)


def fim_full_for(mf: MatrixFisher) -> FloatArray:
    return fim_full(mf.svd, mf.moment_triple, log_c_hessian(mf.s))


def project_mean_information(fim: npt.ArrayLike) -> FloatArray:
    """Reduces full information to the mean attitude via eta = (u - v)/2."""

    projection = 0.5 * np.hstack([np.eye(3), np.zeros((3, 3)), -np.eye(3)])

    return projection @ np.asarray(fim, dtype=np.float64) @ projection.T


def fim_mean_attitude(mf: MatrixFisher) -> FloatArray:
    s = mf.s
    d = mf.moment_triple.d
    pair_s = s.sum() - s
    pair_d = d.sum() - d

    return np.diag(np.maximum(0.5 * pair_d * pair_s, 0.0))


def score_vectors(svd: ProperSvd, d: npt.ArrayLike,
                  rotations: npt.ArrayLike) -> FloatArray:
    """Gradient of the log-likelihood at each rotation, shape (n, 9)."""

    rots = np.asarray(rotations, dtype=np.float64)
    q = np.einsum('ji,njk,kl->nil', svd.u, rots, svd.v)
    s = np.diag(svd.s)
    qt = np.swapaxes(q, 1, 2)

    left = q @ s - s @ qt
    right = qt @ s - s @ q

    def vee_stack(m: FloatArray) -> FloatArray:
        return np.stack([m[:, 2, 1], m[:, 0, 2], m[:, 1, 0]], axis=1)

    diag = np.einsum('nii->ni', q) - np.asarray(d, dtype=np.float64)

    return np.hstack([vee_stack(left), diag, vee_stack(right)])


def report(ebar_or_mf: MatrixFisher | npt.ArrayLike,
           tol: float = ZERO_TOLERANCE) -> ObservabilityReport:
    """Bundles the observability quantities of a distribution.

    A raw first moment is first fitted with a matrix Fisher distribution so
    that the mean-attitude information can be evaluated.
    """

    if isinstance(ebar_or_mf, MatrixFisher):
        mf = ebar_or_mf
        ebar = first_moment(mf)
    else:
        ebar = np.asarray(ebar_or_mf, dtype=np.float64)
        mf = mle_from_moment(ebar)

    classification = classify_mmse(ebar, tol)
    d = mf.moment_triple.d

    # Pair sums below tolerance are treated as exact zeros
    pair_d = d.sum() - d
    pair_d = np.where(np.abs(pair_d) < tol, 0.0, pair_d)
    o_matrix = np.diag(pair_d)
    rho = float(np.prod(pair_d))

    return ObservabilityReport(d, o_matrix, rho, fim_mean_attitude(mf),
                               classification)


def _output_map(kind: ReferenceKind,
                ref: FloatArray) -> Callable[[FloatArray], FloatArray]:
    match kind:
        case ReferenceKind.INERTIAL_REF:
            return lambda r: r.T @ ref
        case ReferenceKind.BODY_REF:
            return lambda r: r @ ref


def deterministic_rank(r0: npt.ArrayLike, kind: ReferenceKind,
                       ref: npt.ArrayLike, step: float = RANK_STEP,
                       cutoff: float = RANK_CUTOFF) -> int:
    """Rank of the observability codistribution at r0.

    The attitude evolves as dR/dt = eta^ R for arbitrary eta. The outputs
    are linear in R, so the Lie derivative of h(R) = f(R) along eta^ R is
    f(eta^ R) and repeated derivatives stack the hat matrices. Differentials
    of the outputs and their Lie derivatives up to second order are taken in
    the chart exp(theta^) r0 by central differences.
    """

    logger = logging.getLogger('fisherattitude.observability')

    rot0 = np.asarray(r0, dtype=np.float64)
    refv = np.asarray(ref, dtype=np.float64)
    output = _output_map(kind, refv)

    basis = [hat(e) for e in np.eye(3)]
    multipliers = [np.eye(3)] + basis + [outer @ inner for inner in basis
                                         for outer in basis]

    rows = []
    for mult in multipliers:
        jac = np.empty((3, 3))
        for i, e in enumerate(np.eye(3)):
            plus = output(mult @ exp_so3(step * e) @ rot0)
            minus = output(mult @ exp_so3(-step * e) @ rot0)
            jac[:, i] = (plus - minus) / (2.0 * step)
        rows.append(jac)

    singular = np.linalg.svd(np.vstack(rows), compute_uv=False)
    rank = int(np.sum(singular > cutoff))

    logger.debug(f'Observability codistribution singular values {singular}')

    return rank
