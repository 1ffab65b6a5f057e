"""The matrix Fisher distribution on SO(3).

The density is p(R) = exp(tr(F^T R)) / c(S) with respect to the normalized
Haar measure, so c(0) = 1. With the proper SVD F = U S V^T the normalizing
constant depends on S only and reduces to a one-dimensional integral of
modified Bessel functions. For any index triple (i, j, k)

    c(S) = int_{-1}^{1} 1/2 I0(a) I0(b) exp(s_k u) du

with a = (s_i - s_j)(1 - u)/2 and b = (s_i + s_j)(1 + u)/2. The partial
derivatives follow from the same kernel family:

    dc/ds_k           = int 1/2 u I0(a) I0(b) exp(s_k u) du
    dc/ds_i + dc/ds_j = int 1/2 (1 + u) I0(a) I1(b) exp(s_k u) du
    dc/ds_i - dc/ds_j = int 1/2 (1 - u) I1(a) I0(b) exp(s_k u) du

All kernels are evaluated with exponentially scaled Bessel functions and a
log offset so that large concentrations stay finite.
"""
from fisherattitude.so3 import ProperSvd, exp_so3, hat, proper_svd
from fisherattitude.utils import FloatArray

import numpy as np
import numpy.typing as npt
import logging
import math

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple
from scipy import integrate, special
from scipy.spatial.transform import Rotation

QUAD_EPSREL = 1e-11
NEWTON_MAX_ITER = 200
NEWTON_TOL = 1e-11
FD_STEP = 1e-4
MOMENT_SLACK = 1e-9
MAX_PROPOSALS = 10**9

# Kernel table rows: (alpha, beta, order of I(a), order of I(b)); each kernel
# integrates 1/2 (alpha + beta u) I_na(a) I_nb(b) exp(s_k u).
_ALPHA = np.array([[1.0, 0.0, 1.0, 1.0]])
_BETA = np.array([[0.0, 1.0, 1.0, -1.0]])
_ORDER_A = np.array([[0.0, 0.0, 0.0, 1.0]])
_ORDER_B = np.array([[0.0, 0.0, 1.0, 0.0]])

_PAIRS = ((1, 2, 0), (0, 2, 1), (0, 1, 2))


class MatrixFisherException(Exception):
    pass


class QuadratureFailureException(MatrixFisherException):
    pass


class NotAMomentException(MatrixFisherException):
    pass


class NoConvergenceException(MatrixFisherException):
    pass


class SamplingBudgetException(MatrixFisherException):
    pass


class Normalizer(NamedTuple):
    """Normalizing constant c(S) and its gradient, stored scaled.

    The true values are ``scaled_c * exp(log_offset)`` and
    ``scaled_dc * exp(log_offset)``.
    """
    scaled_c: float
    scaled_dc: FloatArray
    log_offset: float

    @property
    def c(self) -> float:
        with np.errstate(over='ignore'):
            return float(self.scaled_c * np.exp(self.log_offset))

    @property
    def dc(self) -> FloatArray:
        with np.errstate(over='ignore'):
            return self.scaled_dc * np.exp(self.log_offset)

    @property
    def log_c(self) -> float:
        return math.log(self.scaled_c) + self.log_offset

    @property
    def moments(self) -> FloatArray:
        """Proper singular values d_i = (dc/ds_i) / c of E[R]."""
        return self.scaled_dc / self.scaled_c


class MomentTriple(NamedTuple):
    d: FloatArray
    u: FloatArray
    v: FloatArray

    def matrix(self) -> FloatArray:
        return self.u @ np.diag(self.d) @ self.v.T


@dataclass(frozen=True, eq=False)
class MatrixFisher:
    """Matrix Fisher distribution with parameter F and its proper SVD.

    Instances are immutable. The normalizing constant is computed lazily
    and cached. Use ``from_svd`` to build from known principal axes without
    re-decomposing F.
    """
    f: FloatArray
    svd: ProperSvd | None = None

    def __post_init__(self) -> None:
        f = np.array(self.f, dtype=np.float64)

        if f.shape != (3, 3) or not np.all(np.isfinite(f)):
            raise ValueError(f'Parameter must be a finite 3x3 matrix: {f}')

        object.__setattr__(self, 'f', f)

        if self.svd is None:
            object.__setattr__(self, 'svd', proper_svd(f))

    @classmethod
    def from_svd(cls, u: npt.ArrayLike, s: npt.ArrayLike,
                 v: npt.ArrayLike) -> 'MatrixFisher':
        um = np.asarray(u, dtype=np.float64)
        sv = np.asarray(s, dtype=np.float64)
        vm = np.asarray(v, dtype=np.float64)

        return cls(um @ np.diag(sv) @ vm.T, ProperSvd(um, sv, vm))

    @classmethod
    def uniform(cls) -> 'MatrixFisher':
        return cls.from_svd(np.eye(3), np.zeros(3), np.eye(3))

    @property
    def u(self) -> FloatArray:
        return self.svd.u

    @property
    def s(self) -> FloatArray:
        return self.svd.s

    @property
    def v(self) -> FloatArray:
        return self.svd.v

    @cached_property
    def normalizing_constant(self) -> Normalizer:
        return normalizer(self.svd.s)

    @cached_property
    def moment_triple(self) -> MomentTriple:
        return MomentTriple(self.normalizing_constant.moments,
                            self.svd.u, self.svd.v)


def _pair_order(s: FloatArray) -> tuple[int, int, int]:
    # The pair with the smallest |s_i + s_j| makes the zero-sum cases exact.
    sums = [abs(s[i] + s[j]) for i, j, _ in _PAIRS]
    return _PAIRS[int(np.argmin(sums))]


def _split_points(scale: float) -> list[float] | None:
    if scale <= 10.0:
        return None

    points: list[float] = []
    for width in (2.0, 8.0, 32.0):
        if width / scale < 1.0:
            points.extend((-1.0 + width / scale, 1.0 - width / scale))

    return sorted(set(points)) or None


def _integrate(s_rows: FloatArray) -> tuple[FloatArray, FloatArray,
                                            FloatArray]:
    """Scaled c, scaled gradient and log offsets for a batch of s-vectors.

    Raises:
        QuadratureFailureException: Adaptive refinement did not reach the
            requested tolerance.
    """

    rows = np.atleast_2d(np.asarray(s_rows, dtype=np.float64))
    orders = np.array([_pair_order(row) for row in rows])
    index = np.arange(rows.shape[0])

    si = rows[index, orders[:, 0]][:, np.newaxis]
    sj = rows[index, orders[:, 1]][:, np.newaxis]
    sk = rows[index, orders[:, 2]][:, np.newaxis]

    diff = si - sj
    total = si + sj
    offset = np.maximum(np.abs(total) + sk, np.abs(diff) - sk)

    def kernels(u: float) -> FloatArray:
        a = 0.5 * diff * (1.0 - u)
        b = 0.5 * total * (1.0 + u)
        exponent = np.abs(a) + np.abs(b) + sk * u - offset
        bessel = special.ive(_ORDER_A, a) * special.ive(_ORDER_B, b)

        return 0.5 * (_ALPHA + _BETA * u) * bessel * np.exp(exponent)

    scale = float(np.max(np.abs(rows))) if rows.size else 0.0

    result, error, info = integrate.quad_vec(
        kernels, -1.0, 1.0, epsrel=QUAD_EPSREL, norm='max',
        points=_split_points(scale), full_output=True)

    if not info.success:
        raise QuadratureFailureException(
            f'Normalizer quadrature failed ({info.message}), '
            f'error estimate {error:.3e}')

    scaled_c = result[:, 0]
    scaled_dc = np.empty_like(rows)
    scaled_dc[index, orders[:, 2]] = result[:, 1]
    scaled_dc[index, orders[:, 0]] = 0.5 * (result[:, 2] + result[:, 3])
    scaled_dc[index, orders[:, 1]] = 0.5 * (result[:, 2] - result[:, 3])

    return scaled_c, scaled_dc, offset[:, 0]


def normalizer(s: npt.ArrayLike) -> Normalizer:
    """Normalizing constant c(S) and its partial derivatives.

    Args:
        s (ArrayLike): Diagonal of S. Negative entries are allowed.

    Raises:
        QuadratureFailureException: The quadrature did not converge.

    Returns:
        Normalizer: Scaled values with the log offset.
    """

    sv = np.asarray(s, dtype=np.float64)

    if sv.shape != (3,) or not np.all(np.isfinite(sv)):
        raise ValueError(f'Expected a finite 3-vector, got {sv}')

    scaled_c, scaled_dc, offset = _integrate(sv[np.newaxis, :])

    return Normalizer(float(scaled_c[0]), scaled_dc[0], float(offset[0]))


def _moment_rows(s_rows: FloatArray) -> FloatArray:
    scaled_c, scaled_dc, _ = _integrate(s_rows)

    return scaled_dc / scaled_c[:, np.newaxis]


def _moments_with_jacobian(
    s: FloatArray, step: float = FD_STEP
) -> tuple[FloatArray, FloatArray]:
    rows = [s]
    for i in range(3):
        shift = np.zeros(3)
        shift[i] = step
        rows.extend((s + shift, s - shift))

    d_rows = _moment_rows(np.array(rows))
    jacobian = np.empty((3, 3))

    for i in range(3):
        jacobian[:, i] = (d_rows[1 + 2 * i] - d_rows[2 + 2 * i]) / (2 * step)

    return d_rows[0], jacobian


def log_c_hessian(s: npt.ArrayLike, step: float = FD_STEP) -> FloatArray:
    """Second derivatives of log c(S) by central differences of dc/c."""

    _, jacobian = _moments_with_jacobian(
        np.asarray(s, dtype=np.float64), step)

    return 0.5 * (jacobian + jacobian.T)


def _pair_concentration(m: float) -> float:
    # Interpolates sigma ~ 6m for diffuse and 1/(1 - m) for concentrated
    # rotations about one axis, where m is the mean of a moment pair.
    mag = min(abs(m), 1.0 - 1e-12)
    return math.copysign(mag * (6.0 - 4.0 * mag) / (1.0 - mag**2), m)


def initial_concentration(d: npt.ArrayLike) -> FloatArray:
    """Starting point for the moment-matching Newton iteration.

    Each pair sum s_i + s_j is estimated from d_i + d_j, then the three
    pair sums are unmixed. Zero pair sums map to zero exactly.
    """

    dv = np.asarray(d, dtype=np.float64)
    sigma = np.zeros(3)

    for i, j, k in _PAIRS:
        sigma[k] = _pair_concentration(0.5 * (dv[i] + dv[j]))

    return 0.5 * (sigma.sum() - 2.0 * sigma)


def check_moment(d: npt.ArrayLike) -> FloatArray:
    """Validates proper singular values of a first moment.

    Ordered values d1 >= d2 >= |d3| are a moment of some distribution with
    a density exactly when d1 + d2 - d3 < 1; the other faces of the
    tetrahedron spanned by the diagonals of proper rotations are then
    satisfied as well.

    Raises:
        NotAMomentException: d is unordered or outside the tetrahedron.
    """

    dv = np.asarray(d, dtype=np.float64)

    if dv.shape != (3,) or not np.all(np.isfinite(dv)):
        raise NotAMomentException(f'Expected three finite values, got {dv}')

    if dv[0] >= 1.0:
        raise NotAMomentException(f'd1 = {dv[0]} is not below 1')

    if (dv[1] - dv[0] > MOMENT_SLACK
            or abs(dv[2]) - dv[1] > MOMENT_SLACK):
        raise NotAMomentException(f'd = {dv} is not ordered d1 >= d2 >= |d3|')

    if dv[0] + dv[1] - dv[2] >= 1.0:
        raise NotAMomentException(
            f'd = {dv} lies outside the moment tetrahedron '
            '(d1 + d2 - d3 >= 1)')

    return dv


def solve_concentration(
    d: npt.ArrayLike,
    s0: npt.ArrayLike | None = None,
    tol: float = NEWTON_TOL,
    max_iter: int = NEWTON_MAX_ITER
) -> FloatArray:
    """Solves dc/c (S) = d for S by damped Newton iteration.

    Args:
        d (ArrayLike): Target proper singular values of E[R].
        s0 (ArrayLike, optional): Warm start. Defaults to a heuristic guess.
        tol (float): Maximum absolute moment residual.
        max_iter (int): Iteration limit.

    Raises:
        NotAMomentException: d is unordered or no distribution has this
            moment.
        NoConvergenceException: The iteration limit was reached or the line
            search stalled.

    Returns:
        FloatArray: The diagonal of S.
    """

    logger = logging.getLogger('fisherattitude.matrix_fisher')

    target = check_moment(d)

    s = (initial_concentration(target) if s0 is None
         else np.array(s0, dtype=np.float64))

    moments, jacobian = _moments_with_jacobian(s)
    residual = moments - target

    for iteration in range(max_iter):
        if np.max(np.abs(residual)) <= tol:
            logger.debug(f'Moment matching converged in {iteration} steps')
            return s

        step = np.linalg.solve(jacobian, residual)
        damping = 1.0

        while True:
            trial = s - damping * step
            trial_moments, trial_jacobian = _moments_with_jacobian(trial)
            trial_residual = trial_moments - target

            if np.linalg.norm(trial_residual) < np.linalg.norm(residual):
                break

            damping *= 0.5

            if damping < 1e-8:
                if np.max(np.abs(residual)) <= 100 * tol:
                    return s

                raise NoConvergenceException(
                    f'Line search stalled at s={s}, residual={residual}')

        s, residual, jacobian = trial, trial_residual, trial_jacobian

        if np.max(np.abs(damping * step)) <= 1e-12 * (1.0 + np.max(np.abs(s))):
            return s

    raise NoConvergenceException(
        f'No convergence after {max_iter} iterations, residual={residual}')


def log_density(mf: MatrixFisher, r: npt.ArrayLike) -> FloatArray:
    """Log-density of one rotation or a stack of rotations."""

    rot = np.asarray(r, dtype=np.float64)

    return (np.einsum('ij,...ij->...', mf.f, rot)
            - mf.normalizing_constant.log_c)


def density(mf: MatrixFisher, r: npt.ArrayLike) -> FloatArray:
    return np.exp(log_density(mf, r))


def moments(mf: MatrixFisher) -> MomentTriple:
    return mf.moment_triple


def first_moment(mf: MatrixFisher) -> FloatArray:
    return mf.moment_triple.matrix()


def mean_attitude(mf: MatrixFisher) -> FloatArray:
    return mf.u @ mf.v.T


def mle_from_moment(ebar: npt.ArrayLike) -> MatrixFisher:
    """Maximum likelihood matrix Fisher distribution for a first moment.

    Raises:
        NotAMomentException: The proper singular values are not the moment
            of any distribution.
        NoConvergenceException: The moment equations could not be solved.
    """

    svd = proper_svd(ebar)
    s = solve_concentration(svd.s)

    return MatrixFisher.from_svd(svd.u, s, svd.v)


def dispersion(mf: MatrixFisher) -> FloatArray:
    """Principal-axis standard deviations in degrees.

    Uses (tr(S) I - S)^-1 as covariance; a vanishing pair sum gives an
    infinite deviation.
    """

    s = mf.s
    pair_sums = s.sum() - s

    positive = pair_sums > 0.0
    std = np.where(positive,
                   np.sqrt(1.0 / np.where(positive, pair_sums, 1.0)),
                   np.inf)

    return np.degrees(std)


def uniform_rotations(rng: np.random.Generator, n: int) -> FloatArray:
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)

    return Rotation.from_quat(q).as_matrix()


def sample(mf: MatrixFisher, rng: np.random.Generator, n: int,
           max_proposals: int = MAX_PROPOSALS) -> FloatArray:
    """Draws n rotations by rejection from the uniform distribution.

    A uniform proposal is accepted with probability
    exp(tr(F^T R) - tr(S)); the expected acceptance rate is c(S) exp(-tr S),
    which becomes small for concentrated distributions.

    Args:
        mf (MatrixFisher): Distribution to draw from.
        rng (Generator): Source of randomness; equal seeds give equal draws.
        n (int): Number of rotations.
        max_proposals (int): Upper bound on uniform proposals.

    Raises:
        SamplingBudgetException: Fewer than n proposals were accepted within
            max_proposals.

    Returns:
        FloatArray: Array of shape (n, 3, 3).
    """

    if n < 1:
        raise ValueError('Sample count must be at least 1')

    if max_proposals < 1:
        raise ValueError('Proposal budget must be at least 1')

    logger = logging.getLogger('fisherattitude.matrix_fisher')

    trace_s = float(mf.s.sum())
    batch = int(min(max(4 * n, 4096), 200_000))
    accepted: list[FloatArray] = []
    count = 0
    proposed = 0

    while count < n:
        if proposed >= max_proposals:
            raise SamplingBudgetException(
                f'Accepted {count} of {n} rotations after {proposed} '
                f'proposals, S = {mf.s}')

        size = min(batch, max_proposals - proposed)
        candidates = uniform_rotations(rng, size)
        log_accept = np.einsum('ij,nij->n', mf.f, candidates) - trace_s
        keep = np.log(rng.random(size)) < log_accept

        accepted.append(candidates[keep])
        count += int(keep.sum())
        proposed += size

    logger.debug(f'Rejection sampler accepted {count} of {proposed}')

    return np.concatenate(accepted)[:n]


class Icosphere(NamedTuple):
    vertices: FloatArray
    weights: FloatArray


def icosphere(level: int) -> Icosphere:
    """Subdivided icosahedron with per-vertex solid-angle weights.

    The weights give each vertex a third of the solid angle of its adjacent
    triangles and sum to 4 pi.
    """

    if level < 0:
        raise ValueError('Subdivision level must be non-negative')

    g = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0),
        (0, -1, g), (0, 1, g), (0, -1, -g), (0, 1, -g),
        (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    points = [np.array(v, dtype=np.float64) / np.linalg.norm(v)
              for v in verts]

    for _ in range(level):
        midpoints: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in midpoints:
                mid = points[i] + points[j]
                points.append(mid / np.linalg.norm(mid))
                midpoints[key] = len(points) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc),
                            (ab, bc, ca)])
        faces = refined

    vertices = np.array(points)
    tri = np.array(faces)
    a, b, c = vertices[tri[:, 0]], vertices[tri[:, 1]], vertices[tri[:, 2]]

    triple = np.abs(np.einsum('ij,ij->i', a, np.cross(b, c)))
    denom = (1.0 + np.einsum('ij,ij->i', a, b) + np.einsum('ij,ij->i', b, c)
             + np.einsum('ij,ij->i', c, a))
    solid = 2.0 * np.arctan2(triple, denom)

    weights = np.zeros(len(vertices))
    for col in range(3):
        np.add.at(weights, tri[:, col], solid / 3.0)

    return Icosphere(vertices, weights)


def marginal_axis_densities(
    mf: MatrixFisher,
    axis_index: int,
    directions: npt.ArrayLike,
    grid_n: int = 360
) -> FloatArray:
    """Density of the axis_index-th column of R at each direction.

    All rotations sending e_i to a direction x are exp(psi x^) Q0 for one
    such Q0; the density is averaged over psi by the periodic trapezoid
    rule and normalized with respect to the area measure on the sphere.
    """

    if axis_index not in (1, 2, 3):
        raise ValueError('axis_index must be 1, 2 or 3')

    dirs = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    e = np.eye(3)[axis_index - 1]
    perp = np.eye(3)[axis_index % 3]

    cross = np.cross(e, dirs)
    sin_a = np.linalg.norm(cross, axis=1)
    cos_a = dirs @ e
    tilt = np.arctan2(sin_a, cos_a)
    axis = np.where((sin_a > 1e-12)[:, np.newaxis],
                    cross / np.where(sin_a > 1e-12, sin_a, 1.0)[:, np.newaxis],
                    perp)
    q0 = exp_so3(axis * tilt[:, np.newaxis])

    k = hat(dirs)
    base = np.einsum('ij,mij->m', mf.f, q0)
    sine = np.einsum('ij,mij->m', mf.f, k @ q0)
    versine = np.einsum('ij,mij->m', mf.f, k @ k @ q0)

    psi = 2.0 * np.pi * np.arange(grid_n) / grid_n
    exponent = (base[:, np.newaxis] + sine[:, np.newaxis] * np.sin(psi)
                + versine[:, np.newaxis] * (1.0 - np.cos(psi)))

    log_mean = special.logsumexp(exponent, axis=1) - math.log(grid_n)

    return (np.exp(log_mean - mf.normalizing_constant.log_c)
            / (4.0 * np.pi))


def marginal_axis_density(
    mf: MatrixFisher,
    axis_index: int,
    direction: npt.ArrayLike,
    grid_n: int = 360
) -> float:
    dirv = np.asarray(direction, dtype=np.float64)

    if abs(np.linalg.norm(dirv) - 1.0) > 1e-9:
        raise ValueError('Direction must be a unit vector')

    return float(marginal_axis_densities(mf, axis_index, dirv, grid_n)[0])


class SphereDensity(NamedTuple):
    axis_index: int
    vertices: FloatArray
    weights: FloatArray
    density: FloatArray


def sphere_density(
    mf: MatrixFisher,
    axis_index: int,
    level: int = 3,
    grid_n: int = 360
) -> SphereDensity:
    grid = icosphere(level)
    values = marginal_axis_densities(mf, axis_index, grid.vertices, grid_n)

    return SphereDensity(axis_index, grid.vertices, grid.weights, values)
