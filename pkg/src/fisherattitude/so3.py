"""Lie-group primitives for the rotation group SO(3).

Rotations are plain ``(3, 3)`` float arrays and rotation vectors plain
``(3,)`` arrays. ``hat`` and ``exp_so3`` also accept stacks of vectors with
shape ``(..., 3)``.
"""
from fisherattitude.utils import FloatArray

import numpy as np
import numpy.typing as npt

from typing import NamedTuple

SMALL_ANGLE = 1e-6
NEAR_PI = 1e-3


class So3Exception(Exception):
    pass


class NotSkewException(So3Exception):
    pass


class NotARotationException(So3Exception):
    pass


class ProperSvd(NamedTuple):
    u: FloatArray
    s: FloatArray
    v: FloatArray

    def reconstruct(self) -> FloatArray:
        return self.u @ np.diag(self.s) @ self.v.T


def hat(v: npt.ArrayLike) -> FloatArray:
    """Maps a vector (or a stack of vectors) to its skew-symmetric matrix.

    Args:
        v (ArrayLike): Vector of shape (3,) or (..., 3).

    Returns:
        FloatArray: Matrix with hat(v) @ y == cross(v, y).
    """

    vec = np.asarray(v, dtype=np.float64)
    out = np.zeros(vec.shape[:-1] + (3, 3))

    out[..., 0, 1] = -vec[..., 2]
    out[..., 0, 2] = vec[..., 1]
    out[..., 1, 0] = vec[..., 2]
    out[..., 1, 2] = -vec[..., 0]
    out[..., 2, 0] = -vec[..., 1]
    out[..., 2, 1] = vec[..., 0]

    return out


def vee(s: npt.ArrayLike) -> FloatArray:
    """Inverse of the hat map.

    Raises:
        NotSkewException: The matrix is not skew-symmetric.
    """

    mat = np.asarray(s, dtype=np.float64)

    if np.linalg.norm(mat + mat.T) >= 1e-9:
        raise NotSkewException(f'Matrix is not skew-symmetric:\n{mat}')

    return np.array([mat[2, 1], mat[0, 2], mat[1, 0]])


def exp_so3(v: npt.ArrayLike) -> FloatArray:
    """Rodrigues' formula, vectorized over leading dimensions."""

    vec = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(vec, axis=-1)[..., np.newaxis, np.newaxis]
    k = hat(vec)

    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0,
                 (1.0 - np.cos(safe)) / safe**2)

    return np.eye(3) + a * k + b * (k @ k)


def log_so3(r: npt.ArrayLike) -> FloatArray:
    rot = np.asarray(r, dtype=np.float64)
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    skew = np.array([rot[2, 1] - rot[1, 2],
                     rot[0, 2] - rot[2, 0],
                     rot[1, 0] - rot[0, 1]]) / 2.0

    if theta < SMALL_ANGLE:
        return skew * (1.0 + theta**2 / 6.0)

    if np.pi - theta > NEAR_PI:
        return skew * (theta / np.sin(theta))

    # Near a half turn the skew part vanishes; read the axis off the
    # symmetric part instead.
    sym = (rot + rot.T) / 2.0
    outer = (sym - cos_theta * np.eye(3)) / (1.0 - cos_theta)
    col = int(np.argmax(np.diag(outer)))
    axis = outer[:, col] / np.sqrt(outer[col, col])

    if float(skew @ axis) < 0.0:
        axis = -axis

    return theta * axis


def angle(r: npt.ArrayLike) -> float:
    rot = np.asarray(r, dtype=np.float64)
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)

    return float(np.arccos(cos_theta))


def proper_svd(m: npt.ArrayLike) -> ProperSvd:
    """Singular value decomposition with both factors in SO(3).

    The last singular value carries the sign of det(m). Column signs are
    then fixed so the dominant entry of the first two columns of U is
    positive, making the factorization deterministic for distinct singular
    values.
    """

    mat = np.asarray(m, dtype=np.float64)
    u, s, vt = np.linalg.svd(mat)
    v = vt.T.copy()
    s = s.copy()

    det_u = np.linalg.det(u)
    det_v = np.linalg.det(v)

    if det_u * det_v < 0.0:
        s[2] = -s[2]
        if det_u < 0.0:
            u[:, 2] = -u[:, 2]
        else:
            v[:, 2] = -v[:, 2]
    elif det_u < 0.0:
        u[:, 2] = -u[:, 2]
        v[:, 2] = -v[:, 2]

    for col in (0, 1):
        lead = int(np.argmax(np.abs(u[:, col])))
        if u[lead, col] < 0.0:
            u[:, [col, 2]] = -u[:, [col, 2]]
            v[:, [col, 2]] = -v[:, [col, 2]]

    return ProperSvd(u, s, v)


def project_to_so3(m: npt.ArrayLike) -> FloatArray:
    """Nearest rotation in the Frobenius sense."""

    svd = proper_svd(m)

    return svd.u @ svd.v.T


def check_rotation(m: npt.ArrayLike, tol: float = 1e-10) -> FloatArray:
    """Validates a rotation matrix and returns it as a float array.

    Raises:
        NotARotationException: Orthogonality or determinant off by more
            than tol.
    """

    rot = np.asarray(m, dtype=np.float64)

    if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
        raise NotARotationException(f'Not a finite 3x3 matrix: {rot}')

    if np.linalg.norm(rot.T @ rot - np.eye(3)) > tol:
        raise NotARotationException('Matrix is not orthogonal')

    if abs(np.linalg.det(rot) - 1.0) > tol:
        raise NotARotationException('Determinant is not +1')

    return rot


def dexp_inv(c: npt.ArrayLike, a: npt.ArrayLike) -> FloatArray:
    """Inverse derivative of the exponential map on so(3).

    Closed form of the Bernoulli series sum_k B_k/k! ad_c^k a:

        a - 1/2 c x a + (1/|c|^2)(1 - (|c|/2) cot(|c|/2)) c x (c x a)

    Args:
        c (ArrayLike): Base point, |c| < 2 pi.
        a (ArrayLike): Tangent vector.

    Returns:
        FloatArray: dexp^-1_c(a).
    """

    cv = np.asarray(c, dtype=np.float64)
    av = np.asarray(a, dtype=np.float64)
    theta = float(np.linalg.norm(cv))

    if theta < SMALL_ANGLE:
        coeff = 1.0 / 12.0 + theta**2 / 720.0
    else:
        half = theta / 2.0
        coeff = (1.0 - half / np.tan(half)) / theta**2

    ca = np.cross(cv, av)

    return av - 0.5 * ca + coeff * np.cross(cv, ca)
