"""SO(3) and Plucker-line primitives used by every other module.

Conventions:
  * rotations are 3x3 row-major numpy arrays acting on column vectors,
  * a Plucker line is the pair (n, d) with n the plane normal (scaled by
    the origin distance) and d the direction, n.T @ d = 0,
  * the orthonormal (minimal) line parameterization is U in SO(3) plus an
    angle phi with sin(phi) = ||d|| / sqrt(||n||^2 + ||d||^2).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import DegenerateLine, DegenerateProjection

# Below this rotation-vector norm the closed forms go 0/0; switch to Taylor.
SMALL_ANGLE = 1e-8


def skew(v):
    """Skew-symmetric matrix such that skew(v) @ w == cross(v, w)."""
    x, y, z = v
    out = np.zeros((3, 3))
    out[0, 1] = -z
    out[0, 2] = y
    out[1, 0] = z
    out[1, 2] = -x
    out[2, 0] = -y
    out[2, 1] = x
    return out


def so3_exp(phi):
    """Rodrigues formula mapping a rotation vector to a rotation matrix.

    Uses the 2nd-order Taylor expansion of the coefficients below
    SMALL_ANGLE to stay finite at phi = 0.
    """
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < SMALL_ANGLE:
        # sin(a)/a ~ 1 - a^2/6, (1-cos(a))/a^2 ~ 1/2 - a^2/24
        A = 1.0 - angle**2 / 6.0
        B = 0.5 - angle**2 / 24.0
    else:
        A = np.sin(angle) / angle
        B = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + A * K + B * (K @ K)


def skew_batch(V):
    """skew() for each row of V: (k, 3) -> (k, 3, 3)."""
    V = np.asarray(V, dtype=float)
    out = np.zeros(V.shape[:-1] + (3, 3))
    out[..., 0, 1] = -V[..., 2]
    out[..., 0, 2] = V[..., 1]
    out[..., 1, 0] = V[..., 2]
    out[..., 1, 2] = -V[..., 0]
    out[..., 2, 0] = -V[..., 1]
    out[..., 2, 1] = V[..., 0]
    return out


def so3_exp_batch(Phi):
    """so3_exp() for each row of Phi: (k, 3) -> (k, 3, 3)."""
    Phi = np.asarray(Phi, dtype=float)
    a2 = np.einsum("...i,...i->...", Phi, Phi)
    a = np.sqrt(a2)
    small = a < SMALL_ANGLE
    safe = np.where(small, 1.0, a)
    A = np.where(small, 1.0 - a2 / 6.0, np.sin(a) / safe)
    B = np.where(small, 0.5 - a2 / 24.0, (1.0 - np.cos(a)) / safe**2)
    K = skew_batch(Phi)
    return (np.eye(3) + A[..., None, None] * K +
            B[..., None, None] * np.matmul(K, K))


def left_jacobian_batch(Phi):
    """left_jacobian() for each row of Phi: (k, 3) -> (k, 3, 3)."""
    Phi = np.asarray(Phi, dtype=float)
    a2 = np.einsum("...i,...i->...", Phi, Phi)
    a = np.sqrt(a2)
    small = a < SMALL_ANGLE
    safe = np.where(small, 1.0, a)
    B = np.where(small, 0.5 - a2 / 24.0, (1.0 - np.cos(a)) / safe**2)
    C = np.where(small, 1.0 / 6.0 - a2 / 120.0, (a - np.sin(a)) / safe**3)
    K = skew_batch(Phi)
    return (np.eye(3) + B[..., None, None] * K +
            C[..., None, None] * np.matmul(K, K))


def so3_log(R):
    """Principal logarithm of a rotation matrix, ||result|| in [0, pi].

    The angle-pi ambiguity (R and its transpose coincide) is resolved by
    choosing the axis whose first nonzero component is positive.
    """
    R = np.asarray(R, dtype=float)
    trace = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(trace)
    if angle < SMALL_ANGLE:
        # R ~ I + skew(phi); first order is exact to O(angle^2)
        return np.array([R[2, 1] - R[1, 2],
                         R[0, 2] - R[2, 0],
                         R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - angle < 1e-6:
        # Near pi the off-diagonal difference vanishes; recover the axis
        # from the symmetric part instead: R ~ 2*a a^T - I.
        S = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(S), 0.0))
        # Fix relative signs from the off-diagonal products.
        k = int(np.argmax(axis))
        axis = S[:, k] / axis[k]
        axis = axis / np.linalg.norm(axis)
        for c in axis:
            if abs(c) > 1e-12:
                if c < 0.0:
                    axis = -axis
                break
        return angle * axis
    return angle / (2.0 * np.sin(angle)) * np.array([
        R[2, 1] - R[1, 2],
        R[0, 2] - R[2, 0],
        R[1, 0] - R[0, 1],
    ])


def left_jacobian(phi):
    """Left Jacobian of SO(3): d/dt exp(phi + t*delta) = skew-free form.

    J_l(phi) = I + (1-cos a)/a^2 K + (a - sin a)/a^3 K^2 with K = skew(phi).
    """
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < SMALL_ANGLE:
        B = 0.5 - angle**2 / 24.0
        C = 1.0 / 6.0 - angle**2 / 120.0
    else:
        B = (1.0 - np.cos(angle)) / angle**2
        C = (angle - np.sin(angle)) / angle**3
    return np.eye(3) + B * K + C * (K @ K)


def rot2(angle):
    """2x2 rotation by angle (SO(2) element)."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def rot_to_quat(R):
    """Unit quaternion (w, x, y, z) with w >= 0, via Shepperd's method."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0.0:
        w = 0.5 * np.sqrt(1.0 + t)
        s = 0.25 / w
        q = np.array([w, s * (R[2, 1] - R[1, 2]), s * (R[0, 2] - R[2, 0]),
                      s * (R[1, 0] - R[0, 1])])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        x = 0.5 * np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 0.0))
        s = 0.25 / x
        q = np.empty(4)
        q[0] = s * (R[k, j] - R[j, k])
        q[1 + i] = x
        q[1 + j] = s * (R[j, i] + R[i, j])
        q[1 + k] = s * (R[k, i] + R[i, k])
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_to_rot(q):
    """Rotation matrix from a (w, x, y, z) quaternion (normalized first)."""
    q = np.asarray(q, dtype=float).reshape(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass
class Pose:
    """Rigid transform (R, p): maps local vectors x to R @ x + p."""

    R: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.p = np.asarray(self.p, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.p + self.p)


@dataclass
class PluckerLine:
    """Homogeneous 3D line: plane normal n (origin-distance scaled), direction d."""

    n: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float).reshape(3)
        self.d = np.asarray(self.d, dtype=float).reshape(3)

    def normalized(self) -> "PluckerLine":
        """Rescale to the unit convention ||n||^2 + ||d||^2 = 1."""
        scale = np.sqrt(self.n @ self.n + self.d @ self.d)
        if scale <= 0.0:
            raise DegenerateLine("zero line")
        return PluckerLine(self.n / scale, self.d / scale)

    def closest_point(self):
        """Point on the line closest to the origin: (d x n) / ||d||^2."""
        return np.cross(self.d, self.n) / (self.d @ self.d)


@dataclass
class OrthonormalLine:
    """Minimal 4-DoF line parameterization (U in SO(3), angle phi)."""

    U: np.ndarray
    phi: float

    @property
    def W(self):
        return rot2(self.phi)


class LineErrorMode(Enum):
    """Where the orthonormal perturbation multiplies: exp(d)U or U exp(d)."""

    GLOBAL = "global"
    LOCAL = "local"


def plucker_to_orthonormal(line: PluckerLine) -> OrthonormalLine:
    """QR-style decomposition of [n d] into U in SO(3) and the angle phi.

    U columns are n/||n||, d/||d||, (n x d)/||n x d||; phi satisfies
    sin(phi) = ||d|| / sqrt(||n||^2 + ||d||^2).
    """
    nn = np.linalg.norm(line.n)
    nd = np.linalg.norm(line.d)
    cross = np.cross(line.n, line.d)
    nc = np.linalg.norm(cross)
    if nn <= 1e-12 * max(nd, 1.0) or nd <= 0.0 or nc <= 1e-12 * nn * nd:
        raise DegenerateLine("cannot orthonormalize n=%s d=%s" % (line.n, line.d))
    U = np.column_stack([line.n / nn, line.d / nd, cross / nc])
    phi = np.arcsin(nd / np.sqrt(nn**2 + nd**2))
    return OrthonormalLine(U, float(phi))


def orthonormal_to_plucker(o: OrthonormalLine) -> PluckerLine:
    """Inverse map under the unit scale convention ||n||^2 + ||d||^2 = 1."""
    n = np.cos(o.phi) * o.U[:, 0]
    d = np.sin(o.phi) * o.U[:, 1]
    return PluckerLine(n, d)


def orthonormal_retract(o: OrthonormalLine, delta, mode: LineErrorMode) -> OrthonormalLine:
    """Apply the 4-vector update (psi, phi) on the chosen side.

    GLOBAL: U <- exp(psi) U;  LOCAL: U <- U exp(psi).  The SO(2) part
    commutes, so both modes add delta[3] to the angle.
    """
    delta = np.asarray(delta, dtype=float).reshape(4)
    dU = so3_exp(delta[:3])
    U = dU @ o.U if mode is LineErrorMode.GLOBAL else o.U @ dU
    return OrthonormalLine(U, o.phi + delta[3])


def transform_line(R, p, line: PluckerLine) -> PluckerLine:
    """World-to-camera Plucker transform for camera pose (R, p).

    n_C = R^T (n_G - skew(p) d_G), d_C = R^T d_G; incidence n.d = 0 is
    preserved exactly.
    """
    R = np.asarray(R, dtype=float)
    p = np.asarray(p, dtype=float).reshape(3)
    n_c = R.T @ (line.n - np.cross(p, line.d))
    d_c = R.T @ line.d
    return PluckerLine(n_c, d_c)


def project_line(line_camera: PluckerLine):
    """Line coefficients on the normalized plane = camera-frame normal."""
    n = line_camera.n
    if np.linalg.norm(n) < 1e-12 * max(np.linalg.norm(line_camera.d), 1.0):
        raise DegenerateProjection("line passes through the camera center")
    return n.copy()


def line_through_points(a, b) -> PluckerLine:
    """Plucker line through two 3D points (direction b - a)."""
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    d = b - a
    if np.linalg.norm(d) <= 0.0:
        raise DegenerateLine("coincident points")
    return PluckerLine(np.cross(a, b), d)
