"""IMU mean propagation and covariance linearization for both error models.

The continuous kinematics are

    Rdot = R skew(w - bg),  vdot = R (a - ba) + g,  pdot = v,
    bgdot = n_wg,           badot = n_wa,

with the process-noise vector ordered n = (n_g, n_wg, n_a, n_wa).  F and G
are derived by differentiating this flow under the chosen error definition;
their correctness is pinned by finite differences through
apply_correction / propagate_mean / error_between rather than by
transcribed formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, TimeOrderError
from .state import BA, BG, IMU_DIM, POS, THETA, VEL, ErrorModel, ImuState, symmetrize
from .geometry import skew

GRAVITY = np.array([0.0, 0.0, -9.81])

_I3 = np.eye(3)
_I15 = np.eye(IMU_DIM)
_I3.setflags(write=False)
_I15.setflags(write=False)


@dataclass
class ImuSample:
    """One IMU reading: timestamp, body angular rate, body specific force."""

    t: float
    omega: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(3)


@dataclass
class NoiseParams:
    """Continuous-time noise densities for (n_g, n_wg, n_a, n_wa)."""

    sigma_g: float = 0.008
    sigma_wg: float = 0.0004
    sigma_a: float = 0.01
    sigma_wa: float = 0.003

    def Qc(self):
        """12x12 continuous noise covariance in n_I order."""
        d = np.concatenate([
            np.full(3, self.sigma_g**2),
            np.full(3, self.sigma_wg**2),
            np.full(3, self.sigma_a**2),
            np.full(3, self.sigma_wa**2),
        ])
        return np.diag(d)


@dataclass
class TransitionBundle:
    """Discrete transition over one interval.

    Only the 15x15 IMU block is nontrivial; the clone blocks of the full
    (15+6n) transition are identity (zero process noise), so they are
    stored implicitly.
    """

    phi: np.ndarray     # 15x15
    qd: np.ndarray      # 15x15

    def compose(self, earlier: "TransitionBundle") -> "TransitionBundle":
        """Bundle for the concatenated interval (earlier first, self second)."""
        return TransitionBundle(self.phi @ earlier.phi,
                                self.phi @ earlier.qd @ self.phi.T + self.qd)

    def full_phi(self, dim: int):
        out = np.eye(dim)
        out[:IMU_DIM, :IMU_DIM] = self.phi
        return out

    def full_qd(self, dim: int):
        out = np.zeros((dim, dim))
        out[:IMU_DIM, :IMU_DIM] = self.qd
        return out

    @classmethod
    def identity(cls) -> "TransitionBundle":
        return cls(np.eye(IMU_DIM), np.zeros((IMU_DIM, IMU_DIM)))


def _orthonormalize(R):
    """Nearest rotation matrix: one symmetric polar correction when R is
    already close to orthonormal (the every-step case), SVD otherwise."""
    E = R.T @ R
    E[0, 0] -= 1.0
    E[1, 1] -= 1.0
    E[2, 2] -= 1.0
    if np.max(np.abs(E)) < 1e-6:
        # R (I - E/2) cancels the orthogonality defect to second order
        return R - 0.5 * (R @ E)
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        out = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return out


def _rk4_mean(imu: ImuState, s0: ImuSample, s1: ImuSample, g):
    """RK4 step on the (R, v, p) arrays; biases held constant."""
    dt = s1.t - s0.t
    if dt <= 0.0:
        raise TimeOrderError(f"non-increasing timestamps {s0.t} -> {s1.t}")
    w0, a0 = s0.omega - imu.bg, s0.accel - imu.ba
    w1, a1 = s1.omega - imu.bg, s1.accel - imu.ba
    wm, am = 0.5 * (w0 + w1), 0.5 * (a0 + a1)
    S0, Sm, S1 = skew(w0), skew(wm), skew(w1)

    R, v, p = imu.R, imu.v, imu.p
    k1R, k1v, k1p = R @ S0, R @ a0 + g, v
    R2 = R + 0.5 * dt * k1R
    k2R, k2v, k2p = R2 @ Sm, R2 @ am + g, v + 0.5 * dt * k1v
    R3 = R + 0.5 * dt * k2R
    k3R, k3v, k3p = R3 @ Sm, R3 @ am + g, v + 0.5 * dt * k2v
    R4 = R + dt * k3R
    k4R, k4v, k4p = R4 @ S1, R4 @ a1 + g, v + dt * k3v

    R_new = _orthonormalize(R + dt / 6.0 * (k1R + 2 * k2R + 2 * k3R + k4R))
    v_new = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    p_new = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return R_new, v_new, p_new


def propagate_mean(imu: ImuState, s0: ImuSample, s1: ImuSample,
                   gravity=GRAVITY) -> ImuState:
    """RK4 integration of the IMU kinematics from s0.t to s1.t.

    Inputs are linearly interpolated to the midpoint for the inner stages;
    biases stay constant.  The rotation is integrated in the embedding and
    re-projected onto SO(3) once at the end of the step.
    """
    g = np.asarray(gravity, dtype=float)
    R_new, v_new, p_new = _rk4_mean(imu, s0, s1, g)
    return ImuState(R_new, v_new, p_new, imu.bg.copy(), imu.ba.copy())


def linearize(imu: ImuState, s: ImuSample, model: ErrorModel,
              gravity=GRAVITY):
    """Continuous-time error dynamics (F, G) at the current estimate.

    Noise columns follow the n_I = (n_g, n_wg, n_a, n_wa) order.
    """
    g = np.asarray(gravity, dtype=float)
    R = imu.R
    F = np.zeros((IMU_DIM, IMU_DIM))
    G = np.zeros((IMU_DIM, 12))
    if model is ErrorModel.RIGHT_INVARIANT:
        VR = skew(imu.v) @ R
        PR = skew(imu.p) @ R
        F[VEL, THETA] = skew(g)
        F[THETA, BG] = -R
        F[VEL, BG] = -VR
        F[VEL, BA] = -R
        F[POS, VEL] = _I3
        F[POS, BG] = -PR
        G[THETA, 0:3] = -R
        G[VEL, 0:3] = -VR
        G[POS, 0:3] = -PR
        G[VEL, 6:9] = -R
    else:
        F[THETA, BG] = -R
        F[VEL, THETA] = -skew(R @ (s.accel - imu.ba))
        F[VEL, BA] = -R
        F[POS, VEL] = _I3
        G[THETA, 0:3] = -R
        G[VEL, 6:9] = -R
    G[BG, 3:6] = _I3
    G[BA, 9:12] = _I3
    return F, G


def discretize(F, G, noise: NoiseParams, dt: float) -> TransitionBundle:
    """4th-order truncated matrix exponential and trapezoidal noise integral."""
    if dt <= 0.0:
        raise TimeOrderError(f"nonpositive dt {dt}")
    A = F * dt
    A2 = A @ A
    phi = _I15 + A + A2 / 2.0 + A2 @ A / 6.0 + A2 @ A2 / 24.0
    qdiag = np.empty(12)
    qdiag[0:3] = noise.sigma_g**2
    qdiag[3:6] = noise.sigma_wg**2
    qdiag[6:9] = noise.sigma_a**2
    qdiag[9:12] = noise.sigma_wa**2
    Qspan = (G * qdiag) @ G.T
    qd = 0.5 * dt * (phi @ Qspan @ phi.T + Qspan)
    return TransitionBundle(phi, symmetrize(qd))


def propagate_covariance(cov, bundle: TransitionBundle):
    """P <- Phi P Phi^T + Qd using the block structure (clone blocks fixed)."""
    cov = np.asarray(cov, dtype=float)
    dim = cov.shape[0]
    if cov.shape != (dim, dim) or dim < IMU_DIM or (dim - IMU_DIM) % 6:
        raise DimensionError(f"bad covariance shape {cov.shape}")
    out = cov.copy()
    phi = bundle.phi
    out[:IMU_DIM, :IMU_DIM] = phi @ cov[:IMU_DIM, :IMU_DIM] @ phi.T + bundle.qd
    if dim > IMU_DIM:
        out[:IMU_DIM, IMU_DIM:] = phi @ cov[:IMU_DIM, IMU_DIM:]
        out[IMU_DIM:, :IMU_DIM] = out[:IMU_DIM, IMU_DIM:].T
    return symmetrize(out)
