"""Sliding-window filter state, error parameterizations, cloning, marginalization.

The error vector is ordered

    xi = [xi_theta, xi_v, xi_p, xi_bg, xi_ba | per clone (xi_theta, xi_p)]

of dimension 15 + 6n for n clones.  Two parameterizations are supported:

  * StandardAdditive: R = exp(xi_theta) R_hat (global-frame attitude error),
    every vector component plain-additive.
  * RightInvariant: the group retraction
      R = exp(xi_theta) R_hat
      v = exp(xi_theta) v_hat + J_l(xi_theta) xi_v
      p = exp(xi_theta) p_hat + J_l(xi_theta) xi_p
    applied to the IMU block and, with the clone's own sub-vector, to each
    camera clone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import DimensionError, EmptyWindow, WindowOverflow
from .geometry import (Pose, left_jacobian, left_jacobian_batch, skew,
                       so3_exp, so3_exp_batch, so3_log)

# Error-vector layout of the IMU block.
THETA = slice(0, 3)
VEL = slice(3, 6)
POS = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
IMU_DIM = 15
CLONE_DIM = 6


def clone_slice(i: int) -> slice:
    """Rows/cols of clone i (0-based) inside the error vector."""
    start = IMU_DIM + CLONE_DIM * i
    return slice(start, start + CLONE_DIM)


class ErrorModel(Enum):
    STANDARD_ADDITIVE = "additive"
    RIGHT_INVARIANT = "invariant"


@dataclass
class ImuState:
    """IMU portion of the state: attitude, velocity, position, biases."""

    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    bg: np.ndarray
    ba: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(3)
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.bg = np.asarray(self.bg, dtype=float).reshape(3)
        self.ba = np.asarray(self.ba, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "ImuState":
        return cls(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))

    def copy(self) -> "ImuState":
        return ImuState(self.R.copy(), self.v.copy(), self.p.copy(),
                        self.bg.copy(), self.ba.copy())


@dataclass
class CameraClone:
    """Camera pose snapshot kept in the sliding window."""

    R: np.ndarray
    p: np.ndarray
    frame_id: int

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.p = np.asarray(self.p, dtype=float).reshape(3)

    def copy(self) -> "CameraClone":
        return CameraClone(self.R.copy(), self.p.copy(), self.frame_id)


@dataclass
class VioState:
    """IMU state plus the ordered clone window and fixed extrinsics."""

    imu: ImuState
    clones: list = field(default_factory=list)
    extrinsics: Pose = field(default_factory=Pose.identity)
    window_size: int = 20

    @property
    def dim(self) -> int:
        return IMU_DIM + CLONE_DIM * len(self.clones)

    def copy(self) -> "VioState":
        return VioState(self.imu.copy(), [c.copy() for c in self.clones],
                        Pose(self.extrinsics.R.copy(), self.extrinsics.p.copy()),
                        self.window_size)

    def clone_index(self, frame_id: int) -> int:
        for i, c in enumerate(self.clones):
            if c.frame_id == frame_id:
                return i
        raise KeyError(frame_id)

    def camera_pose_from_imu(self) -> Pose:
        """Current camera pose implied by the IMU state and extrinsics."""
        R_c = self.imu.R @ self.extrinsics.R
        p_c = self.imu.p + self.imu.R @ self.extrinsics.p
        return Pose(R_c, p_c)



def apply_correction(state: VioState, delta, model: ErrorModel) -> VioState:
    """Retract an error vector onto the state; returns a new VioState."""
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.shape[0] != state.dim:
        raise DimensionError(f"delta has {delta.shape[0]} entries, state dim {state.dim}")
    out = state.copy()
    imu = out.imu
    # one batched Rodrigues evaluation for the IMU block and every clone
    thetas = np.empty((1 + len(out.clones), 3))
    thetas[0] = delta[:3]
    thetas[1:] = delta[IMU_DIM:].reshape(-1, CLONE_DIM)[:, :3]
    dRs = so3_exp_batch(thetas)
    if model is ErrorModel.RIGHT_INVARIANT:
        Js = left_jacobian_batch(thetas)
        imu.R = dRs[0] @ imu.R
        imu.v = dRs[0] @ imu.v + Js[0] @ delta[VEL]
        imu.p = dRs[0] @ imu.p + Js[0] @ delta[POS]
    else:
        imu.R = dRs[0] @ imu.R
        imu.v = imu.v + delta[VEL]
        imu.p = imu.p + delta[POS]
    imu.bg = imu.bg + delta[BG]
    imu.ba = imu.ba + delta[BA]
    for i, clone in enumerate(out.clones):
        dp = delta[clone_slice(i)][3:]
        if model is ErrorModel.RIGHT_INVARIANT:
            clone.R = dRs[i + 1] @ clone.R
            clone.p = dRs[i + 1] @ clone.p + Js[i + 1] @ dp
        else:
            clone.R = dRs[i + 1] @ clone.R
            clone.p = clone.p + dp
    return out


def error_between(x_true: VioState, x_est: VioState, model: ErrorModel):
    """Exact inverse of apply_correction: the delta taking x_est to x_true."""
    if len(x_true.clones) != len(x_est.clones):
        raise DimensionError("window structures differ")
    delta = np.zeros(x_est.dim)
    t, e = x_true.imu, x_est.imu
    dtheta = so3_log(t.R @ e.R.T)
    delta[THETA] = dtheta
    if model is ErrorModel.RIGHT_INVARIANT:
        dR = so3_exp(dtheta)
        Jinv = np.linalg.inv(left_jacobian(dtheta))
        delta[VEL] = Jinv @ (t.v - dR @ e.v)
        delta[POS] = Jinv @ (t.p - dR @ e.p)
    else:
        delta[VEL] = t.v - e.v
        delta[POS] = t.p - e.p
    delta[BG] = t.bg - e.bg
    delta[BA] = t.ba - e.ba
    for i, (ct, ce) in enumerate(zip(x_true.clones, x_est.clones)):
        sl = clone_slice(i)
        dth = so3_log(ct.R @ ce.R.T)
        delta[sl.start:sl.start + 3] = dth
        if model is ErrorModel.RIGHT_INVARIANT:
            Jinv = np.linalg.inv(left_jacobian(dth))
            delta[sl.start + 3:sl.stop] = Jinv @ (ct.p - so3_exp(dth) @ ce.p)
        else:
            delta[sl.start + 3:sl.stop] = ct.p - ce.p
    return delta


def clone_jacobian(state: VioState, model: ErrorModel):
    """6 x dim Jacobian of the new clone's error w.r.t. the current error.

    RightInvariant: the clone's (theta, p) error equals the IMU (theta, p)
    error exactly — the group retraction commutes with the rigid extrinsic
    composition.  StandardAdditive: the shared attitude error leaks into the
    clone position through the lever arm, d(p_C)/d(theta) = -skew(R p_IC).
    """
    J = np.zeros((CLONE_DIM, state.dim))
    J[0:3, THETA] = np.eye(3)
    J[3:6, POS] = np.eye(3)
    if model is ErrorModel.STANDARD_ADDITIVE:
        lever = state.imu.R @ state.extrinsics.p
        J[3:6, THETA] = -skew(lever)
    return J


def clone_camera(state: VioState, cov, model: ErrorModel, frame_id: int):
    """Stochastic cloning: append the current camera pose and augment P."""
    if len(state.clones) >= state.window_size:
        raise WindowOverflow(f"window already holds {len(state.clones)} clones")
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (state.dim, state.dim):
        raise DimensionError("covariance does not match state dimension")
    pose = state.camera_pose_from_imu()
    out = state.copy()
    out.clones.append(CameraClone(pose.R, pose.p, frame_id))
    J = clone_jacobian(state, model)
    cross = J @ cov
    new_cov = np.block([
        [cov, cross.T],
        [cross, J @ cov @ J.T],
    ])
    return out, symmetrize(new_cov)


def marginalize_oldest(state: VioState, cov):
    """Drop the oldest clone and its covariance rows/columns."""
    if not state.clones:
        raise EmptyWindow("no clones to marginalize")
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (state.dim, state.dim):
        raise DimensionError("covariance does not match state dimension")
    out = state.copy()
    out.clones.pop(0)
    sl = clone_slice(0)
    keep = np.r_[np.arange(0, sl.start), np.arange(sl.stop, cov.shape[0])]
    return out, cov[np.ix_(keep, keep)]


def symmetrize(P):
    """Numerical hygiene: P <- (P + P^T) / 2."""
    return (P + P.T) / 2.0
