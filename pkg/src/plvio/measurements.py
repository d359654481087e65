"""Residuals and Jacobians for point, line, and vanishing-point observations.

Sign conventions (kept as the formulas are usually printed, and as the
finite-difference tests verify them):

  * point rows: r = z - z_hat, so r ~ H_x xi + H_f xi_f + n where xi is the
    true state error (innovation form).
  * line rows: the residual is the endpoint-to-line distance evaluated at
    the estimate; its derivative w.r.t. a perturbation of the *estimate* is
    (H_X, H_L) below, which means r ~ -H_X xi - H_L xi_line + n in
    innovation form.  build_line_system flips the sign so a stacked update
    can treat every row as r ~ H xi + n.
  * VP rows: r = p_v - predicted VP, already innovation form with the
    (H_X, H_v) below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (BehindCamera, DegenerateFeature, DegenerateImageLine,
                         StaleTrack, VpAtInfinity)
from .geometry import (PluckerLine, LineErrorMode, skew, skew_batch,
                       transform_line)
from .state import CLONE_DIM, IMU_DIM, ErrorModel, VioState, clone_slice

MIN_DEPTH = 0.01


@dataclass
class PointTrack:
    """Multi-frame observations of one point landmark on the normalized plane."""

    feature_id: int
    observations: list = field(default_factory=list)  # (frame_id, z 2-vector)
    p_world: np.ndarray | None = None

    def add(self, frame_id: int, z):
        self.observations.append((frame_id, np.asarray(z, dtype=float).reshape(2)))

    def __len__(self):
        return len(self.observations)


@dataclass
class LineTrack:
    """Multi-frame endpoint observations of one line, plus optional VP samples.

    Endpoints are homogeneous normalized-plane vectors (u, v, 1).  A track
    is structural exactly when it carries VP observations.
    """

    line_id: int
    observations: list = field(default_factory=list)  # (frame_id, p_s, p_e)
    vp_observations: list = field(default_factory=list)  # (frame_id, p_v 2-vector)
    line_world: PluckerLine | None = None

    @property
    def structural(self) -> bool:
        return len(self.vp_observations) > 0

    def add(self, frame_id: int, p_s, p_e, p_v=None):
        p_s = np.asarray(p_s, dtype=float).reshape(3)
        p_e = np.asarray(p_e, dtype=float).reshape(3)
        if p_s[2] != 1.0 or p_e[2] != 1.0:
            raise ValueError("endpoints must be homogeneous with third coordinate 1")
        self.observations.append((frame_id, p_s, p_e))
        if p_v is not None:
            self.vp_observations.append((frame_id, np.asarray(p_v, dtype=float).reshape(2)))

    def __len__(self):
        return len(self.observations)


@dataclass
class StackedSystem:
    """Linearized system r ~ H xi + n with noise covariance R."""

    H: np.ndarray
    r: np.ndarray
    R: np.ndarray

    @property
    def rows(self) -> int:
        return self.H.shape[0]


def project_point(p_c, min_depth: float = MIN_DEPTH):
    """Normalized pinhole projection (x/z, y/z)."""
    p_c = np.asarray(p_c, dtype=float).reshape(3)
    if p_c[2] <= min_depth:
        raise BehindCamera(f"depth {p_c[2]:.4f} below minimum {min_depth}")
    return p_c[:2] / p_c[2]


def projection_jacobian(p_c):
    """2x3 derivative of the normalized projection at p_c."""
    x, y, z = p_c
    return np.array([[1.0 / z, 0.0, -x / z**2],
                     [0.0, 1.0 / z, -y / z**2]])


def _projection_jacobian_batch(P):
    """(m, 3) camera points -> (m, 2, 3) normalized-projection derivatives."""
    x, y, z = P[:, 0], P[:, 1], P[:, 2]
    J = np.zeros((P.shape[0], 2, 3))
    J[:, 0, 0] = 1.0 / z
    J[:, 1, 1] = 1.0 / z
    J[:, 0, 2] = -x / z**2
    J[:, 1, 2] = -y / z**2
    return J


def _gather_clones(window: VioState, frame_ids):
    """Clone indices and stacked (R, p) arrays, in observation order."""
    idxs = []
    for fid in frame_ids:
        try:
            idxs.append(window.clone_index(fid))
        except KeyError as e:
            raise StaleTrack(f"clone {e.args[0]} not in window") from e
    if not idxs:
        return idxs, np.zeros((0, 3, 3)), np.zeros((0, 3))
    Rs = np.stack([window.clones[i].R for i in idxs])
    ps = np.stack([window.clones[i].p for i in idxs])
    return idxs, Rs, ps


def point_jacobians(window: VioState, track: PointTrack, model: ErrorModel,
                    landmark_error: str = "additive"):
    """Stacked (H_x, H_f, r) for one triangulated point track.

    For the right-invariant model `landmark_error` selects between the
    plain-additive landmark error (default, the convenient implementation)
    and the anchored form in which the landmark error is coupled to the
    rotation error of the first observing clone.  Both share H_f, and
    their state Jacobians agree after left-nullspace projection.
    """
    if track.p_world is None:
        raise ValueError("track must be triangulated first")
    if landmark_error not in ("additive", "anchored"):
        raise ValueError(f"unknown landmark error {landmark_error!r}")
    p_f = np.asarray(track.p_world, dtype=float).reshape(3)
    m = len(track.observations)
    dim = window.dim
    if m == 0:
        return np.zeros((0, dim)), np.zeros((0, 3)), np.zeros(0)
    anchored = (model is ErrorModel.RIGHT_INVARIANT and landmark_error == "anchored")
    idxs, Rs, ps = _gather_clones(window, [o[0] for o in track.observations])
    zs = np.stack([o[1] for o in track.observations])
    anchor_idx = idxs[0]

    rel = p_f - ps
    pc = np.einsum("mji,mj->mi", Rs, rel)  # camera-frame landmark per view
    depths = pc[:, 2]
    if np.any(depths <= MIN_DEPTH):
        bad = float(depths[depths <= MIN_DEPTH][0])
        raise BehindCamera(f"depth {bad:.4f} below minimum {MIN_DEPTH}")
    J = _projection_jacobian_batch(pc)
    JRt = np.einsum("mij,mkj->mik", J, Rs)  # J @ R^T, (m, 2, 3)
    if model is ErrorModel.STANDARD_ADDITIVE:
        Htheta = np.einsum("mij,mjk->mik", JRt, skew_batch(rel))
    else:
        Htheta = JRt @ skew(p_f)

    H_x = np.zeros((2 * m, dim))
    H_f = JRt.reshape(2 * m, 3)
    r = (zs - pc[:, :2] / depths[:, None]).reshape(2 * m)
    for i, idx in enumerate(idxs):
        rows = slice(2 * i, 2 * i + 2)
        sl = clone_slice(idx)
        if not anchored:
            H_x[rows, sl.start:sl.start + 3] = Htheta[i]
        elif idx != anchor_idx:
            H_x[rows, sl.start:sl.start + 3] = Htheta[i]
            asl = clone_slice(anchor_idx)
            H_x[rows, asl.start:asl.start + 3] -= Htheta[i]
        H_x[rows, sl.start + 3:sl.stop] = -JRt[i]
    return H_x, H_f, r


def _left_nullspace(M, tol_factor: float = 1e-10):
    """Orthonormal left-nullspace basis of M via full SVD, plus the rank."""
    M = np.atleast_2d(M)
    U, s, _ = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > tol_factor * max(smax, 1.0)))
    return U[:, rank:], rank


def nullspace_project(H_x, H_f, r, R):
    """Remove the landmark error by projecting onto the left null space of H_f."""
    H_f = np.atleast_2d(H_f)
    if H_f.shape[0] <= 3:
        raise DegenerateFeature("need more than 3 rows to project out a point")
    A, rank = _left_nullspace(H_f)
    if rank < 3:
        raise DegenerateFeature(f"landmark Jacobian rank {rank} < 3")
    return StackedSystem(A.T @ H_x, A.T @ np.asarray(r, dtype=float),
                         A.T @ np.asarray(R, dtype=float) @ A)


def line_residual(l, p_s, p_e):
    """Signed distances of the two endpoints to the image line l."""
    l = np.asarray(l, dtype=float).reshape(3)
    l12sq = l[0]**2 + l[1]**2
    if l12sq <= 1e-16:
        raise DegenerateImageLine("image line has vanishing (l1, l2)")
    l12 = np.sqrt(l12sq)
    return np.array([p_s @ l, p_e @ l]) / l12


def line_projection_jacobian(l, p_s, p_e):
    """2x3 derivative of line_residual w.r.t. the line coefficients l."""
    l = np.asarray(l, dtype=float).reshape(3)
    l12 = np.sqrt(l[0]**2 + l[1]**2)
    z = line_residual(l, p_s, p_e)
    J = np.empty((2, 3))
    for row, p in enumerate((p_s, p_e)):
        J[row, 0] = p[0] / l12 - z[row] * l[0] / l12**2
        J[row, 1] = p[1] / l12 - z[row] * l[1] / l12**2
        J[row, 2] = 1.0 / l12
    return J


def _line_state_columns(R, p, n, d, J_L, model: ErrorModel):
    JRt = J_L @ R.T
    if model is ErrorModel.RIGHT_INVARIANT:
        H_theta = JRt @ (skew(n) - skew(p) @ skew(d))
    else:
        H_theta = JRt @ skew(n - np.cross(p, d))
    H_p = JRt @ skew(d)
    return np.hstack([H_theta, H_p])


def line_jacobians(clone, line_world: PluckerLine, p_s, p_e,
                   mode: LineErrorMode = LineErrorMode.GLOBAL,
                   model: ErrorModel = ErrorModel.RIGHT_INVARIANT):
    """(H_X 2x6, H_L 2x4, r) for one line observation from one clone.

    H_X and H_L are derivatives of the residual w.r.t. perturbations of the
    *estimated* clone (through the model's retraction) and the estimated
    line (through the Global/Local orthonormal retraction).
    """
    n, d = line_world.n, line_world.d
    line_c = transform_line(clone.R, clone.p, line_world)
    l = line_c.n
    r = line_residual(l, p_s, p_e)
    J_L = line_projection_jacobian(l, p_s, p_e)
    H_X = _line_state_columns(clone.R, clone.p, n, d, J_L, model)
    nn, nd = np.linalg.norm(n), np.linalg.norm(d)
    H_phi = (nd / nn) * n + (nn / nd) * (np.cross(clone.p, d))
    JRt = J_L @ clone.R.T
    H_L = -np.hstack([JRt @ (skew(n) - skew(clone.p) @ skew(d)),
                      (JRt @ H_phi).reshape(2, 1)])
    if mode is LineErrorMode.LOCAL:
        from .geometry import plucker_to_orthonormal
        U = plucker_to_orthonormal(line_world).U
        T = np.eye(4)
        T[:3, :3] = U
        H_L = H_L @ T
    return H_X, H_L, r


def line_rows_batch(Rs, ps, S, E, line: PluckerLine,
                    mode: LineErrorMode = LineErrorMode.GLOBAL,
                    model: ErrorModel = ErrorModel.RIGHT_INVARIANT,
                    need_state: bool = True, need_jac: bool = True):
    """line_jacobians vectorized over m views of one line.

    Rs (m,3,3), ps (m,3): camera poses; S, E (m,3): homogeneous endpoints.
    Returns (H_X (m,2,6) or None, H_L (m,2,4) or None, r (m,2)) with the
    same per-view values (and sign conventions) as line_jacobians.
    """
    n, d = line.n, line.d
    pxd = np.empty_like(ps)
    pxd[:, 0] = ps[:, 1] * d[2] - ps[:, 2] * d[1]
    pxd[:, 1] = ps[:, 2] * d[0] - ps[:, 0] * d[2]
    pxd[:, 2] = ps[:, 0] * d[1] - ps[:, 1] * d[0]
    v = n - pxd
    l = np.einsum("mji,mj->mi", Rs, v)  # image line coefficients per view
    l12sq = l[:, 0]**2 + l[:, 1]**2
    if np.any(l12sq <= 1e-16):
        raise DegenerateImageLine("image line has vanishing (l1, l2)")
    l12 = np.sqrt(l12sq)
    r = np.empty((l.shape[0], 2))
    r[:, 0] = np.einsum("mi,mi->m", S, l) / l12
    r[:, 1] = np.einsum("mi,mi->m", E, l) / l12
    if not need_jac:
        return None, None, r
    m = Rs.shape[0]
    J_L = np.empty((m, 2, 3))
    for row, P in enumerate((S, E)):
        J_L[:, row, 0] = P[:, 0] / l12 - r[:, row] * l[:, 0] / l12sq
        J_L[:, row, 1] = P[:, 1] / l12 - r[:, row] * l[:, 1] / l12sq
        J_L[:, row, 2] = 1.0 / l12
    JRt = np.einsum("mij,mkj->mik", J_L, Rs)
    # skew(n) - skew(p) skew(d) = skew(n) - d p^T + (p.d) I
    B = (skew(n)[None, :, :] - np.einsum("i,mj->mij", d, ps) +
         (ps @ d)[:, None, None] * np.eye(3)[None, :, :])
    JRtB = np.einsum("mij,mjk->mik", JRt, B)
    nn = np.sqrt(n @ n)
    nd = np.sqrt(d @ d)
    H_phi = (nd / nn) * n[None, :] + (nn / nd) * pxd
    H_L = np.empty((m, 2, 4))
    H_L[:, :, :3] = -JRtB
    H_L[:, :, 3] = -np.einsum("mij,mj->mi", JRt, H_phi)
    if mode is LineErrorMode.LOCAL:
        from .geometry import plucker_to_orthonormal
        U = plucker_to_orthonormal(line).U
        H_L[:, :, :3] = H_L[:, :, :3] @ U
    H_X = None
    if need_state:
        H_X = np.empty((m, 2, 6))
        if model is ErrorModel.RIGHT_INVARIANT:
            H_X[:, :, :3] = JRtB
        else:
            H_X[:, :, :3] = np.einsum("mij,mjk->mik", JRt, skew_batch(v))
        H_X[:, :, 3:] = JRt @ skew(d)
    return H_X, H_L, r


def vp_rows_batch(Rs, ps, V, line: PluckerLine, need_state: bool = True,
                  need_jac: bool = True):
    """vp_jacobians vectorized over m views of one line.

    V (m,2): vanishing-point observations.  Views whose direction is
    (numerically) parallel to the image plane are dropped rather than
    raising; `keep` marks the surviving rows.  Returns
    (H_X (k,2,6) or None, H_v (k,2,4) or None, r (k,2), keep (m,) bool).
    """
    n, d = line.n, line.d
    d_c = np.einsum("mji,j->mi", Rs, d)
    keep = np.abs(d_c[:, 2]) > 1e-6 * np.sqrt(np.einsum("mi,mi->m", d_c, d_c))
    d_c = d_c[keep]
    if not d_c.shape[0]:
        empty = np.zeros((0, 2))
        return (np.zeros((0, 2, 6)) if need_state else None,
                np.zeros((0, 2, 4)) if need_jac else None, empty, keep)
    r = np.asarray(V, dtype=float)[keep] - d_c[:, :2] / d_c[:, 2:3]
    if not need_jac:
        return None, None, r, keep
    J_p = _projection_jacobian_batch(d_c)
    JRt = np.einsum("mij,mkj->mik", J_p, Rs[keep])
    JS = JRt @ skew(d)
    nn = np.sqrt(n @ n)
    nd = np.sqrt(d @ d)
    H_v = np.empty((JS.shape[0], 2, 4))
    H_v[:, :, :3] = -JS
    H_v[:, :, 3] = np.einsum("mij,j->mi", JRt, (nn / nd) * d)
    H_X = None
    if need_state:
        H_X = np.zeros((JS.shape[0], 2, 6))
        H_X[:, :, :3] = JS
    return H_X, H_v, r, keep


def vp_residual(p_v, d_c):
    """VP innovation: observation minus the projected camera-frame direction."""
    d_c = np.asarray(d_c, dtype=float).reshape(3)
    if abs(d_c[2]) <= 1e-6 * np.linalg.norm(d_c):
        raise VpAtInfinity("line direction parallel to the image plane")
    return np.asarray(p_v, dtype=float).reshape(2) - d_c[:2] / d_c[2]


def vp_jacobians(clone, line_world: PluckerLine, p_v):
    """(H_X 2x6, H_v 2x4, r) for one vanishing-point observation.

    These are innovation-form Jacobians: r ~ H_X xi + H_v xi_line + noise.
    The translation block of H_X is identically zero — a direction cannot
    see translation.
    """
    n, d = line_world.n, line_world.d
    d_c = clone.R.T @ d
    r = vp_residual(p_v, d_c)
    J_p = projection_jacobian(d_c)
    JRt = J_p @ clone.R.T
    H_X = np.hstack([JRt @ skew(d), np.zeros((2, 3))])
    nn, nd = np.linalg.norm(n), np.linalg.norm(d)
    H_v = np.hstack([-JRt @ skew(d), (JRt @ ((nn / nd) * d)).reshape(2, 1)])
    return H_X, H_v, r


def build_line_system(window: VioState, track: LineTrack, model: ErrorModel,
                      line_sigma: float, vp_sigma: float,
                      mode: LineErrorMode = LineErrorMode.GLOBAL,
                      use_vp: bool = True):
    """Assemble innovation-form stacked rows for one line track.

    Returns (H_x rows x dim, H_lv rows x 4, r, R) with every row obeying
    r ~ H xi + n: line rows are sign-flipped from line_jacobians, VP rows
    enter as-is.  VpAtInfinity observations are skipped.
    """
    if track.line_world is None:
        raise ValueError("track must be triangulated first")
    dim = window.dim
    line = track.line_world
    m = len(track.observations)
    rows = 2 * m
    idxs, Rs, ps = _gather_clones(window, [o[0] for o in track.observations])
    if m:
        S = np.stack([o[1] for o in track.observations])
        E = np.stack([o[2] for o in track.observations])
        H_X, H_L, r2 = line_rows_batch(Rs, ps, S, E, line, mode, model)
    kept_vp = 0
    if use_vp and track.vp_observations:
        vidxs, Rv, pv = _gather_clones(window,
                                       [o[0] for o in track.vp_observations])
        V = np.stack([o[1] for o in track.vp_observations])
        H_Xv, H_v, rv, keep = vp_rows_batch(Rv, pv, V, line)
        vidxs = [i for i, k in zip(vidxs, keep) if k]
        kept_vp = len(vidxs)
    total = rows + 2 * kept_vp
    if total == 0:
        raise DegenerateFeature("no usable rows for line track")
    H_x = np.zeros((total, dim))
    H_lv = np.empty((total, 4))
    r = np.empty(total)
    sig = np.empty(total)
    for i, idx in enumerate(idxs):
        H_x[2 * i:2 * i + 2, clone_slice(idx)] = -H_X[i]
    if m:
        H_lv[:rows] = -H_L.reshape(rows, 4)
        r[:rows] = r2.reshape(rows)
    sig[:rows] = line_sigma**2
    for i, idx in enumerate(vidxs if kept_vp else ()):
        H_x[rows + 2 * i:rows + 2 * i + 2, clone_slice(idx)] = H_Xv[i]
    if kept_vp:
        H_lv[rows:] = H_v.reshape(2 * kept_vp, 4)
        r[rows:] = rv.reshape(2 * kept_vp)
        sig[rows:] = vp_sigma**2
    return H_x, H_lv, r, np.diag(sig)


def project_out_line(H_x_stack, H_l_stack, H_v_stack, r, R):
    """Left-nullspace projection over the stacked 4-DoF line error columns.

    H_l_stack holds the line rows' Jacobian w.r.t. the line error and
    H_v_stack the VP rows' (either may be empty); rows must align with
    H_x_stack.  Structural lines with VP rows have a rank-4 stack on
    generic geometry.
    """
    blocks = [np.atleast_2d(b) for b in (H_l_stack, H_v_stack)
              if b is not None and np.size(b)]
    M = np.vstack(blocks)
    if M.shape[0] != np.atleast_2d(H_x_stack).shape[0]:
        raise DegenerateFeature("line-error rows do not align with state rows")
    if M.shape[0] <= 4:
        raise DegenerateFeature("need more than 4 rows to project out a line")
    A, rank = _left_nullspace(M)
    if rank < 4:
        raise DegenerateFeature(f"line Jacobian rank {rank} < 4")
    return StackedSystem(A.T @ np.atleast_2d(H_x_stack),
                         A.T @ np.asarray(r, dtype=float),
                         A.T @ np.asarray(R, dtype=float) @ A)
