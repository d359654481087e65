"""Landmark initialization: multiview point triangulation and dual-Plucker
line triangulation, with Levenberg-damped Gauss-Newton line refinement.

Line refinement minimizes the stacked endpoint-distance residuals over the
4-DoF orthonormal parameterization (Global retraction); structural lines
append the VP residual rows of the views that carry a VP observation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg.lapack import dposv

from .exceptions import DegenerateImageLine, TriangulationFailed
from .geometry import (PluckerLine, plucker_to_orthonormal, skew, so3_exp)
from .measurements import _projection_jacobian_batch

log = logging.getLogger(__name__)

MIN_PLANE_ANGLE = np.deg2rad(1.0)


@dataclass
class GnSettings:
    """Gauss-Newton / Levenberg loop controls."""

    max_iters: int = 10
    step_tol: float = 1e-8
    lm_lambda0: float = 1e-3
    lm_factor: float = 10.0
    lm_lambda_max: float = 1e6
    huber: float | None = None  # disabled by default


def _clone_map(clones):
    return {c.frame_id: c for c in clones}


def _gather_poses(track_obs, cmap, n_fields: int):
    """Stack the clone poses and observation fields for the views present."""
    hits = [(cmap[row[0]], row) for row in track_obs if row[0] in cmap]
    if not hits:
        return None
    m = len(hits)
    Rs = np.empty((m, 3, 3))
    ps = np.empty((m, 3))
    extra = tuple(np.empty((m, np.size(hits[0][1][1 + k])))
                  for k in range(n_fields))
    for i, (clone, row) in enumerate(hits):
        Rs[i] = clone.R
        ps[i] = clone.p
        for k in range(n_fields):
            extra[k][i] = row[1 + k]
    return (Rs, ps) + extra


def triangulate_point(track, clones):
    """Linear multiview triangulation plus 3 Gauss-Newton polish iterations.

    Each observation (u, v) contributes the two planes
    (r1 - u r3)^T (p - p_c) = 0, (r2 - v r3)^T (p - p_c) = 0 with r_k the
    camera rotation rows.
    """
    gathered = _gather_poses(track.observations, _clone_map(clones), 1)
    if gathered is None or gathered[0].shape[0] < 2:
        raise TriangulationFailed("need at least two observations")
    Rs, ps, zs = gathered
    m = Rs.shape[0]
    Rt = Rs.transpose(0, 2, 1)
    A = np.empty((2 * m, 3))
    A[0::2] = Rt[:, 0] - zs[:, 0, None] * Rt[:, 2]
    A[1::2] = Rt[:, 1] - zs[:, 1, None] * Rt[:, 2]
    b = np.empty(2 * m)
    b[0::2] = np.einsum("mi,mi->m", A[0::2], ps)
    b[1::2] = np.einsum("mi,mi->m", A[1::2], ps)
    N = A.T @ A
    if np.linalg.cond(N) > 1e8:
        raise TriangulationFailed("ill-conditioned normal equations (no baseline?)")
    p = np.linalg.solve(N, A.T @ b)
    for _ in range(3):
        pc = np.einsum("mji,mj->mi", Rs, p - ps)
        if np.any(pc[:, 2] <= 1e-3):
            raise TriangulationFailed("triangulated point behind a camera")
        r = (zs - pc[:, :2] / pc[:, 2:3]).reshape(2 * m)
        J = np.einsum("mij,mkj->mik",
                      _projection_jacobian_batch(pc), Rs).reshape(2 * m, 3)
        p = p + np.linalg.solve(J.T @ J, J.T @ r)
    return p


def _backprojected_plane(clone, p_s, p_e):
    """World-frame plane (normal m, offset e): m^T x + e = 0 through the view ray."""
    l = np.cross(p_s, p_e)  # image line through the two endpoint rays
    m = clone.R @ l
    return m, -m @ clone.p


def triangulate_line(track, clones) -> PluckerLine:
    """Dual-Plucker two-view line triangulation using the widest-baseline pair."""
    gathered = _gather_poses(track.observations, _clone_map(clones), 2)
    if gathered is None or gathered[0].shape[0] < 2:
        raise TriangulationFailed("need at least two line observations")
    Rs, ps, S, E = gathered
    sxe = np.empty_like(S)  # image line through the two endpoint rays
    sxe[:, 0] = S[:, 1] * E[:, 2] - S[:, 2] * E[:, 1]
    sxe[:, 1] = S[:, 2] * E[:, 0] - S[:, 0] * E[:, 2]
    sxe[:, 2] = S[:, 0] * E[:, 1] - S[:, 1] * E[:, 0]
    M = np.einsum("mij,mj->mi", Rs, sxe)  # world plane normals
    e = -np.einsum("mi,mi->m", M, ps)     # world plane offsets
    N = M / np.sqrt(np.einsum("mi,mi->m", M, M))[:, None]
    cosines = np.clip(np.abs(N @ N.T), 0.0, 1.0)
    angles = np.arccos(cosines)
    iu = np.triu_indices(Rs.shape[0], k=1)
    k = int(np.argmax(angles[iu]))
    best = (int(iu[0][k]), int(iu[1][k]))
    best_angle = float(angles[iu][k])
    if best_angle < MIN_PLANE_ANGLE:
        raise TriangulationFailed(
            f"back-projected planes nearly parallel ({np.rad2deg(best_angle):.2f} deg)")
    (m1, e1), (m2, e2) = (M[best[0]], e[best[0]]), (M[best[1]], e[best[1]])
    # Intersection of the two planes, read off the dual Plucker matrix
    # pi1 pi2^T - pi2 pi1^T.
    d = np.array([m1[1] * m2[2] - m1[2] * m2[1],
                  m1[2] * m2[0] - m1[0] * m2[2],
                  m1[0] * m2[1] - m1[1] * m2[0]])
    n = e1 * m2 - e2 * m1
    if np.linalg.norm(d) <= 1e-12 or np.linalg.norm(n) <= 1e-12:
        raise TriangulationFailed("degenerate plane intersection")
    line = PluckerLine(n, d).normalized()
    for c in line.d:
        if abs(c) > 1e-12:
            if c < 0.0:
                line = PluckerLine(-line.n, -line.d)
            break
    return line


class _LineCost:
    """Stacked endpoint (and optional VP) residuals for one track, with the
    camera poses gathered (and transposed) once so repeated LM evaluations
    stay cheap.  The residual keeps the same row order and sign conventions
    as line_rows_batch / vp_rows_batch; `jac` reuses the intermediates of
    the matching `residual` call instead of recomputing them."""

    def __init__(self, track, cmap, with_vp: bool):
        self.seg = _gather_poses(track.observations, cmap, 2)
        self.vp = (_gather_poses(track.vp_observations, cmap, 1)
                   if with_vp and track.vp_observations else None)
        if self.seg is not None:
            Rs, ps, S, E = self.seg
            self._RsT = Rs.transpose(0, 2, 1).copy()
        if self.vp is not None:
            Rv, _, V = self.vp
            self._RvT = Rv.transpose(0, 2, 1).copy()

    def residual(self, n, d):
        """(r, cache) with r stacked [segment rows..., VP rows...]."""
        cache = [None, None]
        parts = []
        if self.seg is not None:
            _, ps, S, E = self.seg
            pxd = np.empty_like(ps)
            pxd[:, 0] = ps[:, 1] * d[2] - ps[:, 2] * d[1]
            pxd[:, 1] = ps[:, 2] * d[0] - ps[:, 0] * d[2]
            pxd[:, 2] = ps[:, 0] * d[1] - ps[:, 1] * d[0]
            l = np.einsum("mij,mj->mi", self._RsT, n - pxd)
            l12sq = l[:, 0] ** 2 + l[:, 1] ** 2
            if np.any(l12sq <= 1e-16):
                raise DegenerateImageLine("image line has vanishing (l1, l2)")
            l12 = np.sqrt(l12sq)
            rs = np.empty((l.shape[0], 2))
            rs[:, 0] = np.einsum("mi,mi->m", S, l) / l12
            rs[:, 1] = np.einsum("mi,mi->m", E, l) / l12
            cache[0] = (pxd, l, l12sq, l12, rs)
            parts.append(rs.reshape(-1))
        if self.vp is not None:
            _, _, V = self.vp
            d_c = np.einsum("mij,j->mi", self._RvT, d)
            keep = np.abs(d_c[:, 2]) > 1e-6 * np.sqrt(d @ d)
            d_k = d_c[keep]
            rv = V[keep] - d_k[:, :2] / d_k[:, 2:3]
            cache[1] = (keep, d_k)
            parts.append(rv.reshape(-1))
        r = np.concatenate(parts) if len(parts) > 1 else parts[0]
        return r, cache

    def jac(self, n, d, cache):
        """J = dr/ddelta (Global retraction) from a `residual` cache."""
        nn = np.sqrt(n @ n)
        nd = np.sqrt(d @ d)
        parts = []
        if self.seg is not None:
            Rs, ps, S, E = self.seg
            pxd, l, l12sq, l12, rs = cache[0]
            m = Rs.shape[0]
            J_L = np.empty((m, 2, 3))
            for row, P in enumerate((S, E)):
                J_L[:, row, 0] = P[:, 0] / l12 - rs[:, row] * l[:, 0] / l12sq
                J_L[:, row, 1] = P[:, 1] / l12 - rs[:, row] * l[:, 1] / l12sq
                J_L[:, row, 2] = 1.0 / l12
            JRt = np.matmul(J_L, self._RsT)
            # JRt @ (skew(n) - d p^T + (p.d) I), without forming the m 3x3s
            JRtB = (np.matmul(JRt, skew(n)) -
                    np.einsum("mi,mj->mij", JRt @ d, ps) +
                    (ps @ d)[:, None, None] * JRt)
            H_phi = (nd / nn) * n[None, :] + (nn / nd) * pxd
            J_seg = np.empty((m, 2, 4))
            J_seg[:, :, :3] = -JRtB
            J_seg[:, :, 3] = -np.einsum("mij,mj->mi", JRt, H_phi)
            parts.append(J_seg.reshape(-1, 4))
        if self.vp is not None:
            Rv, _, V = self.vp
            keep, d_k = cache[1]
            J_p = _projection_jacobian_batch(d_k)
            JRt = np.matmul(J_p, self._RvT[keep])
            # r = p_v - prediction, so dr/ddelta = -H_v
            J_vp = np.empty((d_k.shape[0], 2, 4))
            J_vp[:, :, :3] = np.matmul(JRt, skew(d))
            J_vp[:, :, 3] = -np.einsum("mij,j->mi", JRt, (nn / nd) * d)
            parts.append(J_vp.reshape(-1, 4))
        return np.vstack(parts) if len(parts) > 1 else parts[0]

    def __call__(self, line: PluckerLine, need_jac: bool):
        """(r, J) with J = dr/ddelta under the Global retraction (None when
        need_jac is False)."""
        r, cache = self.residual(line.n, line.d)
        return r, self.jac(line.n, line.d, cache) if need_jac else None


_DAMP4 = 1e-12 * np.eye(4)
_DAMP4.setflags(write=False)


def _refine(line: PluckerLine, track, clones, settings: GnSettings,
            with_vp: bool) -> PluckerLine:
    system = _LineCost(track, _clone_map(clones), with_vp)
    if system.seg is None and system.vp is None:
        return line
    o = plucker_to_orthonormal(line.normalized())
    U, phi = o.U, o.phi
    n, d = np.cos(phi) * U[:, 0], np.sin(phi) * U[:, 1]
    r, cache = system.residual(n, d)
    J = system.jac(n, d, cache)
    cost = cost0 = r @ r
    lam = settings.lm_lambda0
    for _ in range(settings.max_iters):
        JtJ = J.T @ J
        g = J.T @ r
        if np.max(np.abs(g)) < 1e-10 * max(1.0, cost):
            break  # gradient numerically zero: converged
        while True:
            _, step, info = dposv(JtJ + lam * np.diag(np.diag(JtJ)) + _DAMP4,
                                  -g, lower=0)
            if info == 0:
                U_new = so3_exp(step[:3]) @ U  # Global retraction
                phi_new = phi + step[3]
                n_new = np.cos(phi_new) * U_new[:, 0]
                d_new = np.sin(phi_new) * U_new[:, 1]
                r_new, cache_new = system.residual(n_new, d_new)
                cost_new = r_new @ r_new
                if cost_new <= cost:
                    U, phi, n, d = U_new, phi_new, n_new, d_new
                    r, cost = r_new, cost_new
                    J = system.jac(n, d, cache_new)
                    lam = max(lam / settings.lm_factor, 1e-9)
                    break
            lam *= settings.lm_factor
            if lam > settings.lm_lambda_max:
                if cost < cost0:
                    # progress was made; the damping simply saturated at the
                    # optimum, so the current iterate is the answer
                    return PluckerLine(n, d)
                log.warning("line refinement made no progress "
                            "(lambda %.1e); keeping the input line", lam)
                return line
        if step @ step < settings.step_tol ** 2:
            break
    return PluckerLine(n, d)


def refine_line(line: PluckerLine, track, clones,
                settings: GnSettings | None = None) -> PluckerLine:
    """Levenberg-damped Gauss-Newton over the line's orthonormal coordinates."""
    return _refine(line, track, clones, settings or GnSettings(), with_vp=False)


def refine_structural_line(line: PluckerLine, track, clones,
                           settings: GnSettings | None = None) -> PluckerLine:
    """refine_line with the VP residual rows of the VP-carrying views appended."""
    return _refine(line, track, clones, settings or GnSettings(), with_vp=True)
