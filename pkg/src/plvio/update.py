"""Per-frame EKF update: feature maturation, projected systems, gating,
QR compression, Joseph-form correction — plus the sliding-window filter
loop that ties propagation, cloning, and marginalization together.

Points and lines matured on the same frame are stacked into one joint
update so everything shares a single linearization point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import chi2

from .exceptions import (BehindCamera, DegenerateFeature, DegenerateImageLine,
                         DegenerateLine, DegenerateProjection, StaleTrack,
                         TimeOrderError, TriangulationFailed, VpAtInfinity)
from .geometry import LineErrorMode
from .measurements import (LineTrack, PointTrack, StackedSystem,
                           build_line_system, nullspace_project,
                           point_jacobians, project_out_line)
from .propagation import (GRAVITY, NoiseParams, TransitionBundle, discretize,
                          linearize, propagate_covariance, propagate_mean)
from .state import (ErrorModel, VioState, apply_correction, clone_camera,
                    marginalize_oldest, symmetrize)
from .triangulation import (GnSettings, refine_line, refine_structural_line,
                            triangulate_line, triangulate_point)

log = logging.getLogger(__name__)

# Feature-level failures that just mean "skip this track", not bugs.
_SKIP = (TriangulationFailed, BehindCamera, StaleTrack, DegenerateFeature,
         DegenerateImageLine, DegenerateLine, DegenerateProjection,
         VpAtInfinity)


@dataclass
class UpdateConfig:
    """Knobs for the measurement update stage."""

    chi2_confidence: float = 0.95
    max_features: int | None = None  # per-update budget; None = all mature
    pixel_sigma: float = 1.0
    focal_length: float = 460.0
    vp_pixel_sigma: float | None = None  # defaults to pixel_sigma
    min_track_length: int = 5
    use_lines: bool = False
    use_vp: bool = False
    line_error_mode: LineErrorMode = LineErrorMode.GLOBAL
    landmark_error: str = "additive"
    gn: GnSettings = field(default_factory=GnSettings)

    def __post_init__(self):
        if not 0.0 < self.chi2_confidence < 1.0:
            raise ValueError("chi2 confidence must lie in (0, 1)")

    @property
    def point_sigma(self) -> float:
        """Point/endpoint noise std on the normalized plane."""
        return self.pixel_sigma / self.focal_length

    @property
    def vp_sigma(self) -> float:
        px = self.vp_pixel_sigma if self.vp_pixel_sigma is not None else self.pixel_sigma
        return px / self.focal_length


class TrackBuffer:
    """Bookkeeping for active point/line tracks keyed by landmark id.

    Observations for the current frame are staged by begin_frame and only
    appended by commit_frame, after the update and cloning have run — a
    track harvested mid-frame therefore never references a not-yet-cloned
    pose, and a continuing landmark simply restarts a fresh track.
    """

    def __init__(self, min_track_length: int = 5):
        self.min_track_length = min_track_length
        self.points: dict[int, PointTrack] = {}
        self.lines: dict[int, LineTrack] = {}
        self._pending = None

    def begin_frame(self, frame_id: int, point_obs, line_obs):
        if self._pending is not None:
            raise RuntimeError("previous frame was never committed")
        self._pending = (frame_id, dict(point_obs), dict(line_obs))

    def ended_tracks(self):
        """Pop tracks absent from the staged frame; return the long enough ones."""
        if self._pending is None:
            raise RuntimeError("no frame staged")
        _, point_obs, line_obs = self._pending
        ended_p = [self.points.pop(i) for i in list(self.points)
                   if i not in point_obs]
        ended_l = [self.lines.pop(i) for i in list(self.lines)
                   if i not in line_obs]
        n = self.min_track_length
        return ([t for t in ended_p if len(t) >= n],
                [t for t in ended_l if len(t) >= n])

    def harvest_frame(self, frame_id: int):
        """Pop mature tracks touching frame_id; trim that frame from short ones."""
        out_p, out_l = [], []
        for table, out in ((self.points, out_p), (self.lines, out_l)):
            for key in list(table):
                track = table[key]
                if not any(obs[0] == frame_id for obs in track.observations):
                    continue
                if len(track) >= self.min_track_length:
                    out.append(table.pop(key))
                else:
                    track.observations = [o for o in track.observations
                                          if o[0] != frame_id]
                    if isinstance(track, LineTrack):
                        track.vp_observations = [o for o in track.vp_observations
                                                 if o[0] != frame_id]
                    if not track.observations:
                        del table[key]
        return out_p, out_l

    def commit_frame(self):
        """Append the staged observations to (possibly fresh) tracks."""
        if self._pending is None:
            raise RuntimeError("no frame staged")
        frame_id, point_obs, line_obs = self._pending
        for fid, z in point_obs.items():
            self.points.setdefault(fid, PointTrack(fid)).add(frame_id, z)
        for lid, obs in line_obs.items():
            p_s, p_e, p_v = obs
            self.lines.setdefault(lid, LineTrack(lid)).add(frame_id, p_s, p_e, p_v)
        self._pending = None


def collect_mature_features(tracker: TrackBuffer, window: VioState):
    """Tracks that ended this frame or touch the clone about to be dropped."""
    pts, lns = tracker.ended_tracks()
    if window.clones and len(window.clones) >= window.window_size:
        mp, ml = tracker.harvest_frame(window.clones[0].frame_id)
        pts.extend(mp)
        lns.extend(ml)
    return pts, lns


@lru_cache(maxsize=256)
def _chi2_threshold(dof: int, confidence: float) -> float:
    return float(chi2.ppf(confidence, dof))


def chi2_gate(system: StackedSystem, cov, confidence: float = 0.95) -> bool:
    """Mahalanobis acceptance test against the chi-square quantile."""
    S = system.H @ cov @ system.H.T + system.R
    try:
        gamma = float(system.r @ np.linalg.solve(symmetrize(S), system.r))
    except np.linalg.LinAlgError:
        return False
    if not np.isfinite(gamma) or gamma < 0.0:
        return False
    return gamma < _chi2_threshold(system.rows, confidence)


def qr_compress(system: StackedSystem) -> StackedSystem:
    """Collapse a tall stacked system onto its upper-triangular factor.

    The rows are whitened first, so the compressed system carries identity
    noise; information (H^T R^-1 H and H^T R^-1 r) is preserved.
    """
    rows, cols = system.H.shape
    if rows <= cols:
        return system
    L = np.linalg.cholesky(np.asarray(system.R, dtype=float))
    Hw = solve_triangular(L, system.H, lower=True)
    rw = solve_triangular(L, system.r, lower=True)
    Q, T = np.linalg.qr(Hw)
    rq = Q.T @ rw
    norms = np.linalg.norm(T, axis=1)
    keep = norms > 1e-12 * max(norms.max(), 1.0)
    return StackedSystem(T[keep], rq[keep], np.eye(int(keep.sum())))


def kalman_update(state: VioState, cov, system: StackedSystem,
                  model: ErrorModel):
    """Joseph-form EKF correction applied through the model's retraction."""
    P = np.asarray(cov, dtype=float)
    S = symmetrize(system.H @ P @ system.H.T + system.R)
    try:
        K = np.linalg.solve(S, system.H @ P).T
    except np.linalg.LinAlgError:
        log.warning("innovation covariance singular; skipping update")
        return state, cov
    if not np.all(np.isfinite(K)):
        log.warning("non-finite Kalman gain; skipping update")
        return state, cov
    new_state = apply_correction(state, K @ system.r, model)
    IKH = np.eye(P.shape[0]) - K @ system.H
    new_cov = symmetrize(IKH @ P @ IKH.T + K @ system.R @ K.T)
    return new_state, new_cov


@dataclass
class FrameDiagnostics:
    """What one camera frame's update actually did."""

    frame_id: int
    point_tracks_used: int = 0
    line_tracks_used: int = 0
    vp_rows_used: int = 0
    tracks_rejected: int = 0
    rows_stacked: int = 0
    updated: bool = False


class VioFilter:
    """Sliding-window visual-inertial filter over a chosen error model.

    Feed process_imu with every inertial sample and process_frame with the
    per-frame feature observations (points: {id: (u, v)}; lines:
    {id: (p_s, p_e, p_v-or-None)} with homogeneous endpoints).  Camera
    frames are assumed time-aligned with the most recent IMU sample.
    """

    def __init__(self, state: VioState, cov, model: ErrorModel,
                 config: UpdateConfig | None = None,
                 noise: NoiseParams | None = None, gravity=GRAVITY):
        self.state = state
        self.cov = np.array(cov, dtype=float)
        self.model = model
        self.config = config or UpdateConfig()
        self.noise = noise or NoiseParams()
        self.gravity = np.asarray(gravity, dtype=float)
        self.tracker = TrackBuffer(self.config.min_track_length)
        self._bundle = TransitionBundle.identity()
        self._last_imu = None
        self.diagnostics: list[FrameDiagnostics] = []

    # -- inertial side --------------------------------------------------

    def process_imu(self, sample):
        if self._last_imu is not None:
            if sample.t <= self._last_imu.t:
                raise TimeOrderError(
                    f"IMU timestamps not increasing: {self._last_imu.t} -> {sample.t}")
            F, G = linearize(self.state.imu, self._last_imu, self.model,
                             self.gravity)
            step = discretize(F, G, self.noise, sample.t - self._last_imu.t)
            bundle = self._bundle  # step.compose(bundle), composed in place
            bundle.qd = step.phi @ bundle.qd @ step.phi.T + step.qd
            bundle.phi = step.phi @ bundle.phi
            imu = self.state.imu
            imu.R, imu.v, imu.p = _rk4_mean(imu, self._last_imu, sample,
                                            self.gravity)
        self._last_imu = sample

    def _flush_propagation(self):
        self.cov = propagate_covariance(self.cov, self._bundle)
        self._bundle = TransitionBundle.identity()

    # -- feature systems -------------------------------------------------

    def _point_system(self, track: PointTrack):
        s = self.config.point_sigma
        try:
            track.p_world = triangulate_point(track, self.state.clones)
            H_x, H_f, r = point_jacobians(self.state, track, self.model,
                                          self.config.landmark_error)
            sys = nullspace_project(H_x / s, H_f / s, r / s, np.eye(len(r)))
        except _SKIP:
            return None
        return sys if chi2_gate(sys, self.cov, self.config.chi2_confidence) else None

    def _line_system(self, track: LineTrack):
        cfg = self.config
        try:
            line = triangulate_line(track, self.state.clones)
            if track.structural and cfg.use_vp:
                line = refine_structural_line(line, track, self.state.clones, cfg.gn)
            else:
                line = refine_line(line, track, self.state.clones, cfg.gn)
            track.line_world = line
            H_x, H_lv, r, R = build_line_system(
                self.state, track, self.model, cfg.point_sigma, cfg.vp_sigma,
                cfg.line_error_mode, cfg.use_vp)
            d = np.sqrt(np.diag(R))
            sys = project_out_line(H_x / d[:, None], H_lv / d[:, None], None,
                                   r / d, np.eye(len(r)))
        except _SKIP:
            return None
        return sys if chi2_gate(sys, self.cov, cfg.chi2_confidence) else None

    # -- camera side ------------------------------------------------------

    def process_frame(self, frame_id: int, point_obs=None, line_obs=None) -> FrameDiagnostics:
        cfg = self.config
        point_obs = dict(point_obs or {})
        line_obs = dict(line_obs or {}) if cfg.use_lines else {}
        diag = FrameDiagnostics(frame_id)

        self._flush_propagation()
        self.tracker.begin_frame(frame_id, point_obs, line_obs)
        pts, lns = collect_mature_features(self.tracker, self.state)
        if cfg.max_features is not None:
            ranked = sorted(pts + lns, key=len, reverse=True)[:cfg.max_features]
            pts = [t for t in ranked if isinstance(t, PointTrack)]
            lns = [t for t in ranked if isinstance(t, LineTrack)]

        systems = []
        for track in pts:
            sys = self._point_system(track)
            if sys is None:
                diag.tracks_rejected += 1
            else:
                systems.append(sys)
                diag.point_tracks_used += 1
        for track in lns:
            sys = self._line_system(track)
            if sys is None:
                diag.tracks_rejected += 1
            else:
                systems.append(sys)
                diag.line_tracks_used += 1
                if cfg.use_vp:
                    diag.vp_rows_used += 2 * len(track.vp_observations)

        if systems:
            H = np.vstack([s.H for s in systems])
            r = np.concatenate([s.r for s in systems])
            stacked = StackedSystem(H, r, np.eye(len(r)))
            diag.rows_stacked = stacked.rows
            compressed = qr_compress(stacked)
            self.state, self.cov = kalman_update(self.state, self.cov,
                                                 compressed, self.model)
            diag.updated = True

        if len(self.state.clones) >= self.state.window_size:
            self.state, self.cov = marginalize_oldest(self.state, self.cov)
        self.state, self.cov = clone_camera(self.state, self.cov, self.model,
                                            frame_id)
        self.tracker.commit_frame()
        self.diagnostics.append(diag)
        return diag
