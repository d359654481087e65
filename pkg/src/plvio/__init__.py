"""Visual-inertial odometry with point, line, and vanishing-point updates.

A sliding-window multi-state-constraint filter with two interchangeable
error parameterizations (standard additive and right-invariant), plus the
synthetic world, Monte Carlo evaluation, and observability diagnostics used
to compare them.
"""

from .exceptions import (BehindCamera, ConfigError, DegenerateFeature,
                         DegenerateImageLine, DegenerateLine,
                         DegenerateProjection, DimensionError, EmptyWindow,
                         PlvioError, StaleTrack, TimeOrderError,
                         TriangulationFailed, VpAtInfinity, WindowOverflow)
from .geometry import (LineErrorMode, OrthonormalLine, PluckerLine, Pose,
                       left_jacobian, line_through_points,
                       orthonormal_retract, orthonormal_to_plucker,
                       plucker_to_orthonormal, project_line, quat_to_rot,
                       rot_to_quat, skew, so3_exp, so3_log, transform_line)
from .state import (CLONE_DIM, IMU_DIM, CameraClone, ErrorModel, ImuState,
                    VioState, apply_correction, clone_camera, error_between,
                    marginalize_oldest)
from .propagation import (GRAVITY, ImuSample, NoiseParams, TransitionBundle,
                          discretize, linearize, propagate_covariance,
                          propagate_mean)
from .measurements import (LineTrack, PointTrack, StackedSystem,
                           build_line_system, line_jacobians,
                           nullspace_project, point_jacobians,
                           project_out_line, vp_jacobians, vp_residual)
from .triangulation import (GnSettings, refine_line, refine_structural_line,
                            triangulate_line, triangulate_point)
from .update import (FrameDiagnostics, TrackBuffer, UpdateConfig, VioFilter,
                     chi2_gate, collect_mature_features, kalman_update,
                     qr_compress)
from .observability import (build_null_basis_point, build_null_basis_vp,
                            build_observability_matrix, kernel_basis,
                            line_parameter_kernel, nullspace_residual,
                            observability_report, vp_full_observability_check)
from .simulator import (DIVERGENCE_LIMIT, VARIANTS, Scenario, SimConfig,
                        SimResult, generate_scenario, run_filter,
                        run_simulation)
from .evaluation import (AggregateMetrics, RunMetrics, monte_carlo,
                         nees_calibration_fixture, pose_nees, rmse_series,
                         run_metrics)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
