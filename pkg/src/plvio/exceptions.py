"""Exception types shared across the estimator."""


class PlvioError(Exception):
    """Base class for all library errors."""


class DegenerateLine(PlvioError):
    """Line has (near-)zero normal/direction or colinear n, d."""


class DegenerateProjection(PlvioError):
    """Line passes (numerically) through the camera center."""


class DegenerateImageLine(PlvioError):
    """Projected line has vanishing (l1, l2); distances undefined."""


class BehindCamera(PlvioError):
    """Point depth at or below the minimum for projection."""


class VpAtInfinity(PlvioError):
    """Camera-frame direction is (numerically) parallel to the image plane."""


class DegenerateFeature(PlvioError):
    """Feature Jacobian is rank deficient; the track is discarded."""


class StaleTrack(PlvioError):
    """Track references a clone that is no longer in the window."""


class WindowOverflow(PlvioError):
    """Attempted to clone past the configured window size."""


class EmptyWindow(PlvioError):
    """Attempted to marginalize from an empty window."""


class DimensionError(PlvioError):
    """Vector/matrix dimensions do not match the window structure."""


class TimeOrderError(PlvioError):
    """Timestamps are not strictly increasing."""


class TriangulationFailed(PlvioError):
    """Insufficient baseline or ill-conditioned normal equations."""


class ConfigError(PlvioError):
    """Experiment configuration file is malformed or inconsistent."""
