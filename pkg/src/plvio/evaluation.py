"""Consistency and accuracy metrics: NEES/ANEES and RMSE over Monte Carlo
runs, with paired seeds so variant comparisons share measurement streams.

NEES is computed in each filter's own error parameterization against its
own covariance — consistency is a claim about a filter's self-assessed
uncertainty — and is dof-normalized so the ideal value is 1.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from .geometry import so3_log
from .simulator import SimConfig, SimResult, generate_scenario, run_filter
from .state import ErrorModel, VioState, error_between

POSE_IDX = np.r_[0:3, 6:9]  # rotation and position rows of the IMU error


def pose_nees(truth, estimate, cov, model: ErrorModel,
              full_state: bool = False) -> float:
    """Normalized estimation error squared for one timestep.

    truth/estimate are ImuStates; cov is the 15x15 IMU covariance.  The
    default uses the 6-DoF pose block; full_state switches to all 15.
    Raises numpy.linalg.LinAlgError when the block is singular.
    """
    delta = error_between(VioState(truth), VioState(estimate), model)
    if full_state:
        xi, P, dof = delta, np.asarray(cov, dtype=float), 15
    else:
        xi = delta[POSE_IDX]
        P = np.asarray(cov, dtype=float)[np.ix_(POSE_IDX, POSE_IDX)]
        dof = 6
    return float(xi @ np.linalg.solve(P, xi)) / dof


@dataclass
class RunMetrics:
    """Per-timestep errors and NEES for one run of one variant."""

    variant: str
    times: np.ndarray
    pos_err: np.ndarray
    ori_err: np.ndarray
    nees: np.ndarray
    anees: float
    aborted: bool = False
    excluded: int = 0  # singular-covariance samples skipped in the ANEES


def run_metrics(result: SimResult, full_state: bool = False) -> RunMetrics:
    """Reduce a SimResult to its error/NEES series."""
    n = len(result.truths)
    pos = np.empty(n)
    ori = np.empty(n)
    nees = np.full(n, np.nan)
    excluded = 0
    for k in range(n):
        t, e = result.truths[k], result.estimates[k]
        pos[k] = np.linalg.norm(t.p - e.p)
        ori[k] = np.linalg.norm(so3_log(t.R @ e.R.T))
        try:
            nees[k] = pose_nees(t, e, result.covariances[k], result.model,
                                full_state)
        except np.linalg.LinAlgError:
            excluded += 1
    valid = np.isfinite(nees)
    anees = float(np.mean(nees[valid])) if valid.any() else np.nan
    return RunMetrics(result.variant, result.times, pos, ori, nees, anees,
                      result.aborted, excluded)


def rmse_series(runs) -> tuple:
    """Across-run RMSE per timestep: (position, orientation)."""
    if not runs:
        raise ValueError("need at least one run")
    n = min(len(r.pos_err) for r in runs)
    pos = np.vstack([r.pos_err[:n] for r in runs])
    ori = np.vstack([r.ori_err[:n] for r in runs])
    return np.sqrt(np.mean(pos**2, axis=0)), np.sqrt(np.mean(ori**2, axis=0))


def anees_series(runs) -> np.ndarray:
    """Across-run average NEES per timestep."""
    n = min(len(r.nees) for r in runs)
    stacked = np.vstack([r.nees[:n] for r in runs])
    return np.nanmean(stacked, axis=0)


@dataclass
class AggregateMetrics:
    """Across-run aggregation for one variant."""

    variant: str
    n_runs: int
    n_aborted: int
    times: np.ndarray
    avg_nees: np.ndarray
    pos_rmse: np.ndarray
    ori_rmse: np.ndarray
    anees: float
    mean_pos_rmse: float
    final_pos_rmse: float


def aggregate(variant: str, metrics) -> AggregateMetrics:
    """Average the completed runs of one variant; aborted runs are excluded
    from the statistics but counted."""
    kept = [m for m in metrics if not m.aborted]
    n_aborted = len(metrics) - len(kept)
    if not kept:
        empty = np.array([])
        return AggregateMetrics(variant, len(metrics), n_aborted, empty,
                                empty, empty, empty, np.nan, np.nan, np.nan)
    pos_rmse, ori_rmse = rmse_series(kept)
    avg_nees = anees_series(kept)
    n = len(pos_rmse)
    return AggregateMetrics(
        variant, len(metrics), n_aborted, kept[0].times[:n], avg_nees,
        pos_rmse, ori_rmse, float(np.nanmean(avg_nees)),
        float(np.mean(pos_rmse)), float(pos_rmse[-1]))


def _mc_task(args):
    cfg, variants, seed, overrides, full_state = args
    scenario = generate_scenario(cfg, seed)
    return {v: run_metrics(run_filter(scenario, v, overrides), full_state)
            for v in variants}


def monte_carlo(cfg: SimConfig, variants, n_runs: int, base_seed: int = 0,
                jobs: int | None = None, overrides=None,
                full_state: bool = False) -> dict:
    """Paired Monte Carlo: seeds base_seed..base_seed+n_runs-1, every variant
    run on the identical scenario per seed.  Returns {variant: AggregateMetrics}."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    variants = list(variants)
    tasks = [(cfg, variants, base_seed + i, overrides, full_state)
             for i in range(n_runs)]
    if jobs is None:
        jobs = min(multiprocessing.cpu_count(), n_runs)
    if jobs <= 1 or n_runs == 1:
        results = [_mc_task(t) for t in tasks]
    else:
        with multiprocessing.Pool(jobs) as pool:
            results = pool.map(_mc_task, tasks)
    return {v: aggregate(v, [r[v] for r in results]) for v in variants}


def nees_calibration_fixture(n_runs: int = 10000, n_steps: int = 10,
                             seed: int = 0):
    """ANEES of a correctly specified 2-state linear Kalman filter.

    Runs n_runs independent constant-velocity tracking problems (vectorized)
    and averages the final-step NEES, which is chi-square with 2*n_runs
    degrees of freedom under correctness.  Returns (anees, lo, hi) where
    (lo, hi) is the 99% acceptance band.
    """
    rng = np.random.default_rng(seed)
    dt, q, r = 0.5, 0.2, 1.0
    F = np.array([[1.0, dt], [0.0, 1.0]])
    Q = q * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    H = np.array([[1.0, 0.0]])
    Lq = np.linalg.cholesky(Q)
    P = np.eye(2)
    x = rng.standard_normal((n_runs, 2)) @ np.linalg.cholesky(P).T
    xh = np.zeros((n_runs, 2))
    for _ in range(n_steps):
        x = x @ F.T + rng.standard_normal((n_runs, 2)) @ Lq.T
        P = F @ P @ F.T + Q
        z = x @ H.T + np.sqrt(r) * rng.standard_normal((n_runs, 1))
        S = H @ P @ H.T + r
        K = P @ H.T / S
        xh = xh + (z - xh @ H.T) @ K.T
        IKH = np.eye(2) - K @ H
        P = IKH @ P @ IKH.T + K @ K.T * r
    e = x - xh
    Pinv = np.linalg.inv(P)
    nees = np.einsum("ij,jk,ik->i", e, Pinv, e)
    dof = 2 * n_runs
    lo = chi2.ppf(0.005, dof) / dof
    hi = chi2.ppf(0.995, dof) / dof
    return float(np.mean(nees) / 2.0), float(lo), float(hi)
