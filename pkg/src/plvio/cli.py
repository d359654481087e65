"""Command-line front end.

Subcommands:
  simulate    run every requested variant once on a shared synthetic scenario
  montecarlo  paired multi-seed runs with NEES/RMSE aggregation
  replay      feed recorded CSV streams (IMU + features) through one variant
  obscheck    tabulate the nullspace diagnostics

Exit codes: 0 success, 1 runtime failure (estimator or data error), 2 bad
configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .evaluation import monte_carlo, run_metrics
from .exceptions import ConfigError, PlvioError, TimeOrderError
from .geometry import LineErrorMode, Pose, quat_to_rot, rot_to_quat
from .observability import observability_report
from .propagation import ImuSample, NoiseParams
from .simulator import (VARIANTS, SimConfig, SimResult, generate_scenario,
                        init_sigmas, initial_covariance, run_filter,
                        variant_config)
from .state import ErrorModel, ImuState, VioState, apply_correction
from .triangulation import GnSettings
from .update import UpdateConfig, VioFilter

log = logging.getLogger("plvio.cli")


def _g(x) -> str:
    """Shortest decimal that round-trips a float64 exactly."""
    return format(float(x), ".17g")


def _cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return _g(value)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(c) for c in row])


# ---------------------------------------------------------------------------
# configuration file


@dataclass
class ExperimentConfig:
    """Parsed experiment file: scene, update overrides, and run plan."""

    sim: SimConfig
    update: dict
    variants: list
    out_dir: str = "out"
    seed: int = 0
    runs: int = 30
    jobs: int | None = None


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def load_config(path: str | None) -> ExperimentConfig:
    """Load and strictly validate a JSON experiment file (None = defaults)."""
    if path is None:
        return ExperimentConfig(SimConfig(), {}, list(VARIANTS))
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    _check_keys(raw, {"sim", "update", "gn", "variants", "out_dir", "seed",
                      "runs", "jobs"}, "config")

    sim_raw = dict(raw.get("sim", {}))
    sim_fields = {f.name for f in fields(SimConfig)}
    _check_keys(sim_raw, sim_fields, "sim")
    noise_raw = sim_raw.pop("noise", None)
    kwargs = {k: tuple(v) if isinstance(v, list) else v
              for k, v in sim_raw.items()}
    if noise_raw is not None:
        _check_keys(noise_raw, {f.name for f in fields(NoiseParams)},
                    "sim.noise")
        kwargs["noise"] = NoiseParams(**noise_raw)
    try:
        sim = SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sim: {exc}")

    update_raw = dict(raw.get("update", {}))
    _check_keys(update_raw, {f.name for f in fields(UpdateConfig)} - {"gn"},
                "update")
    if "line_error_mode" in update_raw:
        try:
            update_raw["line_error_mode"] = LineErrorMode(
                update_raw["line_error_mode"])
        except ValueError:
            raise ConfigError(
                f"update.line_error_mode must be one of "
                f"{[m.value for m in LineErrorMode]}")
    gn_raw = raw.get("gn")
    if gn_raw is not None:
        _check_keys(gn_raw, {f.name for f in fields(GnSettings)}, "gn")
        try:
            update_raw["gn"] = GnSettings(**gn_raw)
        except TypeError as exc:
            raise ConfigError(f"gn: {exc}")
    try:
        UpdateConfig(**update_raw)  # validate types and ranges once
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"update: {exc}")

    variants = raw.get("variants", list(VARIANTS))
    if not isinstance(variants, list) or not variants:
        raise ConfigError("variants must be a non-empty list")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(
                f"unknown variant {v!r}; choose from {sorted(VARIANTS)}")

    runs = raw.get("runs", 30)
    if not isinstance(runs, int) or runs < 1:
        raise ConfigError("runs must be a positive integer")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    jobs = raw.get("jobs")
    if jobs is not None and (not isinstance(jobs, int) or jobs < 1):
        raise ConfigError("jobs must be a positive integer")
    out_dir = raw.get("out_dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("out_dir must be a string")
    return ExperimentConfig(sim, update_raw, list(variants), out_dir, seed,
                            runs, jobs)


def _parse_variants(arg: str | None, cfg: ExperimentConfig) -> list:
    if arg is None:
        return cfg.variants
    names = [v.strip() for v in arg.split(",") if v.strip()]
    if not names:
        raise ConfigError("--variants must name at least one variant")
    for v in names:
        if v not in VARIANTS:
            raise ConfigError(
                f"unknown variant {v!r}; choose from {sorted(VARIANTS)}")
    return names


# ---------------------------------------------------------------------------
# shared output helpers

TRAJ_HEADER = ["t", "tx", "ty", "tz", "tqw", "tqx", "tqy", "tqz",
               "ex", "ey", "ez", "eqw", "eqx", "eqy", "eqz"]


def _traj_rows(times, truths, estimates):
    for k, t in enumerate(times):
        row = [t]
        row.extend(truths[k].p)
        row.extend(rot_to_quat(truths[k].R))
        row.extend(estimates[k].p)
        row.extend(rot_to_quat(estimates[k].R))
        yield row


def _write_plots(out: Path, variants, rmse_col: str) -> None:
    """Small gnuplot script for the CSVs the command just wrote."""
    nees = ", ".join(f'"nees_{v}.csv" using 1:2 with lines title "{v}"'
                     for v in variants)
    rmse = ", ".join(f'"rmse_{v}.csv" using 1:2 with lines title "{v}"'
                     for v in variants)
    text = "\n".join([
        'set datafile separator ","',
        "set key autotitle columnhead",
        "set key outside",
        "set terminal pngcairo size 1100,750",
        'set xlabel "t [s]"',
        'set output "nees.png"',
        'set title "average pose NEES (ideal = 1)"',
        f"plot {nees}",
        'set output "rmse.png"',
        f'set title "{rmse_col}"',
        f"plot {rmse}",
        "",
    ])
    (out / "plots.gp").write_text(text)


# ---------------------------------------------------------------------------
# simulate


def _dump_bundle(out: Path, scenario) -> None:
    """Write the scenario's sensor streams in the replayable CSV layout."""
    _write_csv(out / "imu.csv", ["t", "wx", "wy", "wz", "ax", "ay", "az"],
               ([s.t, *s.omega, *s.accel] for s in scenario.samples))
    point_rows = []
    line_rows = []
    for f in scenario.frames:
        for fid in sorted(f.points):
            point_rows.append([f.t, f.frame_id, fid, *f.points[fid]])
        for lid in sorted(f.lines):
            p_s, p_e, p_v = f.lines[lid]
            row = [f.t, f.frame_id, lid, p_s[0], p_s[1], p_e[0], p_e[1]]
            row.extend(["", ""] if p_v is None else [p_v[0], p_v[1]])
            line_rows.append(row)
    _write_csv(out / "points.csv", ["t", "frame_id", "feature_id", "u", "v"],
               point_rows)
    _write_csv(out / "lines.csv",
               ["t", "frame_id", "line_id", "us", "vs", "ue", "ve",
                "vpx", "vpy"], line_rows)
    truth_rows = []
    for f in scenario.frames:
        truth = scenario.truth_at(f.sample_index)
        truth_rows.append([f.t, *truth.p, *rot_to_quat(truth.R)])
    _write_csv(out / "truth.csv",
               ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"], truth_rows)

    cfg = scenario.config
    truth0 = VioState(scenario.truth_at(0), [], cfg.extrinsics,
                      cfg.window_size)
    est = apply_correction(truth0, -scenario.init_delta,
                           ErrorModel.STANDARD_ADDITIVE)
    init = {
        "t": scenario.samples[0].t,
        "quat": [float(x) for x in rot_to_quat(est.imu.R)],
        "v": [float(x) for x in est.imu.v],
        "p": [float(x) for x in est.imu.p],
        "bg": [float(x) for x in est.imu.bg],
        "ba": [float(x) for x in est.imu.ba],
        "sigmas": [float(x) for x in init_sigmas(cfg)],
        "extrinsics": {"quat": [float(x) for x in rot_to_quat(cfg.extrinsics.R)],
                       "p": [float(x) for x in cfg.extrinsics.p]},
        "window_size": cfg.window_size,
    }
    (out / "init.json").write_text(json.dumps(init, indent=2) + "\n")


def _report_result(res: SimResult, rm) -> None:
    status = f"aborted ({res.abort_reason})" if res.aborted else "ok"
    print(f"{res.variant:10s} final pos err {rm.pos_err[-1]:8.4f} m   "
          f"mean NEES {rm.anees:7.3f}   "
          f"tracks used: {res.points_used} pt / {res.lines_used} ln "
          f"({res.vp_rows_used} VP rows)   [{status}]")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    variants = _parse_variants(args.variants, cfg)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("generating scenario (seed %d)", seed)
    scenario = generate_scenario(cfg.sim, seed)
    for v in variants:
        log.info("running variant %s", v)
        res = run_filter(scenario, v, cfg.update)
        rm = run_metrics(res)
        _write_csv(out / f"traj_{v}.csv", TRAJ_HEADER,
                   _traj_rows(res.times, res.truths, res.estimates))
        _write_csv(out / f"nees_{v}.csv", ["t", "nees"],
                   zip(rm.times, rm.nees))
        _write_csv(out / f"rmse_{v}.csv", ["t", "pos_err", "ori_err"],
                   zip(rm.times, rm.pos_err, rm.ori_err))
        _report_result(res, rm)
    if args.dump:
        _dump_bundle(out, scenario)
        log.info("sensor bundle written to %s", out)
    _write_plots(out, variants, "position error [m]")
    return 0


# ---------------------------------------------------------------------------
# montecarlo


def cmd_montecarlo(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    runs = args.runs if args.runs is not None else cfg.runs
    if runs < 1:
        raise ConfigError("--runs must be a positive integer")
    variants = _parse_variants(args.variants, cfg)
    jobs = args.jobs if args.jobs is not None else cfg.jobs
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("monte carlo: %d paired runs, seeds %d..%d", runs, seed,
             seed + runs - 1)
    results = monte_carlo(cfg.sim, variants, runs, seed, jobs, cfg.update)
    summary = []
    for v in variants:
        agg = results[v]
        _write_csv(out / f"nees_{v}.csv", ["t", "avg_nees"],
                   zip(agg.times, agg.avg_nees))
        _write_csv(out / f"rmse_{v}.csv", ["t", "pos_rmse", "ori_rmse"],
                   zip(agg.times, agg.pos_rmse, agg.ori_rmse))
        summary.append([v, agg.n_runs, agg.n_aborted, agg.anees,
                        agg.final_pos_rmse, agg.mean_pos_rmse])
        print(f"{v:10s} ANEES {agg.anees:7.3f}   "
              f"final pos RMSE {agg.final_pos_rmse:8.4f} m   "
              f"aborted {agg.n_aborted}/{agg.n_runs}")
    _write_csv(out / "summary.csv",
               ["variant", "runs", "aborted", "anees", "final_pos_rmse",
                "mean_pos_rmse"], summary)
    _write_plots(out, variants, "position RMSE [m]")
    return 0


# ---------------------------------------------------------------------------
# replay


def _data_rows(path: Path):
    """Yield (lineno, cells) for each non-empty row, skipping a header row."""
    with open(path, newline="") as fh:
        for lineno, cells in enumerate(csv.reader(fh), start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if lineno == 1:
                try:
                    float(cells[0])
                except ValueError:
                    continue  # header row
            yield lineno, [c.strip() for c in cells]


def _floats(path: Path, lineno: int, cells, count: int):
    if len(cells) != count:
        raise PlvioError(
            f"{path}:{lineno}: expected {count} fields, got {len(cells)}")
    try:
        return [float(c) for c in cells]
    except ValueError as exc:
        raise PlvioError(f"{path}:{lineno}: {exc}")


def _read_imu(path: Path):
    samples = []
    for lineno, cells in _data_rows(path):
        vals = _floats(path, lineno, cells, 7)
        if samples and vals[0] <= samples[-1].t:
            raise TimeOrderError(
                f"{path}:{lineno}: IMU timestamps not strictly increasing "
                f"({samples[-1].t} -> {vals[0]})")
        samples.append(ImuSample(vals[0], np.array(vals[1:4]),
                                 np.array(vals[4:7])))
    if not samples:
        raise PlvioError(f"{path}: no IMU samples")
    return samples


class _ReplayFrame:
    __slots__ = ("frame_id", "t", "points", "lines")

    def __init__(self, frame_id: int, t: float):
        self.frame_id = frame_id
        self.t = t
        self.points = {}
        self.lines = {}


def _frame_for(frames: dict, path: Path, lineno: int, t: float,
               frame_id: float) -> _ReplayFrame:
    fid = int(frame_id)
    if fid != frame_id:
        raise PlvioError(f"{path}:{lineno}: frame_id must be an integer")
    frame = frames.get(fid)
    if frame is None:
        frame = frames[fid] = _ReplayFrame(fid, t)
    elif abs(frame.t - t) > 1e-9:
        raise PlvioError(
            f"{path}:{lineno}: frame {fid} seen with two timestamps "
            f"({frame.t} and {t})")
    return frame


def _read_points(path: Path, frames: dict) -> None:
    last_t = None
    for lineno, cells in _data_rows(path):
        t, frame_id, feature_id, u, v = _floats(path, lineno, cells, 5)
        if last_t is not None and t < last_t:
            raise TimeOrderError(
                f"{path}:{lineno}: timestamps decrease ({last_t} -> {t})")
        last_t = t
        frame = _frame_for(frames, path, lineno, t, frame_id)
        frame.points[int(feature_id)] = np.array([u, v])


def _read_lines(path: Path, frames: dict) -> None:
    last_t = None
    for lineno, cells in _data_rows(path):
        if len(cells) == 7:  # vanishing point columns omitted entirely
            cells = cells + ["", ""]
        if len(cells) != 9:
            raise PlvioError(
                f"{path}:{lineno}: expected 9 fields, got {len(cells)}")
        head = _floats(path, lineno, cells[:7], 7)
        t, frame_id, line_id, us, vs, ue, ve = head
        if last_t is not None and t < last_t:
            raise TimeOrderError(
                f"{path}:{lineno}: timestamps decrease ({last_t} -> {t})")
        last_t = t
        if cells[7] == "" and cells[8] == "":
            p_v = None
        else:
            vpx, vpy = _floats(path, lineno, cells[7:9], 2)
            p_v = np.array([vpx, vpy])
        frame = _frame_for(frames, path, lineno, t, frame_id)
        frame.lines[int(line_id)] = (np.array([us, vs, 1.0]),
                                     np.array([ue, ve, 1.0]), p_v)


def _read_truth(path: Path):
    rows = []
    for lineno, cells in _data_rows(path):
        vals = _floats(path, lineno, cells, 8)
        if rows and vals[0] < rows[-1][0]:
            raise TimeOrderError(
                f"{path}:{lineno}: timestamps decrease")
        rows.append(vals)
    return rows


def _initial_filter_state(args, cfg: ExperimentConfig, model, truth_rows):
    """Initial (state, covariance) for replay: explicit init file, else the
    first ground-truth pose, else identity at the origin."""
    sim = cfg.sim
    sigmas = init_sigmas(sim)
    imu = ImuState.identity()
    extrinsics = sim.extrinsics
    window = sim.window_size
    if args.init:
        p = Path(args.init)
        if not p.is_file():
            raise ConfigError(f"init file not found: {args.init}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.init}: invalid JSON: {exc}")
        _check_keys(raw, {"t", "quat", "v", "p", "bg", "ba", "sigmas",
                          "extrinsics", "window_size"}, "init")
        imu = ImuState(quat_to_rot(np.asarray(raw["quat"], dtype=float)),
                       raw.get("v", np.zeros(3)), raw.get("p", np.zeros(3)),
                       raw.get("bg", np.zeros(3)), raw.get("ba", np.zeros(3)))
        if "sigmas" in raw:
            sigmas = np.asarray(raw["sigmas"], dtype=float)
            if sigmas.shape != (15,):
                raise ConfigError("init.sigmas must have 15 entries")
        if "extrinsics" in raw:
            ext = raw["extrinsics"]
            _check_keys(ext, {"quat", "p"}, "init.extrinsics")
            extrinsics = Pose(quat_to_rot(np.asarray(ext["quat"], dtype=float)),
                              np.asarray(ext["p"], dtype=float))
        window = int(raw.get("window_size", window))
    elif truth_rows:
        first = truth_rows[0]
        imu = ImuState(quat_to_rot(np.array(first[4:8])), np.zeros(3),
                       np.array(first[1:4]), np.zeros(3), np.zeros(3))
    state = VioState(imu, [], extrinsics, window)
    return state, initial_covariance(state, sigmas, model)


def cmd_replay(args) -> int:
    cfg = load_config(args.config)
    for name in ("imu", "points"):
        value = getattr(args, name)
        if not Path(value).is_file():
            raise ConfigError(f"--{name} file not found: {value}")
    for name in ("lines", "truth"):
        value = getattr(args, name)
        if value and not Path(value).is_file():
            raise ConfigError(f"--{name} file not found: {value}")

    samples = _read_imu(Path(args.imu))
    frames: dict = {}
    _read_points(Path(args.points), frames)
    have_lines = False
    if args.lines:
        _read_lines(Path(args.lines), frames)
        have_lines = any(f.lines for f in frames.values())
    truth_rows = _read_truth(Path(args.truth)) if args.truth else []

    variant = args.variant
    model, ucfg = variant_config(cfg.sim, variant, cfg.update)
    if ucfg.use_lines and not have_lines:
        log.warning("variant %s expects line tracks but the bundle has none; "
                    "running with point features only", variant)
        ucfg = replace(ucfg, use_lines=False, use_vp=False)

    state, cov = _initial_filter_state(args, cfg, model, truth_rows)
    filt = VioFilter(state, cov, model, ucfg, cfg.sim.noise)

    ordered = sorted(frames.values(), key=lambda f: (f.t, f.frame_id))
    truth_by_t = {round(r[0], 9): r for r in truth_rows}
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    est_rows = []
    err_rows = []
    fi = 0
    for sample in samples:
        filt.process_imu(sample)
        while fi < len(ordered) and ordered[fi].t <= sample.t + 1e-9:
            frame = ordered[fi]
            fi += 1
            filt.process_frame(frame.frame_id, frame.points, frame.lines)
            est = filt.state.imu
            est_rows.append([frame.t, *est.p, *rot_to_quat(est.R)])
            tr = truth_by_t.get(round(frame.t, 9))
            if tr is not None:
                err_rows.append(
                    [frame.t, float(np.linalg.norm(np.array(tr[1:4]) - est.p))])
    if fi < len(ordered):
        log.warning("%d frame(s) after the last IMU sample were skipped",
                    len(ordered) - fi)

    _write_csv(out / f"est_{variant}.csv",
               ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"], est_rows)
    msg = f"{variant}: processed {fi} frames, {len(samples)} IMU samples"
    if err_rows:
        errs = np.array([r[1] for r in err_rows])
        _write_csv(out / f"err_{variant}.csv", ["t", "pos_err"], err_rows)
        msg += (f"; final pos err {errs[-1]:.4f} m, "
                f"rms {np.sqrt(np.mean(errs**2)):.4f} m")
    print(msg)
    return 0


# ---------------------------------------------------------------------------
# obscheck


def cmd_obscheck(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    rows = observability_report(seed=seed)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "obs_report.csv",
               ["direction", "value", "threshold", "mode", "status"],
               ([r.label, r.value, r.threshold, r.mode,
                 "pass" if r.passed else "fail"] for r in rows))
    width = max(len(r.label) for r in rows)
    for r in rows:
        rel = "<" if r.mode == "below" else ">"
        print(f"{r.label:{width}s}  {r.value:12.4e} {rel} {r.threshold:8.1e}"
              f"  {'PASS' if r.passed else 'FAIL'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plvio",
        description="Point/line/vanishing-point visual-inertial odometry "
                    "testbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH",
                       help="JSON experiment file (defaults when omitted)")
        p.add_argument("--seed", type=int, metavar="U64",
                       help="base RNG seed (overrides config)")
        p.add_argument("--out", metavar="DIR",
                       help="output directory (overrides config)")

    p = sub.add_parser("simulate",
                       help="single-seed closed-loop run per variant")
    common(p)
    p.add_argument("--variants", metavar="CSV",
                   help="comma-separated variant names "
                        f"(default: all of {','.join(VARIANTS)})")
    p.add_argument("--dump", action="store_true",
                   help="also write the replayable sensor bundle")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="paired multi-seed evaluation")
    common(p)
    p.add_argument("--runs", type=int, metavar="N",
                   help="number of paired seeds (overrides config)")
    p.add_argument("--variants", metavar="CSV",
                   help="comma-separated variant names")
    p.add_argument("--jobs", type=int, metavar="N",
                   help="worker processes (default: one per CPU)")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("replay", help="run one variant over recorded CSVs")
    common(p)
    p.add_argument("--imu", required=True, metavar="PATH",
                   help="CSV with t,wx,wy,wz,ax,ay,az")
    p.add_argument("--points", required=True, metavar="PATH",
                   help="CSV with t,frame_id,feature_id,u,v")
    p.add_argument("--lines", metavar="PATH",
                   help="CSV with t,frame_id,line_id,us,vs,ue,ve[,vpx,vpy]")
    p.add_argument("--truth", metavar="PATH",
                   help="CSV with t,px,py,pz,qw,qx,qy,qz")
    p.add_argument("--init", metavar="PATH",
                   help="JSON initial state (as written by simulate --dump)")
    p.add_argument("--variant", default="iekf", choices=sorted(VARIANTS),
                   help="filter variant to run (default: iekf)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("obscheck", help="nullspace diagnostic report")
    common(p)
    p.set_defaults(func=cmd_obscheck)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PlvioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
