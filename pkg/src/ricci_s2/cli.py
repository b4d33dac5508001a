"""Command-line front end: ``ricci-s2 {simulate,probe,spectrum,verify,report}``.

Exit codes: 0 success, 1 verification failure, 2 invalid input or
configuration, 3 solver failure, 4 horizon reached without convergence.

Run configs are TOML with a ``schema`` key::

    schema = "ricci_s2.run/1"
    n = 128
    flow = "normalized"
    seed = 0

    [[perturbation]]
    kind = "conformal-mode"
    k = 2
    amplitude = 0.1

    [stepper]
    horizon = 60.0

Unknown keys anywhere are rejected before any computation starts.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import entropy as ent
from . import flows
from . import geometry as geo
from . import io, lab
from .errors import ConfigurationError, RicciS2Error, SolverError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_HORIZON = 4

RUN_SCHEMA = "ricci_s2.run/1"
_TOP_KEYS = {"schema", "n", "flow", "seed", "out", "emit_plots", "perturbation", "stepper",
             "entropy", "spectrum"}
_PERT_KEYS = {"kind", "k", "amplitude", "seed"}
_SPECTRUM_KEYS = {"snapshot", "k"}


@dataclass(frozen=True)
class RunConfig:
    experiment: lab.ExperimentConfig
    out: Path | None = None
    emit_plots: bool = False
    spectrum_k: int = 8
    spectrum_snapshot: Path | None = None
    source: dict = field(default_factory=dict)


def _reject_unknown(table, allowed, where):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(extra)}")


def _dataclass_from(cls, table, where):
    if not isinstance(table, dict):
        raise ConfigurationError(f"[{where}] must be a table")
    names = {f.name: f for f in fields(cls)}
    _reject_unknown(table, names, f"[{where}]")
    kwargs = {}
    for key, val in table.items():
        default = getattr(cls(), key)
        if isinstance(default, bool):
            ok = isinstance(val, bool)
        elif isinstance(default, int):
            ok = isinstance(val, int) and not isinstance(val, bool)
        elif isinstance(default, float):
            ok = isinstance(val, (int, float)) and not isinstance(val, bool)
            val = float(val)
        else:
            ok = isinstance(val, type(default))
        if not ok:
            raise ConfigurationError(f"[{where}].{key} has the wrong type")
        kwargs[key] = val
    return cls(**kwargs)


def parse_config(data, base_dir=Path(".")):
    """Validate a parsed TOML mapping into a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a table")
    _reject_unknown(data, _TOP_KEYS, "config")
    if data.get("schema") != RUN_SCHEMA:
        raise ConfigurationError(f"config schema must be {RUN_SCHEMA!r}, got {data.get('schema')!r}")
    n = data.get("n", 128)
    if not isinstance(n, int) or isinstance(n, bool) or n < geo.MIN_NODES or n > 512:
        raise ConfigurationError(f"n must be an integer in [{geo.MIN_NODES}, 512]")
    kind = data.get("flow", flows.NORMALIZED)
    if kind not in flows.FLOW_KINDS:
        raise ConfigurationError(f"flow must be one of {flows.FLOW_KINDS}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigurationError("seed must be an integer")
    perts = data.get("perturbation", [])
    if not isinstance(perts, list):
        raise ConfigurationError("perturbation must be an array of tables")
    plist = []
    for i, p in enumerate(perts):
        if not isinstance(p, dict):
            raise ConfigurationError(f"perturbation[{i}] must be a table")
        _reject_unknown(p, _PERT_KEYS, f"perturbation[{i}]")
        amp = p.get("amplitude", 0.1)
        if not isinstance(amp, (int, float)) or isinstance(amp, bool):
            raise ConfigurationError(f"perturbation[{i}].amplitude must be a number")
        k = p.get("k", 2)
        if not isinstance(k, int) or isinstance(k, bool):
            raise ConfigurationError(f"perturbation[{i}].k must be an integer")
        pseed = p.get("seed", seed)
        if not isinstance(pseed, int) or isinstance(pseed, bool):
            raise ConfigurationError(f"perturbation[{i}].seed must be an integer")
        plist.append(lab.Perturbation(kind=p.get("kind", "conformal-mode"), k=k,
                                      amplitude=float(amp), seed=pseed))
    stepper = _dataclass_from(flows.StepperConfig, data.get("stepper", {}), "stepper")
    entropy = _dataclass_from(ent.EntropyConfig, data.get("entropy", {}), "entropy")
    spectrum = data.get("spectrum", {})
    if not isinstance(spectrum, dict):
        raise ConfigurationError("[spectrum] must be a table")
    _reject_unknown(spectrum, _SPECTRUM_KEYS, "[spectrum]")
    sk = spectrum.get("k", 8)
    if not isinstance(sk, int) or isinstance(sk, bool):
        raise ConfigurationError("[spectrum].k must be an integer")
    snap = spectrum.get("snapshot")
    emit = data.get("emit_plots", False)
    if not isinstance(emit, bool):
        raise ConfigurationError("emit_plots must be a boolean")
    out = data.get("out")
    exp = lab.ExperimentConfig(n=n, kind=kind, perturbations=tuple(plist), stepper=stepper,
                               entropy=entropy, seed=seed)
    return RunConfig(experiment=exp, out=(base_dir / out) if out else None, emit_plots=emit,
                     spectrum_k=sk, spectrum_snapshot=(base_dir / snap) if snap else None,
                     source=data)


def load_config(path):
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err}") from err
    except tomllib.TOMLDecodeError as err:
        raise ConfigurationError(f"malformed config {path}: {err}") from err
    return parse_config(data, path.parent)


def _apply_overrides(cfg, args):
    exp = cfg.experiment
    if getattr(args, "grid", None) is not None:
        if args.grid < geo.MIN_NODES:
            raise ConfigurationError(f"--grid must be at least {geo.MIN_NODES}")
        exp = replace(exp, n=args.grid)
    if getattr(args, "seed", None) is not None:
        exp = replace(exp, seed=args.seed,
                      perturbations=tuple(replace(p, seed=args.seed) for p in exp.perturbations))
    out = Path(args.out) if getattr(args, "out", None) else cfg.out
    emit = cfg.emit_plots or bool(getattr(args, "emit_plots", False))
    return replace(cfg, experiment=exp, out=out, emit_plots=emit)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _safe(label):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def trail_dict(traj):
    return {"schema": io.SNAPSHOT_SCHEMA + "+trail", "kind": traj.kind,
            "termination": traj.termination,
            "snapshots": [io.snapshot_dict(s) for s in traj.states]}


def write_run_outputs(report, out_dir, emit_plots=False):
    """CSV, final snapshot and snapshot trail per cell, then ``report.json``."""
    out_dir = Path(out_dir)
    written = []
    for label, traj in report.trajectories.items():
        stem = _safe(label)
        written.append(io.write_trajectory_csv(traj, out_dir / f"{stem}.csv"))
        written.append(io.write_snapshot(traj.states[-1], out_dir / f"{stem}_final.json"))
        written.append(io.atomic_write(out_dir / f"{stem}_trail.json", io.dumps(trail_dict(traj))))
        if emit_plots and len(traj.states) > 1:
            fit = None
            try:
                fit = lab.lojasiewicz_probe(traj)
            except RicciS2Error:
                pass
            written.extend(io.write_plots(traj, out_dir, stem, fit))
    written.append(io.atomic_write(out_dir / "report.json", io.dumps(report.as_dict())))
    return written


def _exit_for(report):
    statuses = [c.get("status") for c in report.cells]
    if any(s == "error" for s in statuses):
        return EXIT_SOLVER
    if any(s == "invalid" for s in statuses):
        return EXIT_VALIDATION
    if any(c.get("termination") == "horizon" for c in report.cells):
        return EXIT_HORIZON
    return EXIT_OK


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.out is None:
        raise ConfigurationError("no output directory: pass --out or set 'out' in the config")
    report = lab.run_experiment(cfg.experiment)
    write_run_outputs(report, cfg.out, cfg.emit_plots)
    for cell in report.cells:
        print(f"{cell['label']}: {cell.get('status')} {cell.get('termination', cell.get('error', ''))}")
    return _exit_for(report)


def _series_from_path(path):
    return io.SeriesTrajectory(io.read_trajectory_csv(path))


def probe_series(series, label):
    fits = []
    lf = lab.lojasiewicz_probe(series)
    fits.append({"cell": label, **lf.as_dict()})
    fits.append({"cell": label, **lab.polynomial_decay_bound(series, lf).as_dict()})
    for df in lab.decay_fit(series).values():
        fits.append({"cell": label, **df.as_dict()})
    return fits


def cmd_probe(args):
    fits = []
    for path in args.trajectory:
        fits.extend(probe_series(_series_from_path(path), Path(path).stem))
    doc = io.dumps({"schema": io.FIT_SCHEMA, "fits": fits})
    if args.out:
        io.atomic_write(Path(args.out) / "fits.json" if Path(args.out).suffix != ".json"
                        else Path(args.out), doc)
    for f in fits:
        if f["type"] == "lojasiewicz":
            print(f"{f['cell']}: alpha = {f['alpha']:.6f}  r^2 = {f['r_squared']:.6f}  "
                  f"points = {f['n_points']}")
    return EXIT_OK


def spectrum_doc(metric, k, entropy_config=None, time=0.0):
    res = ent.minimize_w(metric, entropy_config)
    sp = ent.weighted_laplacian_spectrum(metric, res.minimizer_f, k)
    vals = sp.eigenvalues
    return {"schema": "ricci_s2.spectrum/1", "n": metric.grid.n, "time": time, "mu": res.mu,
            "eigenvalues": vals, "lambda1": float(vals[1]) if vals.size > 1 else None,
            "lambda1_gt_1": bool(vals.size > 1 and vals[1] > 1.0)}


def cmd_spectrum(args):
    cfg = _apply_overrides(load_config(args.config), args)
    if cfg.spectrum_snapshot is not None:
        t, metric = io.read_snapshot(cfg.spectrum_snapshot)
    else:
        grid = geo.make_grid(cfg.experiment.n)
        perts = cfg.experiment.perturbations
        t = 0.0
        metric = lab.initial_metric(perts[0], grid) if perts else geo.round_metric(grid)
    doc = spectrum_doc(metric, cfg.spectrum_k, cfg.experiment.entropy, t)
    if cfg.out is not None:
        io.atomic_write(Path(cfg.out) / "spectrum.json", io.dumps(doc))
    print("eigenvalues: " + " ".join(f"{v:.10g}" for v in doc["eigenvalues"]))
    print(f"lambda_1 > 1: {doc['lambda1_gt_1']}")
    return EXIT_OK


def cmd_verify(args):
    from . import verify
    rows = verify.run_suite(n=args.grid or 64, fast=args.fast, seed=args.seed or 0)
    print(verify.format_table(rows))
    ok = all(r.passed for r in rows)
    print(f"{sum(r.passed for r in rows)}/{len(rows)} checks passed")
    return EXIT_OK if ok else EXIT_CHECKS_FAILED


def load_trail(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        snaps = data["snapshots"]
    except (OSError, ValueError, KeyError, TypeError) as err:
        raise ConfigurationError(f"cannot read snapshot trail {path}: {err}") from err
    kind = data.get("kind", flows.NORMALIZED)
    states = []
    for s in snaps:
        t, metric = io.metric_from_snapshot(s)
        states.append(flows.FlowState(time=t, metric=metric))
    return flows.Trajectory(kind=kind, states=states, termination=data.get("termination", "horizon"))


def rebuild_report(run_dir, emit_plots=False):
    """Recompute fits and checks from the files of a simulate run."""
    run_dir = Path(run_dir)
    csvs = sorted(p for p in run_dir.glob("*.csv"))
    if not csvs:
        raise ConfigurationError(f"no trajectory CSV files in {run_dir}")
    report = lab.Report(config={"source": str(run_dir)})
    for path in csvs:
        label = path.stem
        series = _series_from_path(path)
        mu = series.series("mu")
        report.cells.append({"label": label, "n_snapshots": len(series),
                             "t_final": float(series.times[-1]), "mu_final": float(mu[-1]),
                             "gap_final": float(lab.MU_ROUND - mu[-1])})
        try:
            report.fits.extend(probe_series(series, label))
        except RicciS2Error as err:
            report.fits.append({"cell": label, "error": str(err)})
        drop = float(-np.min(np.diff(mu))) if mu.size > 1 else 0.0
        report.checks.append(lab.Check(f"{label}: mu monotone", "max drop < 1e-10",
                                       max(drop, 0.0), drop < 1e-10))
        over = float(np.max(mu) - lab.MU_ROUND)
        report.checks.append(lab.Check(f"{label}: mu upper bound", "<= 1e-9", over, over <= 1e-9))
        trail = run_dir / f"{label}_trail.json"
        if trail.exists():
            traj = load_trail(trail)
            gb = max(abs(geo.integrate(s.metric, geo.scalar_curvature(s.metric)) - 8.0 * np.pi)
                     for s in traj.states)
            report.checks.append(lab.Check(f"{label}: Gauss-Bonnet", "< 1e-7", gb, gb < 1e-7))
        if emit_plots:
            io.write_plots(series, run_dir, label)
    return report


def cmd_report(args):
    report = rebuild_report(args.run_dir, args.emit_plots)
    out = Path(args.out) if args.out else Path(args.run_dir)
    io.atomic_write(out / "report_rebuilt.json", io.dumps(report.as_dict()))
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}")
    return EXIT_OK if report.passed else EXIT_CHECKS_FAILED


def build_parser():
    p = argparse.ArgumentParser(prog="ricci-s2", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="TOML run config")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--grid", type=int, help="override the number of nodes")

    s = sub.add_parser("simulate", help="run the configured flows, write CSV/JSON")
    common(s)
    s.add_argument("--emit-plots", action="store_true", help="also write SVG plots")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("probe", help="Lojasiewicz and decay fits on trajectory CSVs")
    s.add_argument("trajectory", nargs="+", help="trajectory CSV file(s)")
    s.add_argument("--out", help="directory or .json path for the fits")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("spectrum", help="weighted Laplacian spectrum at a snapshot")
    common(s)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("verify", help="run the invariant suite")
    s.add_argument("--fast", action="store_true", help="skip the slow rows")
    s.add_argument("--grid", type=int, help="number of nodes (default 64)")
    s.add_argument("--seed", type=int, help="seed for the random test inputs")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("report", help="rebuild the report from a simulate output directory")
    s.add_argument("run_dir")
    s.add_argument("--out", help="where to write report_rebuilt.json")
    s.add_argument("--emit-plots", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SolverError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except (RicciS2Error, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
