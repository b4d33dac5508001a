"""Serialization of trajectories, snapshots, fits and reports.

Every writer goes through :func:`atomic_write`, so a file either appears
complete or not at all. Floats are written with ``repr`` precision, which
round-trips exactly and keeps repeated runs byte-identical.
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import flows
from . import geometry as geo
from .errors import ConfigurationError

CSV_COLUMNS = ("t", "mu", "grad_mu_norm", "area", "sup_R_dev", "dt")
SNAPSHOT_SCHEMA = "ricci_s2.snapshot/1"
FIT_SCHEMA = "ricci_s2.fits/1"
REPORT_SCHEMA = "ricci_s2.report/1"


def atomic_write(path, data):
    """Write ``data`` (str or bytes) to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# trajectory CSV
# ---------------------------------------------------------------------------


def trajectory_csv(traj):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in traj.states:
        d = s.diagnostics
        w.writerow([repr(float(v)) for v in (s.time, d.mu, d.grad_mu_norm, d.area, d.sup_R_dev, d.dt)])
    return buf.getvalue()


def write_trajectory_csv(traj, path):
    return atomic_write(path, trajectory_csv(traj))


def read_trajectory_csv(path):
    """Load a diagnostics CSV into a dict of column arrays.

    Raises ConfigurationError on a missing file, wrong header, or no rows.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigurationError(f"cannot read trajectory {path}: {err}") from err
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows:
        raise ConfigurationError(f"{path}: empty trajectory file")
    if tuple(rows[0]) != CSV_COLUMNS:
        raise ConfigurationError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
    body = [r for r in rows[1:] if r]
    if not body:
        raise ConfigurationError(f"{path}: trajectory has no rows")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as err:
        raise ConfigurationError(f"{path}: non-numeric entry ({err})") from err
    if data.shape[1] != len(CSV_COLUMNS):
        raise ConfigurationError(f"{path}: ragged rows")
    return {name: data[:, i] for i, name in enumerate(CSV_COLUMNS)}


class SeriesTrajectory:
    """Diagnostics-only trajectory, as recovered from CSV.

    Exposes the ``times`` and ``series`` interface the fitting routines use.
    """

    def __init__(self, columns, kind=flows.NORMALIZED):
        self.columns = columns
        self.kind = kind

    @property
    def times(self):
        return np.asarray(self.columns["t"])

    def series(self, name):
        return np.asarray(self.columns[name])

    def __len__(self):
        return len(self.columns["t"])


# ---------------------------------------------------------------------------
# metric snapshots
# ---------------------------------------------------------------------------


def snapshot_dict(state):
    g = state.metric
    out = {"schema": SNAPSHOT_SCHEMA, "n": g.grid.n, "time": float(state.time),
           "kind": state.kind}
    if isinstance(g, geo.ConformalMetric):
        out["phi"] = np.asarray(g.phi)
    else:
        out["a_sq"] = np.asarray(g.a_sq)
        out["b_sq"] = np.asarray(g.b_sq)
    return out


def write_snapshot(state, path):
    return atomic_write(path, dumps(snapshot_dict(state)))


def metric_from_snapshot(data):
    """Rebuild ``(time, metric)`` from a snapshot mapping."""
    if data.get("schema") != SNAPSHOT_SCHEMA:
        raise ConfigurationError(f"unsupported snapshot schema {data.get('schema')!r}")
    try:
        grid = geo.make_grid(int(data["n"]))
        if "phi" in data:
            metric = geo.ConformalMetric(grid, np.array(data["phi"], dtype=float))
        else:
            metric = geo.WarpedMetric(grid, np.array(data["a_sq"], dtype=float),
                                      np.array(data["b_sq"], dtype=float))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigurationError(f"malformed snapshot: {err}") from err
    return float(data.get("time", 0.0)), metric


def read_snapshot(path):
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigurationError(f"cannot read snapshot {path}: {err}") from err
    return metric_from_snapshot(data)


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------


def write_plots(series, out_dir, stem, fit=None):
    """SVG plots of the mu-gap and the log-log Lojasiewicz scatter.

    ``series`` is anything with ``times``/``series``; ``fit`` an optional
    LojasiewiczFit drawn over the scatter. Returns the written paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .lab import MU_ROUND

    t = series.times
    gap = MU_ROUND - series.series("mu")
    gm = series.series("grad_mu_norm")
    paths = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    keep = gap > 0
    ax.semilogy(t[keep], gap[keep], "o-", ms=2)
    ax.set_xlabel("t")
    ax.set_ylabel("mu(round) - mu(g(t))")
    fig.tight_layout()
    paths.append(_save_svg(fig, Path(out_dir) / f"{stem}_gap.svg"))
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(4, 4))
    keep = (gap > 0) & (gm > 0)
    ax.loglog(gap[keep], gm[keep], ".", ms=3)
    if fit is not None:
        xs = np.geomspace(gap[keep].min(), gap[keep].max(), 50)
        ax.loglog(xs, np.exp(fit.log_C) * xs ** fit.alpha, "-", lw=1,
                  label=f"alpha = {fit.alpha:.3f}")
        ax.legend()
    ax.set_xlabel("mu gap")
    ax.set_ylabel("|grad mu|")
    fig.tight_layout()
    paths.append(_save_svg(fig, Path(out_dir) / f"{stem}_lojasiewicz.svg"))
    plt.close(fig)
    return paths


def _save_svg(fig, path):
    import matplotlib
    buf = _io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "ricci_s2"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return atomic_write(path, buf.getvalue())
