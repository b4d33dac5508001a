"""Stability experiments around the round metric.

Perturbation families, Lojasiewicz and decay fits on flow trajectories, the
basin sweep, and the experiment driver that assembles a :class:`Report`.
The fits only read the ``times``/``series`` interface, so they work equally
on in-memory trajectories and on CSV files loaded back from disk.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import entropy as ent
from . import flows
from . import geometry as geo
from .errors import ConfigurationError, DataQualityError, DomainError, FitError, SolverError

log = logging.getLogger(__name__)

MU_ROUND = 1.0 + np.log(geo.FOUR_PI)
KINDS = ("conformal-mode", "warped-mode", "random-smooth")
MAX_AMPLITUDE = 0.5


@dataclass(frozen=True)
class Perturbation:
    """One initial condition near the round metric.

    ``k`` is the Legendre mode for the two mode kinds and the bandwidth for
    ``random-smooth``; ``seed`` only matters for the random kind.
    """

    kind: str = "conformal-mode"
    k: int = 2
    amplitude: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown perturbation kind {self.kind!r}")
        if not isinstance(self.k, (int, np.integer)) or self.k < 0:
            raise ConfigurationError("perturbation mode index must be a nonnegative integer")
        if not np.isfinite(self.amplitude) or abs(self.amplitude) > MAX_AMPLITUDE:
            raise ConfigurationError(f"|amplitude| must be at most {MAX_AMPLITUDE}")

    @property
    def label(self):
        return f"{self.kind}-k{self.k}-eps{self.amplitude:g}" + (
            f"-s{self.seed}" if self.kind == "random-smooth" else "")


def _random_profile(grid, bandwidth, seed):
    rng = np.random.default_rng(seed)
    ks = np.arange(1, max(bandwidth, 1) + 1)
    coef = rng.standard_normal(ks.size) / (1.0 + ks) ** 2
    p = sum(c * geo.legendre(int(k), grid.x) for c, k in zip(coef, ks))
    return p / np.max(np.abs(p))


def perturb_round(p, grid):
    """Area-projected perturbed metric.

    Conformal and random kinds return a :class:`ConformalMetric`; the warped
    kind bumps ``g_thth`` by ``exp(eps (1 - x^2) P_k)`` and returns a
    :class:`WarpedMetric`.
    """
    x = grid.x
    if p.kind == "conformal-mode":
        g = geo.ConformalMetric(grid, p.amplitude * geo.legendre(p.k, x))
    elif p.kind == "random-smooth":
        g = geo.ConformalMetric(grid, p.amplitude * _random_profile(grid, p.k, p.seed))
    else:
        A = np.exp(p.amplitude * grid.sin_sq * geo.legendre(p.k, x))
        g = geo.WarpedMetric.from_profiles(grid, A, np.ones(grid.n))
    if p.amplitude == 0.0:
        return geo.round_metric(grid) if p.kind != "warped-mode" else geo.warped_from_conformal(
            geo.round_metric(grid))
    g, _ = ent.area_projection(g)
    return g


def distance_to_einstein(g, entropy_config=None, result=None):
    """``max(sup|R - 2|, |grad mu|)``; zero exactly at round metrics."""
    R = geo.scalar_curvature(g)
    gnorm = ent.mu_gradient_norm(g, entropy_config, result)
    return float(max(np.max(np.abs(R - 2.0)), gnorm))


# ---------------------------------------------------------------------------
# fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LojasiewiczFit:
    """``log|grad mu| = log_C + alpha log(gap)`` by least squares.

    ``C_bound`` is the largest constant for which ``|grad mu| >= C gap^alpha``
    holds at every point of the window.
    """

    alpha: float
    log_C: float
    r_squared: float
    window: tuple
    n_points: int
    C_bound: float

    def as_dict(self):
        return {"type": "lojasiewicz", **asdict(self)}


@dataclass(frozen=True)
class ModelFit:
    model: str
    rate: float
    log_amplitude: float
    r_squared: float


@dataclass(frozen=True)
class DecayFit:
    """Exponential and polynomial fits of one decaying series."""

    quantity: str
    exponential: ModelFit
    polynomial: ModelFit
    window: tuple
    n_points: int

    @property
    def preferred(self):
        return ("exponential" if self.exponential.r_squared >= self.polynomial.r_squared
                else "polynomial")

    @property
    def model(self):
        return self.preferred

    @property
    def rate(self):
        return getattr(self, self.preferred).rate

    def as_dict(self):
        return {"type": "decay", "quantity": self.quantity, "preferred": self.preferred,
                "exponential": asdict(self.exponential), "polynomial": asdict(self.polynomial),
                "window": self.window, "n_points": self.n_points}


def _linfit(xs, ys):
    A = np.column_stack([xs, np.ones_like(xs)])
    (slope, icept), *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = ys - (slope * xs + icept)
    ss_tot = np.sum((ys - ys.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(icept), float(r2)


def noise_floor(entropy_config=None):
    """Gap threshold below which mu differences are not trusted.

    The mu error is quadratic in the Euler-Lagrange residual, so the residual
    tolerance itself leaves wide headroom; 1e-10 stays well clear of the
    ~1e-12 roundoff seen in mu near the round value.
    """
    return max((entropy_config or ent.EntropyConfig()).el_tol, 1e-10)


def lojasiewicz_probe(traj, entropy_config=None, min_snapshots=20, min_points=5, floor=None):
    """Fit ``alpha`` in ``|grad mu| ~ C gap^alpha`` along a trajectory.

    Only points with gap above the noise floor and positive gradient enter.

    Raises
    ------
    FitError
        Fewer than ``min_snapshots`` snapshots or ``min_points`` usable points.
    """
    t = np.asarray(traj.times, dtype=float)
    if t.size < min_snapshots:
        raise FitError(f"need at least {min_snapshots} snapshots, got {t.size}")
    gap = MU_ROUND - traj.series("mu")
    gm = traj.series("grad_mu_norm")
    floor = noise_floor(entropy_config) if floor is None else floor
    keep = (gap > floor) & (gm > 0)
    if np.count_nonzero(keep) < min_points:
        raise FitError(f"only {np.count_nonzero(keep)} points above the noise floor {floor:.1e}")
    lg, lm = np.log(gap[keep]), np.log(gm[keep])
    alpha, log_C, r2 = _linfit(lg, lm)
    C_bound = float(np.exp(np.min(lm - alpha * lg)))
    tk = t[keep]
    return LojasiewiczFit(alpha=alpha, log_C=log_C, r_squared=r2,
                          window=(float(tk[0]), float(tk[-1])), n_points=int(keep.sum()),
                          C_bound=C_bound)


def check_monotone_gap(gap, tol=1e-10):
    """Largest increase of the gap between consecutive snapshots; raises past ``tol``."""
    worst = float(np.max(np.diff(gap))) if gap.size > 1 else 0.0
    if worst > tol:
        raise DataQualityError(f"mu gap increases by {worst:.2e} between snapshots")
    return worst


def _decay_window(t, y, transient, floor):
    t_start = t[0] + transient * (t[-1] - t[0])
    keep = (t >= t_start) & (y > floor)
    return keep


def fit_decay_series(t, y, quantity="gap", transient=0.2, floor=0.0, min_points=5, tail=0.5):
    """Fit ``y ~ a exp(-r t)`` and ``y ~ a (t+1)^(-p)`` on the late window.

    The window is the last ``tail`` fraction (in time) of the post-transient
    points above ``floor``. Higher modes die off first, so the early part of
    the window carries a bend that neither model describes.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = _decay_window(t, y, transient, floor)
    if np.any(keep):
        tk = t[keep]
        keep &= t >= tk[-1] - tail * (tk[-1] - tk[0])
    if np.count_nonzero(keep) < min_points:
        raise FitError(f"only {np.count_nonzero(keep)} usable points for the decay fit")
    tk, ly = t[keep], np.log(y[keep])
    s_e, i_e, r_e = _linfit(tk, ly)
    s_p, i_p, r_p = _linfit(np.log(tk + 1.0), ly)
    return DecayFit(quantity=quantity,
                    exponential=ModelFit("exponential", -s_e, i_e, r_e),
                    polynomial=ModelFit("polynomial", -s_p, i_p, r_p),
                    window=(float(tk[0]), float(tk[-1])), n_points=int(keep.sum()))


def decay_fit(traj, entropy_config=None, transient=0.2, monotone_tol=1e-10):
    """Both decay models for the mu gap and for ``sup|R - 2|``.

    Returns ``{"gap": DecayFit, "sup_R_dev": DecayFit}``.

    Raises
    ------
    DataQualityError
        If the gap increases between snapshots by more than ``monotone_tol``.
    """
    t = np.asarray(traj.times, dtype=float)
    gap = MU_ROUND - traj.series("mu")
    check_monotone_gap(gap, monotone_tol)
    out = {"gap": fit_decay_series(t, gap, "gap", transient, noise_floor(entropy_config))}
    R = traj.series("sup_R_dev")
    out["sup_R_dev"] = fit_decay_series(t, R, "sup_R_dev", transient, 1e-9)
    return out


@dataclass(frozen=True)
class DecayBound:
    """``gap(t) <= C (t+1)^(-1/(2 alpha - 1))`` checked on sampled points."""

    alpha: float
    C: float
    t0: float
    worst_ratio: float
    n_points: int

    @property
    def holds(self):
        # the bound is attained at t0 by construction, so allow roundoff there
        return self.worst_ratio <= 1.0 + 1e-12

    def as_dict(self):
        return {"type": "decay_bound", **asdict(self), "holds": self.holds}


def polynomial_decay_bound(traj, fit, entropy_config=None, alpha_floor=0.55, transient=0.2):
    """Derive the polynomial bound from the Lojasiewicz envelope and test it.

    With ``dmu/dt = |grad mu|^2 >= C_L^2 gap^(2 alpha)`` and ``alpha > 1/2``,
    ``y = gap^(1 - 2 alpha)`` grows at least linearly, which gives the bound
    for ``t >= t0``. Since the gap lies below one, any exponent at least the
    fitted one is admissible; it is clamped to ``alpha_floor`` so the
    bound stays meaningful when the fit lands at or below one half.
    """
    t = np.asarray(traj.times, dtype=float)
    gap = MU_ROUND - traj.series("mu")
    gm = traj.series("grad_mu_norm")
    alpha = max(fit.alpha, alpha_floor)
    floor = noise_floor(entropy_config)
    keep = _decay_window(t, gap, transient, floor) & (gm > 0)
    if np.count_nonzero(keep) < 2:
        raise FitError("not enough post-transient points for the decay bound")
    if np.max(gap[keep]) >= 1.0:
        raise DataQualityError("gap above one; exponent clamping is not admissible")
    C_L = float(np.min(gm[keep] / gap[keep] ** alpha))
    i0 = int(np.argmax(keep))
    t0 = float(t[i0])
    e = 2.0 * alpha - 1.0
    m = min(e * C_L**2, gap[i0] ** (-e) / (t0 + 1.0))
    C = m ** (-1.0 / e)
    ratio = gap[keep] / (C * (t[keep] + 1.0) ** (-1.0 / e))
    return DecayBound(alpha=alpha, C=float(C), t0=t0, worst_ratio=float(np.max(ratio)),
                      n_points=int(keep.sum()))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    expected: str
    actual: object
    passed: bool

    def as_dict(self):
        return {"name": self.name, "expected": self.expected, "actual": self.actual,
                "pass": bool(self.passed)}


@dataclass
class Report:
    """Config echo, per-cell summaries, fits and pass/fail checks.

    ``trajectories`` maps cell labels to in-memory trajectories; it is not
    part of the serialized report.
    """

    config: dict = field(default_factory=dict)
    cells: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    trajectories: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def as_dict(self):
        from .io import REPORT_SCHEMA
        return {"schema": REPORT_SCHEMA, "config": self.config, "cells": self.cells,
                "fits": self.fits, "checks": [c.as_dict() for c in self.checks]}


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 128
    kind: str = flows.NORMALIZED
    perturbations: tuple = ()
    stepper: flows.StepperConfig = field(default_factory=flows.StepperConfig)
    entropy: ent.EntropyConfig = field(default_factory=ent.EntropyConfig)
    seed: int = 0

    def echo(self):
        return {"n": self.n, "kind": self.kind, "seed": self.seed,
                "perturbations": [asdict(p) for p in self.perturbations],
                "stepper": asdict(self.stepper), "entropy": asdict(self.entropy)}


def initial_metric(p, grid, kind=flows.NORMALIZED):
    """Perturbed metric in the gauge ``run_flow`` needs for ``kind``."""
    g = perturb_round(p, grid)
    if kind == flows.NORMALIZED and isinstance(g, geo.WarpedMetric):
        g, _ = geo.conformal_from_warped(g)
    return g


def trajectory_checks(traj, label, mu_tol=1e-10, gb_tol=1e-7, upper_tol=1e-9):
    """Invariant checks every successful run must satisfy."""
    mu = traj.series("mu")
    gb = max(abs(geo.integrate(s.metric, geo.scalar_curvature(s.metric)) - 8.0 * np.pi)
             for s in traj.states)
    worst_drop = float(-np.min(np.diff(mu))) if mu.size > 1 else 0.0
    over = float(np.max(mu) - MU_ROUND)
    return [
        Check(f"{label}: Gauss-Bonnet", f"|int R dV - 8 pi| < {gb_tol:g}", gb, gb < gb_tol),
        Check(f"{label}: mu monotone", f"max drop < {mu_tol:g}", max(worst_drop, 0.0),
              worst_drop < mu_tol),
        Check(f"{label}: mu upper bound", f"mu - (1 + log 4 pi) <= {upper_tol:g}", over,
              over <= upper_tol),
    ]


def summarize(traj):
    last = traj.states[-1].diagnostics
    return {"termination": traj.termination, "error": traj.error,
            "n_snapshots": len(traj.states), "t_final": float(traj.states[-1].time),
            "mu_final": last.mu, "gap_final": float(MU_ROUND - last.mu),
            "sup_R_dev_final": last.sup_R_dev, "grad_mu_norm_final": last.grad_mu_norm,
            "max_excursion": float(np.max(np.maximum(traj.series("sup_R_dev"),
                                                      traj.series("grad_mu_norm"))))}


def analyze(traj, label, entropy_config=None):
    """Fits and checks for one trajectory; fit failures become failed checks."""
    fits, checks = [], []
    try:
        lf = lojasiewicz_probe(traj, entropy_config)
        fits.append({"cell": label, **lf.as_dict()})
        try:
            db = polynomial_decay_bound(traj, lf, entropy_config)
            fits.append({"cell": label, **db.as_dict()})
            checks.append(Check(f"{label}: polynomial decay bound", "gap <= C (t+1)^(-1/(2a-1))",
                                db.worst_ratio, db.holds))
        except (FitError, DataQualityError) as err:
            checks.append(Check(f"{label}: polynomial decay bound", "bound derivable",
                                str(err), False))
    except FitError as err:
        fits.append({"cell": label, "type": "lojasiewicz", "error": str(err)})
    try:
        for df in decay_fit(traj, entropy_config).values():
            fits.append({"cell": label, **df.as_dict()})
    except (FitError, DataQualityError) as err:
        fits.append({"cell": label, "type": "decay", "error": str(err)})
        if isinstance(err, DataQualityError):
            checks.append(Check(f"{label}: decay data quality", "monotone gap", str(err), False))
    checks.extend(trajectory_checks(traj, label))
    return fits, checks


def run_cell(p, config):
    grid = geo.make_grid(config.n)
    g = initial_metric(p, grid, config.kind)
    return flows.run_flow(g, config.stepper, kind=config.kind, entropy_config=config.entropy)


def run_experiment(config, analyze_cells=True):
    """perturb -> flow -> fits -> checks for every perturbation in ``config``.

    Cell failures are recorded in the report and never abort the sweep.
    """
    report = Report(config=config.echo())
    for p in config.perturbations:
        label = p.label
        cell = {"label": label, "perturbation": asdict(p)}
        try:
            traj = run_cell(p, config)
        except flows.FlowError as err:
            cell.update(status="error", error=str(err))
            report.cells.append(cell)
            report.checks.append(Check(f"{label}: run", "no solver failure", str(err), False))
            if isinstance(err.best, flows.Trajectory) and err.best.states:
                report.trajectories[label] = err.best
            continue
        except (DomainError, ConfigurationError) as err:
            cell.update(status="invalid", error=str(err))
            report.cells.append(cell)
            report.checks.append(Check(f"{label}: setup", "valid perturbation", str(err), False))
            continue
        report.trajectories[label] = traj
        cell.update(status="ok", **summarize(traj))
        report.cells.append(cell)
        report.checks.append(Check(f"{label}: converged", "termination == converged",
                                   traj.termination, traj.termination == "converged"))
        if analyze_cells:
            fits, checks = analyze(traj, label, config.entropy)
            report.fits.extend(fits)
            report.checks.extend(checks)
    return report


def basin_experiment(amplitudes, config, k=2, kind="conformal-mode"):
    """Max excursion of ``distance_to_einstein`` along the flow, per amplitude.

    Returns a Report whose cells tabulate the empirical amplitude-to-excursion
    map and whose checks cover its monotonicity and the mu upper bound.
    """
    amps = sorted(float(a) for a in amplitudes)
    perts = tuple(Perturbation(kind=kind, k=k, amplitude=a, seed=config.seed) for a in amps)
    sub = ExperimentConfig(n=config.n, kind=config.kind, perturbations=perts,
                           stepper=config.stepper, entropy=config.entropy, seed=config.seed)
    report = run_experiment(sub, analyze_cells=False)
    report.config["amplitudes"] = amps
    exc, ok_rows = [], []
    for a, cell in zip(amps, report.cells):
        cell["amplitude"] = a
        if cell.get("status") == "ok":
            traj = report.trajectories[cell["label"]]
            cell["initial_distance"] = float(max(traj.states[0].diagnostics.sup_R_dev,
                                                 traj.states[0].diagnostics.grad_mu_norm))
            exc.append(cell["max_excursion"])
            ok_rows.append(cell)
            over = float(np.max(traj.series("mu")) - MU_ROUND)
            report.checks.append(Check(f"{cell['label']}: mu upper bound",
                                       "mu <= 1 + log 4 pi + 1e-09", over, over <= 1e-9))
    if exc:
        steps = np.diff(exc)
        worst = float(-np.min(steps)) if steps.size else 0.0
        report.checks.append(Check("excursion map nondecreasing in amplitude",
                                   "max decrease <= 0", max(worst, 0.0),
                                   bool(steps.size == 0 or np.all(steps >= 0.0))))
    return report
