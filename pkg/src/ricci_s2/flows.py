"""Normalized and modified Ricci flow on rotationally symmetric 2-spheres.

The normalized flow ``dg/dt = -Ric + g`` is integrated in conformal gauge,
where it is the strictly parabolic scalar equation

    dphi/dt = 1/2 - R/4,   R = exp(-2 phi)(2 - 2 Lap_round phi).

The modified flow ``dg/dt = -Ric + g - Hess f`` (``f`` the mu-minimizer) is
integrated directly on the warped profiles ``(A, B)``; it is only weakly
parabolic and meant for short horizons. :func:`gauge_transfer` produces the
modified flow from a normalized trajectory by pulling back along the
diffeotopy generated by ``-grad f / 2``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import entropy as ent
from . import geometry as geo
from .errors import (ConfigurationError, DomainError, FlowError, SolverError, StepperError,
                     TransferError)

log = logging.getLogger(__name__)

NORMALIZED = "normalized"
MODIFIED = "modified"
FLOW_KINDS = (NORMALIZED, MODIFIED)
STAGE_EL_TOL = 1e-8


@dataclass(frozen=True)
class StepperConfig:
    """Time-stepping and termination parameters.

    ``tol`` is the absolute per-step error target (max norm on the state
    vector). ``method`` is ``"semi-implicit"`` (linearly implicit Euler with
    step doubling, the default) or ``"explicit"`` (Dormand-Prince 5(4) pair).
    The modified flow is always stepped explicitly.
    """

    dt_init: float = 1e-4
    dt_max: float = 0.05
    dt_min: float = 1e-12
    safety: float = 0.9
    tol: float = 1e-9
    cadence: float = 0.05
    horizon: float = 60.0
    tol_R: float = 1e-6
    tol_grad: float = 1e-7
    area_projection: bool = True
    method: str = "semi-implicit"
    max_steps: int = 5_000_000

    def __post_init__(self):
        for name in ("dt_init", "dt_max", "dt_min", "safety", "tol", "cadence", "horizon",
                     "tol_R", "tol_grad"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"StepperConfig.{name} must be positive")
        if self.tol < 1e-14:
            raise ConfigurationError("StepperConfig.tol is below the machine-precision floor")
        if self.safety >= 1.0 or self.dt_min > self.dt_max:
            raise ConfigurationError("need safety < 1 and dt_min <= dt_max")
        if self.method not in ("explicit", "semi-implicit"):
            raise ConfigurationError(f"unknown stepping method {self.method!r}")


@dataclass(frozen=True)
class Diagnostics:
    area: float
    mu: float
    grad_mu_norm: float
    sup_R_dev: float
    dt: float


@dataclass(frozen=True, eq=False)
class FlowState:
    """Metric at one flow time, with its mu-minimizer and diagnostics."""

    time: float
    metric: object
    minimizer_cache: ent.EntropyResult | None = None
    diagnostics: Diagnostics | None = None
    dt_used: float = 0.0

    @property
    def kind(self):
        return NORMALIZED if isinstance(self.metric, geo.ConformalMetric) else MODIFIED


@dataclass(eq=False)
class Trajectory:
    """Snapshots of one flow line; ``termination`` is converged|horizon|error."""

    kind: str
    states: list = field(default_factory=list)
    termination: str = "horizon"
    error: str | None = None

    @property
    def times(self):
        return np.array([s.time for s in self.states])

    def series(self, name):
        return np.array([getattr(s.diagnostics, name) for s in self.states])

    @property
    def grid(self):
        return self.states[0].metric.grid


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------


def normalized_rhs(grid, phi):
    """``dphi/dt`` of the normalized flow in conformal gauge."""
    return 0.5 - 0.25 * geo.scalar_curvature(geo.ConformalMetric(grid, phi))


def normalized_jacobian(grid, phi):
    """Exact Jacobian of :func:`normalized_rhs`."""
    e = np.exp(-2.0 * phi)
    lap = geo.round_laplacian_matrix(grid)
    J = 0.5 * e[:, None] * lap
    idx = np.arange(grid.n)
    J[idx, idx] += e - e * (lap @ phi)
    return J


class _ModifiedRHS:
    """``d(A, B)/dt`` of the modified flow, warm-starting the mu solves."""

    def __init__(self, grid, entropy_config=None, f0=None):
        self.grid = grid
        config = entropy_config or ent.EntropyConfig()
        # stage metrics carry step-size-limit chatter; f only feeds Hess f here
        self.config = replace(config, el_tol=max(config.el_tol, STAGE_EL_TOL))
        self.f = f0
        self.last = None

    def metric(self, y):
        n = self.grid.n
        return geo.WarpedMetric.from_profiles(self.grid, y[:n], y[n:])

    def minimizer(self, g):
        res = ent.minimize_w(g, self.config, f0=self.f)
        self.f = res.minimizer_f
        self.last = res
        return res

    def __call__(self, y):
        g = self.metric(y)
        f = self.minimizer(g).minimizer_f
        grid = self.grid
        K = 0.5 * geo.scalar_curvature(g)
        H = geo.hessian(g, f)
        A_t = (1.0 - K) * g.A - H.h_thth
        B_t = (1.0 - K) * g.B - H.h_psipsi / grid.sin_sq
        return np.concatenate([A_t, B_t])


def modified_velocity(g, f):
    """``-Ric + g - Hess f`` as a SymTensor2."""
    return geo.metric_tensor(g) - geo.ricci(g) - geo.hessian(g, f)


# ---------------------------------------------------------------------------
# adaptive integrators
# ---------------------------------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_E = _DP_B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                          187 / 2100, 1 / 40])


def _dp_step(rhs, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_DP_A[i], ks))
        ks.append(rhs(yi))
    y_new = y + h * sum(b * k for b, k in zip(_DP_B, ks) if b != 0.0)
    err = h * sum(e * k for e, k in zip(_DP_E, ks) if e != 0.0)
    return y_new, float(np.max(np.abs(err))), ks[-1]


def _semi_implicit_step(rhs, jac, y, h):
    """Two half steps vs one full step of linearly implicit Euler, extrapolated."""
    def lie(y0, dt):
        M = -dt * jac(y0)
        idx = np.arange(y0.size)
        M[idx, idx] += 1.0
        return y0 + linalg.solve(M, dt * rhs(y0), check_finite=False)
    full = lie(y, h)
    half = lie(lie(y, 0.5 * h), 0.5 * h)
    return 2.0 * half - full, float(np.max(np.abs(half - full)))


@dataclass
class _StepStats:
    accepted: int = 0
    rejected: int = 0
    last_dt: float = 0.0
    next_dt: float = 0.0
    max_h: float = 0.0
    max_drift: float = 0.0
    last_failure: str | None = None


def _integrate(rhs, y, t0, t1, config, dt, project=None, jac=None, stats=None):
    """Advance ``y`` from ``t0`` to exactly ``t1``; ``project`` runs after each accepted step.

    Returns ``(y, next_dt)``.
    """
    stats = stats if stats is not None else _StepStats()
    t = t0
    explicit = config.method == "explicit" or jac is None
    order = 5.0 if explicit else 2.0
    k1 = rhs(y) if explicit else None
    dt = min(dt, config.dt_max)
    while t < t1:
        if stats.accepted + stats.rejected >= config.max_steps:
            raise StepperError("maximum number of steps exceeded")
        h = min(dt, t1 - t)
        last = h == t1 - t
        try:
            if explicit:
                y_new, err, k_last = _dp_step(rhs, y, h, k1)
            else:
                y_new, err = _semi_implicit_step(rhs, jac, y, h)
        except (SolverError, DomainError) as exc:
            # an overshooting trial stage can leave the admissible set; shrink and retry
            log.debug("trial step h=%.3e rejected: %s", h, exc)
            stats.last_failure = str(exc)
            y_new, err = y, np.inf
        if not np.all(np.isfinite(y_new)):
            err = np.inf
        if err <= config.tol:
            t = t1 if last else t + h
            y = y_new
            if project is not None:
                y, drift = project(y)
                stats.max_drift = max(stats.max_drift, abs(drift))
                k1 = rhs(y) if explicit else None
            elif explicit:
                k1 = k_last
            stats.accepted += 1
            stats.last_dt = h
            stats.max_h = max(stats.max_h, h)
            factor = 5.0 if err == 0.0 else min(5.0, config.safety * (config.tol / err) ** (1.0 / order))
            if not last or factor < 1.0:
                dt = min(config.dt_max, h * factor)
        else:
            stats.rejected += 1
            factor = 0.2 if not np.isfinite(err) else max(0.2, config.safety * (config.tol / err) ** (1.0 / order))
            dt = h * factor
            if dt < config.dt_min:
                cause = f" (last stage failure: {stats.last_failure})" if stats.last_failure else ""
                raise StepperError(f"step size {dt:.3e} fell below dt_min at t={t:.6g}{cause}")
    stats.next_dt = dt
    return y, dt


# ---------------------------------------------------------------------------
# one-step operations
# ---------------------------------------------------------------------------


def area_projection(metric):
    """Rescale ``metric`` uniformly to area 4 pi; logs and returns the drift too."""
    g, drift = ent.area_projection(metric)
    if drift:
        log.debug("area projection removed relative drift %.3e", drift)
    return g, drift


def _conformal_projector(grid):
    def project(phi):
        g, drift = area_projection(geo.ConformalMetric(grid, phi))
        return np.array(g.phi), drift
    return project


def _warped_projector(grid):
    n = grid.n

    def project(y):
        a = geo.area(geo.WarpedMetric.from_profiles(grid, y[:n], y[n:]))
        c = geo.FOUR_PI / a
        return c * y, a / geo.FOUR_PI - 1.0
    return project


def ricci_step(state, dt, config=None, project=None, stats=None):
    """Advance a conformal state by ``dt`` under the normalized flow.

    ``project`` defaults to ``config.area_projection``.
    """
    config = config or StepperConfig()
    g = state.metric
    if not isinstance(g, geo.ConformalMetric):
        raise DomainError("the normalized flow is integrated in conformal gauge")
    grid = g.grid
    project = config.area_projection if project is None else project
    rhs = lambda phi: normalized_rhs(grid, phi)  # noqa: E731
    jac = lambda phi: normalized_jacobian(grid, phi)  # noqa: E731
    stats = stats if stats is not None else _StepStats()
    phi, _ = _integrate(rhs, np.array(g.phi), state.time, state.time + dt, config,
                        state.dt_used or config.dt_init,
                        project=_conformal_projector(grid) if project else None,
                        jac=jac, stats=stats)
    return FlowState(time=state.time + dt, metric=geo.ConformalMetric(grid, phi),
                     dt_used=stats.max_h)


def modified_ricci_step(state, dt, config=None, project=None, entropy_config=None, stats=None):
    """Advance a warped state by ``dt`` under the modified flow (explicit stepping).

    Raises
    ------
    FlowError
        If a mu solve fails mid-step.
    """
    config = config or StepperConfig()
    g = geo.warped_from_conformal(state.metric)
    grid = g.grid
    project = config.area_projection if project is None else project
    f0 = state.minimizer_cache.minimizer_f if state.minimizer_cache is not None else None
    rhs = _ModifiedRHS(grid, entropy_config, f0)
    stats = stats if stats is not None else _StepStats()
    explicit_config = replace(config, method="explicit")
    try:
        y, _ = _integrate(rhs, np.concatenate([g.A, g.B]), state.time, state.time + dt,
                          explicit_config, state.dt_used or config.dt_init,
                          project=_warped_projector(grid) if project else None, stats=stats)
    except SolverError as err:
        if isinstance(err, StepperError):
            raise
        raise FlowError(f"mu solve failed during modified flow step: {err}") from err
    return FlowState(time=state.time + dt, metric=rhs.metric(y), dt_used=stats.max_h,
                     minimizer_cache=rhs.last)


# ---------------------------------------------------------------------------
# diagnostics and runs
# ---------------------------------------------------------------------------


def with_diagnostics(state, entropy_config=None):
    """Attach the minimizer and (area, mu, |grad mu|, sup|R-2|, dt) diagnostics."""
    g = state.metric
    f0 = state.minimizer_cache.minimizer_f if state.minimizer_cache is not None else None
    res = ent.minimize_w(g, entropy_config, f0=f0)
    gnorm = ent.mu_gradient_norm(g, result=res)
    diag = Diagnostics(area=geo.area(g), mu=res.mu, grad_mu_norm=gnorm,
                       sup_R_dev=float(np.max(np.abs(geo.scalar_curvature(g) - 2.0))),
                       dt=state.dt_used)
    return replace(state, minimizer_cache=res, diagnostics=diag)


def _converged(diag, config):
    return diag.sup_R_dev < config.tol_R and diag.grad_mu_norm < config.tol_grad


def run_flow(initial, config=None, kind=NORMALIZED, entropy_config=None):
    """Integrate from ``initial`` until convergence, the horizon, or an error.

    Snapshots with full diagnostics are recorded every ``config.cadence``.

    Raises
    ------
    FlowError
        On stepper or mu-solver failure; ``err.best`` is the partial trajectory.
    """
    config = config or StepperConfig()
    if kind not in FLOW_KINDS:
        raise ConfigurationError(f"unknown flow kind {kind!r}")
    if kind == NORMALIZED and not isinstance(initial, geo.ConformalMetric):
        raise DomainError("the normalized flow needs a ConformalMetric")
    metric = initial if kind == NORMALIZED else geo.warped_from_conformal(initial)
    traj = Trajectory(kind=kind)
    state = FlowState(time=0.0, metric=metric, dt_used=0.0)
    try:
        state = with_diagnostics(state, entropy_config)
    except SolverError as err:
        raise FlowError(f"mu solve failed at t=0: {err}", best=traj) from err
    traj.states.append(state)
    n_snap = int(round(config.horizon / config.cadence))
    dt = config.dt_init
    for k in range(1, n_snap + 1):
        if _converged(state.diagnostics, config):
            traj.termination = "converged"
            return traj
        t_next = min(k * config.cadence, config.horizon)
        stats = _StepStats()
        seed = replace(state, dt_used=dt)
        try:
            if kind == NORMALIZED:
                new = ricci_step(seed, t_next - state.time, config, stats=stats)
            else:
                new = modified_ricci_step(seed, t_next - state.time, config,
                                          entropy_config=entropy_config, stats=stats)
            dt = stats.next_dt
            new = replace(new, time=t_next, minimizer_cache=new.minimizer_cache
                          or state.minimizer_cache)
            state = with_diagnostics(new, entropy_config)
        except SolverError as err:
            traj.termination = "error"
            traj.error = str(err)
            raise FlowError(f"flow aborted at t={state.time:.6g}: {err}", best=traj) from err
        traj.states.append(state)
    traj.termination = "converged" if _converged(state.diagnostics, config) else "horizon"
    return traj


# ---------------------------------------------------------------------------
# gauge transfer
# ---------------------------------------------------------------------------


def gauge_vector_field(state):
    """x-component of ``-grad f / 2`` at a normalized-flow snapshot."""
    res = state.minimizer_cache
    if res is None:
        raise TransferError("snapshot lacks a mu minimizer")
    return -0.5 * geo.gradient(state.metric, res.minimizer_f).v_x


def gauge_transfer(traj, entropy_config=None):
    """Turn a normalized-flow trajectory into a modified-flow trajectory.

    The diffeotopy ``X(t, x)`` solves ``dX/dt = Y(t, X)`` with
    ``Y = -grad f / 2``, integrated by Heun's method between snapshots, and
    each snapshot is pulled back by it.

    Raises
    ------
    TransferError
        If the diffeotopy stops being monotone (snapshots too coarse).
    """
    if traj.kind != NORMALIZED:
        raise TransferError("gauge transfer starts from a normalized-flow trajectory")
    grid = traj.grid
    D = grid.D
    X = np.array(grid.x)
    dX = np.ones(grid.n)
    out = Trajectory(kind=MODIFIED, termination=traj.termination, error=traj.error)

    def pulled(state, X, dX):
        try:
            diffeo = geo.ProfileDiffeo(grid, X, dX)
        except DomainError as err:
            raise TransferError(f"diffeotopy lost monotonicity at t={state.time:.6g}") from err
        metric = geo.pullback_by_profile_diffeo(state.metric, diffeo)
        f0 = geo.pullback_function(state.minimizer_cache.minimizer_f, diffeo)
        return with_diagnostics(FlowState(time=state.time, metric=metric,
                                          minimizer_cache=replace(state.minimizer_cache,
                                                                  minimizer_f=f0),
                                          dt_used=state.dt_used), entropy_config)

    out.states.append(pulled(traj.states[0], X, dX))
    Yk = gauge_vector_field(traj.states[0])
    for prev, nxt in zip(traj.states[:-1], traj.states[1:]):
        h = nxt.time - prev.time
        Y_nxt = gauge_vector_field(nxt)
        k1 = grid.interpolate(Yk, X)
        k2 = grid.interpolate(Y_nxt, X + h * k1)
        X = X + 0.5 * h * (k1 + k2)
        # differentiate X spectrally: keeps the pulled-back metric smooth at the poles
        dX = D @ X
        out.states.append(pulled(nxt, X, dX))
        Yk = Y_nxt
    return out


def metric_sup_distance(g1, g2):
    """``max(sup|a1^2 - a2^2|, sup|b1^2 - b2^2|)`` in warped components."""
    w1 = geo.warped_from_conformal(g1)
    w2 = geo.warped_from_conformal(g2)
    return float(max(np.max(np.abs(w1.a_sq - w2.a_sq)), np.max(np.abs(w1.b_sq - w2.b_sq))))
