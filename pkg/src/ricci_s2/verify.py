"""Self-verification suite behind ``ricci-s2 verify``.

Each check returns a :class:`~ricci_s2.lab.Check`. Geometry is always looked
up through the module (``geo.scalar_curvature`` and friends), so a patched
operator is seen by every row; the test suite relies on this to confirm
that a sign error in the curvature trips the Gauss-Bonnet row.
"""
from __future__ import annotations

import time

import numpy as np

from . import entropy as ent
from . import flows
from . import geometry as geo
from .errors import RicciS2Error
from .lab import MU_ROUND, Check, Perturbation, perturb_round


def _smooth(grid, rng, kmax=6, scale=1.0):
    coef = rng.standard_normal(kmax + 1) / (1.0 + np.arange(kmax + 1)) ** 2
    return scale * sum(c * geo.legendre(k, grid.x) for k, c in enumerate(coef))


def smooth_tensor(g, rng, scale=0.2):
    """Random S^1-invariant 2-tensor that is smooth at the poles."""
    grid = g.grid
    s1 = _smooth(grid, rng, scale=scale)
    s2 = s1 + grid.sin_sq * _smooth(grid, rng, scale=scale)
    return geo.SymTensor2(s1 * g.a_sq, s2 * g.b_sq)


def sample_metrics(grid, rng, count=4):
    """Conformal, warped and pulled-back metrics for the invariant rows."""
    out = [geo.round_metric(grid), geo.ConformalMetric(grid, 0.1 * geo.legendre(2, grid.x))]
    for _ in range(count):
        out.append(geo.ConformalMetric(grid, _smooth(grid, rng, scale=0.3)))
    w = geo.WarpedMetric.from_profiles(grid, np.exp(grid.sin_sq * _smooth(grid, rng, scale=0.3)),
                                       np.ones(grid.n))
    out.append(w)
    diffeo = geo.ProfileDiffeo.from_shift(grid, 0.2 * np.ones(grid.n))
    out.append(geo.pullback_by_profile_diffeo(out[1], diffeo))
    return out


def _richardson(fun, eps):
    d1 = (fun(eps) - fun(-eps)) / (2.0 * eps)
    d2 = (fun(eps / 2) - fun(-eps / 2)) / eps
    return (4.0 * d2 - d1) / 3.0


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def check_quadrature(grid, rng):
    err = abs(np.sum(grid.weights) - geo.FOUR_PI)
    return Check("quadrature weights sum to 4 pi", "< 1e-12", err, err < 1e-12)


def check_gauss_bonnet(grid, rng):
    worst = max(abs(geo.integrate(g, geo.scalar_curvature(g)) - 8.0 * np.pi)
                for g in sample_metrics(grid, rng))
    return Check("Gauss-Bonnet", "|int R dV - 8 pi| < 1e-7", worst, worst < 1e-7)


def check_round_curvature(grid, rng):
    g = geo.round_metric(grid)
    err = float(np.max(np.abs(geo.scalar_curvature(g) - 2.0)))
    ric = geo.ricci(g) - geo.metric_tensor(g)
    err = max(err, ric.sup())
    return Check("round metric: R = 2, Ric = g", "< 1e-10", err, err < 1e-10)


def check_integration_by_parts(grid, rng):
    worst = 0.0
    for g in sample_metrics(grid, rng, 2):
        f, h = _smooth(grid, rng), _smooth(grid, rng)
        lhs = geo.integrate(g, geo.laplacian(g, f) * h)
        rhs = geo.integrate(g, (1.0 - grid.x**2) * (grid.D @ f) * (grid.D @ h) / g.A)
        worst = max(worst, abs(lhs + rhs))
    return Check("integration by parts", "< 1e-9", worst, worst < 1e-9)


def check_hessian_trace(grid, rng):
    worst = 0.0
    for g in sample_metrics(grid, rng, 2):
        f = _smooth(grid, rng)
        d = geo.tensor_trace(g, geo.hessian(g, f)) - geo.laplacian(g, f)
        worst = max(worst, float(np.max(np.abs(d))))
    return Check("tr Hess f = Lap f", "< 1e-9", worst, worst < 1e-9)


def check_wbar_identity(grid, rng):
    worst = 0.0
    for g in sample_metrics(grid, rng, 2):
        u = np.exp(0.3 * _smooth(grid, rng))
        u = u / np.sqrt(geo.volume_weights(g) @ (u * u))
        worst = max(worst, abs(ent.wbar_functional(g, u) - ent.w_functional(g, -2.0 * np.log(u))))
    return Check("Wbar(u) = W(-2 log u)", "< 1e-10", worst, worst < 1e-10)


def check_w_variation(grid, rng):
    worst = 0.0
    for g in sample_metrics(grid, rng, 2)[1:]:
        f = ent.normalize_f(g, 0.3 * _smooth(grid, rng))
        h = smooth_tensor(g, rng)
        v = 0.2 * _smooth(grid, rng)

        def W(eps):
            return ent.w_integral(ent.perturb_warped(g, h, eps), f + eps * v)
        worst = max(worst, _rel(_richardson(W, 1e-3), ent.w_first_variation(g, f, h, v)))
    return Check("first variation of W vs finite differences", "rel < 1e-5", worst, worst < 1e-5)


def check_mu_variation(grid, rng):
    g = geo.ConformalMetric(grid, 0.1 * geo.legendre(2, grid.x))
    res = ent.minimize_w(g)
    h = smooth_tensor(g, rng, 1.0)

    def M(eps):
        return ent.mu_along(g, h, eps, project=False)
    fd = _richardson(M, 1e-3)
    err = _rel(fd, ent.mu_first_variation(g, h, result=res))
    return Check("first variation of mu vs finite differences", "rel < 1e-5", err, err < 1e-5)


def check_mu_round(grid, rng):
    t = time.perf_counter()
    res = ent.minimize_w(geo.round_metric(grid))
    elapsed = time.perf_counter() - t
    err = max(abs(res.mu - MU_ROUND), float(np.max(np.abs(res.minimizer_f - np.log(geo.FOUR_PI)))))
    return Check("mu(round) = 1 + log 4 pi, f = log 4 pi", "< 1e-8", err, err < 1e-8 and elapsed < 5)


def check_upper_bound(grid, rng):
    over = max(ent.mu(ent.area_projection(g)[0]) - MU_ROUND for g in sample_metrics(grid, rng))
    return Check("mu <= 1 + log 4 pi on area-4pi metrics", "<= 1e-9", over, over <= 1e-9)


def check_spectrum(grid, rng):
    sp = ent.weighted_laplacian_spectrum(geo.round_metric(grid), np.full(grid.n, np.log(geo.FOUR_PI)), 6)
    k = np.arange(6)
    err = float(np.max(np.abs(sp.eigenvalues - k * (k + 1))))
    return Check("round spectrum = k(k+1)", "< 1e-6", err, err < 1e-6)


def check_fixed_points(grid, rng):
    g = geo.round_metric(grid)
    st = flows.with_diagnostics(flows.FlowState(0.0, g))
    # a healthy round metric needs a few dozen steps; a broken operator must not stall the row
    cfg = flows.StepperConfig(max_steps=2000)
    a = flows.ricci_step(st, 1.0, cfg)
    b = flows.modified_ricci_step(st, 0.01, cfg)
    err = max(float(np.max(np.abs(a.metric.phi))), flows.metric_sup_distance(b.metric, g))
    return Check("round metric is a fixed point of both flows", "< 1e-10", err, err < 1e-10)


def check_multistart(grid, rng):
    g, _ = ent.area_projection(geo.ConformalMetric(grid, 0.2 * geo.legendre(3, grid.x)))
    res = ent.minimize_w(g, ent.EntropyConfig(multistart=5, seed=int(rng.integers(1 << 30))))
    return Check("minimizer unique under multistart", "spread < 1e-7", res.multistart_spread,
                 res.multistart_spread < 1e-7)


def check_gauge_transfer(grid, rng):
    # pulled-back metrics need more nodes than the conformal ones to resolve the residual check
    grid = geo.make_grid(max(grid.n, 128))
    g = perturb_round(Perturbation("conformal-mode", 2, 0.1), grid)
    cfg = flows.StepperConfig(horizon=0.2, cadence=0.02)
    src = flows.run_flow(g, cfg)
    moved = flows.gauge_transfer(src)
    direct = flows.run_flow(g, cfg, kind=flows.MODIFIED)
    err = max(flows.metric_sup_distance(a.metric, b.metric)
              for a, b in zip(moved.states, direct.states))
    return Check("gauge transfer vs direct modified flow (t <= 0.2)", "< 1e-4", err, err < 1e-4)


def check_hessian_probe(grid, rng):
    g = geo.round_metric(grid)
    H = ent.mu_hessian_probe(g, [ent.conformal_mode(g, k) for k in (1, 2)])
    top = float(np.max(np.linalg.eigvalsh(H)))
    ok = top <= 1e-6 and abs(H[0, 0]) < 1e-5 and H[1, 1] < 0
    return Check("mu Hessian at round: nonpositive, P1 flat, P2 negative", "max eig <= 1e-6",
                 top, ok)


FAST = (check_quadrature, check_round_curvature, check_gauss_bonnet, check_integration_by_parts,
        check_hessian_trace, check_wbar_identity, check_w_variation, check_mu_variation,
        check_mu_round, check_upper_bound, check_spectrum, check_fixed_points)
FULL = FAST + (check_multistart, check_hessian_probe, check_gauge_transfer)


def run_suite(n=64, fast=False, seed=0):
    """All rows of the suite; a row that raises is reported as failed."""
    grid = geo.make_grid(n)
    rows = []
    for fn in FAST if fast else FULL:
        rng = np.random.default_rng([seed, len(rows)])
        try:
            rows.append(fn(grid, rng))
        except RicciS2Error as err:
            rows.append(Check(fn.__name__.removeprefix("check_").replace("_", " "),
                              "no error", f"{type(err).__name__}: {err}", False))
    return rows


def format_table(rows):
    width = max(len(r.name) for r in rows)
    lines = []
    for r in rows:
        actual = f"{r.actual:.3e}" if isinstance(r.actual, float) else str(r.actual)
        lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {actual:>12}  ({r.expected})")
    return "\n".join(lines)
