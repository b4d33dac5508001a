"""W and mu entropies, their variations, and the weighted spectral objects.

The minimization defining ``mu(g)`` is solved in the variable
``u = exp(-f/2)``, where the functional becomes the log-Sobolev type energy

    Wbar(u) = 1/2 \\int (4 |grad u|^2 + R u^2 - 2 u^2 log u^2) dVol,
    \\int u^2 dVol = 1.

Phase one is a Sobolev-preconditioned projected gradient descent on the
constraint sphere (positivity by backtracking, never clipping); phase two a
bordered Newton iteration on the Euler-Lagrange system

    -4 Lap u + R u - 4 u log u - 2 mu u = 0,  \\int u^2 dVol = 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import geometry as geo
from .errors import ConfigurationError, ContractError, DomainError, SolverError

CONSTRAINT_CHECK_TOL = 1e-8


@dataclass(frozen=True)
class EntropyConfig:
    """Tolerances and iteration limits of :func:`minimize_w`."""

    el_tol: float = 1e-10
    constraint_tol: float = 1e-10
    multiplier_tol: float = 1e-8
    max_descent: int = 500
    max_newton: int = 20
    descent_switch: float = 1e-5
    multistart: int = 0
    seed: int = 0
    init_amplitude: float = 0.3

    def __post_init__(self):
        if self.el_tol <= 0 or self.constraint_tol <= 0:
            raise ConfigurationError("tolerances must be positive")
        if self.max_descent < 0 or self.max_newton < 1 or self.multistart < 0:
            raise ConfigurationError("iteration limits must be non-negative")


@dataclass(frozen=True)
class EntropyResult:
    """Outcome of one mu solve.

    ``mu`` is the variational value ``Wbar(u)``; ``multiplier`` is the
    Lagrange multiplier of the Euler-Lagrange system, kept as a cross-check.
    """

    mu: float
    minimizer_f: np.ndarray
    el_residual: float
    iterations: int
    multistart_spread: float = 0.0
    multiplier: float = float("nan")
    constraint_defect: float = 0.0
    descent_iterations: int = 0
    newton_iterations: int = 0


@dataclass(frozen=True)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenfunctions: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


def constraint_defect(g, f):
    """``\\int e^{-f} dVol_g - 1``."""
    return float(geo.volume_weights(g) @ np.exp(-np.asarray(f, dtype=float)) - 1.0)


def normalize_f(g, f):
    """Shift ``f`` by the constant that enforces ``\\int e^{-f} dVol = 1``."""
    f = np.asarray(f, dtype=float)
    return f + np.log(geo.volume_weights(g) @ np.exp(-f))


def w_integral(g, f):
    """The W integrand integrated without checking the constraint."""
    f = np.asarray(f, dtype=float)
    integrand = 0.5 * (geo.grad_norm_sq(g, f) + geo.scalar_curvature(g)) + f
    return float(geo.volume_weights(g) @ (integrand * np.exp(-f)))


def w_functional(g, f):
    """Perelman's ``W(g, f) = \\int [1/2(|grad f|^2 + R) + f] e^{-f} dVol``.

    Raises
    ------
    ContractError
        If ``f`` violates ``\\int e^{-f} dVol = 1`` by more than 1e-8.
    """
    defect = constraint_defect(g, f)
    if abs(defect) > CONSTRAINT_CHECK_TOL:
        raise ContractError(f"f is not normalized: int e^-f dVol - 1 = {defect:.3e}")
    return w_integral(g, f)


def _u_energy_terms(g, u, K=None):
    wv = geo.volume_weights(g)
    if K is None:
        K = geo.stiffness_matrix(g)
    R = geo.scalar_curvature(g)
    u2 = u * u
    return 0.5 * (4.0 * (u @ K @ u) + wv @ (R * u2 - 2.0 * u2 * np.log(u2)))


def wbar_functional(g, u):
    """``1/2 \\int (4|grad u|^2 + R u^2 - 2 u^2 log u^2) dVol`` for ``\\int u^2 = 1``."""
    u = geo._field(g.grid, u, "u")
    if np.any(u <= 0.0):
        raise DomainError("u must be strictly positive")
    defect = float(geo.volume_weights(g) @ (u * u) - 1.0)
    if abs(defect) > CONSTRAINT_CHECK_TOL:
        raise ContractError(f"u is not normalized: int u^2 dVol - 1 = {defect:.3e}")
    return float(_u_energy_terms(g, u))


def el_defect(g, f, mu):
    """``Lap f - 1/2 |grad f|^2 + f + R/2 - mu`` at the nodes."""
    f = np.asarray(f, dtype=float)
    return (geo.laplacian(g, f) - 0.5 * geo.grad_norm_sq(g, f) + f
            + 0.5 * geo.scalar_curvature(g) - mu)


def w_first_variation(g, f, h, v):
    """Directional derivative of W along a metric variation ``h`` and ``f``-variation ``v``."""
    f = np.asarray(f, dtype=float)
    v = geo._field(g.grid, v, "v")
    E = el_defect(g, f, 0.0)
    T = geo.ricci(g) + geo.hessian(g, f) - geo.metric_tensor(g) * E
    wf = geo.volume_weights(g) * np.exp(-f)
    return float(wf @ (-0.5 * geo.tensor_inner(g, T, h) - (E - 1.0) * v))


# ---------------------------------------------------------------------------
# the mu solver
# ---------------------------------------------------------------------------


def _reflection_symmetric(g, tol=1e-12):
    return (np.max(np.abs(g.A - g.A[::-1])) <= tol * np.max(g.A)
            and np.max(np.abs(g.B - g.B[::-1])) <= tol * np.max(g.B))


class _USolver:
    """Discrete Wbar minimization on one metric."""

    def __init__(self, g, config):
        self.g = g
        self.config = config
        self.wv = geo.volume_weights(g)
        self.K = geo.stiffness_matrix(g)
        self.R = geo.scalar_curvature(g)
        self.symmetric = _reflection_symmetric(g)
        self._pre = None

    @property
    def pre(self):
        # only the descent phase needs it; warm starts usually go straight to Newton
        if self._pre is None:
            self._pre = linalg.cho_factor(4.0 * self.K + np.diag(self.wv))
        return self._pre

    def normalize(self, u):
        return u / np.sqrt(self.wv @ (u * u))

    def energy(self, u):
        u2 = u * u
        return 0.5 * (4.0 * (u @ self.K @ u) + self.wv @ (self.R * u2 - 2.0 * u2 * np.log(u2)))

    def euclid_grad(self, u):
        return 4.0 * (self.K @ u) + self.wv * u * (self.R - 4.0 * np.log(u) - 2.0)

    def symmetrize(self, u):
        return 0.5 * (u + u[::-1]) if self.symmetric else u

    def descent(self, u):
        """Projected, preconditioned gradient descent; returns (u, iterations)."""
        wu = self.wv * u
        E = self.energy(u)
        it = 0
        for it in range(1, self.config.max_descent + 1):
            grad = self.euclid_grad(u)
            d = linalg.cho_solve(self.pre, grad)
            q = linalg.cho_solve(self.pre, wu)
            d = d - (wu @ d) / (wu @ q) * q
            slope = grad @ d
            # M-norm of the tangential gradient, used as the hand-over criterion
            gt = grad / self.wv
            gt = gt - (wu @ gt) * u
            if np.sqrt(self.wv @ gt**2) < self.config.descent_switch or slope <= 0.0:
                break
            tau = 1.0
            while True:
                trial = u - tau * d
                if np.all(trial > 0.0):
                    trial = self.symmetrize(self.normalize(trial))
                    E_trial = self.energy(trial)
                    if E_trial <= E - 1e-4 * tau * slope:
                        break
                tau *= 0.5
                if tau < 1e-12:
                    return u, it
            u, E = trial, E_trial
            wu = self.wv * u
        return u, it

    def newton(self, u):
        """Bordered Newton on (u, mu); returns (u, mu, iterations, converged)."""
        n = u.size
        wv = self.wv
        mu = self.energy(u)
        converged = False
        last = np.inf
        it = 0
        for it in range(1, self.config.max_newton + 1):
            logu = np.log(u)
            F = 4.0 * (self.K @ u) + wv * u * (self.R - 4.0 * logu - 2.0 * mu)
            c = wv @ (u * u) - 1.0
            J = np.empty((n + 1, n + 1))
            J[:n, :n] = 4.0 * self.K
            J[np.arange(n), np.arange(n)] += wv * (self.R - 4.0 * logu - 4.0 - 2.0 * mu)
            J[:n, n] = -2.0 * wv * u
            J[n, :n] = -2.0 * wv * u
            J[n, n] = 0.0
            step = linalg.solve(J, -np.append(F, -c), assume_a="sym")
            du, dmu = step[:n], step[n]
            tau = 1.0
            while np.any(u + tau * du <= 0.0):
                tau *= 0.5
                if tau < 1e-12:
                    return u, mu, it, False
            u = self.symmetrize(u + tau * du)
            mu = mu + tau * dmu
            rel = np.max(np.abs(du) / u)
            if tau == 1.0 and (rel < 1e-12 or (rel < 1e-9 and rel > 0.5 * last)):
                # below 1e-9 a step that fails to halve means roundoff stagnation
                converged = True
                break
            last = rel if tau == 1.0 else np.inf
        u = self.normalize(u)
        return u, mu, it, converged

    def solve(self, u0):
        u = self.symmetrize(self.normalize(u0))
        u, n_desc = self.descent(u)
        u, multiplier, n_newton, _ = self.newton(u)
        f = -2.0 * np.log(u)
        mu = float(self.energy(u))
        residual = float(np.max(np.abs(el_defect(self.g, f, mu))))
        return EntropyResult(
            mu=mu,
            minimizer_f=f,
            el_residual=residual,
            iterations=n_desc + n_newton,
            multiplier=float(multiplier),
            constraint_defect=float(self.wv @ (u * u) - 1.0),
            descent_iterations=n_desc,
            newton_iterations=n_newton,
        )


def _random_start(g, rng, amplitude, symmetric):
    grid = g.grid
    f = np.full(grid.n, np.log(geo.area(g)))
    for k in range(1, 7):
        if symmetric and k % 2:
            continue
        f += amplitude / k * rng.standard_normal() * geo.legendre(k, grid.x)
    return np.exp(-0.5 * f)


def roundoff_floor(n, f):
    """Attainable sup-residual of the f-equation: the nodal Laplacian amplifies
    the rounding of ``f`` by about ``n^2``."""
    return 32.0 * n * n * float(np.spacing(max(1.0, float(np.max(np.abs(f))))))


def _check_result(res, config):
    tol = max(config.el_tol, roundoff_floor(res.minimizer_f.size, res.minimizer_f))
    if (res.el_residual > tol or abs(res.constraint_defect) > config.constraint_tol
            or abs(res.mu - res.multiplier) > config.multiplier_tol):
        raise SolverError(
            f"mu solver did not converge: residual {res.el_residual:.2e}, "
            f"constraint {res.constraint_defect:.2e}, |mu - multiplier| "
            f"{abs(res.mu - res.multiplier):.2e}", best=res)


def minimize_w(g, config=None, f0=None):
    """Minimize ``W(g, .)`` over normalized ``f``.

    Parameters
    ----------
    g : ConformalMetric or WarpedMetric
    config : EntropyConfig, optional
    f0 : array, optional
        Warm start; defaults to ``log area(g)``, exact at Einstein metrics.

    Returns
    -------
    EntropyResult

    Raises
    ------
    SolverError
        If the Euler-Lagrange residual, constraint or multiplier consistency
        misses its tolerance; ``err.best`` holds the best result.
    """
    config = config or EntropyConfig()
    solver = _USolver(g, config)
    if f0 is None:
        u0 = np.full(g.grid.n, 1.0)
    else:
        u0 = np.exp(-0.5 * np.asarray(f0, dtype=float))
    best = solver.solve(u0)
    if config.multistart:
        rng = np.random.default_rng(config.seed)
        results = [best]
        for _ in range(config.multistart):
            results.append(solver.solve(_random_start(g, rng, config.init_amplitude,
                                                      solver.symmetric)))
        fs = np.array([r.minimizer_f for r in results])
        spread = float(max(np.max(np.abs(fi - fs)) for fi in fs))
        best = min(results, key=lambda r: r.mu)
        best = replace(best, multistart_spread=spread,
                       iterations=sum(r.iterations for r in results))
    _check_result(best, config)
    return best


def mu(g, config=None):
    """Perelman's ``mu(g)``."""
    return minimize_w(g, config).mu


def mu_gradient(g, config=None, result=None):
    """``grad mu(g) = -(Ric + Hess f - g)`` with ``f`` the minimizer.

    Returns ``(gradient, result)``.
    """
    if result is None:
        result = minimize_w(g, config)
    f = result.minimizer_f
    grad = -(geo.ricci(g) + geo.hessian(g, f) - geo.metric_tensor(g))
    return grad, result


def mu_gradient_norm(g, config=None, result=None):
    grad, result = mu_gradient(g, config, result)
    return geo.tensor_norm_weighted(g, result.minimizer_f, grad)


def mu_first_variation(g, h, config=None, result=None):
    """``delta mu(h) = -1/2 \\int <Ric + Hess f - g, h> e^{-f} dVol``."""
    grad, result = mu_gradient(g, config, result)
    return geo.tensor_inner_weighted(g, result.minimizer_f, grad, h)


# ---------------------------------------------------------------------------
# spectra and second variation
# ---------------------------------------------------------------------------


def weighted_laplacian_spectrum(g, f, k):
    """Lowest ``k`` eigenpairs of ``-Lap^f = -Lap + grad f . grad``.

    Solved as the dense symmetric generalized problem ``K_f v = lam M_f v``,
    with ``K_f`` the e^{-f}-weighted stiffness and ``M_f`` the weighted mass.
    Eigenfunctions are orthonormal in the ``e^{-f} dVol`` inner product.
    """
    n = g.grid.n
    if int(k) != k or k < 1 or k > n:
        raise ConfigurationError(f"spectrum count k={k!r} must be in [1, {n}]")
    f = geo._field(g.grid, f, "f")
    K = geo.stiffness_matrix(g, f)
    M = geo.volume_weights(g) * np.exp(-f)
    vals, vecs = linalg.eigh(K, np.diag(M), subset_by_index=[0, int(k) - 1])
    funcs = []
    for j in range(vecs.shape[1]):
        v = vecs[:, j]
        pivot = np.argmax(np.abs(v) > 1e-8 * np.max(np.abs(v)))
        funcs.append(v if v[pivot] > 0 else -v)
    return SpectrumResult(eigenvalues=vals, eigenfunctions=funcs)


def perturb_warped(g, h, eps):
    """The metric ``g + eps h`` as a :class:`WarpedMetric`."""
    return geo.WarpedMetric(g.grid, g.a_sq + eps * h.h_thth, g.b_sq + eps * h.h_psipsi)


def area_projection(g):
    """Uniform rescale to area 4 pi; returns ``(metric, relative drift)``."""
    a = geo.area(g)
    return g.scaled(geo.FOUR_PI / a), a / geo.FOUR_PI - 1.0


def mu_along(g, h, eps, config=None, project=True):
    """``mu`` of the (area-projected) metric ``g + eps h``."""
    ge = perturb_warped(g, h, eps)
    if project:
        ge, _ = area_projection(ge)
    f0 = np.full(g.grid.n, np.log(geo.area(ge)))
    return minimize_w(ge, config, f0=f0).mu


def mu_hessian_probe(g0, directions, eps=2e-3, config=None, critical_tol=1e-6):
    """Finite-difference Hessian of ``mu`` on the span of ``directions``.

    Entries are second-order central differences of ``mu`` of the
    area-projected metrics ``g0 + eps sum_i c_i h_i``.

    Raises
    ------
    ContractError
        If ``g0`` is not a critical point of mu.
    """
    gnorm = mu_gradient_norm(g0, config)
    if gnorm >= critical_tol:
        raise ContractError(f"g0 is not critical: |grad mu| = {gnorm:.3e}")
    m = len(directions)
    mu0 = mu_along(g0, geo.zero_tensor(g0.grid), 0.0, config)
    H = np.empty((m, m))
    for i in range(m):
        hi = directions[i]
        plus = mu_along(g0, hi, eps, config)
        minus = mu_along(g0, hi, -eps, config)
        H[i, i] = (plus - 2.0 * mu0 + minus) / eps**2
        for j in range(i):
            hp = hi + directions[j]
            hm = hi - directions[j]
            val = (mu_along(g0, hp, eps, config) - mu_along(g0, hm, eps, config)
                   - mu_along(g0, hm, -eps, config) + mu_along(g0, hp, -eps, config))
            H[i, j] = H[j, i] = val / (4.0 * eps**2)
    return H


def conformal_mode(g, k):
    """Direction ``2 P_k g``: the first-order change of ``g`` under ``phi -> phi + eps P_k``."""
    return geo.conformal_direction(g, 2.0 * geo.legendre(k, g.grid.x))
