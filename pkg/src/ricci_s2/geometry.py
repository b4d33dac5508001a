"""Discrete differential geometry of S^1-invariant metrics on the 2-sphere.

All fields are sampled at Gauss-Legendre nodes in ``x = cos(theta)``. A smooth
rotationally symmetric function on S^2 is a smooth function of ``x``, so the
poles never appear as collocation points and no pole boundary conditions are
needed.

Two metric representations are supported:

* :class:`ConformalMetric` ``g = exp(2 phi) g_round``;
* :class:`WarpedMetric` ``g = a^2 dtheta^2 + b^2 dpsi^2``.

Internally both reduce to the pair of smooth profiles ``A = a^2`` and
``B = b^2 / (1 - x^2)``; a metric is smooth at the poles iff ``A = B`` there.
Symmetric 2-tensors are stored by their (theta theta, psi psi) coordinate
components, 1-forms ``eta dx`` by the smooth coefficient ``eta``.

Scalar fields are plain ``numpy`` arrays with one value per node.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError, UsageError

FOUR_PI = 4.0 * np.pi
MIN_NODES = 8


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False, repr=False)
class Grid:
    """Gauss-Legendre collocation grid in ``x = cos(theta)``.

    Attributes
    ----------
    n : int
        Number of nodes.
    x : ndarray
        Nodes, strictly increasing in (-1, 1).
    weights : ndarray
        Quadrature weights against the round area element; they sum to 4 pi.
    D : ndarray
        Dense differentiation matrix of the degree ``n - 1`` interpolant.
    bary : ndarray
        Barycentric weights of the nodes.
    """

    n: int
    x: np.ndarray
    weights: np.ndarray
    D: np.ndarray
    bary: np.ndarray

    @property
    def n_nodes(self):
        return self.n

    @property
    def nodes(self):
        return self.x

    @property
    def quadrature_weights(self):
        return self.weights

    @property
    def sin_sq(self):
        """``1 - x^2`` at the nodes (never zero)."""
        return 1.0 - self.x**2

    def interpolate(self, values, points):
        """Evaluate the nodal interpolant of ``values`` at arbitrary ``points``."""
        values = np.asarray(values, dtype=float)
        points = np.atleast_1d(np.asarray(points, dtype=float))
        diff = points[:, None] - self.x[None, :]
        exact = diff == 0.0
        diff[exact] = 1.0
        kernel = self.bary[None, :] / diff
        out = (kernel @ values) / kernel.sum(axis=1)
        hit_rows, hit_cols = np.nonzero(exact)
        out[hit_rows] = values[hit_cols]
        return out

    def interpolation_matrix(self, points):
        """Matrix mapping nodal values to values at ``points``."""
        points = np.atleast_1d(np.asarray(points, dtype=float))
        diff = points[:, None] - self.x[None, :]
        exact = diff == 0.0
        diff[exact] = 1.0
        kernel = self.bary[None, :] / diff
        mat = kernel / kernel.sum(axis=1, keepdims=True)
        for r, c in zip(*np.nonzero(exact)):
            mat[r] = 0.0
            mat[r, c] = 1.0
        return mat

    def __repr__(self):
        return f"Grid(n={self.n})"


@lru_cache(maxsize=None)
def make_grid(n):
    """Build (and cache) the ``n``-point Gauss-Legendre grid.

    Raises
    ------
    ConfigurationError
        If ``n < 8``.
    """
    if int(n) != n or n < MIN_NODES:
        raise ConfigurationError(f"grid needs an integer n >= {MIN_NODES}, got {n!r}")
    n = int(n)
    x, w = np.polynomial.legendre.leggauss(n)
    # barycentric weights of Gauss-Legendre points, up to a common factor
    bary = (-1.0) ** np.arange(n) * np.sqrt((1.0 - x**2) * w)
    bary /= np.abs(bary).max()
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return Grid(n=n, x=_frozen(x), weights=_frozen(2.0 * np.pi * w), D=_frozen(D),
                bary=_frozen(bary))


def legendre(k, x):
    """Legendre polynomial ``P_k`` evaluated at ``x``."""
    c = np.zeros(k + 1)
    c[k] = 1.0
    return np.polynomial.legendre.legval(x, c)


# ---------------------------------------------------------------------------
# metrics and tensors
# ---------------------------------------------------------------------------


def _field(grid, values, name="field"):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (grid.n,):
        raise UsageError(f"{name} has shape {arr.shape}, grid expects ({grid.n},)")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class ConformalMetric:
    """``g = exp(2 phi) g_round`` with ``phi`` sampled on ``grid``."""

    grid: Grid
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "phi", _frozen(_field(self.grid, self.phi, "phi")))

    @property
    def A(self):
        return np.exp(2.0 * self.phi)

    @property
    def B(self):
        return np.exp(2.0 * self.phi)

    @property
    def a_sq(self):
        return self.A

    @property
    def b_sq(self):
        return self.B * self.grid.sin_sq

    @property
    def volume_density(self):
        """Riemannian area density relative to the round area element."""
        return np.exp(2.0 * self.phi)

    def scaled(self, c):
        """The metric ``c * g``."""
        return ConformalMetric(self.grid, self.phi + 0.5 * np.log(c))


@dataclass(frozen=True, eq=False)
class WarpedMetric:
    """``g = a_sq dtheta^2 + b_sq dpsi^2`` sampled on ``grid``."""

    grid: Grid
    a_sq: np.ndarray
    b_sq: np.ndarray

    def __post_init__(self):
        a_sq = _field(self.grid, self.a_sq, "a_sq")
        b_sq = _field(self.grid, self.b_sq, "b_sq")
        if np.any(a_sq <= 0.0) or np.any(b_sq <= 0.0):
            raise DomainError("warped metric components must be positive")
        object.__setattr__(self, "a_sq", _frozen(a_sq))
        object.__setattr__(self, "b_sq", _frozen(b_sq))

    @classmethod
    def from_profiles(cls, grid, A, B):
        """Build from the smooth profiles ``A = a^2`` and ``B = b^2/(1-x^2)``."""
        return cls(grid, np.asarray(A, dtype=float), np.asarray(B, dtype=float) * grid.sin_sq)

    @property
    def A(self):
        return self.a_sq

    @property
    def B(self):
        return self.b_sq / self.grid.sin_sq

    @property
    def volume_density(self):
        return np.sqrt(self.A * self.B)

    def scaled(self, c):
        return WarpedMetric(self.grid, c * self.a_sq, c * self.b_sq)

    def pole_regularity_defect(self):
        """``max |B/A - 1|`` extrapolated to the two poles (0 means no cone angle)."""
        ends = self.grid.interpolate(self.B / self.A, [-1.0, 1.0])
        return float(np.max(np.abs(ends - 1.0)))


@dataclass(frozen=True)
class SymTensor2:
    """S^1-invariant symmetric 2-tensor ``h_thth dtheta^2 + h_psipsi dpsi^2``."""

    h_thth: np.ndarray
    h_psipsi: np.ndarray

    def __add__(self, other):
        return SymTensor2(self.h_thth + other.h_thth, self.h_psipsi + other.h_psipsi)

    def __sub__(self, other):
        return SymTensor2(self.h_thth - other.h_thth, self.h_psipsi - other.h_psipsi)

    def __neg__(self):
        return SymTensor2(-self.h_thth, -self.h_psipsi)

    def __mul__(self, c):
        return SymTensor2(c * self.h_thth, c * self.h_psipsi)

    __rmul__ = __mul__

    def sup(self):
        return float(max(np.max(np.abs(self.h_thth)), np.max(np.abs(self.h_psipsi))))


@dataclass(frozen=True)
class VectorProfile:
    """S^1-invariant vector field ``v_theta d/dtheta``.

    ``v_x`` is the same field written as ``v_x d/dx``.
    """

    v_theta: np.ndarray
    v_x: np.ndarray


def _as_metric(g):
    if not isinstance(g, (ConformalMetric, WarpedMetric)):
        raise UsageError(f"expected a ConformalMetric or WarpedMetric, got {type(g).__name__}")
    return g


def zero_tensor(grid):
    return SymTensor2(np.zeros(grid.n), np.zeros(grid.n))


def metric_tensor(g):
    """Coordinate components of ``g`` itself."""
    return SymTensor2(np.array(g.a_sq), np.array(g.b_sq))


def conformal_direction(g, p):
    """The tensor ``p g`` for a scalar profile ``p``."""
    p = _field(g.grid, p, "p")
    return SymTensor2(p * g.a_sq, p * g.b_sq)


def round_metric(grid):
    """The unit round metric (``phi = 0``), Einstein with constant 1."""
    return ConformalMetric(grid, np.zeros(grid.n))


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def volume_weights(g):
    """Quadrature weights for ``dVol_g`` at the nodes."""
    return g.grid.weights * g.volume_density


def integrate(g, field):
    """``\\int_M field dVol_g``."""
    _as_metric(g)
    return float(volume_weights(g) @ _field(g.grid, field))


def area(g):
    return float(np.sum(volume_weights(_as_metric(g))))


# ---------------------------------------------------------------------------
# differential operators
# ---------------------------------------------------------------------------


def _dG(g):
    # d(b^2)/dx by the product rule; D @ (B (1-x^2)) would need two extra degrees
    grid = g.grid
    B = g.B
    return grid.sin_sq * (grid.D @ B) - 2.0 * grid.x * B


def _dirichlet_density(g):
    # |grad f|^2 dVol = c(x) f_x^2 dA_round
    return g.grid.sin_sq * np.sqrt(g.B / g.A)


def stiffness_matrix(g, f=None):
    """Symmetric matrix of ``\\int <grad u, grad v> e^{-f} dVol`` on nodal values."""
    grid = g.grid
    c = grid.weights * _dirichlet_density(g)
    if f is not None:
        c = c * np.exp(-_field(grid, f, "f"))
    return grid.D.T @ (c[:, None] * grid.D)


def laplacian_matrix(g):
    """Nodal matrix of the Laplace-Beltrami operator (weak/Galerkin form).

    Its quadrature pairing is exactly symmetric, so discrete integration by
    parts holds to roundoff.
    """
    _as_metric(g)
    return -stiffness_matrix(g) / volume_weights(g)[:, None]


def laplacian(g, f):
    _as_metric(g)
    f = _field(g.grid, f)
    grid = g.grid
    flux = grid.weights * _dirichlet_density(g) * (grid.D @ f)
    return -(grid.D.T @ flux) / volume_weights(g)


@lru_cache(maxsize=32)
def round_laplacian_matrix(grid):
    """Weak-form Laplacian matrix of the unit round metric (cached per grid)."""
    K = grid.D.T @ ((grid.weights * grid.sin_sq)[:, None] * grid.D)
    L = -K / grid.weights[:, None]
    L.setflags(write=False)
    return L


def _round_laplacian(grid, f):
    flux = grid.weights * grid.sin_sq * (grid.D @ f)
    return -(grid.D.T @ flux) / grid.weights


def gradient(g, f):
    """``grad f`` as a :class:`VectorProfile`."""
    _as_metric(g)
    grid = g.grid
    fx = grid.D @ _field(grid, f)
    v_x = grid.sin_sq * fx / g.A
    return VectorProfile(v_theta=-np.sqrt(grid.sin_sq) * fx / g.A, v_x=v_x)


def grad_norm_sq(g, f):
    _as_metric(g)
    grid = g.grid
    fx = grid.D @ _field(grid, f)
    return grid.sin_sq * fx**2 / g.A


def symmetrized_derivative(g, eta):
    """``nabla^s xi`` for the 1-form ``xi = eta dx``."""
    _as_metric(g)
    grid = g.grid
    eta = _field(grid, eta, "eta")
    A = g.A
    Ax = grid.D @ A
    Gx = _dG(g)
    s2 = grid.sin_sq
    h_thth = -grid.x * eta + s2 * (grid.D @ eta) - s2 * Ax * eta / (2.0 * A)
    h_psipsi = 0.5 * s2 * Gx * eta / A
    return SymTensor2(h_thth, h_psipsi)


def hessian(g, f):
    """Covariant Hessian ``Hess f`` in (theta theta, psi psi) components."""
    return symmetrized_derivative(g, g.grid.D @ _field(g.grid, f))


def scalar_curvature(g):
    """Scalar curvature ``R = 2K``.

    Conformal input uses ``R = exp(-2 phi)(2 - 2 Lap_round phi)``; warped input
    uses ``K = -(1/2 sqrt(AB)) d/dx( G_x / sqrt(AB) )`` with ``G = b^2``.
    """
    _as_metric(g)
    grid = g.grid
    if isinstance(g, ConformalMetric):
        return np.exp(-2.0 * g.phi) * (2.0 - 2.0 * _round_laplacian(grid, g.phi))
    rho = g.volume_density
    Gx = _dG(g)
    K = -(grid.D @ (Gx / rho)) / (2.0 * rho)
    return 2.0 * K


def ricci(g):
    """``Ric = (R/2) g`` on a surface."""
    half_R = 0.5 * scalar_curvature(g)
    return SymTensor2(half_R * g.a_sq, half_R * g.b_sq)


# ---------------------------------------------------------------------------
# tensor algebra
# ---------------------------------------------------------------------------


def _check_tensor(grid, h):
    if not isinstance(h, SymTensor2):
        raise UsageError("expected a SymTensor2")
    return _field(grid, h.h_thth, "h_thth"), _field(grid, h.h_psipsi, "h_psipsi")


def tensor_trace(g, h):
    hth, hps = _check_tensor(g.grid, h)
    return hth / g.a_sq + hps / g.b_sq


def tensor_inner(g, h1, h2):
    """Pointwise ``<h1, h2>_g``."""
    a1, b1 = _check_tensor(g.grid, h1)
    a2, b2 = _check_tensor(g.grid, h2)
    return a1 * a2 / g.a_sq**2 + b1 * b2 / g.b_sq**2


def tensor_inner_weighted(g, f, h1, h2):
    """``(h1, h2)_g = 1/2 \\int <h1, h2>_g e^{-f} dVol_g``."""
    w = volume_weights(g) * np.exp(-_field(g.grid, f, "f"))
    return 0.5 * float(w @ tensor_inner(g, h1, h2))


def tensor_norm_weighted(g, f, h):
    return float(np.sqrt(max(tensor_inner_weighted(g, f, h, h), 0.0)))


def one_form_norm_sq(g, eta):
    """Pointwise ``|eta dx|_g^2``."""
    return g.grid.sin_sq * np.asarray(eta) ** 2 / g.A


def weighted_divergence(g, f, h):
    """``nabla^{*f} h`` (adjoint of ``nabla^s`` for ``e^{-f} dVol``) as ``eta dx``.

    Returns the coefficient ``eta``.
    """
    grid = g.grid
    hth, hps = _check_tensor(grid, h)
    f = _field(grid, f, "f")
    A = g.A
    G = g.b_sq
    D = grid.D
    Ax = D @ A
    Gx = _dG(g)
    q = ((D @ hth) - Ax * hth / A) / A + Gx * hth / (2.0 * A * G) - Gx * hps / (2.0 * G**2)
    q = q - hth * (D @ f) / A
    return -q


def weighted_divergence_free_check(g, f, h):
    """Weighted L^2 norm of ``nabla^{*f} h``; zero iff ``h`` is f-divergence free."""
    eta = weighted_divergence(g, f, h)
    w = volume_weights(g) * np.exp(-f)
    return float(np.sqrt(max(w @ one_form_norm_sq(g, eta), 0.0)))


# ---------------------------------------------------------------------------
# charts and diffeomorphisms
# ---------------------------------------------------------------------------


def warped_from_conformal(g):
    if isinstance(g, WarpedMetric):
        return g
    return WarpedMetric.from_profiles(g.grid, g.A, g.B)


@dataclass(frozen=True, eq=False)
class ProfileDiffeo:
    """Rotationally symmetric diffeomorphism ``x -> X(x)`` fixing both poles.

    Stores ``X`` and ``dX/dx`` at the nodes.
    """

    grid: Grid
    X: np.ndarray
    dX: np.ndarray

    def __post_init__(self):
        X = _field(self.grid, self.X, "X")
        dX = _field(self.grid, self.dX, "dX")
        if np.any(dX <= 0.0) or np.any(np.diff(X) <= 0.0) or np.any(np.abs(X) >= 1.0):
            raise DomainError("reparametrization is not strictly monotone inside (-1, 1)")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "dX", _frozen(dX))

    @classmethod
    def identity(cls, grid):
        return cls(grid, np.array(grid.x), np.ones(grid.n))

    @classmethod
    def from_shift(cls, grid, s):
        """``X = x + (1 - x^2) s(x)``; smooth at the poles for smooth ``s``."""
        s = _field(grid, s, "s")
        X = grid.x + grid.sin_sq * s
        return cls(grid, X, grid.D @ X)

    @classmethod
    def from_theta_map(cls, grid, theta_map, dtheta_map):
        """From a monotone map of the polar angle and its derivative."""
        theta = np.arccos(grid.x)
        T = theta_map(theta)
        X = np.cos(T)
        # dX/dx = sin(T) T'(theta) / sin(theta)
        dX = np.sin(T) * dtheta_map(theta) / np.sin(theta)
        return cls(grid, X, dX)


def pullback_function(f, diffeo):
    """``f o X`` at the nodes."""
    return diffeo.grid.interpolate(f, diffeo.X)


def pullback_by_profile_diffeo(g, diffeo):
    """Pull ``g`` back by ``diffeo``; returns a :class:`WarpedMetric`."""
    _as_metric(g)
    if diffeo.grid is not g.grid:
        raise UsageError("diffeomorphism and metric live on different grids")
    grid = g.grid
    A_X = grid.interpolate(g.A, diffeo.X)
    B_X = grid.interpolate(g.B, diffeo.X)
    ratio = (1.0 - diffeo.X**2) / grid.sin_sq
    return WarpedMetric.from_profiles(grid, A_X * diffeo.dX**2 / ratio, B_X * ratio)


def conformal_c2_proxy(g):
    """Discrete stand-in for a C^2 distance of ``g`` from the round metric.

    ``max(sup|phi|, sup|phi_theta|, sup|Lap_round phi|)``.
    """
    grid = g.grid
    phi = g.phi
    dphi = np.sqrt(grid.sin_sq) * (grid.D @ phi)
    return float(max(np.max(np.abs(phi)), np.max(np.abs(dphi)),
                     np.max(np.abs(_round_laplacian(grid, phi)))))


def conformal_from_warped(g, tol=1e-13, max_iter=60):
    """Isothermal chart: a conformal metric isometric to the warped ``g``.

    Solves ``sqrt(A/B)(X) dX / (1 - X^2) = dx / (1 - x^2)`` for the profile
    diffeo ``X(x)``, normalized by ``X(0) = 0``; the leftover Moebius freedom
    is fixed by that choice. Returns ``(metric, diffeo)``.
    """
    if isinstance(g, ConformalMetric):
        return g, ProfileDiffeo.identity(g.grid)
    grid = g.grid
    r = np.sqrt(g.A / g.B)
    # Legendre coefficients of the smooth part by Gauss quadrature
    w = grid.weights / (2.0 * np.pi)
    h = (r - 1.0) / grid.sin_sq
    V = np.polynomial.legendre.legvander(grid.x, grid.n - 1)
    coef = (V.T @ (w * h)) * (2.0 * np.arange(grid.n) + 1.0) / 2.0
    G = np.polynomial.legendre.Legendre(coef).integ(lbnd=0.0)
    z0 = np.arctanh(grid.x)
    z = z0.copy()
    for _ in range(max_iter):
        X = np.tanh(z)
        F = z + G(X) - z0
        z = z - F / grid.interpolate(r, X)
        if np.max(np.abs(F)) < tol:
            break
    else:
        raise DomainError("isothermal coordinate solve did not converge")
    X = np.tanh(z)
    dX = (1.0 - X**2) / (grid.sin_sq * grid.interpolate(r, X))
    diffeo = ProfileDiffeo(grid, X, dX)
    pulled = pullback_by_profile_diffeo(g, diffeo)
    return ConformalMetric(grid, 0.5 * np.log(np.sqrt(pulled.A * pulled.B))), diffeo
