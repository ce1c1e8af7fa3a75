"""Convexly foliated chart domains and their boundary geometry.

A domain is an ellipsoid { ||x||_E <= 1 } with ||x||_E^2 = sum (x_i/a_i)^2,
foliated by the level sets of

    f(x) = 1 - ||x||_E,

so f = 0 on the boundary, f > 0 inside, and the leaves f = s are shrunken
copies of the boundary.  A ball of radius R is the special case a_i = R.
The quasi-distance value f(x) doubles as the layer coordinate used by
layer stripping; inner domains are again ellipsoids, with f relabeled
affinely (which leaves the leaf family unchanged).
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .errors import ConfigError, NewtonError

_CENTER_TOL = 1e-14


class FoliatedDomain:
    """Ellipsoidal domain with the shrinking-leaf foliation."""

    def __init__(self, semi_axes):
        self.semi_axes = np.asarray(semi_axes, dtype=float)
        if self.semi_axes.ndim != 1 or self.semi_axes.size < 2:
            raise ConfigError("semi_axes must be a 1-d array of length >= 2")
        if np.any(self.semi_axes <= 0):
            raise ConfigError("semi_axes must be positive")
        self.dim = self.semi_axes.size
        self.is_ball = bool(np.all(self.semi_axes == self.semi_axes[0]))
        self.shape = "ball" if self.is_ball else "ellipsoid"
        self.depth_max = 1.0  # f ranges over [0, 1)

    @classmethod
    def ball(cls, dim, radius=1.0):
        return cls(np.full(dim, float(radius)))

    def spec(self):
        return {"shape": self.shape, "semi_axes": self.semi_axes.tolist()}

    def __repr__(self):
        return f"FoliatedDomain({self.shape}, axes={self.semi_axes.tolist()})"

    # ------------------------------------------------------------------

    def _enorm(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x / self.semi_axes, axis=-1)

    def f(self, x):
        """Foliation function; 0 on the boundary, increasing inward."""
        return 1.0 - self._enorm(x)

    def grad_f(self, x):
        x = np.asarray(x, dtype=float)
        nrm = self._enorm(x)
        scaled = x / self.semi_axes**2
        return -scaled / np.maximum(nrm, _CENTER_TOL)[..., None]

    def hess_f(self, x):
        x = np.asarray(x, dtype=float)
        nrm = np.maximum(self._enorm(x), _CENTER_TOL)
        inv_a2 = self.semi_axes**-2
        scaled = x * inv_a2
        eye = np.diag(inv_a2)
        outer = scaled[..., :, None] * scaled[..., None, :]
        return -(eye / nrm[..., None, None] - outer / nrm[..., None, None] ** 3)

    def contains(self, x, tol=0.0):
        return self.f(x) >= -tol

    def chart_diameter(self):
        return 2.0 * float(np.max(self.semi_axes))

    def shrunk(self, s):
        """Inner domain bounded by the leaf f = s."""
        if not 0.0 < s < 1.0:
            raise ConfigError("strip depth must lie in (0, 1)")
        return FoliatedDomain((1.0 - s) * self.semi_axes)

    # ------------------------------------------------------------------

    def boundary_point(self, params):
        """Chart position of the boundary point with the given parameters.

        2-d: params = theta.  3-d: params = (lat, lon).
        """
        p = np.asarray(params, dtype=float)
        if self.dim == 2:
            th = p[..., 0] if p.ndim and p.shape[-1:] == (1,) else p
            return np.stack(
                [self.semi_axes[0] * np.cos(th), self.semi_axes[1] * np.sin(th)], axis=-1
            )
        if self.dim == 3:
            lat, lon = p[..., 0], p[..., 1]
            cl = np.cos(lat)
            return np.stack(
                [
                    self.semi_axes[0] * cl * np.cos(lon),
                    self.semi_axes[1] * cl * np.sin(lon),
                    self.semi_axes[2] * np.sin(lat),
                ],
                axis=-1,
            )
        raise ConfigError("parametrized boundary implemented for n = 2, 3 only")

    def project_to_boundary(self, x):
        """Radial projection onto f = 0; x must not be the center."""
        x = np.asarray(x, dtype=float)
        nrm = self._enorm(x)
        return x / np.maximum(nrm, _CENTER_TOL)[..., None]

    def chart_nearest_boundary(self, x, n_scan=96):
        """Euclidean-chart nearest boundary point and its distance.

        Scan over the parameter grid plus local refinement; exact for the
        Euclidean metric and a good initializer otherwise.
        """
        x = np.asarray(x, dtype=float)
        if self.is_ball:
            z = self.project_to_boundary(x)
            return z, float(np.linalg.norm(x - z))
        if self.dim == 2:
            th = np.linspace(0.0, 2 * np.pi, n_scan, endpoint=False)
            pts = self.boundary_point(th)
            d2 = np.sum((pts - x) ** 2, axis=-1)
            t0 = th[int(np.argmin(d2))]

            def obj(t):
                p = self.boundary_point(np.asarray(t))
                return float(np.sum((p - x) ** 2))

            res = minimize_scalar(
                obj, bounds=(t0 - 0.3, t0 + 0.3), method="bounded", options={"xatol": 1e-12}
            )
            z = self.boundary_point(np.asarray(res.x))
            return z, float(np.linalg.norm(x - z))
        # 3-d: coarse grid then Nelder-Mead on (lat, lon)
        lat = np.linspace(-np.pi / 2 + 0.05, np.pi / 2 - 0.05, 24)
        lon = np.linspace(0.0, 2 * np.pi, 48, endpoint=False)
        ll = np.stack(np.meshgrid(lat, lon, indexing="ij"), axis=-1).reshape(-1, 2)
        pts = self.boundary_point(ll)
        d2 = np.sum((pts - x) ** 2, axis=-1)
        p0 = ll[int(np.argmin(d2))]
        res = minimize(
            lambda p: float(np.sum((self.boundary_point(p) - x) ** 2)),
            p0,
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-24},
        )
        z = self.boundary_point(res.x)
        return z, float(np.linalg.norm(x - z))

    def sample_interior(self, rng, count, depth_range=(0.02, 0.98)):
        """Uniform-ish interior samples with f inside depth_range."""
        out = []
        lo, hi = depth_range
        while len(out) < count:
            cand = (rng.random((4 * count, self.dim)) * 2.0 - 1.0) * self.semi_axes
            fval = self.f(cand)
            good = cand[(fval > lo) & (fval < hi)]
            out.extend(good[: count - len(out)])
        return np.asarray(out)

    def boundary_atlas(self, resolution):
        """Boundary grid; resolution = n_theta (2-d) or (n_lat, n_lon) (3-d)."""
        if self.dim == 2:
            n_theta = int(resolution)
            if n_theta < 4:
                raise ConfigError("need at least 4 boundary points")
            theta = np.linspace(0.0, 2 * np.pi, n_theta, endpoint=False)
            pts = self.boundary_point(theta)
            # arc-length weights from the parametrization speed
            speed = np.sqrt(
                (self.semi_axes[0] * np.sin(theta)) ** 2
                + (self.semi_axes[1] * np.cos(theta)) ** 2
            )
            w = speed * (2 * np.pi / n_theta)
            return BoundaryAtlas(self, theta[:, None], pts, w)
        if self.dim == 3:
            try:
                n_lat, n_lon = (int(r) for r in resolution)
            except TypeError:
                raise ConfigError("3-d atlas resolution must be (n_lat, n_lon)") from None
            # half-offset latitudes avoid degenerate pole points while
            # keeping every cell weight bounded
            lat = -np.pi / 2 + (np.arange(n_lat) + 0.5) * np.pi / n_lat
            lon = np.arange(n_lon) * 2 * np.pi / n_lon
            ll = np.stack(np.meshgrid(lat, lon, indexing="ij"), axis=-1).reshape(-1, 2)
            pts = self.boundary_point(ll)
            w = np.cos(ll[:, 0]) * (np.pi / n_lat) * (2 * np.pi / n_lon)
            return BoundaryAtlas(self, ll, pts, w)
        raise ConfigError("atlas implemented for n = 2, 3 only")


@dataclass
class BoundaryAtlas:
    """Discrete boundary grid with parameters, chart points and weights."""

    domain: FoliatedDomain
    params: np.ndarray  # (B, n-1)
    points: np.ndarray  # (B, n)
    weights: np.ndarray  # (B,)

    def __len__(self):
        return len(self.points)

    @property
    def spacing(self):
        """Typical chart distance between neighboring grid points."""
        if self.domain.dim == 2:
            return float(np.linalg.norm(self.points[1] - self.points[0]))
        d = self.points - self.points[0]
        d = np.linalg.norm(d[1:], axis=-1)
        return float(np.min(d))

    def nearest_index(self, x):
        d2 = np.sum((self.points - np.asarray(x)) ** 2, axis=-1)
        return int(np.argmin(d2))

    def indices_within(self, i, radius):
        """Grid indices with chart distance to point i below radius."""
        d = np.linalg.norm(self.points - self.points[i], axis=-1)
        return np.nonzero(d <= radius)[0]

    def tangent_frame(self, i):
        """Chart-orthonormal basis of ker(df) at grid point i."""
        g = self.domain.grad_f(self.points[i])
        g = g / np.linalg.norm(g)
        basis = []
        for k in range(self.domain.dim):
            e = np.zeros(self.domain.dim)
            e[k] = 1.0
            t = e - (e @ g) * g
            for b in basis:
                t -= (t @ b) * b
            nrm = np.linalg.norm(t)
            if nrm > 1e-8:
                basis.append(t / nrm)
            if len(basis) == self.domain.dim - 1:
                break
        return np.asarray(basis)


# ----------------------------------------------------------------------
# normals


def inward_normal(model, domain, z, tol=1e-11, max_iter=60, n_restarts=6, seed=0):
    """Finsler inward unit normal at the boundary point z.

    Solves l(nu) = lambda * df(z), F(z, nu) = 1 with lambda > 0 by Newton
    iteration; the Jacobian of the Legendre map is exactly the fundamental
    tensor, so the iteration needs no extra derivatives.  Restarts from
    perturbed initializers if a start fails to converge.
    """
    z = np.asarray(z, dtype=float)
    xi = domain.grad_f(z)  # inward covector direction
    rng = np.random.default_rng(seed)

    def attempt(v0):
        v = model.unit_vector(z, v0)
        lam = 1.0 / float(xi @ v)
        for _ in range(max_iter):
            ell = model.legendre(z, v)
            f2 = float(model.norm_squared(z, v))
            res = np.concatenate([ell - lam * xi, [f2 - 1.0]])
            if np.linalg.norm(res) < tol:
                return v, np.linalg.norm(res)
            g = model.fundamental_tensor(z, v)
            jac = np.zeros((model.dim + 1, model.dim + 1))
            jac[: model.dim, : model.dim] = g
            jac[: model.dim, model.dim] = -xi
            jac[model.dim, : model.dim] = 2.0 * ell
            try:
                step = np.linalg.solve(jac, -res)
            except np.linalg.LinAlgError:
                return None, np.inf
            v = v + step[: model.dim]
            lam = lam + step[model.dim]
            if not np.all(np.isfinite(v)):
                return None, np.inf
        ell = model.legendre(z, v)
        f2 = float(model.norm_squared(z, v))
        res = np.linalg.norm(np.concatenate([ell - lam * xi, [f2 - 1.0]]))
        return (v, res) if res < tol else (None, res)

    best_res = np.inf
    v, res = attempt(xi)
    if v is not None:
        return v
    best_res = min(best_res, res)
    for _ in range(n_restarts):
        v0 = xi + 0.3 * np.linalg.norm(xi) * rng.standard_normal(model.dim)
        v, res = attempt(v0)
        if v is not None:
            return v
        best_res = min(best_res, res)
    raise NewtonError(f"inward normal iteration stalled at {z}", residual=best_res)


def inwardness(model, z, nu, v):
    """<v, nu> in g(nu); positive on the inward half of the unit sphere."""
    return float(model.inner(z, nu, nu, v))


# ----------------------------------------------------------------------
# convexity and profile checks


@dataclass
class ConvexityReport:
    ok: bool
    margin: float  # max of d^2(f o gamma)/dt^2 over samples; negative = convex
    worst_point: np.ndarray
    worst_dir: np.ndarray
    n_samples: int


def check_leaf_convexity(model, domain, s, n_samples=256, seed=0, margin_tol=0.0):
    """Sample tangential second derivatives of f along geodesics on leaf s.

    For each sampled leaf point and F-unit tangent direction v,
    d^2(f o gamma)/dt^2 = v^T Hf v + grad_f . a with a = -2 G(x, v).
    Strict leaf convexity demands a negative value everywhere.
    """
    rng = np.random.default_rng(seed)
    if not 0.0 <= s < 1.0:
        raise ConfigError("leaf level must lie in [0, 1)")
    # sample leaf points by scaling random boundary directions
    raw = rng.standard_normal((n_samples, domain.dim))
    raw /= np.linalg.norm(raw, axis=-1, keepdims=True)
    pts = (1.0 - s) * raw * domain.semi_axes
    worst = -np.inf
    worst_x = worst_v = None
    for x in pts:
        grad = domain.grad_f(x)
        hess = domain.hess_f(x)
        v = rng.standard_normal(domain.dim)
        v -= (v @ grad) / (grad @ grad) * grad  # chart-tangent to the leaf
        nrm = np.linalg.norm(v)
        if nrm < 1e-10:
            continue
        v = np.asarray(model.unit_vector(x, v))
        acc = model.acceleration(x, v)
        second = float(v @ hess @ v + grad @ acc)
        if second > worst:
            worst, worst_x, worst_v = second, x, v
    return ConvexityReport(
        ok=worst < margin_tol,
        margin=worst,
        worst_point=worst_x,
        worst_dir=worst_v,
        n_samples=n_samples,
    )


@dataclass
class HerglotzReport:
    ok: bool
    margin: float  # min of d/dr (r / c)
    r_grid: np.ndarray
    values: np.ndarray


def herglotz_check(profile, r_grid=None, r_max=1.0):
    """Evaluate d/dr (r / c(r)) on a grid; positive everywhere = pass."""
    if r_grid is None:
        r_grid = np.linspace(1e-4, r_max, 512)
    r = np.asarray(r_grid, dtype=float)
    c = profile(r)
    dc = profile.deriv(r)
    vals = (c - r * dc) / c**2
    return HerglotzReport(ok=bool(np.all(vals > 0.0)), margin=float(vals.min()), r_grid=r, values=vals)
