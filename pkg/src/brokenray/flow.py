"""Two-point and point-to-boundary problems for the geodesic flow.

Everything here shoots rays: distances come from multistart shooting with
sign-change bracketing (planar) or simplex descent on the miss (higher
dimensions), cut values from bisection on the minimality predicate
d(x, gamma(t)) = t, and boundary distances from either closed radial
quadratures, the Euclidean chart, or a fan of rays.  Radial fast paths are
used only for media where radial segments are minimizing (monotone r/c);
the generic routes stay available for cross-checks.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from . import radial
from .errors import DistanceError
from .geodesics import BOUNDARY_EXIT, integrate_geodesic
from .domain import inward_normal

_MISS_ACCEPT = 1e-6


def suggest_t_cap(model, domain, factor=4.0, seed=0):
    """Travel-time cap from the chart diameter and the peak slowness."""
    rng = np.random.default_rng(seed)
    pts = domain.sample_interior(rng, 24)
    _, s_max = model.slowness_bounds(pts)
    return factor * domain.chart_diameter() * s_max


def trace(model, domain, x, v, t_cap=None, sample_ds=None, rtol=1e-9, atol=1e-11):
    """Integrate the unit-speed ray from (x, v) until exit or cap."""
    if t_cap is None:
        t_cap = suggest_t_cap(model, domain)
    if sample_ds is None:
        sample_ds = 0.01 * domain.chart_diameter()
    return integrate_geodesic(
        model, domain, x, model.unit_vector(x, v), t_cap, sample_ds, rtol=rtol, atol=atol
    )


def exit_time(model, domain, x, v, t_cap=None, **kw):
    """Exit time of the ray from (x, v), or None if capped."""
    return trace(model, domain, x, v, t_cap=t_cap, **kw).exit_time


def _closest_approach(path, y):
    """(t, miss) of the nearest sampled-and-refined point of the path to y."""
    d = np.linalg.norm(path.x - y, axis=1)
    i = int(np.argmin(d))
    lo = path.t[max(i - 1, 0)]
    hi = path.t[min(i + 1, len(path.t) - 1)]
    if hi <= lo:
        return float(path.t[i]), float(d[i])
    res = minimize_scalar(
        lambda t: float(np.linalg.norm(path.position(t) - y)),
        bounds=(float(lo), float(hi)),
        method="bounded",
        options={"xatol": 1e-13},
    )
    t_star, m_star = float(res.x), float(res.fun)
    if d[i] < m_star:
        return float(path.t[i]), float(d[i])
    return t_star, m_star


def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


@dataclass
class Connection:
    """A geodesic from x hitting y: direction, travel time, residual miss."""

    direction: np.ndarray
    time: float
    miss: float


def _shoot_2d(model, domain, x, y, phi, t_cap, ds):
    u = model.unit_vector(x, np.array([np.cos(phi), np.sin(phi)]))
    path = integrate_geodesic(model, domain, x, u, t_cap, ds)
    t_star, miss = _closest_approach(path, y)
    w = y - path.position(t_star)
    v = path.velocity(t_star)
    v = v / np.linalg.norm(v)
    signed = _cross2(v, w)
    return u, t_star, miss, signed


def _connections_2d(model, domain, x, y, phis, t_cap, ds, miss_gate):
    vals = [_shoot_2d(model, domain, x, y, float(p), t_cap, ds) for p in phis]
    out = []
    for k in range(len(phis) - 1):
        s0, s1 = vals[k][3], vals[k + 1][3]
        m0, m1 = vals[k][2], vals[k + 1][2]
        if s0 == 0.0 and m0 < _MISS_ACCEPT:
            out.append(Connection(vals[k][0], vals[k][1], m0))
            continue
        if s0 * s1 < 0.0 and m0 < miss_gate and m1 < miss_gate:
            phi_star = brentq(
                lambda p: _shoot_2d(model, domain, x, y, p, t_cap, ds)[3],
                float(phis[k]),
                float(phis[k + 1]),
                xtol=1e-12,
            )
            u, t_star, miss, _ = _shoot_2d(model, domain, x, y, phi_star, t_cap, ds)
            if miss < _MISS_ACCEPT:
                out.append(Connection(u, t_star, miss))
    return out


def _connections_nd(model, domain, x, y, t_cap, ds, n_ring=6, spreads=(0.35, 0.9)):
    chord = y - x
    chord_dir = chord / np.linalg.norm(chord)
    # orthonormal complement of the chord direction
    basis = []
    for k in range(len(x)):
        e = np.zeros(len(x))
        e[k] = 1.0
        t = e - (e @ chord_dir) * chord_dir
        for b in basis:
            t -= (t @ b) * b
        if np.linalg.norm(t) > 1e-8:
            basis.append(t / np.linalg.norm(t))
        if len(basis) == len(x) - 1:
            break
    frame = np.asarray(basis)

    def miss_of(xi):
        u = model.unit_vector(x, chord_dir + xi @ frame)
        path = integrate_geodesic(model, domain, x, u, t_cap, ds)
        t_star, miss = _closest_approach(path, y)
        return miss, t_star, u

    starts = [np.zeros(len(x) - 1)]
    for r in spreads:
        for j in range(n_ring):
            a = 2 * np.pi * j / n_ring
            xi = np.zeros(len(x) - 1)
            xi[0] = r * np.cos(a)
            if len(xi) > 1:
                xi[1] = r * np.sin(a)
            starts.append(xi)
    out = []
    for xi0 in starts:
        res = minimize(
            lambda xi: miss_of(xi)[0],
            xi0,
            method="Nelder-Mead",
            options={"xatol": 1e-11, "fatol": 1e-12, "maxiter": 220},
        )
        miss, t_star, u = miss_of(res.x)
        if miss < _MISS_ACCEPT:
            if not any(abs(c.time - t_star) < 1e-7 for c in out):
                out.append(Connection(u, t_star, miss))
            if np.linalg.norm(xi0) == 0.0:
                break  # chord start hit; remaining starts find longer rays
    return out


def connections(model, domain, x, y, t_cap=None, sample_ds=None, full_scan=False):
    """All shooting connections found from x to y (shortest first)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if t_cap is None:
        t_cap = suggest_t_cap(model, domain)
    if sample_ds is None:
        sample_ds = 0.01 * domain.chart_diameter()
    diam = domain.chart_diameter()
    if model.dim == 2:
        chord_phi = float(np.arctan2(y[1] - x[1], y[0] - x[0]))
        phis = chord_phi + np.linspace(-1.15, 1.15, 10)
        found = _connections_2d(model, domain, x, y, phis, t_cap, sample_ds, 0.6 * diam)
        if not found or full_scan:
            phis = chord_phi + np.linspace(-np.pi, np.pi, 25)
            found += _connections_2d(model, domain, x, y, phis, t_cap, sample_ds, 0.75 * diam)
        dedup = []
        for c in sorted(found, key=lambda c: c.time):
            if not dedup or all(abs(c.time - d.time) > 1e-7 for d in dedup):
                dedup.append(c)
        return dedup
    return sorted(_connections_nd(model, domain, x, y, t_cap, sample_ds), key=lambda c: c.time)


def distance(model, domain, x, y, t_cap=None, full_scan=False, sample_ds=None):
    """Geodesic distance d(x, y) by multistart shooting.

    Euclidean models short-circuit to the chart distance (the domain is
    convex).  Raises DistanceError when no shot comes close enough.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if model.kind == "euclidean":
        return float(np.linalg.norm(x - y))
    if np.linalg.norm(x - y) < 1e-14:
        return 0.0
    found = connections(model, domain, x, y, t_cap=t_cap, full_scan=full_scan, sample_ds=sample_ds)
    if not found:
        raise DistanceError(f"no connecting geodesic found between {x} and {y}")
    return float(found[0].time)


# ----------------------------------------------------------------------
# boundary distances


def distances_to_boundary(model, domain, x, atlas, target_idx=None, n_fan=32, t_cap=None):
    """d(x, z_j) for boundary grid points z_j, via one shared ray fan (2-d).

    Shoots n_fan rays from x, brackets each target's boundary parameter
    between exit parameters of adjacent fan rays, and refines by root
    finding in the shooting angle.  Assumes first-hit rays are minimizing,
    which holds in the unique-geodesic regimes this is used in.
    """
    x = np.asarray(x, dtype=float)
    if model.dim != 2:
        raise NotImplementedError("fan boundary distances are planar only")
    if target_idx is None:
        target_idx = np.arange(len(atlas))
    if model.kind == "euclidean":
        return np.linalg.norm(atlas.points[target_idx] - x, axis=1)
    if t_cap is None:
        t_cap = suggest_t_cap(model, domain)
    ds = 0.01 * domain.chart_diameter()

    def shoot(phi):
        u = model.unit_vector(x, np.array([np.cos(phi), np.sin(phi)]))
        path = integrate_geodesic(model, domain, x, u, t_cap, ds)
        if path.termination != BOUNDARY_EXIT:
            return None, None
        z = path.position(path.exit_time)
        th = float(np.arctan2(z[1] / domain.semi_axes[1], z[0] / domain.semi_axes[0]))
        return th, float(path.exit_time)

    phis = np.linspace(0.0, 2 * np.pi, n_fan, endpoint=False)
    fan = [shoot(float(p)) for p in phis]

    def wrap(a):
        return (a + np.pi) % (2 * np.pi) - np.pi

    out = np.full(len(target_idx), np.nan)
    for col, j in enumerate(target_idx):
        theta_j = float(atlas.params[j][0])
        best = np.inf
        for k in range(n_fan):
            k2 = (k + 1) % n_fan
            th0, t0 = fan[k]
            th1, t1 = fan[k2]
            if th0 is None or th1 is None:
                continue
            d0, d1 = wrap(th0 - theta_j), wrap(th1 - theta_j)
            if abs(d0) > 1.2 or abs(d1) > 1.2 or d0 * d1 > 0.0:
                continue
            lo = float(phis[k])
            hi = float(phis[k2]) if k2 else 2 * np.pi
            try:
                phi_star = brentq(
                    lambda p: wrap(shoot(p)[0] - theta_j), lo, hi, xtol=1e-11
                )
            except ValueError:
                continue
            _, t_star = shoot(phi_star)
            if t_star is not None:
                best = min(best, t_star)
        if not np.isfinite(best):
            raise DistanceError(f"no ray from {x} reaches boundary node {j}")
        out[col] = best
    return out


def boundary_distance(model, domain, x, method="auto", atlas=None, t_cap=None):
    """Distance from x to the boundary leaf f = 0.

    auto: Euclidean chart geometry when exact, radial quadrature for
    radially symmetric conformal media on the unit ball, otherwise a
    minimization over boundary points of the shooting distance.
    """
    x = np.asarray(x, dtype=float)
    if method == "auto":
        if model.kind == "euclidean":
            method = "chart"
        elif (
            model._riemannian
            and model.eps == 0.0
            and domain.is_ball
            and abs(domain.semi_axes[0] - 1.0) < 1e-12
        ):
            method = "radial"
        else:
            method = "generic"
    if method == "chart":
        _, d = domain.chart_nearest_boundary(x)
        return float(d)
    if method == "radial":
        return float(radial.boundary_time(model.profile, float(np.linalg.norm(x))))
    if atlas is None:
        atlas = domain.boundary_atlas(48 if domain.dim == 2 else (12, 24))
    z0, _ = domain.chart_nearest_boundary(x)
    if domain.dim == 2:
        th0 = float(np.arctan2(z0[1] / domain.semi_axes[1], z0[0] / domain.semi_axes[0]))
        res = minimize_scalar(
            lambda th: distance(
                model, domain, domain.boundary_point(np.asarray(th)), x, t_cap=t_cap
            ),
            bounds=(th0 - 0.8, th0 + 0.8),
            method="bounded",
            options={"xatol": 1e-7},
        )
        return float(res.fun)
    lat0 = float(np.arcsin(np.clip(z0[2] / domain.semi_axes[2], -1, 1)))
    lon0 = float(np.arctan2(z0[1] / domain.semi_axes[1], z0[0] / domain.semi_axes[0]))
    res = minimize(
        lambda p: distance(model, domain, domain.boundary_point(p), x, t_cap=t_cap),
        np.array([lat0, lon0]),
        method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": 1e-10, "maxiter": 60},
    )
    return float(res.fun)


# ----------------------------------------------------------------------
# cut values


@dataclass
class CutResult:
    value: float
    reached_end: bool  # minimality held up to exit (or cap); no cut inside


def _bisect_cut(predicate_minimal, t_end, bisect_tol):
    if predicate_minimal(t_end * (1.0 - 1e-9)):
        return CutResult(t_end, True)
    lo = 0.02 * t_end
    tries = 0
    while not predicate_minimal(lo):
        lo *= 0.5
        tries += 1
        if tries > 8:
            return CutResult(0.0, False)
    hi = t_end
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if predicate_minimal(mid):
            lo = mid
        else:
            hi = mid
    return CutResult(0.5 * (lo + hi), False)


def cut_distance(model, domain, x, v, bisect_tol=1e-4, gap_tol=3e-5, t_cap=None):
    """Largest t with d(x, gamma(t)) = t along the ray from (x, v).

    Returns the exit time with reached_end=True when the whole ray inside
    the domain is minimizing.  gap_tol absorbs solver slack in the
    minimality comparison.
    """
    path = trace(model, domain, x, v, t_cap=t_cap)
    t_end = path.t_end

    def minimal(t):
        d = distance(model, domain, x, path.position(t), full_scan=True)
        return d >= t - max(gap_tol, 1e-6 * t)

    return _bisect_cut(minimal, t_end, bisect_tol)


def boundary_cut_distance(
    model, domain, z, nu=None, bisect_tol=1e-4, gap_tol=3e-5, t_cap=None, bd_method="auto"
):
    """Largest t with d(boundary, gamma_nu(t)) = t along the inward normal."""
    z = np.asarray(z, dtype=float)
    if nu is None:
        nu = inward_normal(model, domain, z)
    path = trace(model, domain, z, nu, t_cap=t_cap)
    t_end = path.t_end

    def minimal(t):
        d = boundary_distance(model, domain, path.position(t), method=bd_method)
        return d >= t - max(gap_tol, 1e-6 * t)

    return _bisect_cut(minimal, t_end, bisect_tol)


# ----------------------------------------------------------------------
# global behavior probes


@dataclass
class TrappingReport:
    ok: bool
    max_exit_time: float
    n_probes: int
    witnesses: list  # (x, v) states that failed to exit before the cap


def nontrapping_check(model, domain, n_probes=48, t_cap=None, seed=0):
    """Integrate random interior states both ways; all must leave in time."""
    rng = np.random.default_rng(seed)
    if t_cap is None:
        t_cap = suggest_t_cap(model, domain, factor=6.0)
    pts = domain.sample_interior(rng, n_probes)
    dirs = rng.standard_normal((n_probes, domain.dim))
    worst = 0.0
    witnesses = []
    for x, w in zip(pts, dirs):
        v = np.asarray(model.unit_vector(x, w))
        for sgn in (1.0, -1.0):
            tau = exit_time(model, domain, x, sgn * v, t_cap=t_cap)
            if tau is None:
                witnesses.append((x.copy(), sgn * v))
            else:
                worst = max(worst, tau)
    return TrappingReport(ok=not witnesses, max_exit_time=worst, n_probes=n_probes, witnesses=witnesses)


# ----------------------------------------------------------------------
# transport


def parallel_transport(model, path, v0, t_final=None, rtol=1e-10, atol=1e-12):
    """Transport v0 along a geodesic path via the nonlinear connection.

    Solves V' = -N(x(t), V) x'(t).  The transported vector keeps its
    F-norm exactly in the continuum; the drift of F(x, V) measures the
    numerical error.
    """
    from scipy.integrate import solve_ivp

    if t_final is None:
        t_final = path.t_end

    def rhs(t, V):
        x, xdot = path.state(t)
        N = model.connection(x, V)
        return -N @ xdot

    sol = solve_ivp(
        rhs, (0.0, float(t_final)), np.asarray(v0, dtype=float), method="RK45",
        dense_output=True, rtol=rtol, atol=atol,
    )
    v_end = sol.y[:, -1]
    x0, _ = path.state(0.0)
    x1, _ = path.state(t_final)
    drift = abs(float(model.norm(x1, v_end)) - float(model.norm(x0, np.asarray(v0, dtype=float))))
    return v_end, drift
