"""Classical ray quadratures for radially symmetric conformal media.

For F = |v| / c(|x|) on the unit disc or ball, rays conserve the angular
momentum p = u(r) sin(alpha) with u(r) = r / c(r), turn where u(r) = p, and
satisfy

    d theta / dr = +- p / (r sqrt(u^2 - p^2)),
    d t     / dr = +- (u^2 / r) / sqrt(u^2 - p^2).

These reduce two-point problems to one-dimensional quadratures, which makes
them independent cross-checks for the geodesic integrator and fast paths
for distances to the boundary.  The sqrt singularity at the turning radius
is removed by the substitution r = r_t + xi^2.  All of this assumes the
monotonicity u' > 0 (no trapped rays); callers should gate on that.
"""

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DistanceError

_QUAD_EPS = 1e-11


def u_of_r(profile, r):
    return np.asarray(r) / profile(r)


def turning_radius(profile, p, r_max=1.0):
    """Radius where u(r) = p; requires 0 < p < u(r_max)."""
    if not 0.0 < p < float(u_of_r(profile, r_max)):
        raise ValueError("impact parameter outside (0, u(r_max))")
    return brentq(lambda r: float(u_of_r(profile, r)) - p, 1e-12, r_max, xtol=1e-14)


def _branch(profile, p, r_lo, r_hi, from_turning):
    """One-way (angle, time) integrals on [r_lo, r_hi], ascending in r.

    from_turning marks r_lo as the turning radius, where the integrand has
    an inverse-sqrt singularity that the xi substitution removes.
    """
    if r_hi <= r_lo:
        return 0.0, 0.0

    def raw_angle(r):
        u = float(u_of_r(profile, r))
        return p / (r * np.sqrt(max(u * u - p * p, 0.0) + 1e-300))

    def raw_time(r):
        u = float(u_of_r(profile, r))
        return (u * u / r) / np.sqrt(max(u * u - p * p, 0.0) + 1e-300)

    if not from_turning:
        ang = quad(raw_angle, r_lo, r_hi, epsabs=_QUAD_EPS, epsrel=_QUAD_EPS, limit=200)[0]
        tim = quad(raw_time, r_lo, r_hi, epsabs=_QUAD_EPS, epsrel=_QUAD_EPS, limit=200)[0]
        return ang, tim

    span = r_hi - r_lo

    def sub_angle(xi):
        return raw_angle(r_lo + xi * xi) * 2.0 * xi

    def sub_time(xi):
        return raw_time(r_lo + xi * xi) * 2.0 * xi

    ang = quad(sub_angle, 0.0, np.sqrt(span), epsabs=_QUAD_EPS, epsrel=_QUAD_EPS, limit=200)[0]
    tim = quad(sub_time, 0.0, np.sqrt(span), epsabs=_QUAD_EPS, epsrel=_QUAD_EPS, limit=200)[0]
    return ang, tim


def chord_angle_time(profile, p, r0=1.0):
    """Opening angle and travel time for a full chord entering at radius r0.

    The ray enters with impact parameter p >= 0, descends to the turning
    radius, and returns to r0.  p = 0 is the diametral ray (angle pi).
    """
    if p == 0.0:
        t = quad(lambda r: 1.0 / float(profile(r)), 0.0, r0, epsabs=_QUAD_EPS, epsrel=_QUAD_EPS)[0]
        return np.pi, 2.0 * t
    rt = turning_radius(profile, p, r_max=r0)
    ang, tim = _branch(profile, p, rt, r0, from_turning=True)
    return 2.0 * ang, 2.0 * tim


def boundary_time(profile, r, r0=1.0):
    """Travel time along the radial segment from radius r to radius r0.

    Radial lines are geodesics of the medium; under the no-trapping
    monotonicity this is the distance from the boundary sphere.
    """
    r = float(r)
    if r >= r0:
        return 0.0
    return quad(lambda s: 1.0 / float(profile(s)), r, r0, epsabs=_QUAD_EPS, epsrel=_QUAD_EPS)[0]


def center_time(profile, r0=1.0):
    return boundary_time(profile, 0.0, r0=r0)


def entry_angle_of_p(profile, p, r0=1.0):
    """Angle between the inward normal and the entering ray at radius r0."""
    return float(np.arcsin(np.clip(p / float(u_of_r(profile, r0)), -1.0, 1.0)))


def chord_angle_max(profile, r0=1.0, n_grid=400):
    """Max opening angle over impact parameters; > pi signals winding."""
    u0 = float(u_of_r(profile, r0))
    ps = np.linspace(1e-6, u0 * (1 - 1e-9), n_grid)
    best_p, best_a = 0.0, np.pi
    for p in ps:
        a, _ = chord_angle_time(profile, float(p), r0=r0)
        if a > best_a:
            best_a, best_p = a, float(p)
    return best_a, best_p


def solve_chord_for_angle(profile, target_angle, r0=1.0, n_grid=400):
    """Impact parameters whose chord opening angle equals the target.

    Scans a p grid for sign changes of angle(p) - target and refines each
    bracket; returns a list of (p, time).  Multiple roots occur for winding
    profiles.
    """
    u0 = float(u_of_r(profile, r0))
    ps = np.linspace(1e-6, u0 * (1 - 1e-9), n_grid)
    angs = np.array([chord_angle_time(profile, float(p), r0=r0)[0] for p in ps])
    vals = angs - target_angle
    out = []
    for i in range(len(ps) - 1):
        if vals[i] == 0.0:
            p = float(ps[i])
            out.append((p, chord_angle_time(profile, p, r0=r0)[1]))
        elif vals[i] * vals[i + 1] < 0.0:
            p = brentq(
                lambda q: chord_angle_time(profile, q, r0=r0)[0] - target_angle,
                float(ps[i]),
                float(ps[i + 1]),
                xtol=1e-13,
            )
            out.append((p, chord_angle_time(profile, p, r0=r0)[1]))
    return out


def same_boundary_distance(profile, dtheta, r0=1.0):
    """Distance between boundary points separated by angle dtheta.

    Minimizes travel time over chords realizing the separation through
    either arc.  Raises if no chord matches (should not happen for
    monotone media and dtheta in (0, pi]).
    """
    dtheta = float(dtheta) % (2 * np.pi)
    times = []
    for target in (dtheta, 2 * np.pi - dtheta):
        for _, t in solve_chord_for_angle(profile, target, r0=r0):
            times.append(t)
    # the diametral ray handles target exactly pi
    if abs(dtheta - np.pi) < 1e-12:
        times.append(chord_angle_time(profile, 0.0, r0=r0)[1])
    if not times:
        raise DistanceError(f"no chord realizes boundary separation {dtheta}")
    return min(times)


def point_to_point_time(profile, r1, r2, dtheta, n_grid=600):
    """Travel time between interior points (r1, 0) and (r2, dtheta).

    Scans the impact parameter for paths connecting the radii with the
    given angular separation, allowing one turning point below min(r1, r2),
    and returns the minimal time.  Points must be off-center.
    """
    r_lo, r_hi = (r1, r2) if r1 <= r2 else (r2, r1)
    if r_lo <= 0.0:
        # one endpoint at the center: the radial segment is the geodesic
        return quad(
            lambda s: 1.0 / float(profile(s)), 0.0, r_hi, epsabs=_QUAD_EPS, epsrel=_QUAD_EPS
        )[0]
    dtheta = abs(float(dtheta)) % (2 * np.pi)
    dtheta = min(dtheta, 2 * np.pi - dtheta)
    u_lo = float(u_of_r(profile, r_lo))

    def angle_time(p):
        if p < 1e-12:
            tim = quad(
                lambda s: 1.0 / float(profile(s)), r_lo, r_hi, epsabs=_QUAD_EPS, epsrel=_QUAD_EPS
            )[0]
            return 0.0, tim
        if p < u_lo:
            a, t = _branch(profile, p, r_lo, r_hi, from_turning=False)
            return a, t
        return None, None

    def angle_time_turning(p):
        if not 0.0 < p < u_lo:
            return None, None
        rt = turning_radius(profile, p, r_max=r_lo)
        a1, t1 = _branch(profile, p, rt, r_lo, from_turning=True)
        a2, t2 = _branch(profile, p, rt, r_hi, from_turning=True)
        return a1 + a2, t1 + t2

    candidates = []
    ps = np.linspace(0.0, u_lo * (1 - 1e-9), n_grid)
    for branch in (angle_time, angle_time_turning):
        prev = None
        for p in ps:
            a, t = branch(float(p))
            if a is None:
                prev = None
                continue
            if prev is not None:
                (p0, a0) = prev
                if (a0 - dtheta) * (a - dtheta) <= 0.0 and a0 != a:
                    # secant refinement inside the bracket
                    for _ in range(60):
                        pm = p0 + (dtheta - a0) * (p - p0) / (a - a0)
                        pm = min(max(pm, min(p0, p)), max(p0, p))
                        am, tm = branch(pm)
                        if abs(am - dtheta) < 1e-11:
                            break
                        if (a0 - dtheta) * (am - dtheta) <= 0.0:
                            p, a = pm, am
                        else:
                            p0, a0 = pm, am
                    candidates.append(tm)
            prev = (float(p), a)
    if not candidates:
        raise DistanceError(
            f"no radial-medium path found for radii ({r1}, {r2}), angle {dtheta}"
        )
    return min(candidates)
