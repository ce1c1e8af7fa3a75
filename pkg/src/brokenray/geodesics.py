"""Unit-speed geodesic integration inside a foliated domain.

Geodesics solve x'' = -2 G(x, x') with G the spray of the model.  Rays are
integrated until they cross the boundary leaf f = 0 (detected by a terminal
event and refined by the solver's own root finder), until a time cap, or
until the integrator gives up.  The dense solution is kept on the returned
path so later stages can query states at arbitrary times without
re-integrating.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import IntegrationError

BOUNDARY_EXIT = "boundary_exit"
TIME_CAP = "time_cap"


@dataclass
class GeodesicPath:
    """Sampled geodesic with its dense interpolant."""

    t: np.ndarray  # (S,)
    x: np.ndarray  # (S, n)
    v: np.ndarray  # (S, n)
    termination: str  # BOUNDARY_EXIT or TIME_CAP
    exit_time: float | None
    sol: object = field(repr=False)  # OdeSolution over [0, t_end]

    @property
    def t_end(self):
        return float(self.t[-1])

    def state(self, t):
        """(x, v) at time t (scalar or array), from the dense solution."""
        y = self.sol(np.asarray(t, dtype=float))
        n = self.x.shape[1]
        return np.moveaxis(y[:n], 0, -1), np.moveaxis(y[n:], 0, -1)

    def position(self, t):
        return self.state(t)[0]

    def velocity(self, t):
        return self.state(t)[1]


def integrate_geodesic(
    model,
    domain,
    x0,
    v0,
    t_cap,
    sample_ds,
    rtol=1e-10,
    atol=1e-12,
):
    """Integrate a unit-speed geodesic from (x0, v0) until exit or t_cap.

    The caller is expected to pass an F-unit v0; speed is preserved by the
    flow, so drift in F(x, v) along the samples measures integration error
    (see speed_drift).
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    n = x0.size

    def rhs(t, y):
        x, v = y[:n], y[n:]
        return np.concatenate([v, model.acceleration(x, v)])

    def exit_event(t, y):
        return domain.f(y[:n])

    exit_event.terminal = True
    exit_event.direction = -1  # only outward crossings; ignores on-boundary starts

    sol = solve_ivp(
        rhs,
        (0.0, float(t_cap)),
        np.concatenate([x0, v0]),
        method="RK45",
        dense_output=True,
        events=exit_event,
        rtol=rtol,
        atol=atol,
        max_step=0.1 * domain.chart_diameter(),
    )
    if sol.status == -1:
        raise IntegrationError(f"geodesic integration failed: {sol.message}")

    if sol.status == 1 and len(sol.t_events[0]):
        t_end = float(sol.t_events[0][0])
        termination = BOUNDARY_EXIT
        exit_time = t_end
    else:
        t_end = float(t_cap)
        termination = TIME_CAP
        exit_time = None

    ts = np.arange(0.0, t_end, float(sample_ds))
    ts = np.append(ts, t_end)
    y = sol.sol(ts)
    return GeodesicPath(
        t=ts,
        x=y[:n].T.copy(),
        v=y[n:].T.copy(),
        termination=termination,
        exit_time=exit_time,
        sol=sol.sol,
    )


def speed_drift(model, path):
    """Max deviation of F(x, v) from 1 along the stored samples."""
    speeds = model.norm(path.x, path.v)
    return float(np.max(np.abs(speeds - 1.0)))


def leaf_crossings(path, domain, level, tol=1e-12):
    """Times where f(gamma(t)) crosses the given leaf level.

    Returns a list of (t, direction) with direction +1 when f is increasing
    (the ray enters the inner domain) and -1 when it leaves.  The foliation
    keeps f unimodal along geodesics, so at most two crossings occur; the
    sampled grid is fine enough that none are skipped away from tangency.
    """
    fvals = domain.f(path.x) - level
    out = []
    for i in range(len(fvals) - 1):
        a, b = fvals[i], fvals[i + 1]
        if a == 0.0:
            out.append((float(path.t[i]), 1 if b > a else -1))
            continue
        if a * b < 0.0:
            t_lo, t_hi = float(path.t[i]), float(path.t[i + 1])
            t_star = brentq(
                lambda t: float(domain.f(path.position(t)) - level), t_lo, t_hi, xtol=tol
            )
            out.append((t_star, 1 if b > a else -1))
    if fvals[-1] == 0.0:
        out.append((float(path.t[-1]), -1))
    # dedupe near-identical roots from sample points sitting on the leaf
    dedup = []
    for t, d in out:
        if not dedup or t - dedup[-1][0] > 10 * tol:
            dedup.append((t, d))
    return dedup
