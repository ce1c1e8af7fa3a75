"""Boundary determination pipeline driven by the scattering relation.

Every operation here that claims to work "from the relation" consumes a
RelationView (ids, total times, exit times, boundary geometry) and nothing
else; forward constructions and verification helpers take the model
explicitly and exist to be compared against.

The chain: detect families of focusing directions around a boundary point,
scan their existence threshold to recover the boundary cut distance, read
distances to boundary points off the relation via the first-meeting
infimum, assemble boundary distance tables, and compare tables as
non-indexed row sets.  Layer stripping converts the relation to an inner
domain once the outer slab is trusted, and the Bolker probe builds the
counterexample pair of broken rays with identical boundary data.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import radial
from .errors import ConfigError, CoverageError, DistanceError
from .flow import connections, suggest_t_cap, trace
from .geodesics import integrate_geodesic, leaf_crossings
from .scatter import RelationView, ScatterRelation, scattered_ray_grid

FORWARD_BUILT = "forward_built"
RELATION_DETECTED = "relation_detected"


@dataclass
class FocusingFamily:
    """Boundary directions and times focusing at one interior point."""

    z0_foot: int
    t0: float
    provenance: str
    foot_ids: np.ndarray  # (M,)
    foot_points: np.ndarray  # (M, n)
    ray_ids: np.ndarray  # (M,) grid ids, -1 for forward-built members
    directions: np.ndarray  # (M, n)
    times: np.ndarray  # (M,)
    coverage: float
    cap_radius: float
    grad_residual: float = np.nan  # discrete |dt| at z0, planar grids only
    consistency_residual: float = np.nan
    times_raw: np.ndarray = None  # pre-fit member times, detection only
    cap_quadratic: float = np.nan  # |xi|^2/2 coefficient of the cap fit
    fit_rms: float = np.nan
    evidence: float = np.nan  # transversality-weighted kept-row mass

    def __len__(self):
        return len(self.times)


# ----------------------------------------------------------------------
# forward construction (model side)


def build_focusing_family_forward(model, domain, x, rho_U, atlas, t_cap=None):
    """Family focusing at a given interior point, built by shooting.

    Members are the minimizing geodesics from x to boundary grid points
    within rho_U of the nearest one; V(z) is the reversed arrival
    direction, t(z) the travel time.
    """
    x = np.asarray(x, dtype=float)
    if t_cap is None:
        t_cap = suggest_t_cap(model, domain)
    conns = {}
    for i in range(len(atlas)):
        z = atlas.points[i]
        found = connections(model, domain, x, z, t_cap=t_cap)
        if found:
            conns[i] = found[0]
    if not conns:
        raise DistanceError("no boundary connections found from the interior point")
    i_near = min(conns, key=lambda i: conns[i].time)
    z_near = atlas.points[i_near]
    foot_ids, dirs, times = [], [], []
    for i, c in conns.items():
        if np.linalg.norm(atlas.points[i] - z_near) > rho_U:
            continue
        path = integrate_geodesic(
            model, domain, x, c.direction, c.time, max(c.time / 64.0, 1e-6)
        )
        v_arr = path.velocity(c.time)
        z = atlas.points[i]
        V = np.asarray(model.unit_vector(z, -v_arr))
        foot_ids.append(i)
        dirs.append(V)
        times.append(c.time)
    order = np.argsort(foot_ids)
    foot_ids = np.asarray(foot_ids)[order]
    n_cap = int(np.sum(np.linalg.norm(atlas.points - z_near, axis=1) <= rho_U))
    return FocusingFamily(
        z0_foot=i_near,
        t0=float(conns[i_near].time),
        provenance=FORWARD_BUILT,
        foot_ids=foot_ids,
        foot_points=atlas.points[foot_ids],
        ray_ids=np.full(len(foot_ids), -1, dtype=np.int64),
        directions=np.asarray(dirs)[order],
        times=np.asarray(times)[order],
        coverage=len(foot_ids) / max(n_cap, 1),
        cap_radius=float(rho_U),
    )


# ----------------------------------------------------------------------
# relation-side detection


def _grad_residual(grid, z0_foot, foot_ids, times):
    """Planar discrete |dt/d(arc)| at the center from the two flanks."""
    if grid.dim != 2 or grid.atlas is None:
        return np.nan
    z0 = grid.foot_points[z0_foot]
    t_by_foot = dict(zip(foot_ids.tolist(), times.tolist()))
    n_b = len(grid.foot_points)
    left = right = None
    for step in range(1, n_b // 2):
        if right is None and (z0_foot + step) % n_b in t_by_foot:
            right = (z0_foot + step) % n_b
        if left is None and (z0_foot - step) % n_b in t_by_foot:
            left = (z0_foot - step) % n_b
        if left is not None and right is not None:
            break
    if left is None or right is None:
        return np.nan
    arc = np.linalg.norm(grid.foot_points[right] - z0) + np.linalg.norm(
        grid.foot_points[left] - z0
    )
    return abs(t_by_foot[right] - t_by_foot[left]) / arc


def _cap_coords(grid, z0_foot, foot_points):
    """Tangent coordinates of cap footpoints relative to the center."""
    u = foot_points - grid.foot_points[z0_foot]
    if grid.atlas is not None:
        frame = grid.atlas.tangent_frame(int(z0_foot))
    else:
        # scattered grid: principal directions of the cap stand in
        c = u - u.mean(axis=0)
        _, _, vt = np.linalg.svd(c, full_matrices=False)
        frame = vt[: grid.dim - 1]
    return u @ frame.T


def _cap_model(xi):
    """Design matrix for member times over the cap, and the curvature index.

    The family focuses on the inward normal of its center, which forces
    dt = 0 there; together with the anchor t(z0) = t0 this restricts
    member times to a polynomial in the tangent coordinates with no
    constant and no linear part.  Odd cubic and quintic terms stay: the
    boundary need not be symmetric about the center, and without them
    the least squares settles on a sheared family.  The curvature along
    the cap is read off the pure second-order coefficients.
    """
    if xi.shape[1] == 1:
        s = xi[:, 0]
        cols = [0.5 * s * s, s**3, s**4, s**5, s**6]
        q_cols = [0]
    else:
        cols = []
        q_cols = []
        for a in range(xi.shape[1]):
            q_cols.append(len(cols))
            cols.append(0.5 * xi[:, a] ** 2)
            for b in range(a + 1, xi.shape[1]):
                cols.append(xi[:, a] * xi[:, b])
        r2 = np.sum(xi * xi, axis=1)
        cols.append(0.25 * r2**2)
        cols.append(r2**3)
    return np.column_stack(cols), q_cols


def _tan_half(grid, a, b):
    """Inverse noise scale of a pair total: tan of the half crossing angle.

    A crossing displaced by one fan step moves the recorded total by
    (1 + cos) / sin of the crossing angle times the step, so totals of
    near-parallel pairs say almost nothing while near-head-on pairs are
    first-order exact.  Capped: the displacement itself is bounded."""
    da = grid.directions[int(a)]
    db = grid.directions[int(b)]
    c = float(np.dot(da, db) / max(np.linalg.norm(da) * np.linalg.norm(db), 1e-300))
    s = float(np.sqrt(max(1.0 - min(c * c, 1.0), 0.0)))
    if 1.0 + c < 1e-9:
        return 1.5
    return float(min(s / (1.0 + c), 1.5))


def _implied_stats(view, grid, j, partners, min_w=0.15):
    """Meeting statistics of one ray against (ray, time) partners.

    Returns the weighted median of the implied times total - t(partner),
    their median absolute deviation, the partner count, and the weight
    mass, or None when too few transversal partners have records."""
    vals, wts = [], []
    for jp, tp in partners:
        om = _tan_half(grid, j, jp)
        if om < min_w:
            continue
        tot = view.totals_between(int(j), int(jp))
        if not len(tot):
            continue
        d = tot - tp
        vals.append(float(d[int(np.argmin(np.abs(d - np.median(d))))]))
        wts.append(om)
    if not vals:
        return None
    v = np.asarray(vals)
    w = np.asarray(wts)
    k = np.argsort(v)
    v, w = v[k], w[k]
    c = np.cumsum(w)
    med = float(v[int(np.searchsorted(c, 0.5 * c[-1]))])
    mad = float(np.median(np.abs(v - med)))
    return med, mad, len(vals), float(np.sum(w))


def _polish_family(view, z0_foot, i0, t0, jm, tm, eps_t, n_iter=2):
    """Refit member times by least squares on the raw pair totals.

    The cap polynomial earns its keep as a hypothesis machine, but its
    smoothing is also its bias: a member at the cap edge gets its time
    from extrapolation rather than measurement.  This pass drops the
    basis: the unknowns are the member times themselves, the rows are
    recorded totals between member rays (plus rows against the seed,
    whose time is t0 by construction), weighted by the tan-half noise
    scale.  Members that stay inconsistent have their ray reselected
    from the footpoint fan by meeting agreement, and footpoints beyond
    the detection cap are recruited the same way: a fan ray whose
    implied meeting times agree across the membership passes through
    the focus no matter where its foot lies.  Returns the refined
    (ray, time) maps with per-foot support and the kept-row weight."""
    grid = view.grid
    w_hard = 2.5 * eps_t
    jm = {int(f): int(j) for f, j in jm.items()}
    tm = {int(f): float(v) for f, v in tm.items()}
    stats = {}
    quality = {"evidence": 0.0, "rms": np.nan}

    def solve():
        feet = sorted(tm)
        if not feet:
            return
        idx = {m: k for k, m in enumerate(feet)}
        ray_idx = np.full(grid.n_rays, -1, dtype=np.int64)
        for m in feet:
            ray_idx[jm[m]] = idx[m]
        t_vec = np.asarray([tm[m] for m in feet])
        cols_a, cols_b, rhs, wts = [], [], [], []
        for m in feet:
            om = _tan_half(grid, jm[m], i0)
            if om >= 0.15:
                tot = view.totals_between(jm[m], i0)
                if len(tot):
                    k = int(np.argmin(np.abs(tot - (tm[m] + t0))))
                    if abs(float(tot[k]) - tm[m] - t0) <= 4.0 * eps_t:
                        cols_a.append(idx[m])
                        cols_b.append(-1)
                        rhs.append(float(tot[k]) - t0)
                        wts.append(om)
            partners, tots = view.partner_totals(jm[m])
            sel = ray_idx[partners]
            mask = sel > idx[m]
            if not np.any(mask):
                continue
            sel = sel[mask]
            tots_m = tots[mask]
            gap = np.abs(tots_m - (tm[m] + t_vec[sel]))
            ok = gap <= 4.0 * eps_t
            for s_i, T in zip(sel[ok], tots_m[ok]):
                om = _tan_half(grid, jm[m], jm[feet[int(s_i)]])
                if om < 0.15:
                    continue
                cols_a.append(idx[m])
                cols_b.append(int(s_i))
                rhs.append(float(T))
                wts.append(om)
        if not rhs:
            return
        R = len(rhs)
        M = len(feet)
        A = np.zeros((R + M, M))
        y = np.zeros(R + M)
        sw = np.zeros(R + M)
        for r in range(R):
            A[r, cols_a[r]] = 1.0
            if cols_b[r] >= 0:
                A[r, cols_b[r]] = 1.0
            y[r] = rhs[r]
            sw[r] = wts[r]
        # weak prior rows keep feet with thin data anchored in place
        for k, m in enumerate(feet):
            A[R + k, k] = 1.0
            y[R + k] = tm[m]
            sw[R + k] = 0.05
        gate = w_hard / np.clip(sw[:R], 0.5, 1.0)
        keep = np.ones(R + M, dtype=bool)
        sol = t_vec
        for _ in range(2):
            sol, *_ = np.linalg.lstsq(
                sw[keep, None] * A[keep], sw[keep] * y[keep], rcond=None
            )
            res = A[:R] @ sol - y[:R]
            keep_new = np.concatenate(
                [np.abs(res) <= gate, np.ones(M, dtype=bool)]
            )
            if np.array_equal(keep_new, keep):
                break
            keep = keep_new
        stats.clear()
        acc = {}
        for r in range(R):
            if not keep[r]:
                continue
            for m_i in (cols_a[r], cols_b[r]):
                if m_i >= 0:
                    s, n, e2 = acc.get(m_i, (0.0, 0, 0.0))
                    acc[m_i] = (s + wts[r], n + 1, e2 + abs(res[r]))
        for m_i, (s, n, e2) in acc.items():
            stats[feet[m_i]] = (s, e2 / n)
        for k, m in enumerate(feet):
            tm[m] = float(sol[k])
            stats.setdefault(m, (0.0, np.inf))
        kept = keep[:R]
        quality["evidence"] = float(np.sum(np.asarray(wts)[kept]))
        quality["rms"] = float(
            np.sqrt(np.mean(res[kept] ** 2)) if np.any(kept) else np.nan
        )

    def best_ray(m, partners):
        best = None
        for j in grid.rays_at(m):
            j = int(j)
            if j == i0:
                continue
            st = _implied_stats(view, grid, j, partners)
            if st is None:
                continue
            med, mad, n, wsum = st
            if n < max(3, 0.4 * len(partners)) or med <= 2.0 * eps_t:
                continue
            key = (mad, -wsum)
            if best is None or key < best[0]:
                best = (key, j, med)
        return best

    for it in range(n_iter):
        solve()
        anchors = sorted(tm, key=lambda m: -stats.get(m, (0.0, np.inf))[0])[:12]
        partners = [(jm[a], tm[a]) for a in anchors] + [(i0, float(t0))]
        for m in list(tm):
            sup, resid = stats.get(m, (0.0, np.inf))
            if sup >= 0.3 and resid <= 1.5 * eps_t:
                continue
            part_m = [(jp, tp) for jp, tp in partners if jp != jm[m]]
            b = best_ray(m, part_m)
            if b is not None and b[0][0] <= 1.5 * eps_t:
                jm[m] = b[1]
                tm[m] = b[2]
            elif sup < 0.15:
                del jm[m], tm[m]
                stats.pop(m, None)
        if it == 0:
            for m in range(len(grid.foot_points)):
                if m == int(z0_foot) or m in tm:
                    continue
                b = best_ray(m, partners)
                if b is not None and b[0][0] <= 1.0 * eps_t:
                    jm[m] = b[1]
                    tm[m] = b[2]
    solve()
    for m in list(tm):
        sup, resid = stats.get(m, (0.0, np.inf))
        if sup < 0.3 or resid > 2.0 * eps_t:
            del jm[m], tm[m]
            stats.pop(m, None)
    return jm, tm, stats, quality


def detect_focusing_family(
    view: RelationView,
    z0_foot,
    t0,
    rho_U,
    eps_t,
    coverage_min=0.8,
    time_window=None,
    warm=None,
    _debug=False,
):
    """Family detection around (z0, t0) against the stored relation.

    A single crossing record against the seed normal times a member only
    up to the fan step amplified by the crossing angle, so the implied
    times at each cap footpoint form a coarse ladder whose rungs may all
    miss the true member time.  Detection therefore treats the ladder
    rungs and their gap midpoints as discrete hypotheses, settles the
    assignment by agreement of pairwise total times across the whole
    cap, and then refines the member times continuously by solving the
    anchored least-squares system t(w) + t(w') = total(w, w') over every
    member pair.  Returns None when cap coverage ends below
    coverage_min.
    """
    grid = view.grid
    i0 = grid.normal_ray_at(z0_foot)
    if i0 is None:
        raise ConfigError(f"no normal ray at footpoint {z0_foot}")
    if not t0 < view.exit_time(i0):
        raise ConfigError("t0 must lie strictly below the center exit time")
    if time_window is None:
        time_window = max(1.5 * rho_U, 8.0 * eps_t)
    w_hard = 2.5 * eps_t
    cap_dev = 4.0 * eps_t
    z0_foot = int(z0_foot)
    z0 = grid.foot_points[z0_foot]
    foot_d = np.linalg.norm(grid.foot_points - z0, axis=1)
    cap = np.flatnonzero(foot_d <= rho_U)
    cap = cap[np.argsort(foot_d[cap])]
    cap_xi = _cap_coords(grid, z0_foot, grid.foot_points[cap])
    xi_by_foot = {int(w): cap_xi[k] for k, w in enumerate(cap)}

    # hypothesis ladder per footpoint: implied times against the seed,
    # plus gap midpoints for truths hiding between rungs
    cands = {}
    for w in cap:
        w = int(w)
        if w == z0_foot:
            continue
        rungs = []
        for j in grid.rays_at(w):
            for v in view.totals_between(int(j), i0) - t0:
                if v > 2.0 * eps_t and abs(v - t0) <= time_window:
                    rungs.append((float(v), int(j)))
        if not rungs:
            continue
        rungs.sort()
        entries = list(rungs)
        for (va, ja), (vb, _) in zip(rungs[:-1], rungs[1:]):
            if vb - va > 2.0 * eps_t:
                entries.append((0.5 * (va + vb), ja))
        entries.sort()
        cands[w] = entries

    order_feet = [int(w) for w in cap if int(w) in cands]
    if not order_feet:
        return None
    cands_full = dict(cands)

    def pair_dev(j, m, target):
        tot = view.totals_between(int(j), int(m))
        if not len(tot):
            return None
        d = float(np.min(np.abs(tot - target)))
        return d if d <= cap_dev else None

    # a pair total constrains the hypothesized sum only through the
    # crossing angle: near-parallel rays have flat total profiles that
    # accept any assignment, so rows and deviations are weighted by the
    # sine of the launch-direction angle and parallel bundles score zero
    def transversality(ja, jb):
        ca = float(
            np.dot(grid.directions[int(ja)], grid.directions[int(jb)])
        )
        return float(np.sqrt(max(1.0 - min(ca * ca, 1.0), 0.0)))

    def row_weight(ja, jb):
        """Inverse noise scale of a pair-total row: tan of the half
        crossing angle.  A crossing displaced by the fan step moves the
        total by (1 + cos) / sin times the step, so near-parallel rows
        are nearly uninformative while head-on ones are sharp."""
        da = grid.directions[int(ja)]
        db = grid.directions[int(jb)]
        ca = float(np.dot(da, db) / (np.linalg.norm(da) * np.linalg.norm(db)))
        sa = float(np.sqrt(max(1.0 - min(ca * ca, 1.0), 0.0)))
        if 1.0 + ca < 1e-9:
            return 1.5
        return float(min(sa / (1.0 + ca), 1.5))

    def cap_fit(pts):
        """Anchored normal-focus fit through (foot, time) pairs."""
        if len(pts) < 2:
            return None
        xi_s = np.asarray([xi_by_foot[f] for f, _ in pts])
        ys = np.asarray([tv for _, tv in pts]) - t0
        A, _ = _cap_model(xi_s)
        n_use = min(A.shape[1], len(pts) - 1) or 1
        coef, *_ = np.linalg.lstsq(A[:, :n_use], ys, rcond=None)

        def predict(w):
            row, _ = _cap_model(xi_by_foot[w][None, :])
            return t0 + float(row[0, :n_use] @ coef)

        return predict

    # identifiable polynomial order: one coefficient per distinct cap
    # abscissa beyond the anchor, robust row count permitting; signed
    # positions count separately once odd terms are in play
    if cap_xi.shape[1] == 1:
        ring_vals = np.round(cap_xi[:, 0], 9)
    else:
        ring_vals = np.round(
            [np.linalg.norm(cap_xi[k]) for k in range(len(cap))], 9
        )
    n_rings = len(np.unique(ring_vals[ring_vals != 0]))

    def cascade(seed_sel):
        sel = dict(seed_sel)
        for w in order_feet:
            if w in sel:
                continue
            pred = cap_fit([(f, tv) for f, (tv, _) in sel.items()])
            t_pred = pred(w) if pred is not None else float(t0)
            sel[w] = min(cands[w], key=lambda e: abs(e[0] - t_pred))
        return sel

    def sweep(sel, n_sweeps=2):
        """Settle hypothesis choices by pairwise agreement; the fit
        penalty pins the family to the seed normal, which bare pair
        totals cannot distinguish from a slightly off-axis focus."""
        for _ in range(n_sweeps):
            changed = False
            for w in order_feet:
                pred = cap_fit(
                    [(f, tv) for f, (tv, _) in sel.items() if f != w]
                )
                best = None
                for tc, j in cands[w]:
                    acc = 0.0
                    wsum = 0.0
                    partners = [(i0, t0)] + [
                        (j2, t2)
                        for w2, (t2, j2) in sel.items()
                        if w2 != w
                    ]
                    for j2, t2 in partners:
                        om = transversality(j, j2)
                        if om < 0.1:
                            continue
                        d = pair_dev(j, j2, tc + t2)
                        acc += om * (cap_dev if d is None else d)
                        wsum += om
                    score = acc / wsum if wsum > 0 else cap_dev
                    if pred is not None:
                        score += 0.5 * abs(tc - pred(w))
                    if best is None or score < best[0] - 1e-12:
                        best = (score, tc, j)
                if best is not None and sel[w] != (best[1], best[2]):
                    sel[w] = (best[1], best[2])
                    changed = True
            if not changed:
                break
        return sel

    def poly_solve(sel):
        """Cap polynomial least squares from seed and member totals.

        Seed rows at footpoints with dense ladders anchor the axis;
        coarse ones fall to the robust pass.  Returns None when no pair
        total comes close to the hypothesized sums.
        """
        feet = [w for w in order_feet if w in sel]
        ray_of = {z0_foot: i0}
        t_disc = {z0_foot: float(t0)}
        for f in feet:
            t_disc[f], ray_of[f] = sel[f]
        rows, rhs, touch = [], [], []
        pairs = [(z0_foot, f) for f in feet]
        pairs += [
            (feet[a], feet[b])
            for a in range(len(feet))
            for b in range(a + 1, len(feet))
        ]
        wts = []
        for fa, fb in pairs:
            om = row_weight(ray_of[fa], ray_of[fb])
            if om < 0.1:
                continue
            tot = view.totals_between(ray_of[fa], ray_of[fb])
            if not len(tot):
                continue
            k = int(np.argmin(np.abs(tot - (t_disc[fa] + t_disc[fb]))))
            if abs(float(tot[k]) - (t_disc[fa] + t_disc[fb])) > cap_dev:
                continue
            xi_pair = np.asarray([xi_by_foot[fa], xi_by_foot[fb]])
            Ap, _ = _cap_model(xi_pair)
            rows.append(Ap[0] + Ap[1])
            rhs.append(float(tot[k]) - 2.0 * t0)
            touch.append((fa, fb))
            wts.append(om)
        if not rows:
            return None
        A = np.asarray(rows)
        y = np.asarray(rhs)
        sw = np.asarray(wts)
        # strictly fewer coefficients than cap abscissae, else
        # interpolation splits the curvature arbitrarily across the basis
        n_use = max(min(A.shape[1], n_rings - 1, len(rows) - 2), 1)
        # robust gate loosens with each row's own noise scale: clipping
        # noisy rows at a uniform bar censors one side and biases the fit
        gate = w_hard / np.clip(sw, 0.5, 1.0)
        keep = np.ones(len(rows), dtype=bool)
        for _ in range(2):
            coef, *_ = np.linalg.lstsq(
                sw[keep, None] * A[keep][:, :n_use], sw[keep] * y[keep],
                rcond=None,
            )
            res = A[:, :n_use] @ coef - y
            keep_new = np.abs(res) <= gate
            if keep_new.sum() < n_use + 1 or np.array_equal(keep_new, keep):
                break
            keep = keep_new
        # membership needs measurable support: a footpoint touched only
        # by near-parallel rows gets its time from pure extrapolation at
        # the cap edge, which the quintic tail makes arbitrarily wrong
        support = {z0_foot: 1.0}
        for k, (fa, fb) in enumerate(touch):
            if keep[k]:
                support[fa] = support.get(fa, 0.0) + wts[k]
                support[fb] = support.get(fb, 0.0) + wts[k]
        covered = {f for f, s in support.items() if s >= 0.3}
        covered.add(z0_foot)
        return {
            "coef": coef,
            "n_use": n_use,
            "res": res,
            "keep": keep,
            "evidence": float(np.sum(np.asarray(wts)[keep])),
            "covered": covered,
            "ray_of": ray_of,
            "t_disc": t_disc,
        }

    # hypothesis basins are self-consistent under pairwise totals alone,
    # so competing starts over the two innermost rings are settled by
    # how much of the pair graph each explanation accounts for
    def ring_of(w):
        return float(np.round(np.linalg.norm(xi_by_foot[w]), 9))

    def nearest_cand(w, val):
        return min(cands[w], key=lambda e: abs(e[0] - val))

    if warm is not None:
        # continuation from a family at a nearby depth: seed every foot
        # from the previous time shifted by the depth change scaled per
        # foot (dt/dt0 = t0/t along the flat-space law, not 1), then
        # skip the basin search; footpoints the previous cap did not
        # reach keep their full ladders and fall to the cascade fit
        drift = t0 - warm[0]
        start = {}
        seeds = {}
        for w in order_feet:
            tv = warm[1].get(w)
            if tv is None:
                continue
            seeds[w] = tv + drift * (warm[0] / max(tv, warm[0], 1e-12))
        # footpoints entering a grown cap keep their full ladders: a
        # polynomial seed extrapolated past the carried cap edge is
        # unreliable, and the pair-agreement sweep places them fine
        for w, seedv in seeds.items():
            local = [e for e in cands[w] if abs(e[0] - seedv) <= 6.0 * eps_t]
            if local:
                cands[w] = local
                start[w] = min(local, key=lambda e: abs(e[0] - seedv))
        starts = [start]
    else:
        ring_groups = {}
        ring_order = []
        for w in order_feet:
            r = ring_of(w)
            if r not in ring_groups:
                ring_groups[r] = []
                ring_order.append(r)
            ring_groups[r].append(w)
        ring_feet = [ring_groups[r] for r in ring_order[:2]]
        starts = [{}]
        for feet_r in ring_feet:
            lead = feet_r[0]
            tops = sorted(cands[lead], key=lambda e: abs(e[0] - t0))[:4]
            starts = [
                {**st, **{f: nearest_cand(f, ch[0]) for f in feet_r}}
                for st in starts
                for ch in tops
            ]
    best = None
    for st in starts:
        sel = sweep(cascade(st))
        sv = poly_solve(sel)
        if sv is None:
            continue
        rms = float(np.sqrt(np.mean(sv["res"][sv["keep"]] ** 2)))
        if _debug:
            print(
                f"  start {[round(v, 4) for v, _ in st.values()]}: "
                f"kept {int(sv['keep'].sum())}/{len(sv['keep'])} "
                f"ev {sv['evidence']:.2f} rms {rms:.4f} sel",
                {w: round(sel[w][0], 4) for w in order_feet},
            )
        if best is None or (-sv["evidence"], rms) < best[0]:
            best = ((-sv["evidence"], rms), sv)
    if best is None:
        return None
    sv = best[1]

    # discrete-continuous fix point: the robust weighted fit survives a
    # few wrong rungs, so re-snapping every foot to it and re-solving
    # heals isolated ladder errors that the sweep locked in
    for _ in range(2):
        pred_t = {}
        for w in order_feet:
            row, _ = _cap_model(xi_by_foot[w][None, :])
            pred_t[w] = t0 + float(row[0, : sv["n_use"]] @ sv["coef"])
        sel2 = {
            w: min(cands_full[w], key=lambda e: abs(e[0] - pred_t[w]))
            for w in order_feet
        }
        sv2 = poly_solve(sel2)
        if sv2 is None:
            break
        key2 = (-sv2["evidence"], float(np.sqrt(np.mean(sv2["res"][sv2["keep"]] ** 2))))
        if key2 < best[0]:
            best = (key2, sv2)
            sv = sv2
        else:
            break

    coef, n_use, res, keep = sv["coef"], sv["n_use"], sv["res"], sv["keep"]
    ray_of, t_disc, covered = sv["ray_of"], sv["t_disc"], sv["covered"]
    if _debug:
        print("  poly:", np.round(coef, 4), "rows", int(keep.sum()), "/", len(keep))

    coverage = len(covered) / len(cap)
    if coverage < coverage_min:
        return None
    foot_ids = np.asarray(sorted(covered))
    foot_points = grid.foot_points[foot_ids]
    xi = _cap_coords(grid, z0_foot, foot_points)
    Af, q_cols = _cap_model(xi)
    times = t0 + Af[:, :n_use] @ coef
    q_use = [c for c in q_cols if c < n_use]
    q = float(np.mean(coef[q_use])) if q_use else np.nan
    fit_rms = float(np.sqrt(np.mean(res[keep] ** 2)))
    ray_ids = np.asarray([ray_of[f] for f in foot_ids])
    return FocusingFamily(
        z0_foot=z0_foot,
        t0=float(t0),
        provenance=RELATION_DETECTED,
        foot_ids=foot_ids,
        foot_points=foot_points,
        ray_ids=ray_ids,
        directions=grid.directions[ray_ids],
        times=times,
        coverage=float(coverage),
        cap_radius=float(rho_U),
        grad_residual=_grad_residual(grid, z0_foot, foot_ids, times),
        consistency_residual=float(np.mean(np.abs(res[keep]))),
        times_raw=np.asarray([t_disc[f] for f in foot_ids]),
        cap_quadratic=q,
        fit_rms=fit_rms,
        evidence=float(sv["evidence"]),
    )


def _rho_at(grid, rho_U, t0):
    """Cap radius grown with depth, within a fraction of the boundary.

    Deeper foci see every footpoint inside a narrower cone, which
    coarsens all implied-time ladders together; widening the cap keeps
    the crossing angles between members workable.
    """
    rho = max(rho_U, 1.15 * float(t0))
    if grid.atlas is not None:
        bound = 0.2 * len(grid.foot_points) * grid.atlas.spacing
    else:
        c = grid.foot_points.mean(axis=0)
        bound = 1.1 * float(np.max(np.linalg.norm(grid.foot_points - c, axis=1)))
    return min(rho, bound)


def bootstrap_family(
    view, z0_foot, t0, rho_U, eps_t, coverage_min=0.8, speeds=None
):
    """Cold family detection at a shallow depth.

    Near the boundary the member times follow the flat-space law
    sqrt(t0^2 + ell^2) with ell the footpoint separation over the local
    speed, so seeding the detection from that shape over a scan of
    speeds reaches the right hypothesis basin without any prior family.
    Basins are ranked by transversal evidence; lattice coincidences
    among near-parallel ray bundles can beat the true family on
    residual alone, but carry almost no crossing-angle mass.
    """
    grid = view.grid
    z0 = grid.foot_points[int(z0_foot)]
    if speeds is None:
        speeds = np.geomspace(0.45, 2.2, 8)
    ell = np.linalg.norm(grid.foot_points - z0, axis=1)
    best = None
    for c in speeds:
        seed = {
            w: float(np.hypot(t0, ell[w] / c))
            for w in range(len(ell))
            if 0.0 < ell[w] <= 2.0 * rho_U
        }
        fam = detect_focusing_family(
            view,
            z0_foot,
            t0,
            rho_U,
            eps_t,
            coverage_min=coverage_min,
            warm=(float(t0), seed),
        )
        if fam is None:
            continue
        key = (-fam.evidence, fam.fit_rms)
        if best is None or key < best[0]:
            best = (key, fam)
    return best[1] if best is not None else None


def family_ladder(
    view,
    z0_foot,
    rho_U,
    eps_t,
    t_stop,
    step,
    coverage_min=0.8,
):
    """Yield (t0, family) along a depth ladder by warm continuation.

    Bootstraps at the shallowest depth clear of the generation-side
    footpoint window, then continues each family from the previous one;
    deeper hypothesis ladders are too coarse for cold detection, and
    continuation is what makes them usable.  Yields None entries where
    detection fails; the warm state survives a few such gaps.
    """
    fw = float(view.params.get("footpoint_window", 0.15))
    t0 = max(fw + 3.0 * eps_t, 10.0 * eps_t, 1.5 * step)
    warm = None
    stale = 0
    while t0 < t_stop:
        rho_t = _rho_at(view.grid, rho_U, t0)
        fam = None
        if warm is not None:
            fam = detect_focusing_family(
                view, z0_foot, t0, rho_t, eps_t,
                coverage_min=coverage_min, warm=warm,
            )
        if fam is None and (warm is None or stale >= 2):
            fam = bootstrap_family(
                view, z0_foot, t0, rho_t, eps_t, coverage_min=coverage_min
            )
        if fam is not None:
            warm = (fam.t0, dict(zip(fam.foot_ids.tolist(), fam.times.tolist())))
            stale = 0
        else:
            stale += 1
        yield float(t0), fam
        t0 += step


def _family_at_depth(view, z0_foot, t0, rho_U, eps_t, coverage_min=0.8):
    """Family at one exact depth, reached by laddering up from shallow."""
    step = 4.0 * eps_t
    last = None
    for tt, fam in family_ladder(
        view, z0_foot, rho_U, eps_t, t0, step, coverage_min=coverage_min
    ):
        if fam is not None:
            last = fam
    rho_t = _rho_at(view.grid, rho_U, t0)
    if last is None:
        return bootstrap_family(
            view, z0_foot, t0, rho_t, eps_t, coverage_min=coverage_min
        )
    warm = (last.t0, dict(zip(last.foot_ids.tolist(), last.times.tolist())))
    return detect_focusing_family(
        view, z0_foot, t0, rho_t, eps_t,
        coverage_min=coverage_min, warm=warm,
    )


@dataclass
class FocusCheck:
    ok: bool
    spread: float
    endpoints: np.ndarray


def verify_focus(model, domain, fam: FocusingFamily, eps_focus):
    """Integrate each member to its time; measure the endpoint spread."""
    pts = []
    for k in range(len(fam)):
        path = integrate_geodesic(
            model, domain, fam.foot_points[k], fam.directions[k],
            float(fam.times[k]), max(float(fam.times[k]) / 64.0, 1e-6),
        )
        pts.append(path.position(float(fam.times[k])))
    pts = np.asarray(pts)
    spread = 0.0
    for i in range(len(pts)):
        d = np.linalg.norm(pts[i + 1 :] - pts[i], axis=1)
        if len(d):
            spread = max(spread, float(np.max(d)))
    return FocusCheck(ok=spread <= eps_focus, spread=spread, endpoints=pts)


# ----------------------------------------------------------------------
# boundary cut distance from the relation


def _sin_angle(grid, a, b):
    """Sine of the angle between two rays' launch directions."""
    da = grid.directions[int(a)]
    db = grid.directions[int(b)]
    c = float(np.dot(da, db) / max(np.linalg.norm(da) * np.linalg.norm(db), 1e-300))
    return float(np.sqrt(max(1.0 - min(c * c, 1.0), 0.0)))


def _consistent_meeting(view, ray, fam, eps_t, s_cap=None, quorum=1.0):
    """Earliest common meeting time of one ray with the family members.

    Candidate values are the implied times T - t(z) read off the stored
    records; a candidate survives when at least a quorum of eligible
    members has an implied time within eps_t of it.  Members nearly
    parallel to the probing ray cannot vote: their crossings thread the
    tube at a shallow angle and read the time off by far more than the
    record tolerance.  The survivor is refined to the median over the
    agreeing members.  Returns None when no candidate reaches the
    quorum.
    """
    grid = view.grid
    per_member = []
    n_eligible = 0
    for m, t_m in zip(fam.ray_ids, fam.times):
        if _sin_angle(grid, ray, m) < 0.1:
            continue
        n_eligible += 1
        tot = view.totals_between(int(ray), int(m))
        vals = tot - t_m
        vals = vals[vals > 0.0]
        if s_cap is not None:
            vals = vals[vals < s_cap + eps_t]
        if len(vals):
            per_member.append(np.sort(vals))
    if n_eligible < max(3, 0.5 * len(fam)):
        return None
    if not per_member or len(per_member) < quorum * n_eligible:
        return None
    cands = np.unique(np.concatenate(per_member))
    for s in cands:
        nearest = np.array([v[np.argmin(np.abs(v - s))] for v in per_member])
        agree = np.abs(nearest - s) <= eps_t
        if agree.sum() >= quorum * n_eligible:
            sub = nearest[agree]
            s_bar = float(np.median(sub))
            spread = float(np.max(sub) - np.min(sub))
            return s_bar, spread
    return None


def _focal_time_from_fan(view, z0_foot, eps_t, n_take=8, quorum=0.75):
    """First conjugate time along the inward normal, read off the fan.

    Past a conjugate point the neighboring rays of the fan at z0 cross
    the normal again, so their first totals against the seed cluster at
    twice the focal time; straight or spreading geometries leave no
    cluster.  The smallest-angle fan rays vote and the median of the
    agreeing half-totals wins.  Returns None without a quorum.
    """
    grid = view.grid
    i0 = grid.normal_ray_at(z0_foot)
    if i0 is None:
        raise ConfigError(f"no normal ray at footpoint {z0_foot}")
    d0 = grid.directions[i0]
    fan = [int(j) for j in grid.rays_at(z0_foot) if int(j) != i0]
    fan.sort(
        key=lambda j: -float(
            np.dot(grid.directions[j], d0)
            / max(np.linalg.norm(grid.directions[j]) * np.linalg.norm(d0), 1e-300)
        )
    )
    eps_x = float(view.params.get("eps_x", 0.25 * eps_t))
    halves = []
    for j in fan[:n_take]:
        tot = view.totals_between(j, i0)
        if len(tot):
            smear = 2.0 * eps_x / max(_sin_angle(grid, j, i0), 2.0 * eps_x)
            first = np.sort(tot)
            first = first[first <= first[0] + 2.0 * smear + eps_t]
            halves.append(0.5 * float(np.median(first)))
    if len(halves) < quorum * n_take:
        return None
    halves = np.asarray(halves)
    m = float(np.median(halves))
    agree = np.abs(halves - m) <= 2.0 * eps_t
    if agree.sum() < quorum * n_take:
        return None
    return float(np.median(halves[agree]))


def _envelope_time_from_normals(view, z0_foot, eps_t, n_take=6):
    """Focal distance of the boundary-normal family along the seed.

    Neighboring footpoints' normal rays cross the seed normal at the
    envelope of the normal field, and their half-totals approach the
    envelope distance quadratically in the footpoint separation.  A
    Richardson fit a + b d^2 over the nearest feet recovers the limit;
    incoherent residuals mean no envelope before exit.  The flat disc
    degenerates gracefully: every neighbor normal meets the seed at the
    same point and the fit returns that distance exactly.
    """
    grid = view.grid
    i0 = grid.normal_ray_at(z0_foot)
    if i0 is None:
        raise ConfigError(f"no normal ray at footpoint {z0_foot}")
    z0 = grid.foot_points[int(z0_foot)]
    order = np.argsort(np.linalg.norm(grid.foot_points - z0, axis=1))
    pts = []
    for w in order:
        w = int(w)
        if w == z0_foot or len(pts) >= n_take:
            continue
        nw = grid.normal_ray_at(w)
        if nw is None:
            continue
        tot = view.totals_between(nw, i0)
        if not len(tot):
            continue
        # a shallow crossing smears the recorded total by the tube
        # width over the crossing angle, and the smear is symmetric, so
        # the first cluster's median recovers the geometric value
        eps_x = float(view.params.get("eps_x", 0.25 * eps_t))
        smear = 2.0 * eps_x / max(_sin_angle(grid, nw, i0), 2.0 * eps_x)
        first = np.sort(tot)
        first = first[first <= first[0] + 2.0 * smear + eps_t]
        d = float(np.linalg.norm(grid.foot_points[w] - z0))
        pts.append((d * d, 0.5 * float(np.median(first))))
    if len(pts) < 3:
        return None
    A = np.column_stack([np.ones(len(pts)), [p[0] for p in pts]])
    y = np.asarray([p[1] for p in pts])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = A @ coef - y
    if float(np.max(np.abs(res))) > 2.0 * eps_t:
        return None
    a = float(coef[0])
    return a if a > 0 else None


def boundary_cut_distance_from_relation(
    view: RelationView,
    z0_foot,
    rho_U,
    eps_t,
    coarse_step=None,
    t_min=None,
    coverage_min=0.8,
    margin=None,
):
    """Recovered tau_dM(z0): depth where the normal stops being
    boundary-minimal, read off the relation alone.

    Four sources of evidence, smallest wins.  The shortcut detector
    fires at the first scanned t0 whose family admits a boundary point
    w != z0 reachable in time s < t0 - margin consistently across the
    members (the infimum formula), then sharpens by bisection; it
    localizes transversal chord-type cuts, where the undercut grows at
    unit rate.  Tangential cuts are focal and read off directly with no
    scan: conjugacy along the normal from the seed fan cluster, and the
    envelope of the boundary-normal field from the neighbor-normal
    extrapolation.  Half the exit time always bounds the cut, because
    past the midpoint the tail of the normal is itself the shorter
    boundary path; the scan never marches further.
    """
    grid = view.grid
    i0 = grid.normal_ray_at(z0_foot)
    if i0 is None:
        raise ConfigError(f"no normal ray at footpoint {z0_foot}")
    tau_exit = view.exit_time(i0)
    if coarse_step is None:
        coarse_step = 4.0 * eps_t
    if margin is None:
        margin = 0.25 * eps_t
    half_exit = 0.5 * tau_exit
    focals = [
        f
        for f in (
            _focal_time_from_fan(view, z0_foot, eps_t),
            _envelope_time_from_normals(view, z0_foot, eps_t),
        )
        if f is not None
    ]
    focal = min(focals) if focals else None
    t_stop = min(half_exit, np.inf if focal is None else focal)
    t_stop += 2.0 * coarse_step

    foreign = [
        int(j)
        for w in range(len(grid.foot_points))
        if w != z0_foot
        for j in grid.rays_at(w)
    ]

    def best_undercut(fam, t0):
        """Largest certified undercut t0 - s over competing rays.

        A competing minimizer from the focus reaches the boundary along
        some ray of another footpoint, so every foreign ray is screened;
        the cheap first stage keeps only rays whose crossing with the
        seed normal implies an early leg, and survivors must meet the
        whole family consistently.  Returns None when nothing beats the
        margin.
        """
        s_cap = min(float(t0), float(np.min(fam.times))) - margin
        if s_cap <= 0:
            return None
        best = None
        for eta in foreign:
            tot = view.totals_between(eta, i0)
            if not len(tot):
                continue
            v = tot - t0
            if not np.any((v > 0.5 * eps_t) & (v < s_cap + eps_t)):
                continue
            meet = _consistent_meeting(
                view, eta, fam, eps_t, s_cap=s_cap, quorum=0.75
            )
            if meet is None:
                continue
            s_bar, spread = meet
            # loose member spread means the ray threads the meeting
            # region off-center and its time cannot be trusted there
            if s_bar < s_cap and spread <= 1.5 * eps_t:
                u = float(t0) - s_bar
                if best is None or u > best[0]:
                    best = (u, eta)
        return best

    chain = []
    last_good = None
    hit = None
    u_hit = None
    for t0, fam in family_ladder(
        view, z0_foot, rho_U, eps_t, t_stop, coarse_step,
        coverage_min=coverage_min,
    ):
        if fam is None:
            continue
        chain.append(fam)
        if t_min is not None and t0 < t_min:
            continue
        got = best_undercut(fam, t0)
        if got is not None:
            hit = float(t0)
            u_hit = got
            break
        last_good = float(t0)
    if not chain:
        raise CoverageError(f"no focusing family detectable at footpoint {z0_foot}")

    def fam_at(t):
        base = min(chain, key=lambda f: abs(f.t0 - t))
        warm = (base.t0, dict(zip(base.foot_ids.tolist(), base.times.tolist())))
        return detect_focusing_family(
            view, z0_foot, t, _rho_at(grid, rho_U, t), eps_t,
            coverage_min=coverage_min, warm=warm,
        )

    cands = [half_exit]
    if focal is not None:
        cands.append(float(focal))
    if hit is not None:
        # the detector lags the cut by margin over the undercut growth
        # rate, so the undercut is extrapolated back to zero; the rate
        # follows from the firing directions (du/dt = 1 - cos of the
        # arrival angle), sharpened by a second probe one step deeper
        # when a family still exists there
        u1, eta1 = u_hit
        da = grid.directions[int(eta1)]
        db = grid.directions[i0]
        cosx = float(
            np.dot(da, db)
            / max(np.linalg.norm(da) * np.linalg.norm(db), 1e-300)
        )
        rate = 1.0 - cosx
        fam2 = fam_at(hit + coarse_step)
        if fam2 is not None:
            got2 = best_undercut(fam2, hit + coarse_step)
            if got2 is not None and got2[0] > u1:
                rate = (got2[0] - u1) / coarse_step
        rate = min(max(rate, 0.05), 2.0)
        chord = hit - u1 / rate
        lo_bound = last_good if last_good is not None else hit - coarse_step
        cands.append(float(np.clip(chord, lo_bound - 0.5 * coarse_step, hit)))
    elif last_good is None or last_good < t_stop - 3.0 * coarse_step:
        # the ladder went blind before reaching any stopping bound, so
        # none of the remaining candidates is actually certified
        raise CoverageError(
            f"family chain lost before the cut bound at footpoint {z0_foot}"
        )
    return float(min(cands))


# ----------------------------------------------------------------------
# boundary distance functions from the relation


def boundary_distance_from_relation(
    view: RelationView,
    z0_foot,
    t0,
    w_foot,
    s_grid=None,
    rho_U=0.35,
    eps_t=None,
    eps_recover=None,
    family=None,
    with_flag=False,
):
    """Recovered d(exp(z0, t0), w): infimum of first-meeting times.

    For each inward ray eta at w, the earliest time s consistent with
    every family member's records estimates the first meeting of eta with
    the focus; the minimum over eta is the recovered distance.  The
    consistency window eps_recover is wider than eps_t because a grid ray
    eta undershoots the focus by up to half the angular spacing, which
    spreads the per-member implied times; the median collapses the spread
    again.  Passing an explicit s_grid instead scans that grid for values
    accepted by every member and returns the midpoint of the first
    accepted run.
    """
    if eps_t is None:
        eps_t = float(view.params.get("eps_t", 4.0 * view.params.get("eps_x", 1e-3)))
    if eps_recover is None:
        eps_recover = 2.0 * eps_t
    grid = view.grid
    if family is None:
        family = _family_at_depth(view, z0_foot, t0, rho_U, eps_t)
        if family is None:
            raise DistanceError(
                f"no focusing family at (z0={z0_foot}, t0={t0}); cannot recover distances"
            )
    accepted = []
    for eta in grid.rays_at(w_foot):
        if s_grid is not None:
            got = _first_grid_run(view, int(eta), family, s_grid, eps_recover)
        else:
            got = _consistent_meeting(
                view, int(eta), family, eps_recover, quorum=0.8
            )
        if got is not None:
            accepted.append(got)
    if not accepted:
        raise DistanceError(
            f"empty meeting set for (z0={z0_foot}, t0={t0:.4f}, w={w_foot}); "
            f"family coverage {family.coverage:.2f} with {len(family)} members"
        )
    # rays threading the meeting region off-center read the time low or
    # high in proportion to their member spread, so among rays near the
    # infimum the tightest-supported one is the least biased
    s_floor = min(s for s, _ in accepted)
    near = [(sp, s) for s, sp in accepted if s <= s_floor + 2.0 * eps_t]
    spread, best = min(near)
    boundary_flag = spread > 1.5 * eps_t
    return (float(best), boundary_flag) if with_flag else float(best)


def _first_grid_run(view, eta, family, s_grid, eps_recover, quorum=0.8):
    """Midpoint of the first s-grid run accepted by a member quorum."""
    grid = view.grid
    counts = np.zeros(len(s_grid))
    n_eligible = 0
    for m, t_m in zip(family.ray_ids, family.times):
        if _sin_angle(grid, eta, m) < 0.1:
            continue
        n_eligible += 1
        tot = view.totals_between(eta, int(m))
        vals = tot - t_m
        vals = vals[vals > 0.0]
        if not len(vals):
            continue
        dev = np.min(np.abs(s_grid[:, None] - vals[None, :]), axis=1)
        counts += dev <= eps_recover
    if n_eligible < max(3, 0.5 * len(family)):
        return None
    ok_all = counts >= quorum * n_eligible
    if not ok_all.any():
        return None
    idx = np.flatnonzero(ok_all)
    run_end = idx[0]
    while run_end + 1 < len(s_grid) and ok_all[run_end + 1]:
        run_end += 1
    s_mid = float(0.5 * (s_grid[idx[0]] + s_grid[run_end]))
    return s_mid, float(s_grid[run_end] - s_grid[idx[0]])


@dataclass
class BoundaryDistanceTable:
    """Rows labeled (boundary footpoint, depth); values d(row point, w)."""

    z_foot: np.ndarray  # (N,)
    t: np.ndarray  # (N,)
    values: np.ndarray  # (N, B)
    tags: np.ndarray  # (N, B) int8: 0 missing, 1 recovered, 2 oracle/forward
    meta: dict = field(default_factory=dict)

    @property
    def n_rows(self):
        return len(self.t)

    def missing_fraction(self):
        return float(np.mean(self.tags == 0))

    def to_csv(self, path):
        B = self.values.shape[1]
        with open(path, "w") as fh:
            fh.write("z_foot,t," + ",".join(f"w{j}" for j in range(B)) + "\n")
            for i in range(self.n_rows):
                row = ",".join(
                    f"{v:.10g}" if np.isfinite(v) else "" for v in self.values[i]
                )
                fh.write(f"{self.z_foot[i]},{self.t[i]:.10g},{row}\n")

    @classmethod
    def from_csv(cls, path, meta=None):
        z, t, vals = [], [], []
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("z_foot,t,"):
                raise ConfigError(f"not a distance table: {path}")
            for line in fh:
                parts = line.rstrip("\n").split(",")
                z.append(int(parts[0]))
                t.append(float(parts[1]))
                vals.append([float(p) if p else np.nan for p in parts[2:]])
        values = np.asarray(vals)
        tags = np.where(np.isfinite(values), 1, 0).astype(np.int8)
        return cls(
            z_foot=np.asarray(z),
            t=np.asarray(t),
            values=values,
            tags=tags,
            meta=dict(meta or {}),
        )


def build_boundary_distance_table(
    view: RelationView,
    rho_U,
    eps_t,
    n_depths=10,
    footpoints=None,
    target_footpoints=None,
    taus=None,
    missing_budget=0.05,
    coverage_min=0.8,
):
    """Assemble the recovered boundary distance table.

    Per footpoint z: the cut value tau(z) is recovered first, then rows at
    depths k/n_depths * tau(z) are filled by the meeting-time infimum for
    every target boundary point.  Rows carry only the (z, t) label.
    """
    grid = view.grid
    if footpoints is None:
        footpoints = range(len(grid.foot_points))
    if target_footpoints is None:
        target_footpoints = list(range(len(grid.foot_points)))
    z_out, t_out, rows, tagrows = [], [], [], []
    for z in footpoints:
        if taus is not None and z in taus:
            tau = taus[z]
        else:
            tau = boundary_cut_distance_from_relation(
                view, z, rho_U, eps_t, coverage_min=coverage_min
            )
        chain = [
            fam
            for _, fam in family_ladder(
                view, z, rho_U, eps_t, tau, 4.0 * eps_t,
                coverage_min=coverage_min,
            )
            if fam is not None
        ]
        for k in range(1, n_depths + 1):
            t0 = tau * k / n_depths
            # keep the family strictly below the diagonal exit bound
            t0 = min(t0, view.exit_time(grid.normal_ray_at(z)) - 2.0 * eps_t)
            t0 = max(t0, 2.0 * eps_t)
            fam = None
            if chain:
                base = min(chain, key=lambda f: abs(f.t0 - t0))
                fam = detect_focusing_family(
                    view, z, t0, _rho_at(grid, rho_U, t0), eps_t,
                    coverage_min=coverage_min,
                    warm=(base.t0, dict(zip(base.foot_ids.tolist(), base.times.tolist()))),
                )
            vals = np.full(len(target_footpoints), np.nan)
            tags = np.zeros(len(target_footpoints), dtype=np.int8)
            if fam is not None:
                for col, w in enumerate(target_footpoints):
                    try:
                        vals[col] = boundary_distance_from_relation(
                            view, z, t0, w, eps_t=eps_t, family=fam
                        )
                        tags[col] = 1
                    except DistanceError:
                        pass
            z_out.append(z)
            t_out.append(t0)
            rows.append(vals)
            tagrows.append(tags)
    table = BoundaryDistanceTable(
        z_foot=np.asarray(z_out),
        t=np.asarray(t_out),
        values=np.asarray(rows),
        tags=np.asarray(tagrows),
        meta={
            "eps_t": float(eps_t),
            "rho_U": float(rho_U),
            "n_depths": int(n_depths),
            "targets": [int(w) for w in target_footpoints],
        },
    )
    if table.missing_fraction() > missing_budget:
        raise CoverageError(
            f"distance table {100 * table.missing_fraction():.1f}% missing "
            f"(budget {100 * missing_budget:.0f}%)"
        )
    return table


@dataclass
class TableComparison:
    max_discrepancy: float
    mean_discrepancy: float
    row_minima_1to2: np.ndarray
    row_minima_2to1: np.ndarray

    def within(self, tol):
        return self.max_discrepancy <= tol


def compare_tables(tab1, tab2, xi=None):
    """Symmetric Chamfer distance between the two row sets.

    Rows are compared by sup-norm over columns (after applying the
    boundary matching permutation xi to tab2's columns); each row is
    scored by its nearest counterpart, in both directions.  Missing values
    are ignored columnwise.
    """
    A = tab1.values
    B = tab2.values if xi is None else tab2.values[:, np.asarray(xi)]
    diff = np.abs(A[:, None, :] - B[None, :, :])
    both = np.isfinite(A[:, None, :]) & np.isfinite(B[None, :, :])
    diff = np.where(both, diff, -np.inf)
    sup = np.max(diff, axis=2)
    empty = ~both.any(axis=2)
    sup[empty] = np.inf
    m12 = np.min(sup, axis=1)
    m21 = np.min(sup, axis=0)
    return TableComparison(
        max_discrepancy=float(max(np.max(m12), np.max(m21))),
        mean_discrepancy=float(0.5 * (np.mean(m12) + np.mean(m21))),
        row_minima_1to2=m12,
        row_minima_2to1=m21,
    )


# ----------------------------------------------------------------------
# layer stripping


def layer_strip(model, domain, rel: ScatterRelation, s, legs_min=None):
    """Relation on the inner domain f >= s from the relation on M.

    The metric is trusted on the slab f <= s.  Each outer grid ray is
    continued to its leaf-crossing window [a_in, a_out]; the surviving
    rays, re-footed at their entry states on the leaf, form a scattered
    inner grid, and outer records with both legs inside their rays'
    windows are shifted by the transit times.  Because the inner grid is
    the image of the outer one, the correspondence v -> v' is exact at the
    id level and the declared rule is literally
    t_inner = t_outer - a(v) - a(w).
    """
    grid = rel.grid
    if legs_min is None:
        legs_min = float(rel.params.get("legs_min", 0.0))
    t_cap = float(rel.params.get("t_cap"))
    delta_s = float(rel.params.get("delta_s"))
    a_in = np.full(grid.n_rays, np.nan)
    a_out = np.full(grid.n_rays, np.nan)
    entry_x = np.zeros((grid.n_rays, grid.dim))
    entry_v = np.zeros((grid.n_rays, grid.dim))
    for r in range(grid.n_rays):
        path = integrate_geodesic(
            model, domain, grid.footpoint_of(r), grid.directions[r], t_cap, delta_s
        )
        cross = leaf_crossings(path, domain, s)
        if not cross:
            continue
        enters = [c for c in cross if c[1] > 0]
        leaves = [c for c in cross if c[1] < 0]
        if not enters:
            continue
        if len(enters) > 1:
            raise ConfigError(
                f"ray {r} crosses the leaf f={s} inward twice; foliation not convex here"
            )
        t_in = enters[0][0]
        t_leave = min((c[0] for c in leaves if c[0] > t_in), default=path.t_end)
        a_in[r] = t_in
        a_out[r] = t_leave
        entry_x[r], entry_v[r] = (arr.copy() for arr in path.state(t_in))

    alive = np.flatnonzero(np.isfinite(a_in))
    if not len(alive):
        raise ConfigError(f"no grid ray reaches the leaf f={s}")
    new_id = np.full(grid.n_rays, -1, dtype=np.int64)
    new_id[alive] = np.arange(len(alive))

    ok = (
        (new_id[rel.rec_a] >= 0)
        & (new_id[rel.rec_b] >= 0)
        & (rel.rec_t1 > a_in[rel.rec_a] + legs_min)
        & (rel.rec_t1 < a_out[rel.rec_a])
        & (rel.rec_t2 > a_in[rel.rec_b] + legs_min)
        & (rel.rec_t2 < a_out[rel.rec_b])
    )
    inner_grid = scattered_ray_grid(
        entry_x[alive],
        entry_v[alive],
        meta={"stripped_at": float(s), "parent_rays": [int(r) for r in alive]},
    )
    na = new_id[rel.rec_a[ok]]
    nb = new_id[rel.rec_b[ok]]
    nt1 = rel.rec_t1[ok] - a_in[rel.rec_a[ok]]
    nt2 = rel.rec_t2[ok] - a_in[rel.rec_b[ok]]
    # reindexing can invert the id order; restore the a <= b canonical form
    swap = na > nb
    na[swap], nb[swap] = nb[swap], na[swap].copy()
    nt1[swap], nt2[swap] = nt2[swap], nt1[swap].copy()
    params = dict(rel.params)
    params.update({"stripped_at": float(s)})
    return ScatterRelation(
        grid=inner_grid,
        exit_times=(a_out - a_in)[alive],
        rec_a=na.astype(np.uint32),
        rec_b=nb.astype(np.uint32),
        rec_t1=nt1,
        rec_t2=nt2,
        rec_miss=rel.rec_miss[ok].copy(),
        break_points=None if rel.break_points is None else rel.break_points[ok].copy(),
        params=params,
        meta=dict(rel.meta),
    )


# ----------------------------------------------------------------------
# Bolker counterexample probe


@dataclass
class BolkerPair:
    opening_angle: float
    impact_parameter: float
    entry_point: np.ndarray
    entry_dir: np.ndarray
    partner_point: np.ndarray
    partner_dir: np.ndarray
    break_p: np.ndarray
    break_q: np.ndarray
    t_pair_1: tuple  # (leg along entry ray, leg along partner ray) at p
    t_pair_2: tuple  # same at q
    total_1: float
    total_2: float
    separation: float
    geodesic_xy: np.ndarray  # sampled entry geodesic, for plotting
    mirror_xy: np.ndarray


def bolker_counterexample(
    model,
    domain,
    n_search=300,
    eps_t=None,
    eps_x=None,
    separation_floor=None,
    angle_margin=0.08,
):
    """Pair of broken rays with the same boundary data and total length.

    Exists when some chord of the radial medium has opening angle in
    (pi, 2 pi): such a geodesic meets its reflection through the center
    twice, and breaking at either meeting gives the same entry ray, the
    same exit ray, and the same total time.  Returns None when the sweep
    finds no winding chord (straight media).
    """
    if model.dim != 2 or not domain.is_ball:
        raise ConfigError("the counterexample probe runs on the planar disc")
    if model.kind == "euclidean":
        return None
    if not (model._riemannian and model.eps == 0.0):
        raise ConfigError("probe needs a radially symmetric conformal model")
    profile = model.profile
    if eps_x is None:
        eps_x = 2e-3 * domain.chart_diameter()
    if eps_t is None:
        eps_t = 4.0 * eps_x
    if separation_floor is None:
        separation_floor = 10.0 * eps_x

    a_max, p_at_max = radial.chord_angle_max(profile, n_grid=n_search)
    if a_max <= np.pi + angle_margin:
        return None
    target = min(np.pi + 0.6 * (a_max - np.pi), 2 * np.pi - angle_margin)
    roots = radial.solve_chord_for_angle(profile, target, n_grid=n_search)
    if not roots:
        return None
    p_star, L_quad = min(roots, key=lambda r: abs(r[0] - p_at_max))

    # entry state at boundary angle 0 with the chosen impact parameter
    A = np.array([domain.semi_axes[0], 0.0])
    alpha = radial.entry_angle_of_p(profile, p_star)
    nu_hat = np.array([-1.0, 0.0])
    tan_hat = np.array([0.0, 1.0])
    v = np.asarray(model.unit_vector(A, np.cos(alpha) * nu_hat + np.sin(alpha) * tan_hat))
    path = trace(model, domain, A, v, t_cap=4.0 * L_quad, sample_ds=eps_x / 2)
    if path.exit_time is None:
        raise ConfigError("winding chord failed to exit; profile too steep for the cap")
    L = path.exit_time
    exit_pt = path.position(L)
    opening = float(np.arctan2(exit_pt[1], exit_pt[0])) % (2 * np.pi)
    if not np.pi < opening < 2 * np.pi:
        # orientation flip: try the mirror-signed tangent component
        v = np.asarray(model.unit_vector(A, np.cos(alpha) * nu_hat - np.sin(alpha) * tan_hat))
        path = trace(model, domain, A, v, t_cap=4.0 * L_quad, sample_ds=eps_x / 2)
        L = path.exit_time
        exit_pt = path.position(L)
        opening = float(np.arctan2(exit_pt[1], exit_pt[0])) % (2 * np.pi)
        if not np.pi < opening < 2 * np.pi:
            return None

    # crossings with the central reflection: gamma(t1) = -gamma(t2)
    ts = np.linspace(0.0, L, 600)
    G = path.position(ts)
    S = np.linalg.norm(G[:, None, :] + G[None, :, :], axis=2)
    iu = np.triu_indices(len(ts), k=10)
    order = np.argsort(S[iu])
    seeds = []
    for idx in order[:80]:
        i, j = iu[0][idx], iu[1][idx]
        if all(abs(ts[i] - s0) > 0.15 * L or abs(ts[j] - s1) > 0.15 * L for s0, s1 in seeds):
            seeds.append((ts[i], ts[j]))
        if len(seeds) == 2:
            break
    if len(seeds) < 2:
        return None

    def polish(seed):
        def obj(q):
            q = np.clip(q, 0.0, L)
            return float(np.sum((path.position(q[0]) + path.position(q[1])) ** 2))

        res = minimize(
            obj,
            np.asarray(seed),
            method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-24},
        )
        return np.clip(res.x, 0.0, L), float(np.sqrt(res.fun))

    (t1a, t2a), miss_a = polish(seeds[0])
    (t1b, t2b), miss_b = polish(seeds[1])
    if max(miss_a, miss_b) > eps_x:
        return None
    P = path.position(t1a)
    Q = path.position(t1b)
    total_1 = float(t1a + t2a)
    total_2 = float(t1b + t2b)
    sep = float(np.linalg.norm(P - Q))
    samples = path.position(np.linspace(0.0, L, 400))
    return BolkerPair(
        opening_angle=opening,
        impact_parameter=float(p_star),
        entry_point=A,
        entry_dir=v,
        partner_point=-A,
        partner_dir=-v,
        break_p=P,
        break_q=Q,
        t_pair_1=(float(t1a), float(t2a)),
        t_pair_2=(float(t1b), float(t2b)),
        total_1=total_1,
        total_2=total_2,
        separation=sep,
        geodesic_xy=samples,
        mirror_xy=-samples,
    )
