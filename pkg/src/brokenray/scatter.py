"""Discrete broken scattering relation: generation, queries, persistence.

Rays from a grid of inward boundary vectors are integrated to their exit;
meetings between path pairs closer than eps_x are turned into records
(id_a, id_b, t, t1, t2) with t = t1 + t2 exactly.  Candidate meetings come
from a uniform spatial hash over short path segments; each candidate pair
is refined by a closed-form closest-approach between the two segments and
per-pair time clusters keep their minimal-miss representative.  The
trivial diagonal family (a ray meeting itself at the same parameter) is
compressed into the exit-time table instead of being materialized.

Reconstruction code is expected to go through RelationView, which exposes
ids, total times, exit times and boundary geometry but neither legs nor
debug break points.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .domain import inward_normal
from .errors import BudgetError, ConfigError
from .geodesics import BOUNDARY_EXIT, integrate_geodesic

MAGIC = b"BSRL"
FORMAT_VERSION = 1

_SEG_STRIDE = 8  # samples per hashed segment
_SAMPLE_BUDGET = 3e8


# ----------------------------------------------------------------------
# ray grids


@dataclass
class RayGrid:
    """Inward unit rays over boundary footpoints.

    product mode: several directions per footpoint of a boundary atlas,
    the exact Finsler normal flagged.  scattered mode: one ray per
    footpoint, as produced by layer stripping.
    """

    mode: str
    foot_points: np.ndarray  # (B, n)
    foot_ids: np.ndarray  # (R,) index into foot_points, nondecreasing
    directions: np.ndarray  # (R, n), F-unit
    is_normal: np.ndarray  # (R,) bool
    inwardness: np.ndarray  # (R,)
    atlas: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.foot_ids = np.asarray(self.foot_ids, dtype=np.uint32)
        if np.any(np.diff(self.foot_ids.astype(np.int64)) < 0):
            raise ConfigError("rays must be grouped by footpoint")
        self._foot_offsets = np.searchsorted(
            self.foot_ids, np.arange(len(self.foot_points) + 1)
        )

    @property
    def n_rays(self):
        return len(self.directions)

    @property
    def dim(self):
        return self.foot_points.shape[1]

    def rays_at(self, foot_id):
        return np.arange(self._foot_offsets[foot_id], self._foot_offsets[foot_id + 1])

    def normal_ray_at(self, foot_id):
        rays = self.rays_at(foot_id)
        hits = rays[self.is_normal[rays]]
        return int(hits[0]) if len(hits) else None

    def footpoint_of(self, ray):
        return self.foot_points[self.foot_ids[ray]]

    def spec(self):
        return {
            "mode": self.mode,
            "n_footpoints": int(len(self.foot_points)),
            "n_rays": int(self.n_rays),
            **self.meta,
        }


def build_ray_grid(model, domain, atlas, n_dirs, inwardness_min=1e-2, seed=0):
    """Product grid: per atlas point, the Finsler normal plus a direction fan.

    2-d fans sweep the chart angle between the normal and the tangent;
    3-d fans tile the inward hemisphere in rings.  Directions with
    inwardness below the threshold are dropped (grazing rays).
    """
    dim = domain.dim
    foot_ids, dirs, normals, inw = [], [], [], []
    for i in range(len(atlas)):
        z = atlas.points[i]
        nu = inward_normal(model, domain, z, seed=seed)
        nu_hat = nu / np.linalg.norm(nu)
        frame = atlas.tangent_frame(i)
        cands = [(nu, True)]
        if dim == 2:
            T = frame[0]
            betas = -np.pi / 2 + (np.arange(n_dirs) + 0.5) * np.pi / n_dirs
            for b in betas:
                u = np.cos(b) * nu_hat + np.sin(b) * T
                cands.append((np.asarray(model.unit_vector(z, u)), False))
        else:
            dpsi = np.sqrt(2 * np.pi / n_dirs)
            n_rings = max(2, int(np.ceil((np.pi / 2) / dpsi)))
            for k in range(n_rings):
                psi = (k + 0.5) * (np.pi / 2) / n_rings
                m = max(1, int(round(2 * np.pi * np.sin(psi) / ((np.pi / 2) / n_rings))))
                for j in range(m):
                    a = 2 * np.pi * (j + 0.5 * (k % 2)) / m
                    u = (
                        np.cos(psi) * nu_hat
                        + np.sin(psi) * (np.cos(a) * frame[0] + np.sin(a) * frame[1])
                    )
                    cands.append((np.asarray(model.unit_vector(z, u)), False))
        for u, flag in cands:
            w = float(model.inner(z, nu, nu, u))
            if w < inwardness_min:
                continue
            foot_ids.append(i)
            dirs.append(u)
            normals.append(flag)
            inw.append(w)
    return RayGrid(
        mode="product",
        foot_points=atlas.points.copy(),
        foot_ids=np.asarray(foot_ids, dtype=np.uint32),
        directions=np.asarray(dirs),
        is_normal=np.asarray(normals, dtype=bool),
        inwardness=np.asarray(inw),
        atlas=atlas,
        meta={"n_dirs": int(n_dirs), "inwardness_min": float(inwardness_min)},
    )


def scattered_ray_grid(foot_points, directions, inwardness=None, meta=None):
    """One ray per footpoint; used for stripped relations."""
    foot_points = np.asarray(foot_points, dtype=float)
    directions = np.asarray(directions, dtype=float)
    n = len(foot_points)
    return RayGrid(
        mode="scattered",
        foot_points=foot_points,
        foot_ids=np.arange(n, dtype=np.uint32),
        directions=directions,
        is_normal=np.zeros(n, dtype=bool),
        inwardness=np.full(n, np.nan) if inwardness is None else np.asarray(inwardness),
        atlas=None,
        meta=dict(meta or {}),
    )


# ----------------------------------------------------------------------
# relation container


@dataclass
class ScatterRelation:
    """Immutable record set plus the per-ray exit-time table."""

    grid: RayGrid
    exit_times: np.ndarray  # (R,) f64, NaN if the ray never exited (capped)
    rec_a: np.ndarray  # (K,) u32, rec_a <= rec_b
    rec_b: np.ndarray  # (K,) u32
    rec_t1: np.ndarray  # (K,) f64, time along a
    rec_t2: np.ndarray  # (K,) f64, time along b
    rec_miss: np.ndarray  # (K,) f64, refined closest-approach distance
    break_points: np.ndarray | None  # (K, n) debug only
    params: dict
    meta: dict

    def __post_init__(self):
        self._pair_key = self.rec_a.astype(np.uint64) * np.uint64(2**32) + self.rec_b.astype(
            np.uint64
        )
        order = np.lexsort((self.rec_t1, self._pair_key))
        for name in ("rec_a", "rec_b", "rec_t1", "rec_t2", "rec_miss"):
            setattr(self, name, getattr(self, name)[order])
        if self.break_points is not None:
            self.break_points = self.break_points[order]
        self._pair_key = self._pair_key[order]
        self._by_ray = None

    @property
    def n_records(self):
        return len(self.rec_a)

    @property
    def rec_t(self):
        return self.rec_t1 + self.rec_t2

    def records_between(self, a, b):
        """(t_along_a, t_along_b, miss) for the unordered pair, both roles."""
        lo_id, hi_id = (a, b) if a <= b else (b, a)
        key = np.uint64(lo_id) * np.uint64(2**32) + np.uint64(hi_id)
        lo = np.searchsorted(self._pair_key, key, side="left")
        hi = np.searchsorted(self._pair_key, key, side="right")
        t1, t2, m = self.rec_t1[lo:hi], self.rec_t2[lo:hi], self.rec_miss[lo:hi]
        if a <= b:
            return t1, t2, m
        return t2, t1, m

    def totals_between(self, a, b):
        t1, t2, _ = self.records_between(a, b)
        return t1 + t2

    def _build_by_ray(self):
        own = np.concatenate([self.rec_a, self.rec_b])
        other = np.concatenate([self.rec_b, self.rec_a])
        t_own = np.concatenate([self.rec_t1, self.rec_t2])
        t_oth = np.concatenate([self.rec_t2, self.rec_t1])
        order = np.lexsort((t_own, own))
        own = own[order]
        self._by_ray = {
            "offsets": np.searchsorted(own, np.arange(self.grid.n_rays + 1)),
            "partner": other[order],
            "t_own": t_own[order],
            "t_other": t_oth[order],
        }

    def partners_of(self, a):
        """(partner ids, t_along_a, t_along_partner) over all records of a."""
        if self._by_ray is None:
            self._build_by_ray()
        lo = self._by_ray["offsets"][a]
        hi = self._by_ray["offsets"][a + 1]
        return (
            self._by_ray["partner"][lo:hi],
            self._by_ray["t_own"][lo:hi],
            self._by_ray["t_other"][lo:hi],
        )

    def holds(self, a, b, t, eps_t):
        """Whether a R_t b within eps_t (Def of the broken relation)."""
        if a == b:
            tau = self.exit_times[a]
            if np.isfinite(tau) and -eps_t <= t <= 2.0 * tau + eps_t:
                return True
        totals = self.totals_between(a, b)
        if len(totals) and np.min(np.abs(totals - t)) <= eps_t:
            return True
        return False

    def view(self):
        return RelationView(self)

    # ------------------------------------------------------------------

    def save(self, path):
        header = {
            "format": "broken-scattering-relation",
            "version": FORMAT_VERSION,
            "model": self.meta.get("model"),
            "model_hash": self.meta.get("model_hash"),
            "domain": self.meta.get("domain"),
            "grid": self.grid.spec(),
            "params": self.params,
            "counts": {"rays": int(self.grid.n_rays), "records": int(self.n_records)},
            "blocks": [],
        }
        blocks = [
            ("foot_points", self.grid.foot_points.astype("<f8")),
            ("foot_ids", self.grid.foot_ids.astype("<u4")),
            ("directions", self.grid.directions.astype("<f8")),
            ("is_normal", self.grid.is_normal.astype("<u1")),
            ("inwardness", self.grid.inwardness.astype("<f8")),
            ("exit_times", self.exit_times.astype("<f8")),
            ("rec_ids", np.stack([self.rec_a, self.rec_b], axis=1).astype("<u4")),
            (
                "rec_times",
                np.stack([self.rec_t, self.rec_t1, self.rec_t2], axis=1).astype("<f8"),
            ),
            ("rec_miss", self.rec_miss.astype("<f8")),
        ]
        if self.break_points is not None:
            blocks.append(("debug_break_points", self.break_points.astype("<f8")))
        payloads = []
        for name, arr in blocks:
            raw = arr.tobytes()
            header["blocks"].append(
                {"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape), "nbytes": len(raw)}
            )
            payloads.append(raw)
        head = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(np.uint32(FORMAT_VERSION).tobytes())
            fh.write(np.uint64(len(head)).tobytes())
            fh.write(head)
            for raw in payloads:
                fh.write(raw)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise ConfigError(f"not a relation container: bad magic {magic!r}")
            version = int(np.frombuffer(fh.read(4), dtype=np.uint32)[0])
            if version != FORMAT_VERSION:
                raise ConfigError(f"unsupported relation format version {version}")
            head_len = int(np.frombuffer(fh.read(8), dtype=np.uint64)[0])
            header = json.loads(fh.read(head_len).decode())
            arrays = {}
            for blk in header["blocks"]:
                raw = fh.read(blk["nbytes"])
                arrays[blk["name"]] = np.frombuffer(raw, dtype=blk["dtype"]).reshape(
                    blk["shape"]
                ).copy()
        grid = RayGrid(
            mode=header["grid"].get("mode", "product"),
            foot_points=arrays["foot_points"],
            foot_ids=arrays["foot_ids"],
            directions=arrays["directions"],
            is_normal=arrays["is_normal"].astype(bool),
            inwardness=arrays["inwardness"],
            atlas=None,
            meta={k: v for k, v in header["grid"].items() if k not in ("mode", "n_footpoints", "n_rays")},
        )
        return cls(
            grid=grid,
            exit_times=arrays["exit_times"],
            rec_a=arrays["rec_ids"][:, 0],
            rec_b=arrays["rec_ids"][:, 1],
            rec_t1=arrays["rec_times"][:, 1],
            rec_t2=arrays["rec_times"][:, 2],
            rec_miss=arrays["rec_miss"],
            break_points=arrays.get("debug_break_points"),
            params=header["params"],
            meta={
                "model": header.get("model"),
                "model_hash": header.get("model_hash"),
                "domain": header.get("domain"),
            },
        )

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("id_a,id_b,t,t1,t2\n")
            t = self.rec_t
            for k in range(self.n_records):
                fh.write(
                    f"{self.rec_a[k]},{self.rec_b[k]},{t[k]:.12g},"
                    f"{self.rec_t1[k]:.12g},{self.rec_t2[k]:.12g}\n"
                )


def exit_time_from_relation(rel, a):
    """tau_exit(a) as the relation sees it: sup of the diagonal family.

    The trivial diagonal (a, a, 2 t1), t1 <= tau, is stored in compressed
    form as the exit-time table, so the sup is a table lookup.
    """
    tau = rel.exit_times[a]
    if not np.isfinite(tau):
        raise ConfigError(f"ray {a} has no diagonal family (never exited)")
    return float(tau)


class RelationView:
    """Reconstruction-facing query surface: ids and total times only.

    Withholds the stored legs and debug break points so the boundary
    determination pipeline consumes exactly the data the uniqueness
    statement grants it.
    """

    def __init__(self, rel: ScatterRelation):
        self._rel = rel
        self.grid = rel.grid
        self.params = rel.params

    @property
    def n_rays(self):
        return self._rel.grid.n_rays

    def exit_time(self, a):
        return exit_time_from_relation(self._rel, a)

    def holds(self, a, b, t, eps_t):
        return self._rel.holds(a, b, t, eps_t)

    def totals_between(self, a, b):
        return self._rel.totals_between(a, b)

    def partner_totals(self, a):
        """(partner ids, total times) over all records involving a."""
        partner, t_own, t_oth = self._rel.partners_of(a)
        return partner, t_own + t_oth


# ----------------------------------------------------------------------
# generation


def _integrate_batch(model, domain, grid, ray_ids, delta_s, t_cap, rtol, atol):
    ts, xs, owner, taus, terms = [], [], [], [], []
    for r in ray_ids:
        path = integrate_geodesic(
            model,
            domain,
            grid.footpoint_of(r),
            grid.directions[r],
            t_cap,
            delta_s,
            rtol=rtol,
            atol=atol,
        )
        ts.append(path.t)
        xs.append(path.x)
        owner.append(np.full(len(path.t), r, dtype=np.uint32))
        taus.append(path.exit_time if path.exit_time is not None else np.nan)
        terms.append(path.termination)
    return ts, xs, owner, taus, terms


def _segment_pairs(seg_p0, seg_p1, pair_a, pair_b):
    """Closest approach between segment pairs; returns (s, u, miss) in [0,1]."""
    d1 = seg_p1[pair_a] - seg_p0[pair_a]
    d2 = seg_p1[pair_b] - seg_p0[pair_b]
    r = seg_p0[pair_a] - seg_p0[pair_b]
    a = np.einsum("ij,ij->i", d1, d1)
    e = np.einsum("ij,ij->i", d2, d2)
    b = np.einsum("ij,ij->i", d1, d2)
    c = np.einsum("ij,ij->i", d1, r)
    f = np.einsum("ij,ij->i", d2, r)
    denom = a * e - b * b
    s = np.where(denom > 1e-18, np.clip((b * f - c * e) / np.where(denom > 1e-18, denom, 1.0), 0.0, 1.0), 0.0)
    u = np.where(e > 1e-18, (b * s + f) / np.where(e > 1e-18, e, 1.0), 0.0)
    # clamp u, then re-solve s on the clamped faces
    u_cl = np.clip(u, 0.0, 1.0)
    need = u_cl != u
    s = np.where(need, np.clip((b * u_cl - c) / np.where(a > 1e-18, a, 1.0), 0.0, 1.0), s)
    u = u_cl
    gap = r + d1 * s[:, None] - d2 * u[:, None]
    miss = np.linalg.norm(gap, axis=1)
    mid = seg_p0[pair_b] + d2 * u[:, None] + 0.5 * gap
    return s, u, miss, mid


def generate_relation(
    model,
    domain,
    grid,
    eps_x,
    delta_s,
    eps_t=None,
    t_cap=None,
    legs_min=None,
    footpoint_window=0.15,
    loop_window=0.05,
    threads=1,
    keep_break_points=True,
    rtol=1e-10,
    atol=1e-12,
):
    """Generate the broken scattering relation for a ray grid.

    Integrates every grid ray to its exit, hashes path segments into a
    uniform grid, refines candidate segment pairs to closest approach, and
    keeps meetings with miss <= eps_x.  Same-footpoint pairs near the
    common footpoint and same-ray pairs within the loop window are
    spurious under the tolerance and are excluded; legs below legs_min
    (default delta_s / 2) are dropped.  Per pair, meeting times are
    clustered with gap eps_t (default 4 eps_x) and each cluster keeps its
    minimal-miss representative.
    """
    if eps_t is None:
        eps_t = 4.0 * eps_x
    if legs_min is None:
        legs_min = 0.5 * delta_s
    if t_cap is None:
        from .flow import suggest_t_cap

        t_cap = suggest_t_cap(model, domain)
    est_samples = grid.n_rays * (t_cap / delta_s)
    if est_samples > _SAMPLE_BUDGET:
        raise BudgetError(
            f"~{est_samples:.2g} path samples exceed the budget; "
            f"coarsen delta_s (now {delta_s}) or shrink the grid"
        )

    ray_ids = np.arange(grid.n_rays)
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = np.array_split(ray_ids, 4 * threads)
        parts = []
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futs = [
                pool.submit(
                    _integrate_batch, model, domain, grid, ch, delta_s, t_cap, rtol, atol
                )
                for ch in chunks
                if len(ch)
            ]
            for fu in futs:
                parts.append(fu.result())
        ts = [t for p in parts for t in p[0]]
        xs = [x for p in parts for x in p[1]]
        owner = [o for p in parts for o in p[2]]
        taus = [t for p in parts for t in p[3]]
        terms = [t for p in parts for t in p[4]]
    else:
        ts, xs, owner, taus, terms = _integrate_batch(
            model, domain, grid, ray_ids, delta_s, t_cap, rtol, atol
        )

    exit_times = np.asarray(taus, dtype=float)
    n_capped = int(np.sum(~np.isfinite(exit_times)))

    T = np.concatenate(ts)
    X = np.concatenate(xs)
    R = np.concatenate(owner)
    n_samples = len(T)
    ray_start = np.zeros(n_samples, dtype=bool)
    ray_start[np.cumsum([0] + [len(t) for t in ts[:-1]])] = True
    sample_offsets = np.flatnonzero(ray_start)
    sample_counts = np.asarray([len(t) for t in ts])

    # segment table: every _SEG_STRIDE samples, plus the ray-final partial
    seg_i0, seg_i1 = [], []
    for off, cnt in zip(sample_offsets, sample_counts):
        starts = np.arange(0, cnt - 1, _SEG_STRIDE)
        ends = np.minimum(starts + _SEG_STRIDE, cnt - 1)
        seg_i0.append(off + starts)
        seg_i1.append(off + ends)
    seg_i0 = np.concatenate(seg_i0)
    seg_i1 = np.concatenate(seg_i1)
    seg_ray = R[seg_i0]
    p0, p1 = X[seg_i0], X[seg_i1]
    t0, t1 = T[seg_i0], T[seg_i1]

    # uniform hash over inflated segment bounding boxes
    seg_len = np.linalg.norm(p1 - p0, axis=1)
    h = float(np.max(seg_len)) + 2.0 * eps_x
    lo = np.minimum(p0, p1) - eps_x
    hi = np.maximum(p0, p1) + eps_x
    c_lo = np.floor(lo / h).astype(np.int64)
    c_hi = np.floor(hi / h).astype(np.int64)
    span = c_hi - c_lo
    dim = X.shape[1]
    offsets_nd = np.stack(
        np.meshgrid(*([np.arange(int(span.max()) + 1)] * dim), indexing="ij"), axis=-1
    ).reshape(-1, dim)
    key_stride = np.int64(2) ** 21
    key_base = np.int64(2) ** 20

    cell_keys, cell_segs = [], []
    for off in offsets_nd:
        mask = np.all(off[None, :] <= span, axis=1)
        if not np.any(mask):
            continue
        cells = c_lo[mask] + off[None, :]
        key = np.zeros(int(mask.sum()), dtype=np.int64)
        for d in range(dim):
            key = key * key_stride + (cells[:, d] + key_base)
        cell_keys.append(key)
        cell_segs.append(np.flatnonzero(mask))
    cell_keys = np.concatenate(cell_keys)
    cell_segs = np.concatenate(cell_segs).astype(np.int64)

    order = np.argsort(cell_keys, kind="stable")
    cell_keys = cell_keys[order]
    cell_segs = cell_segs[order]
    group_bounds = np.flatnonzero(np.diff(cell_keys)) + 1
    group_bounds = np.concatenate([[0], group_bounds, [len(cell_keys)]])

    cand_a_list, cand_b_list = [], []
    cand_t1, cand_t2, cand_miss, cand_mid = [], [], [], []

    def flush(pa, pb):
        # duplicates from shared cells survive; the time clustering merges
        # them, so no global unique pass is needed
        ra, rb = seg_ray[pa], seg_ray[pb]
        same_ray = ra == rb
        keep = ~(same_ray & (np.abs(t0[pa] - t0[pb]) < loop_window))
        same_foot = grid.foot_ids[ra] == grid.foot_ids[rb]
        near_foot = (t1[pa] < footpoint_window) & (t1[pb] < footpoint_window)
        keep &= ~(same_foot & ~same_ray & near_foot)
        pa, pb = pa[keep], pb[keep]
        if not len(pa):
            return
        s, u, miss, mid = _segment_pairs(p0, p1, pa, pb)
        ok = miss <= eps_x
        if not np.any(ok):
            return
        ia, ib = pa[ok], pb[ok]
        ta = t0[ia] + s[ok] * (t1[ia] - t0[ia])
        tb = t0[ib] + u[ok] * (t1[ib] - t0[ib])
        good = (ta >= legs_min) & (tb >= legs_min)
        cand_a_list.append(seg_ray[ia][good])
        cand_b_list.append(seg_ray[ib][good])
        cand_t1.append(ta[good])
        cand_t2.append(tb[good])
        cand_miss.append(miss[ok][good])
        cand_mid.append(mid[ok][good])

    buf_a, buf_b, buffered = [], [], 0
    tri_cache = {}
    for gi in range(len(group_bounds) - 1):
        g0, g1 = group_bounds[gi], group_bounds[gi + 1]
        m = g1 - g0
        if m < 2:
            continue
        if m not in tri_cache:
            tri_cache[m] = np.triu_indices(m, k=1)
        ii, jj = tri_cache[m]
        segs = cell_segs[g0:g1]
        buf_a.append(segs[ii])
        buf_b.append(segs[jj])
        buffered += len(ii)
        if buffered >= 2_000_000:
            flush(np.concatenate(buf_a), np.concatenate(buf_b))
            buf_a, buf_b, buffered = [], [], 0
    if buffered:
        flush(np.concatenate(buf_a), np.concatenate(buf_b))

    if cand_a_list:
        ca = np.concatenate(cand_a_list)
        cb = np.concatenate(cand_b_list)
        ct1 = np.concatenate(cand_t1)
        ct2 = np.concatenate(cand_t2)
        cm = np.concatenate(cand_miss)
        cmid = np.concatenate(cand_mid)
    else:
        ca = cb = np.zeros(0, dtype=np.uint32)
        ct1 = ct2 = cm = np.zeros(0)
        cmid = np.zeros((0, dim))

    # canonical role order, then time clustering per pair
    swap = (ca > cb) | ((ca == cb) & (ct1 > ct2))
    ca, cb = np.where(swap, cb, ca), np.where(swap, ca, cb)
    ct1, ct2 = np.where(swap, ct2, ct1), np.where(swap, ct1, ct2)

    pair_key = ca.astype(np.uint64) * np.uint64(2**32) + cb.astype(np.uint64)
    order = np.lexsort((ct1, pair_key))
    pair_key, ca, cb = pair_key[order], ca[order], cb[order]
    ct1, ct2, cm, cmid = ct1[order], ct2[order], cm[order], cmid[order]

    if len(ca):
        new_pair = np.empty(len(ca), dtype=bool)
        new_pair[0] = True
        new_pair[1:] = pair_key[1:] != pair_key[:-1]
        jump = np.empty(len(ca), dtype=bool)
        jump[0] = True
        jump[1:] = (np.abs(np.diff(ct1)) > eps_t) | (np.abs(np.diff(ct2)) > eps_t)
        cluster_id = np.cumsum(new_pair | jump) - 1
        sel = np.lexsort((cm, cluster_id))
        first = np.searchsorted(cluster_id[sel], np.arange(cluster_id[-1] + 1))
        rep = sel[first]
    else:
        rep = np.zeros(0, dtype=np.int64)

    return ScatterRelation(
        grid=grid,
        exit_times=exit_times,
        rec_a=ca[rep].astype(np.uint32),
        rec_b=cb[rep].astype(np.uint32),
        rec_t1=ct1[rep],
        rec_t2=ct2[rep],
        rec_miss=cm[rep],
        break_points=cmid[rep] if keep_break_points else None,
        params={
            "eps_x": float(eps_x),
            "delta_s": float(delta_s),
            "eps_t": float(eps_t),
            "t_cap": float(t_cap),
            "legs_min": float(legs_min),
            "footpoint_window": float(footpoint_window),
            "loop_window": float(loop_window),
            "n_capped_rays": n_capped,
        },
        meta={
            "model": model.spec(),
            "model_hash": model.content_hash(),
            "domain": domain.spec(),
        },
    )


# ----------------------------------------------------------------------
# independent oracle


def brute_force_relation(model, domain, grid, eps_x, delta_s, eps_t=None, t_cap=None):
    """All-pairs closest-approach record generation on a small grid.

    Independent of the spatial hash: integrates each ray, co-samples every
    pair densely, finds local minima of the inter-path distance below
    eps_x by direct scan, and polishes each with a bounded 2-d pattern
    search on the dense solutions.  Quadratic; keep the grid tiny.
    """
    if eps_t is None:
        eps_t = 4.0 * eps_x
    if t_cap is None:
        from .flow import suggest_t_cap

        t_cap = suggest_t_cap(model, domain)
    if grid.n_rays > 60:
        raise ConfigError("brute-force oracle is for sub-grids of <= 60 rays")
    paths = [
        integrate_geodesic(
            model, domain, grid.footpoint_of(r), grid.directions[r], t_cap, delta_s / 2
        )
        for r in range(grid.n_rays)
    ]
    legs_min = 0.5 * delta_s
    footpoint_window = 0.15
    loop_window = 0.05
    records = []
    for a in range(grid.n_rays):
        for b in range(a, grid.n_rays):
            Pa, Pb = paths[a], paths[b]
            D = np.linalg.norm(Pa.x[:, None, :] - Pb.x[None, :, :], axis=2)
            if a == b:
                n = len(Pa.t)
                ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
                D[np.abs(Pa.t[ii] - Pb.t[jj]) < loop_window] = np.inf
            elif grid.foot_ids[a] == grid.foot_ids[b]:
                D[: int(footpoint_window / (delta_s / 2)), : int(footpoint_window / (delta_s / 2))] = np.inf
            cand = np.argwhere(D <= eps_x)
            if not len(cand):
                continue
            times = []
            for i, j in cand:
                lo_a = Pa.t[max(i - 1, 0)]
                hi_a = Pa.t[min(i + 1, len(Pa.t) - 1)]
                lo_b = Pb.t[max(j - 1, 0)]
                hi_b = Pb.t[min(j + 1, len(Pb.t) - 1)]
                ta, tb = float(Pa.t[i]), float(Pb.t[j])
                step = max(hi_a - lo_a, hi_b - lo_b) / 2
                best = float(D[i, j])
                while step > 1e-10:
                    moved = False
                    for da, db in ((step, 0), (-step, 0), (0, step), (0, -step)):
                        na = min(max(ta + da, lo_a), hi_a)
                        nb = min(max(tb + db, lo_b), hi_b)
                        d = float(np.linalg.norm(Pa.position(na) - Pb.position(nb)))
                        if d < best:
                            best, ta, tb, moved = d, na, nb, True
                    if not moved:
                        step /= 2
                if best <= eps_x and ta >= legs_min and tb >= legs_min:
                    times.append((ta, tb, best))
            if not times:
                continue
            times.sort()
            groups = [[times[0]]]
            for ta, tb, m in times[1:]:
                if abs(ta - groups[-1][-1][0]) > eps_t or abs(tb - groups[-1][-1][1]) > eps_t:
                    groups.append([])
                groups[-1].append((ta, tb, m))
            for g in groups:
                ta, tb, m = min(g, key=lambda r: r[2])
                if a == b and ta > tb:
                    ta, tb = tb, ta
                records.append((a, b, ta, tb, m))
    records.sort()
    rec = np.asarray(records, dtype=float) if records else np.zeros((0, 5))
    return ScatterRelation(
        grid=grid,
        exit_times=np.asarray([p.exit_time if p.exit_time is not None else np.nan for p in paths]),
        rec_a=rec[:, 0].astype(np.uint32),
        rec_b=rec[:, 1].astype(np.uint32),
        rec_t1=rec[:, 2],
        rec_t2=rec[:, 3],
        rec_miss=rec[:, 4],
        break_points=None,
        params={"eps_x": float(eps_x), "delta_s": float(delta_s), "eps_t": float(eps_t), "oracle": True},
        meta={"model": model.spec(), "model_hash": model.content_hash(), "domain": domain.spec()},
    )
