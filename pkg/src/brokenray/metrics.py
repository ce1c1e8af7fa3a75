"""Finsler norms, fundamental tensors, Legendre maps and geodesic sprays.

Four model kinds are provided:

``euclidean``
    F(x, v) = |v|.
``riemannian_conformal_radial``
    F(x, v) = |v| / c(|x|) for a radial speed profile c.
``quartic_conformal``
    F(x, v) = Q(v)^(1/4) / c(|x|) with
    Q(v) = (1 - lam) * sum_i w_i v_i^4 + lam * |v|^4.
    The lam term is a convexity regularizer; lam >= 0.2 keeps the
    fundamental tensor positive definite for generic weights.
``perturbed_riemannian``
    F(x, v) = sqrt(|v|^2 + eps (x . v)^2) / c(|x|), an anisotropic
    Riemannian perturbation of the conformal model.

All evaluation methods broadcast: x and v have shape (..., n) and results
have shape (...), (..., n) or (..., n, n).  Every model is reversible by
construction (even in v), and 1-homogeneity in v is exact.

Derivatives come in two modes.  ``analytic`` uses the closed forms below;
``finite_difference`` builds the same quantities from central differences
of F^2 with the steps h_v = h_v_rel * |v| and h_x = h_x_rel * chart_scale.
"""

import hashlib
import json

import numpy as np

from .errors import ConfigError, ConvexityError, EvaluationError, ZeroVectorError
from .profiles import ConstantProfile, Profile, profile_from_spec

_TINY_R = 1e-12


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


class FinslerModel:
    """A reversible Finsler norm on a chart of R^n.

    Parameters
    ----------
    kind : str
        One of euclidean, riemannian_conformal_radial, quartic_conformal,
        perturbed_riemannian.
    dim : int
        Chart dimension n >= 2.
    profile : Profile or dict, optional
        Radial speed profile for the conformal kinds.
    weights, lam : quartic parameters.
    eps : perturbation amplitude for perturbed_riemannian.
    derivative_mode : "analytic" or "finite_difference".
    h_v_rel, h_x_rel : relative finite-difference steps.
    chart_scale : length scale of the chart, used for h_x.
    """

    KINDS = (
        "euclidean",
        "riemannian_conformal_radial",
        "quartic_conformal",
        "perturbed_riemannian",
    )

    def __init__(
        self,
        kind,
        dim,
        profile=None,
        weights=None,
        lam=0.2,
        eps=0.0,
        derivative_mode="analytic",
        h_v_rel=1e-4,
        h_x_rel=1e-4,
        chart_scale=1.0,
    ):
        if kind not in self.KINDS:
            raise ConfigError(f"unknown model kind {kind!r}")
        if dim < 2:
            raise ConfigError("dimension must be >= 2")
        if derivative_mode not in ("analytic", "finite_difference"):
            raise ConfigError(f"unknown derivative mode {derivative_mode!r}")
        self.kind = kind
        self.dim = int(dim)
        self.derivative_mode = derivative_mode
        self.h_v_rel = float(h_v_rel)
        self.h_x_rel = float(h_x_rel)
        self.chart_scale = float(chart_scale)
        self.profile = profile_from_spec(profile)
        self.eps = float(eps)
        if weights is None:
            weights = np.ones(self.dim)
        self.weights = np.asarray(weights, dtype=float)
        if self.weights.shape != (self.dim,):
            raise ConfigError("weights must have length dim")
        if np.any(self.weights < 0):
            raise ConfigError("weights must be nonnegative")
        self.lam = float(lam)
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if kind == "perturbed_riemannian" and not -0.9 < self.eps:
            raise ConfigError("eps must exceed -0.9 to keep the metric definite")
        self._riemannian = kind in (
            "euclidean",
            "riemannian_conformal_radial",
            "perturbed_riemannian",
        )

    # ------------------------------------------------------------------
    # identity

    def spec(self):
        """Canonical dict describing the model; feeds the hash."""
        out = {"kind": self.kind, "dim": self.dim, "derivative_mode": self.derivative_mode}
        if self.kind != "euclidean":
            out["profile"] = self.profile.spec()
        if self.kind == "quartic_conformal":
            out["weights"] = self.weights.tolist()
            out["lam"] = self.lam
        if self.kind == "perturbed_riemannian":
            out["eps"] = self.eps
        return out

    def content_hash(self):
        blob = json.dumps(self.spec(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def __repr__(self):
        return f"FinslerModel({self.kind}, n={self.dim})"

    # ------------------------------------------------------------------
    # profile helpers

    def _c(self, x):
        r = np.linalg.norm(x, axis=-1)
        return self.profile(r)

    def _c_terms(self, x):
        """c, c'/r and r at x; c'/r is the smooth combination used by sprays."""
        r = np.linalg.norm(x, axis=-1)
        c = self.profile(r)
        dc = self.profile.deriv(r)
        dc_over_r = dc / np.maximum(r, _TINY_R)
        return c, dc_over_r, r

    # ------------------------------------------------------------------
    # metric tensor field for the Riemannian kinds

    def _metric_matrix(self, x):
        """M(x) with F^2 = v M(x) v, Riemannian kinds only."""
        x = np.asarray(x, dtype=float)
        n = self.dim
        eye = np.eye(n)
        if self.kind == "euclidean":
            return np.broadcast_to(eye, x.shape[:-1] + (n, n)).copy()
        c = self._c(x)
        inv_c2 = c**-2
        if self.kind == "riemannian_conformal_radial":
            return inv_c2[..., None, None] * eye
        # perturbed: (I + eps x x^T) / c^2
        outer = x[..., :, None] * x[..., None, :]
        return inv_c2[..., None, None] * (eye + self.eps * outer)

    def _metric_matrix_grad(self, x):
        """dM[..., k, i, j] = d M_ij / d x_k, Riemannian kinds only."""
        x = np.asarray(x, dtype=float)
        n = self.dim
        base = x.shape[:-1]
        if self.kind == "euclidean":
            return np.zeros(base + (n, n, n))
        c, dc_over_r, _ = self._c_terms(x)
        eye = np.eye(n)
        # d(c^-2)/dx_k = -2 c^-3 c' x_k / r
        dinv = (-2.0 * c**-3 * dc_over_r)[..., None] * x
        if self.kind == "riemannian_conformal_radial":
            return dinv[..., :, None, None] * eye
        outer = x[..., :, None] * x[..., None, :]
        core = eye + self.eps * outer
        grad = dinv[..., :, None, None] * core
        # d(x_i x_j)/dx_k = delta_ik x_j + x_i delta_jk
        term = np.zeros(base + (n, n, n))
        for k in range(n):
            term[..., k, k, :] += x
            term[..., k, :, k] += x
        grad = grad + (self.eps * c**-2)[..., None, None, None] * term
        return grad

    # ------------------------------------------------------------------
    # quartic pieces

    def _quartic_terms(self, v):
        v = np.asarray(v, dtype=float)
        w = self.weights
        lam = self.lam
        v2 = _dot(v, v)
        q = (1.0 - lam) * np.einsum("i,...i->...", w, v**4) + lam * v2**2
        q_i = 4.0 * (1.0 - lam) * w * v**3 + 4.0 * lam * v2[..., None] * v
        eye = np.eye(self.dim)
        q_ij = (
            12.0 * (1.0 - lam) * (w * v**2)[..., None, :] * eye
            + 4.0 * lam * (v2[..., None, None] * eye + 2.0 * v[..., :, None] * v[..., None, :])
        )
        return q, q_i, q_ij

    # ------------------------------------------------------------------
    # norm and dual

    def norm(self, x, v):
        """F(x, v); positively 1-homogeneous and even in v."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self._riemannian:
            if self.kind == "euclidean":
                base = np.linalg.norm(v, axis=-1)
            elif self.kind == "riemannian_conformal_radial":
                base = np.linalg.norm(v, axis=-1) / self._c(x)
            else:
                quad = _dot(v, v) + self.eps * _dot(x, v) ** 2
                base = np.sqrt(quad) / self._c(x)
        else:
            q, _, _ = self._quartic_terms(v)
            base = q**0.25 / self._c(x)
        if not np.all(np.isfinite(base)):
            raise EvaluationError("norm evaluation produced non-finite values")
        return base

    def norm_squared(self, x, v):
        return self.norm(x, v) ** 2

    def unit_vector(self, x, v):
        """v rescaled so that F(x, v) = 1."""
        f = self.norm(x, v)
        if np.any(f == 0.0):
            raise ZeroVectorError("cannot normalize a zero vector")
        return v / f[..., None]

    def dual_norm(self, x, xi, n_scan=256, refine=True):
        """F*(x, xi) = sup{ xi . v : F(x, v) = 1 }, by scan plus refinement.

        Deliberately independent of the Legendre transform so the duality
        identity F*(x, l(v)) = F(x, v) can be used as a check.
        """
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        n = self.dim
        rng = np.random.default_rng(0)
        if n == 2:
            ang = np.linspace(0.0, 2.0 * np.pi, n_scan, endpoint=False)
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        else:
            dirs = rng.standard_normal((n_scan, n))
            dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        units = dirs / self.norm(np.broadcast_to(x, dirs.shape), dirs)[..., None]
        vals = units @ xi
        best = int(np.argmax(vals))
        if not refine:
            return float(vals[best])
        from scipy.optimize import minimize

        def neg(u):
            u = np.asarray(u)
            nrm = np.linalg.norm(u)
            if nrm < 1e-12:
                return 0.0
            vv = u / self.norm(x, u)
            return -float(vv @ xi)

        res = minimize(neg, dirs[best], method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400})
        return float(max(vals[best], -res.fun))

    # ------------------------------------------------------------------
    # fundamental tensor and Legendre transform

    def fundamental_tensor(self, x, v):
        """g_ij(x, v) = (1/2) d^2 F^2 / dv_i dv_j; symmetric positive definite."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any(np.linalg.norm(v, axis=-1) == 0.0):
            raise ZeroVectorError("fundamental tensor undefined at v = 0")
        if self.derivative_mode == "finite_difference":
            return self._fd_fundamental_tensor(x, v)
        if self._riemannian:
            m = self._metric_matrix(x)
            batch = np.broadcast_shapes(x.shape[:-1], v.shape[:-1])
            return np.broadcast_to(m, batch + (self.dim, self.dim)).copy()
        q, q_i, q_ij = self._quartic_terms(v)
        c = self._c(x)
        qs = np.sqrt(q)
        g = 0.25 * q_ij / qs[..., None, None] - 0.125 * (
            q_i[..., :, None] * q_i[..., None, :]
        ) / (q * qs)[..., None, None]
        return g / (c**2)[..., None, None]

    def legendre(self, x, v):
        """l(v)_i = g_ij(x, v) v^j, the Legendre covector of v."""
        g = self.fundamental_tensor(x, v)
        return np.einsum("...ij,...j->...i", g, np.asarray(v, dtype=float))

    def inner(self, x, ref, a, b):
        """<a, b> in the metric g(x, ref)."""
        g = self.fundamental_tensor(x, ref)
        return np.einsum("...i,...ij,...j->...", np.asarray(a, float), g, np.asarray(b, float))

    # ------------------------------------------------------------------
    # spray

    def spray(self, x, v):
        """Spray coefficients G^i(x, v); geodesics satisfy x'' = -2 G(x, x').

        G^i = (1/4) g^{il} ( d^2F^2/dv^l dx^k v^k - dF^2/dx^l ),
        positively 2-homogeneous in v.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if self.derivative_mode == "finite_difference":
            return self._fd_spray(x, v)
        if self.kind == "euclidean":
            return np.zeros_like(v)
        if self.kind == "riemannian_conformal_radial":
            # conformal metric exp(2 phi) delta with phi = -log c:
            # a = -2G = -2 (grad phi . v) v + |v|^2 grad phi
            c, dc_over_r, _ = self._c_terms(x)
            grad_phi = (-dc_over_r / c)[..., None] * x
            v2 = _dot(v, v)
            return (_dot(grad_phi, v))[..., None] * v - 0.5 * v2[..., None] * grad_phi
        if self.kind == "perturbed_riemannian":
            m = self._metric_matrix(x)
            dm = self._metric_matrix_grad(x)
            # 2 d_k M_lj v^j v^k - d_l M_jk v^j v^k
            t1 = 2.0 * np.einsum("...klj,...j,...k->...l", dm, v, v)
            t2 = np.einsum("...ljk,...j,...k->...l", dm, v, v)
            rhs = 0.25 * (t1 - t2)
            return np.linalg.solve(m, rhs[..., None])[..., 0]
        # quartic conformal: x-dependence only through c(|x|)
        q, q_i, _ = self._quartic_terms(v)
        c, dc_over_r, _ = self._c_terms(x)
        qs = np.sqrt(q)
        xv = _dot(x, v)
        factor = dc_over_r / c**3
        # d2F2/dv^l dx^k v^k = -(c'/r c^3) (x.v) Q^(-1/2) Q_l
        # dF2/dx^l          = -2 (c'/r c^3) x_l Q^(1/2)
        rhs = 0.25 * (
            -(factor * xv / qs)[..., None] * q_i + 2.0 * (factor * qs)[..., None] * x
        )
        g = self.fundamental_tensor(x, v)
        return np.linalg.solve(g, rhs[..., None])[..., 0]

    def acceleration(self, x, v):
        return -2.0 * self.spray(x, v)

    def connection(self, x, v, h_rel=1e-6):
        """N^i_j(x, v) = dG^i/dv^j, the nonlinear connection coefficients.

        Analytic for the Riemannian kinds (N^i_j = Gamma^i_jk v^k); central
        differences of the spray otherwise.
        """
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        n = self.dim
        if self._riemannian and self.derivative_mode == "analytic":
            m = self._metric_matrix(x)
            dm = self._metric_matrix_grad(x)
            # Gamma^i_jk = (1/2) M^il (d_j M_lk + d_k M_lj - d_l M_jk)
            sym = (
                np.einsum("...jlk->...ljk", dm)
                + np.einsum("...klj->...ljk", dm)
                - np.einsum("...ljk->...ljk", dm)
            )
            gamma = 0.5 * np.einsum("...il,...ljk->...ijk", np.linalg.inv(m), sym)
            return np.einsum("...ijk,...k->...ij", gamma, v)
        scale = np.linalg.norm(v, axis=-1, keepdims=True)
        h = h_rel * np.maximum(scale, 1e-12)
        out = np.zeros(v.shape[:-1] + (n, n))
        for j in range(n):
            dv = np.zeros_like(v)
            dv[..., j] = h[..., 0]
            gp = self.spray(x, v + dv)
            gm = self.spray(x, v - dv)
            out[..., :, j] = (gp - gm) / (2.0 * h)
        return out

    # ------------------------------------------------------------------
    # finite-difference fallbacks

    def _f2(self, x, v):
        # norm_squared without the finiteness guard duplication
        if self._riemannian:
            if self.kind == "euclidean":
                return _dot(v, v)
            if self.kind == "riemannian_conformal_radial":
                return _dot(v, v) / self._c(x) ** 2
            return (_dot(v, v) + self.eps * _dot(x, v) ** 2) / self._c(x) ** 2
        q, _, _ = self._quartic_terms(v)
        return np.sqrt(q) / self._c(x) ** 2

    def _fd_fundamental_tensor(self, x, v):
        n = self.dim
        h = self.h_v_rel * np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)
        out = np.zeros(v.shape[:-1] + (n, n))
        f0 = self._f2(x, v)
        for i in range(n):
            ei = np.zeros_like(v)
            ei[..., i] = h[..., 0]
            out[..., i, i] = (self._f2(x, v + ei) - 2.0 * f0 + self._f2(x, v - ei)) / h[..., 0] ** 2
            for j in range(i + 1, n):
                ej = np.zeros_like(v)
                ej[..., j] = h[..., 0]
                mixed = (
                    self._f2(x, v + ei + ej)
                    - self._f2(x, v + ei - ej)
                    - self._f2(x, v - ei + ej)
                    + self._f2(x, v - ei - ej)
                ) / (4.0 * h[..., 0] ** 2)
                out[..., i, j] = mixed
                out[..., j, i] = mixed
        return 0.5 * out

    def _fd_grad_v_f2(self, x, v):
        n = self.dim
        h = self.h_v_rel * np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)
        out = np.zeros_like(v)
        for i in range(n):
            ei = np.zeros_like(v)
            ei[..., i] = h[..., 0]
            out[..., i] = (self._f2(x, v + ei) - self._f2(x, v - ei)) / (2.0 * h[..., 0])
        return out

    def _fd_spray(self, x, v):
        n = self.dim
        hx = self.h_x_rel * self.chart_scale
        grad_x = np.zeros_like(v)
        mixed = np.zeros(v.shape[:-1] + (n, n))  # mixed[..., l, k] = d2F2/dv^l dx^k
        for k in range(n):
            ek = np.zeros_like(x)
            ek[..., k] = hx
            grad_x[..., k] = (self._f2(x + ek, v) - self._f2(x - ek, v)) / (2.0 * hx)
            gp = self._fd_grad_v_f2(x + ek, v)
            gm = self._fd_grad_v_f2(x - ek, v)
            mixed[..., :, k] = (gp - gm) / (2.0 * hx)
        rhs = 0.25 * (np.einsum("...lk,...k->...l", mixed, v) - grad_x)
        g = self._fd_fundamental_tensor(x, v)
        return np.linalg.solve(g, rhs[..., None])[..., 0]

    # ------------------------------------------------------------------
    # bounds

    def slowness_bounds(self, points, n_dirs=64, seed=0):
        """(min, max) of F(x, u)/|u| over sample points and directions."""
        rng = np.random.default_rng(seed)
        points = np.atleast_2d(np.asarray(points, dtype=float))
        dirs = rng.standard_normal((n_dirs, self.dim))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
        vals = self.norm(points[:, None, :], np.broadcast_to(dirs, (len(points), n_dirs, self.dim)))
        return float(vals.min()), float(vals.max())


# ----------------------------------------------------------------------
# axiom checks shared by validate and the test suite


def check_homogeneity(model, x, v, scales):
    """max over samples of |F(x, a v) - a F(x, v)| / (a F)."""
    f = model.norm(x, v)
    worst = 0.0
    for a in scales:
        fa = model.norm(x, a * v)
        worst = max(worst, float(np.max(np.abs(fa - a * f) / np.maximum(a * f, 1e-300))))
    return worst


def check_reversibility(model, x, v):
    f = model.norm(x, v)
    fr = model.norm(x, -v)
    return float(np.max(np.abs(f - fr) / np.maximum(f, 1e-300)))


def check_positive_definite(model, x, v, raise_on_fail=False):
    """Smallest eigenvalue of g over the samples (relative to the largest)."""
    g = model.fundamental_tensor(x, v)
    ev = np.linalg.eigvalsh(g)
    rel = ev[..., 0] / np.maximum(ev[..., -1], 1e-300)
    worst = int(np.argmin(rel))
    worst_rel = float(rel.reshape(-1)[worst])
    if raise_on_fail and worst_rel <= 0.0:
        flat_x = np.broadcast_to(x, v.shape).reshape(-1, model.dim)
        flat_v = np.asarray(v).reshape(-1, model.dim)
        raise ConvexityError(
            f"fundamental tensor not positive definite (min relative eigenvalue {worst_rel:.3e})",
            x=flat_x[worst],
            v=flat_v[worst],
        )
    return worst_rel


def model_from_spec(spec):
    """Build a FinslerModel from its dict form (inverse of spec())."""
    if isinstance(spec, FinslerModel):
        return spec
    spec = dict(spec)
    kind = spec.pop("kind")
    dim = spec.pop("dim")
    return FinslerModel(kind, dim, **spec)
