"""Radial sound-speed profiles c(r) with analytic first derivatives.

A profile maps radius r >= 0 to a positive speed.  Conformal model kinds
divide the chart norm by c(|x|), so the profile and its derivative enter
both the metric and its spray.  All profiles broadcast over numpy arrays.
"""

import numpy as np

from .errors import ConfigError, EvaluationError


class Profile:
    """Base class; subclasses implement value() and deriv()."""

    name = "profile"

    def value(self, r):
        raise NotImplementedError

    def deriv(self, r):
        raise NotImplementedError

    def __call__(self, r):
        c = self.value(np.asarray(r, dtype=float))
        if not np.all(np.isfinite(c)) or np.any(c <= 0.0):
            raise EvaluationError(f"profile {self.name} not finite-positive at r={r!r}")
        return c

    def herglotz_margin(self, r_grid):
        """min over the grid of d/dr (r / c(r)), the layer-convexity margin."""
        r = np.asarray(r_grid, dtype=float)
        c = self(r)
        dc = self.deriv(r)
        return float(np.min((c - r * dc) / c**2))

    def spec(self):
        raise NotImplementedError


class ConstantProfile(Profile):
    name = "constant"

    def __init__(self, c0=1.0):
        if c0 <= 0:
            raise ConfigError("constant profile needs c0 > 0")
        self.c0 = float(c0)

    def value(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.c0)

    def deriv(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def spec(self):
        return {"type": "constant", "c0": self.c0}


class ExpQuadraticProfile(Profile):
    """c(r) = c0 * exp(k r^2).

    k > 0 slows the center relative to the rim (rays wind inward),
    k < 0 speeds it up.  Layer convexity holds for k < 1/2 on r <= 1.
    """

    name = "exp_quadratic"

    def __init__(self, c0=1.0, k=0.0):
        if c0 <= 0:
            raise ConfigError("exp_quadratic profile needs c0 > 0")
        self.c0 = float(c0)
        self.k = float(k)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return self.c0 * np.exp(self.k * r**2)

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        return 2.0 * self.k * r * self.value(r)

    def spec(self):
        return {"type": "exp_quadratic", "c0": self.c0, "k": self.k}


class ExpLinearProfile(Profile):
    """c(r) = exp(a (1 - r)); steep near the center for large a."""

    name = "exp_linear"

    def __init__(self, a=1.0):
        self.a = float(a)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return np.exp(self.a * (1.0 - r))

    def deriv(self, r):
        return -self.a * self.value(r)

    def spec(self):
        return {"type": "exp_linear", "a": self.a}


class PolynomialProfile(Profile):
    """c(r) = sum coeffs[i] * r^(2i), a polynomial in r^2."""

    name = "polynomial"

    def __init__(self, coeffs):
        self.coeffs = [float(a) for a in coeffs]
        if not self.coeffs:
            raise ConfigError("polynomial profile needs at least one coefficient")

    def value(self, r):
        r2 = np.asarray(r, dtype=float) ** 2
        out = np.zeros_like(r2)
        for a in reversed(self.coeffs):
            out = out * r2 + a
        return out

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        r2 = r**2
        out = np.zeros_like(r2)
        for i, a in reversed(list(enumerate(self.coeffs))):
            if i == 0:
                continue
            out = out * r2 + i * a
        return out * 2.0 * r

    def spec(self):
        return {"type": "polynomial", "coeffs": list(self.coeffs)}


class SampledProfile(Profile):
    """Profile given by samples (r_i, c_i), interpolated by a cubic spline.

    The spline is the model: derivative and values come from it, which makes
    a sampled encoding of a closed-form profile a genuinely distinct but
    numerically close model.
    """

    name = "sampled"

    def __init__(self, r_samples, c_samples):
        from scipy.interpolate import CubicSpline

        r = np.asarray(r_samples, dtype=float)
        c = np.asarray(c_samples, dtype=float)
        if r.ndim != 1 or r.shape != c.shape or r.size < 4:
            raise ConfigError("sampled profile needs matching 1-d arrays, >= 4 samples")
        if np.any(np.diff(r) <= 0):
            raise ConfigError("sampled profile radii must be strictly increasing")
        if np.any(c <= 0):
            raise ConfigError("sampled profile speeds must be positive")
        self.r_samples = r
        self.c_samples = c
        self._spline = CubicSpline(r, c, bc_type="natural")
        self._deriv = self._spline.derivative()

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return self._spline(np.clip(r, self.r_samples[0], self.r_samples[-1]))

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        return self._deriv(np.clip(r, self.r_samples[0], self.r_samples[-1]))

    def spec(self):
        return {
            "type": "sampled",
            "r_samples": self.r_samples.tolist(),
            "c_samples": self.c_samples.tolist(),
        }


_PROFILE_TYPES = {
    "constant": ConstantProfile,
    "exp_quadratic": ExpQuadraticProfile,
    "exp_linear": ExpLinearProfile,
    "polynomial": PolynomialProfile,
    "sampled": SampledProfile,
}


def profile_from_spec(spec):
    """Build a profile from its dict form (inverse of Profile.spec())."""
    if isinstance(spec, Profile):
        return spec
    if spec is None:
        return ConstantProfile(1.0)
    spec = dict(spec)
    kind = spec.pop("type", "constant")
    try:
        cls = _PROFILE_TYPES[kind]
    except KeyError:
        raise ConfigError(f"unknown profile type {kind!r}") from None
    try:
        return cls(**spec)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for profile {kind!r}: {exc}") from None
