"""Run configuration: one YAML file describes a full experiment.

Sections: model (metric spec), domain (foliated chart), grid (boundary
atlas and direction fan), tolerances (all optional, defaults derived from
the domain diameter), run (seed, threads, caps) and reconstruct (family
and table parameters).  Unknown keys are rejected with the offending line
when it can be found in the source text.
"""

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .domain import FoliatedDomain
from .errors import ConfigError
from .metrics import model_from_spec

_SECTIONS = ("model", "domain", "grid", "tolerances", "run", "reconstruct")

_KEYS = {
    "model": {"kind", "profile", "eps", "weights", "lam", "derivative_mode"},
    "domain": {"semi_axes"},
    "grid": {"n_boundary", "n_dirs", "inwardness_min"},
    "tolerances": {"eps_x", "delta_s", "eps_t", "eps_focus", "eps_recover"},
    "run": {"seed", "threads", "t_cap_factor", "keep_break_points"},
    "reconstruct": {
        "rho_U",
        "n_depths",
        "coverage_min",
        "missing_budget",
        "footpoint_stride",
        "target_stride",
    },
}

_GRID_DEFAULTS = {"n_boundary": 48, "n_dirs": 96, "inwardness_min": 1e-2}
_RUN_DEFAULTS = {"seed": 0, "threads": 1, "t_cap_factor": 4.0, "keep_break_points": True}
_RECON_DEFAULTS = {
    "rho_U": 0.35,
    "n_depths": 10,
    "coverage_min": 0.8,
    "missing_budget": 0.05,
    "footpoint_stride": 1,
    "target_stride": 1,
}


def _find_line(text, token):
    if text is None:
        return None
    for i, line in enumerate(text.splitlines(), start=1):
        if token in line:
            return i
    return None


@dataclass
class RunConfig:
    model: dict
    domain: dict
    grid: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    reconstruct: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw, source_text=None):
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        for key in raw:
            if key not in _SECTIONS:
                raise ConfigError(
                    f"unknown config section {key!r}", line=_find_line(source_text, key)
                )
        for sec, allowed in _KEYS.items():
            body = raw.get(sec, {})
            if body is None:
                body = {}
            if not isinstance(body, dict):
                raise ConfigError(
                    f"section {sec!r} must be a mapping",
                    line=_find_line(source_text, sec),
                )
            for key in body:
                if key not in allowed:
                    raise ConfigError(
                        f"unknown key {key!r} in section {sec!r}",
                        line=_find_line(source_text, key),
                    )
        if "model" not in raw:
            raise ConfigError("config needs a model section")
        if "domain" not in raw:
            raise ConfigError("config needs a domain section")
        return cls(
            model=dict(raw["model"]),
            domain=dict(raw["domain"]),
            grid=dict(raw.get("grid") or {}),
            tolerances=dict(raw.get("tolerances") or {}),
            run=dict(raw.get("run") or {}),
            reconstruct=dict(raw.get("reconstruct") or {}),
        )

    @classmethod
    def from_yaml(cls, path):
        with open(path) as fh:
            text = fh.read()
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(
                f"config is not valid YAML: {exc}",
                line=None if mark is None else mark.line + 1,
            ) from exc
        return cls.from_dict(raw, source_text=text)

    def to_dict(self):
        out = {"model": self.model, "domain": self.domain}
        for sec in ("grid", "tolerances", "run", "reconstruct"):
            body = getattr(self, sec)
            if body:
                out[sec] = body
        return out

    def to_yaml(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)

    def content_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # ------------------------------------------------------------------
    # resolved objects

    def build_model(self):
        spec = dict(self.model)
        spec.setdefault("dim", self.build_domain().dim)
        return model_from_spec(spec)

    def build_domain(self):
        axes = self.domain.get("semi_axes")
        if axes is None:
            raise ConfigError("domain.semi_axes is required")
        return FoliatedDomain(axes)

    def grid_params(self):
        out = dict(_GRID_DEFAULTS)
        out.update(self.grid)
        return out

    def run_params(self):
        out = dict(_RUN_DEFAULTS)
        out.update(self.run)
        return out

    def recon_params(self):
        out = dict(_RECON_DEFAULTS)
        out.update(self.reconstruct)
        return out

    def resolved_tolerances(self, domain=None):
        """All tolerances, defaults scaled to the chart diameter."""
        if domain is None:
            domain = self.build_domain()
        diam = domain.chart_diameter()
        eps_x = float(self.tolerances.get("eps_x", 2e-3 * diam))
        delta_s = float(self.tolerances.get("delta_s", 0.5 * eps_x))
        eps_t = float(self.tolerances.get("eps_t", 4.0 * eps_x))
        return {
            "eps_x": eps_x,
            "delta_s": delta_s,
            "eps_t": eps_t,
            "eps_focus": float(self.tolerances.get("eps_focus", 5.0 * eps_x)),
            "eps_recover": float(self.tolerances.get("eps_recover", 2.0 * eps_t)),
        }
