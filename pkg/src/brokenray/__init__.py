"""Broken scattering relations on foliated Finsler discs and balls.

Simulates the relation a reversible Finsler metric induces on broken
geodesic rays (reflections off interior scatterers), then recovers
boundary cut distances and boundary distance tables from that relation
alone, strips solved boundary layers, and exhibits the equal-data ray
pair that limits what a single broken measurement can see.
"""

from .config import RunConfig
from .domain import (
    BoundaryAtlas,
    FoliatedDomain,
    check_leaf_convexity,
    herglotz_check,
    inward_normal,
)
from .errors import (
    BrokenRayError,
    BudgetError,
    ConfigError,
    ConvexityError,
    CoverageError,
    DistanceError,
    EvaluationError,
    IntegrationError,
    NewtonError,
    ZeroVectorError,
)
from .flow import (
    boundary_cut_distance,
    boundary_distance,
    connections,
    cut_distance,
    distance,
    exit_time,
    nontrapping_check,
    parallel_transport,
    trace,
)
from .geodesics import integrate_geodesic, leaf_crossings
from .metrics import FinslerModel, model_from_spec
from .profiles import (
    ConstantProfile,
    ExpLinearProfile,
    ExpQuadraticProfile,
    PolynomialProfile,
    SampledProfile,
    profile_from_spec,
)
from .reconstruct import (
    BolkerPair,
    BoundaryDistanceTable,
    FocusingFamily,
    bolker_counterexample,
    boundary_cut_distance_from_relation,
    boundary_distance_from_relation,
    build_boundary_distance_table,
    build_focusing_family_forward,
    compare_tables,
    detect_focusing_family,
    layer_strip,
    verify_focus,
)
from .scatter import (
    RayGrid,
    RelationView,
    ScatterRelation,
    brute_force_relation,
    build_ray_grid,
    exit_time_from_relation,
    generate_relation,
    scattered_ray_grid,
)

__version__ = "0.1.0"

__all__ = [
    "BolkerPair",
    "BoundaryAtlas",
    "BoundaryDistanceTable",
    "BrokenRayError",
    "BudgetError",
    "ConfigError",
    "ConstantProfile",
    "ConvexityError",
    "CoverageError",
    "DistanceError",
    "EvaluationError",
    "ExpLinearProfile",
    "ExpQuadraticProfile",
    "FinslerModel",
    "FocusingFamily",
    "FoliatedDomain",
    "IntegrationError",
    "NewtonError",
    "PolynomialProfile",
    "RayGrid",
    "RelationView",
    "RunConfig",
    "SampledProfile",
    "ScatterRelation",
    "ZeroVectorError",
    "bolker_counterexample",
    "boundary_cut_distance",
    "boundary_cut_distance_from_relation",
    "boundary_distance",
    "boundary_distance_from_relation",
    "brute_force_relation",
    "build_boundary_distance_table",
    "build_focusing_family_forward",
    "build_ray_grid",
    "check_leaf_convexity",
    "compare_tables",
    "connections",
    "cut_distance",
    "detect_focusing_family",
    "distance",
    "exit_time",
    "exit_time_from_relation",
    "generate_relation",
    "herglotz_check",
    "integrate_geodesic",
    "inward_normal",
    "layer_strip",
    "leaf_crossings",
    "model_from_spec",
    "nontrapping_check",
    "parallel_transport",
    "profile_from_spec",
    "scattered_ray_grid",
    "trace",
    "verify_focus",
]
