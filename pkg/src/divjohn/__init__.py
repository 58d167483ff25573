"""Grid laboratory for the divergence equation on rough plane domains.

Builds occupancy-grid domains, computes exact distance fields and Whitney
covers, estimates John and Poincare/Hardy constants, and solves div v = f
with zero boundary flux both globally and through the Whitney machinery.
"""

from __future__ import annotations

from . import errors
from .grid import (
    DistanceField,
    GridDomain,
    ScalarField,
    VectorField,
    WeightedNorm,
    distance_transform,
    divergence,
    gradient,
    masked_gradient,
    weighted_lp_norm,
)
from .domains import DomainSpec, generate, rasterize
from .john import (
    JohnAssessment,
    SampleAssessment,
    SeparationReport,
    component_diameter_test,
    content_thickness,
    default_samples,
    john_constant,
    separation_check,
)
from .poincare import (
    ConstantEstimate,
    DualityReport,
    SobolevTriple,
    certified_lower_bound,
    duality_check,
    evaluate_quotient,
    halving_radii,
    hardy_constant,
    poincare_constant,
    proof_trial_functions,
    unweighted_diagnostic,
    validate_triple,
)
from .whitney import (
    RhsDecomposition,
    WhitneyCube,
    WhitneyTree,
    build_tree,
    decompose_rhs,
    overlap_constant,
    sigma_region,
    whitney_decompose,
)
from .divsolve import (
    ConditionReport,
    DivSolution,
    condition_report,
    jacobian_energy,
    local_solve,
    solve_global,
    solve_whitney,
)
from .sweep import SweepResult, build_field, evaluate_metric, run_sweep

__all__ = [
    "errors",
    "GridDomain",
    "DistanceField",
    "ScalarField",
    "VectorField",
    "WeightedNorm",
    "distance_transform",
    "gradient",
    "divergence",
    "masked_gradient",
    "weighted_lp_norm",
    "DomainSpec",
    "generate",
    "rasterize",
    "JohnAssessment",
    "SampleAssessment",
    "SeparationReport",
    "john_constant",
    "separation_check",
    "component_diameter_test",
    "content_thickness",
    "default_samples",
    "SobolevTriple",
    "ConstantEstimate",
    "DualityReport",
    "validate_triple",
    "unweighted_diagnostic",
    "poincare_constant",
    "certified_lower_bound",
    "evaluate_quotient",
    "proof_trial_functions",
    "halving_radii",
    "hardy_constant",
    "duality_check",
    "WhitneyCube",
    "WhitneyTree",
    "RhsDecomposition",
    "whitney_decompose",
    "build_tree",
    "decompose_rhs",
    "sigma_region",
    "overlap_constant",
    "DivSolution",
    "ConditionReport",
    "local_solve",
    "solve_global",
    "solve_whitney",
    "condition_report",
    "jacobian_energy",
    "SweepResult",
    "build_field",
    "evaluate_metric",
    "run_sweep",
]
