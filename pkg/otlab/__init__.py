"""
otlab - a numerical laboratory for Wasserstein contraction under convolution.

Smoothing both measures with the same kernel never increases W_p; otlab
measures by how much, and what that deficit forces on the transport.

Simple example:
    import otlab as ot

    lam = ot.uniform_box([0, 0], [0.5, 0.5], h=0.025)
    mu = ot.translate(lam, [0.25, 0.1])
    d = ot.delta_eps(lam, mu, ot.Kernel("uniform-ball", 0.1), ot.CostConvention(2.0))
    print(d.delta, d.gap)  # a translate loses nothing

Stability of Kantorovich potentials:
    rows, fit = ot.optimality_family([0.05, 0.1, 0.2])
    print([(r.lhs, r.rhs) for r in rows], fit.slope)  # 2 eps, eps^2, slope 1/2
"""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import ERROR_CODES, OTLabError
from .config import DEFAULT_SETTINGS, ExperimentConfig, Settings, make_rng, thread_count
from .kernels import KERNEL_PROFILES, Kernel, get_profile

from .measures import (
    DiscreteMeasure,
    GridMeasure,
    GridSpec,
    Measure,
    cdf_difference_oracle,
    convolve,
    distance_to_boundary,
    erosion_integral,
    load_measure,
    monotone_gap,
    project,
    stochastic_dominance_1d,
    translate,
    translate_with_residual,
)

from .lipschitz import ConeFunction, MinFunction, RampFunction, lipschitz_audit

from .ot_core import (
    CostConvention,
    DisplacementField,
    KantorovichPotential,
    TransportSolution,
    c_transform,
    displacement_field,
    extend_potential,
    gradient_field,
    kantorovich_value,
    solve_discrete,
)

from .contraction import (
    ContractionReport,
    DeltaResult,
    analyze_contraction,
    delta_eps,
    dominance_diagnostics,
    lambda_delta_chain,
    marginal_stability,
    min_translation_cost,
    near_translate_coherence,
    recover_direction,
    recover_translation,
)

from .transport_density import (
    TransportDensity,
    compute_sigma,
    holder_transfer_check,
    renyi,
    renyi_bound,
    stab_sigma_check,
    support_inclusion,
)

from .stability import (
    fit_exponent,
    fold_potential,
    grad_l1_distance,
    kantorovich_gap,
    optimality_family,
    potential_stability_check,
    quadratic_convexity_check,
)

from .two_point import (
    GridField,
    build_grid_graph,
    lambda_eps,
    m0,
    nonlocal_poincare,
    tau,
    tau_sweep,
    two_point_check,
)

from .gaussian import (
    IsotropicGaussian,
    caffarelli_bound,
    delta_eps_gaussian_closed_form,
    discretize_gaussian,
    gaussian_experiment,
    heat_step,
    log_concavity_step,
    w2_gaussians,
)

from .generators import GENERATORS, annulus, get_generator, interval, star, uniform_box
from .color import Color, Colormap, get_colormap

__all__ = [
    "__version__",
    # errors and configuration
    "ERROR_CODES",
    "OTLabError",
    "DEFAULT_SETTINGS",
    "ExperimentConfig",
    "Settings",
    "make_rng",
    "thread_count",
    # kernels and measures
    "KERNEL_PROFILES",
    "Kernel",
    "get_profile",
    "DiscreteMeasure",
    "GridMeasure",
    "GridSpec",
    "Measure",
    "cdf_difference_oracle",
    "convolve",
    "distance_to_boundary",
    "erosion_integral",
    "load_measure",
    "monotone_gap",
    "project",
    "stochastic_dominance_1d",
    "translate",
    "translate_with_residual",
    # test functions
    "ConeFunction",
    "MinFunction",
    "RampFunction",
    "lipschitz_audit",
    # transport
    "CostConvention",
    "DisplacementField",
    "KantorovichPotential",
    "TransportSolution",
    "c_transform",
    "displacement_field",
    "extend_potential",
    "gradient_field",
    "kantorovich_value",
    "solve_discrete",
    # contraction
    "ContractionReport",
    "DeltaResult",
    "analyze_contraction",
    "delta_eps",
    "dominance_diagnostics",
    "lambda_delta_chain",
    "marginal_stability",
    "min_translation_cost",
    "near_translate_coherence",
    "recover_direction",
    "recover_translation",
    # transport density
    "TransportDensity",
    "compute_sigma",
    "holder_transfer_check",
    "renyi",
    "renyi_bound",
    "stab_sigma_check",
    "support_inclusion",
    # stability
    "fit_exponent",
    "grad_l1_distance",
    "kantorovich_gap",
    "optimality_family",
    "quadratic_convexity_check",
    "fold_potential",
    "potential_stability_check",
    # two point
    "GridField",
    "build_grid_graph",
    "lambda_eps",
    "m0",
    "nonlocal_poincare",
    "tau",
    "tau_sweep",
    "two_point_check",
    # gaussian
    "IsotropicGaussian",
    "caffarelli_bound",
    "delta_eps_gaussian_closed_form",
    "discretize_gaussian",
    "heat_step",
    "log_concavity_step",
    "gaussian_experiment",
    "w2_gaussians",
    # generators and colors
    "GENERATORS",
    "annulus",
    "get_generator",
    "interval",
    "star",
    "uniform_box",
    "Color",
    "Colormap",
    "get_colormap",
]
