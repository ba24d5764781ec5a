"""Equilibrium enumeration for discrete-choice location models with social spillovers.

Core pipeline: describe a city (model), turn its fixed point into a polynomial
system (polysys), follow continuation paths (tracker, homotopies), carry
equilibria to elastic housing supply (elasticity), resolve singular points
(bifurcation), and cross-check small instances by brute force (oracle).
Hierarchical cities live in nested; file formats and the command line in
output and cli.
"""

from .errors import (ApproximationInfeasible, BadStart, ConfigError, DomainError,
                     EtaInfinite, HierarchyError, NoBranches, NoConvergence,
                     NotSingular, OverflowRisk, PathBudgetExceeded, SchemaError,
                     SingularWeights, StepFailure, UrbaneqError)
from .model import (City, Equilibrium, ResidualReport, classify, homogeneous_city,
                    line_dist, market_residual, psi_from_x, residual_report,
                    social_residual, weights, x_from_psi)
from .polysys import (PolySystem, Rational, StartSet, build_maclaurin_system,
                      build_static_system, rational_approx, start_homogeneous,
                      start_total_degree)
from .tracker import (Homotopy, PathResult, TrackerConfig, dedup,
                      jacobian_diagnostics, track, track_all)
from .homotopies import (AmenityH, ElasticityH, ParamPathH, TotalDegreeH,
                         solve_amenity_homotopy, solve_elasticity_homotopy,
                         solve_maclaurin, solve_total_degree)
from .bifurcation import (BranchSet, SingularPoint, enumerate_branches,
                          locate_singular, second_order_system)
from .oracle import GridSpec, brute_force_equilibria
from .nested import (CitywideState, CommunityMenu, MenuEntry, NestedCity,
                     RegionEquilibrium, citywide_elasticity_homotopy,
                     citywide_state0, combination_count, community_equilibria,
                     community_menus, community_welfare, ingest_neighborhoods,
                     region_fixed_point, sub_city, synthetic_nested_city)

__version__ = "0.1.0"
