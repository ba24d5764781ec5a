"""Exception types shared across the package."""
from __future__ import annotations


class UrbaneqError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(UrbaneqError):
    """Malformed or inconsistent configuration input."""


class SchemaError(ConfigError):
    """Tabular input does not match the documented schema."""


class HierarchyError(ConfigError):
    """Neighborhood/community/region structure is inconsistent."""


class DomainError(UrbaneqError):
    """Arguments outside the mathematical domain of an operation."""


class EtaInfinite(UrbaneqError):
    """Market clearing requested for a perfectly elastic city; prices are pinned at marginal cost."""


class SingularWeights(UrbaneqError):
    """Interaction weight matrix is numerically singular."""


class ApproximationInfeasible(UrbaneqError):
    """No rational p/q within the requested tolerance and denominator cap."""


class OverflowRisk(UrbaneqError):
    """Requested expansion order would produce ill-conditioned coefficients."""


class PathBudgetExceeded(UrbaneqError):
    """Start-point count exceeds the configured path budget."""


class BadStart(UrbaneqError):
    """Initial point does not satisfy the homotopy at the starting parameter."""


class StepFailure(UrbaneqError):
    """Step size underflow without corrector convergence."""


class NoConvergence(UrbaneqError):
    """Iteration limit reached before the convergence test passed."""


class NotSingular(UrbaneqError):
    """Singularity search started from (or converged to) a regular point."""


class NoBranches(UrbaneqError):
    """No admissible real branch at a singular point (isolated point or turning point)."""
