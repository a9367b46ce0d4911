"""Exception taxonomy.

Four families map onto the CLI exit codes: ingestion (2), estimation (3),
simulation (4), aggregation (5).
"""


class EdusurvError(Exception):
    """Base class for all library errors."""


class IngestionError(EdusurvError):
    """Problems reading or validating input data."""


class SchemaError(IngestionError):
    """A required column is missing or the column mapping is invalid."""


class ValidationError(IngestionError):
    """A record violates a field-level invariant (e.g. non-positive weight)."""


class ConsistencyError(IngestionError):
    """Cross-record inconsistency (e.g. a cluster spanning two strata)."""


class EstimationError(EdusurvError):
    """Problems during model fitting or estimate transformation."""


class NoDataError(EstimationError):
    """An estimation domain contains no sampled persons."""


class RankDeficiencyError(EstimationError):
    """The design matrix is rank deficient after dropping reference levels."""


class SeparationError(EstimationError):
    """Logistic fit drove fitted probabilities to 0/1 (MLE does not exist)."""


class ConvergenceError(EstimationError):
    """Iterative fitting failed to converge."""


class NumericalError(EstimationError):
    """A numerical precondition failed (e.g. covariance not PSD)."""


class DomainLookupError(EstimationError):
    """A requested (cohort, area) domain is outside the fitted index sets."""


class GraphError(EstimationError):
    """Invalid spatial adjacency input."""


class InitializationError(EstimationError):
    """Sampler could not be initialized at a finite posterior density."""


class SimulationError(EdusurvError):
    """Problems in the censoring simulation study."""


class ScenarioError(SimulationError):
    """A simulation scenario is inconsistent with the data it targets."""


class AggregationError(EdusurvError):
    """Problems combining stratified estimates."""


class PairingError(AggregationError):
    """Urban and rural draw vectors cannot be paired."""


class BandError(AggregationError):
    """Education-level bands are undefined for the given grade range."""


class UndefinedFractionError(AggregationError):
    """An urban fraction is undefined (zero population in the area mask)."""


def exit_code_for(exc: Exception) -> int:
    """CLI exit code for an exception (ingestion 2, estimation 3, simulation 4,
    aggregation 5, anything else 1)."""
    if isinstance(exc, IngestionError):
        return 2
    if isinstance(exc, EstimationError):
        return 3
    if isinstance(exc, SimulationError):
        return 4
    if isinstance(exc, AggregationError):
        return 5
    return 1
