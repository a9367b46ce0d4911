"""Cohort-specific ultimate years of schooling from right-censored surveys.

Estimators (naive weighted, modified weighted, survey-weighted GLM, Bayesian
spatiotemporal model), urban/rural aggregation, and an end-of-study censoring
simulation study, with a CLI front end.
"""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    Dataset,
    PersonRecord,
    RiskRow,
    build_dataset,
    expand_risk_rows,
    load_dataset,
)
from .weighted import (  # noqa: F401
    HazardCurve,
    SurvivalCurve,
    UysEstimate,
    delta_var_survival,
    delta_var_uys,
    modified_weighted_hazards,
    modified_weighted_uys,
    naive_weighted_uys,
    survival_from_hazards,
    uys_from_survival,
)
