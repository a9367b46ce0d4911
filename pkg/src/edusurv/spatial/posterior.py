"""Posterior transformation of draws into hazards, survival, and UYS."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..aggregate import summarize_draws
from ..errors import DomainLookupError
from ..weighted import UysEstimate
from .mcmc import PosteriorDraws


def domain_hazard_draws(pd: PosteriorDraws, cohort: int, area_id: str) -> np.ndarray:
    """(draws, K+1) hazard matrix for one (cohort, area) domain."""
    st = pd.structure
    if cohort not in st.cohorts:
        raise DomainLookupError(f"cohort {cohort} outside fitted cohorts {st.cohorts}")
    try:
        i = st.graph.index_of(area_id)
    except Exception:
        raise DomainLookupError(f"area {area_id!r} outside the fitted graph")
    b = st.cohorts.index(cohort)
    offset = pd.phi[:, b] + pd.nu[:, b] + pd.u[:, i] + pd.zeta[:, b, i]
    return expit(pd.beta + offset[:, None])


def uys_draws_from_hazards(hazard_draws: np.ndarray) -> np.ndarray:
    """Per-draw UYS: mu = sum_{t=1..K} S(t), using hazards for grades 0..K-1."""
    hz = np.atleast_2d(hazard_draws)
    surv = np.cumprod(1.0 - hz[:, :-1], axis=1)
    return surv.sum(axis=1)


def posterior_uys(
    pd: PosteriorDraws,
    cohort: int,
    area_id: str,
    urban: bool | None = None,
) -> tuple[UysEstimate, np.ndarray]:
    """Posterior UYS summary and the raw draw vector for one domain.

    ``urban`` must match the stratum the draws were fit on (urban/rural fits
    are separate model invocations).
    """
    if urban is not None:
        expected = "urban" if urban else "rural"
        if pd.stratum not in ("all", expected):
            raise DomainLookupError(
                f"draws were fit on stratum {pd.stratum!r}, not {expected!r}"
            )
    hz = domain_hazard_draws(pd, cohort, area_id)
    draws = uys_draws_from_hazards(hz)
    return summarize_draws(draws, method_tag="spatial"), draws


def national_uys_draws(
    pd: PosteriorDraws,
    cohort: int,
    area_weights: dict[str, float],
) -> np.ndarray:
    """Population-weighted national UYS draws across areas for one cohort."""
    areas = pd.structure.graph.areas
    w = np.array([float(area_weights.get(a, 0.0)) for a in areas])
    if w.sum() <= 0:
        raise DomainLookupError("area weights sum to zero over the fitted graph")
    w = w / w.sum()
    total = np.zeros(pd.n_draws)
    for a, weight in zip(areas, w):
        if weight == 0.0:
            continue
        total += weight * uys_draws_from_hazards(domain_hazard_draws(pd, cohort, a))
    return total
