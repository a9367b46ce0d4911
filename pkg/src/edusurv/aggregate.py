"""Urban/rural aggregation of model outputs and posterior summaries.

Separate urban and rural fits are combined draw-by-draw with the domain's
urban population fraction; exceedance probabilities and education-level
distributions are computed from the same paired draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    AggregationError,
    BandError,
    PairingError,
    UndefinedFractionError,
)
from .weighted import UysEstimate

#: attainment bands: (name, first year, last year); None = open-ended top band
LEVEL_BANDS = (
    ("none", 0, 0),
    ("some_primary", 1, 6),
    ("completed_primary", 7, 7),
    ("lower_secondary", 8, 11),
    ("higher_secondary", 12, 13),
    ("post_secondary", 14, None),
)


@dataclass(frozen=True)
class UrbanFractionTable:
    """Urban population fractions keyed by (area_id, group label)."""

    entries: Mapping[tuple[str, str], float]

    def __post_init__(self):
        for key, r in self.entries.items():
            if not 0.0 <= r <= 1.0:
                raise AggregationError(f"urban fraction out of [0,1] for {key}: {r}")

    def fraction(self, area_id: str, group: str) -> float:
        try:
            return self.entries[(str(area_id), str(group))]
        except KeyError:
            raise AggregationError(f"no urban fraction for ({area_id!r}, {group!r})")

    def fully_urban(self) -> list[tuple[str, str]]:
        return [k for k, r in self.entries.items() if r == 1.0]

    @classmethod
    def from_csv(cls, path: str | Path) -> "UrbanFractionTable":
        frame = pd.read_csv(path, dtype={"area_id": str, "group": str})
        for col in ("area_id", "group", "fraction"):
            if col not in frame.columns:
                raise AggregationError(f"urban fraction CSV missing column {col!r}")
        entries = {
            (row.area_id, row.group): float(row.fraction)
            for row in frame.itertuples(index=False)
        }
        return cls(entries=entries)


@dataclass(frozen=True)
class DomainSummary:
    """Flattened per-domain reporting record."""

    domain: str
    uys_overall: UysEstimate
    uys_urban: UysEstimate | None
    uys_rural: UysEstimate | None
    exceedance: dict[float, float] = field(default_factory=dict)
    level_dist: dict[str, float] = field(default_factory=dict)
    level_ci: dict[str, tuple[float, float]] = field(default_factory=dict)


def summarize_draws(
    draws: np.ndarray,
    n_eff: int = 0,
    method_tag: str = "spatial",
    level: float = 0.90,
) -> UysEstimate:
    """Posterior mean, sd, and equal-tailed interval from a draw vector."""
    draws = np.asarray(draws, dtype=float)
    lo, hi = np.quantile(draws, [(1 - level) / 2, (1 + level) / 2])
    sd = float(draws.std(ddof=1)) if len(draws) > 1 else 0.0
    return UysEstimate(
        mean=float(draws.mean()),
        se=sd,
        ci90=(float(lo), float(hi)),
        n_eff=n_eff,
        method_tag=method_tag,
    )


def _paired(urban_draws, rural_draws) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(urban_draws, dtype=float)
    r = np.asarray(rural_draws, dtype=float)
    if u.shape != r.shape:
        raise PairingError(
            f"urban and rural draw counts differ: {u.shape} vs {r.shape}"
        )
    return u, r


def aggregate_uys(
    urban_draws,
    rural_draws,
    r: float,
    n_eff: int = 0,
) -> tuple[UysEstimate, np.ndarray]:
    """Per-draw convex combination r*urban + (1-r)*rural, then summarize."""
    if not 0.0 <= r <= 1.0:
        raise AggregationError(f"urban fraction must be in [0,1], got {r}")
    u, ru = _paired(urban_draws, rural_draws)
    combined = r * u + (1.0 - r) * ru
    return summarize_draws(combined, n_eff=n_eff), combined


def exceedance_probability(urban_draws, rural_draws, threshold: float) -> float:
    """Fraction of paired draws with urban minus rural above the threshold."""
    u, ru = _paired(urban_draws, rural_draws)
    return float(np.mean((u - ru) > threshold))


def band_indices(k_max: int) -> list[tuple[str, int, int]]:
    """Resolve LEVEL_BANDS against a concrete maximum grade (requires K >= 14)."""
    if k_max < 14:
        raise BandError(
            f"education-level bands need k_max >= 14 (post-secondary is 14+), got {k_max}"
        )
    return [(name, lo, k_max if hi is None else hi) for name, lo, hi in LEVEL_BANDS]


def attainment_pmf(hazards: np.ndarray) -> np.ndarray:
    """P(T = t) for t = 0..K from one hazard vector over grades 0..K.

    The terminal grade absorbs any residual survival so the pmf always sums
    to one (T cannot exceed K by definition).
    """
    hazards = np.asarray(hazards, dtype=float)
    surv = np.concatenate([[1.0], np.cumprod(1.0 - hazards)])  # S(0..K+1)
    surv[-1] = 0.0
    return surv[:-1] - surv[1:]


def education_level_distribution(
    hazard_draws: np.ndarray,
    k_max: int,
    level: float = 0.90,
) -> tuple[dict[str, float], dict[str, tuple[float, float]], np.ndarray]:
    """Band probabilities with credible intervals from hazard draws.

    ``hazard_draws`` is (draws, K+1). Returns (means, intervals, band_draws)
    where band_draws is (draws, n_bands) for downstream mixing.
    """
    draws = np.atleast_2d(np.asarray(hazard_draws, dtype=float))
    if draws.shape[1] != k_max + 1:
        raise BandError(
            f"hazard draws have {draws.shape[1]} grades, expected k_max+1={k_max + 1}"
        )
    bands = band_indices(k_max)
    surv = np.cumprod(1.0 - draws, axis=1)
    surv = np.concatenate([np.ones((len(draws), 1)), surv], axis=1)  # S(0..K+1)
    surv[:, -1] = 0.0
    pmf = surv[:, :-1] - surv[:, 1:]
    band_draws = np.stack(
        [pmf[:, lo : hi + 1].sum(axis=1) for _, lo, hi in bands], axis=1
    )
    q_lo, q_hi = (1 - level) / 2, (1 + level) / 2
    means = {name: float(band_draws[:, i].mean()) for i, (name, _, _) in enumerate(bands)}
    intervals = {
        name: tuple(float(q) for q in np.quantile(band_draws[:, i], [q_lo, q_hi]))
        for i, (name, _, _) in enumerate(bands)
    }
    return means, intervals, band_draws


def urban_fraction_from_rasters(
    labels: np.ndarray,
    density: np.ndarray,
    area_mask: np.ndarray | None = None,
) -> float:
    """Population-weighted urban share over masked pixels.

    ``labels`` is a 0/1 urban classification grid and ``density`` the aligned
    population grid; the raster classification pipeline that produces them is
    outside this package.
    """
    labels = np.asarray(labels, dtype=float)
    density = np.asarray(density, dtype=float)
    if labels.shape != density.shape:
        raise AggregationError(
            f"label grid {labels.shape} and density grid {density.shape} misaligned"
        )
    if not np.isin(labels, (0.0, 1.0)).all():
        raise AggregationError("urban label grid must contain only 0/1 values")
    if area_mask is None:
        area_mask = np.ones_like(density, dtype=bool)
    else:
        area_mask = np.asarray(area_mask, dtype=bool)
        if area_mask.shape != density.shape:
            raise AggregationError("area mask shape does not match the grids")
    total = density[area_mask].sum()
    if total <= 0:
        raise UndefinedFractionError("zero population inside the area mask")
    return float((labels[area_mask] * density[area_mask]).sum() / total)
