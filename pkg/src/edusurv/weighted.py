"""Design-weighted estimators of ultimate years of schooling (UYS).

Two estimators live here. The naive weighted estimator is the plain
design-weighted mean of completed years and ignores right-censoring. The
modified weighted estimator first estimates grade-specific discontinuation
hazards on the expanded risk rows (censored persons simply drop out of later
risk sets), then transforms hazards -> survival -> UYS. Design-based variances
use stratified between-cluster Taylor linearization with clusters as PSUs; no
finite-population corrections are applied.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset, RiskRow
from .errors import NoDataError, NumericalError

#: default critical value, 90% two-sided interval
Z90 = 1.6448536269514722


@dataclass(frozen=True)
class HazardCurve:
    """Grade-indexed hazard estimates h_k, k = 0..K.

    ``defined_mask`` is false where a grade's risk set was empty; such hazards
    carry the value 0 but are not estimates. ``cov`` (if present) is the
    design-based covariance of the defined hazards (rows/cols of undefined
    grades are zero).
    """

    hazards: np.ndarray
    cov: np.ndarray | None
    defined_mask: np.ndarray

    @property
    def k_max(self) -> int:
        return len(self.hazards) - 1


@dataclass(frozen=True)
class SurvivalCurve:
    """S(t) for t = 0..K with S(0) = 1; ``cov`` covers (S(1),...,S(K)).

    ``truncated`` is true when hazards were undefined beyond the last observed
    grade and S was forced to zero there (restricted-mean behaviour).
    """

    surv: np.ndarray
    cov: np.ndarray | None = None
    truncated: bool = False


@dataclass(frozen=True)
class UysEstimate:
    """Point estimate of expected final years of schooling for one domain."""

    mean: float
    se: float
    ci90: tuple[float, float]
    n_eff: int
    method_tag: str
    truncated: bool = False


def _cluster_linearization(
    scores: np.ndarray,
    cluster_ids: Sequence[str],
    stratum_of_cluster: dict[str, str],
) -> np.ndarray:
    """Stratified between-cluster covariance of a total.

    ``scores`` is (n_units, p): linearized per-unit contributions (zero rows
    are fine and represent out-of-domain units). Units are summed to cluster
    level; clusters with no units here but known to the design are implicit
    zeros, so ``stratum_of_cluster`` must list every design cluster. Strata
    with a single cluster contribute no between-cluster variance (certainty
    handling) and trigger a warning.
    """
    p = scores.shape[1]
    totals: dict[str, np.ndarray] = {c: np.zeros(p) for c in stratum_of_cluster}
    for row, cid in zip(scores, cluster_ids):
        totals[cid] += row

    by_stratum: dict[str, list[np.ndarray]] = {}
    for cid, tot in totals.items():
        by_stratum.setdefault(stratum_of_cluster[cid], []).append(tot)

    cov = np.zeros((p, p))
    singletons = []
    for stratum, cluster_totals in by_stratum.items():
        n_h = len(cluster_totals)
        if n_h < 2:
            singletons.append(stratum)
            continue
        mat = np.asarray(cluster_totals)
        centered = mat - mat.mean(axis=0)
        cov += (n_h / (n_h - 1)) * centered.T @ centered
    if singletons:
        warnings.warn(
            f"strata with a single cluster treated as certainty (no between-"
            f"cluster variance): {sorted(singletons)}",
            stacklevel=3,
        )
    return cov


def _design_clusters(ds: Dataset) -> dict[str, str]:
    return {r.cluster_id: r.stratum_id for r in ds.records}


def naive_weighted_uys(ds: Dataset, cohort: int, z: float = Z90) -> UysEstimate:
    """Design-weighted mean years completed for one cohort, censoring ignored.

    The variance is the standard ratio-estimator linearization of
    sum(w*t)/sum(w) with clusters as PSUs within strata.
    """
    members = [r for r in ds.records if ds.cohort_of(r.birth_year) == cohort]
    if not members:
        raise NoDataError(f"no sampled persons in cohort {cohort}")

    w = np.array([r.weight for r in members])
    t = np.array([r.years_completed for r in members], dtype=float)
    w_total = w.sum()
    mean = float(w @ t / w_total)

    # linearized residuals of the ratio; one score per in-domain person
    scores = (w * (t - mean) / w_total)[:, None]
    cov = _cluster_linearization(
        scores, [r.cluster_id for r in members], _design_clusters(ds)
    )
    se = float(np.sqrt(max(cov[0, 0], 0.0)))
    return UysEstimate(
        mean=mean,
        se=se,
        ci90=(mean - z * se, mean + z * se),
        n_eff=len(members),
        method_tag="naive",
    )


def modified_weighted_hazards(
    rows: Sequence[RiskRow],
    cohort: int,
    k_max: int | None = None,
    design_clusters: dict[str, str] | None = None,
) -> HazardCurve:
    """Survey-weighted hazard estimates for one cohort.

    For grade k the risk set is every person contributing a row at grade k
    (the expansion already removed persons censored before k). Empty risk sets
    are represented with ``defined_mask`` false, never raised. The covariance
    is a joint between-cluster linearization across grades, so downstream
    delta-method variances see cross-grade dependence.
    """
    mine = [r for r in rows if r.cohort == cohort]
    if k_max is None:
        k_max = max((r.grade for r in rows), default=0)
    n_grades = k_max + 1

    w_sum = np.zeros(n_grades)
    wz_sum = np.zeros(n_grades)
    for r in mine:
        w_sum[r.grade] += r.weight
        wz_sum[r.grade] += r.weight * r.event
    defined = w_sum > 0
    hazards = np.zeros(n_grades)
    hazards[defined] = wz_sum[defined] / w_sum[defined]

    if design_clusters is None:
        design_clusters = {r.cluster_id: r.stratum_id for r in rows}

    # per-row linearized scores for each grade's weighted proportion
    scores = np.zeros((len(mine), n_grades))
    for i, r in enumerate(mine):
        scores[i, r.grade] = r.weight * (r.event - hazards[r.grade]) / w_sum[r.grade]
    cov = _cluster_linearization(
        scores, [r.cluster_id for r in mine], design_clusters
    )
    cov[~defined, :] = 0.0
    cov[:, ~defined] = 0.0
    return HazardCurve(hazards=hazards, cov=cov, defined_mask=defined)


def survival_from_hazards(h: HazardCurve) -> SurvivalCurve:
    """S(t) = prod_{k<t} (1 - h_k) with documented truncation.

    Undefined hazards inside the observed range carry forward as zero (the MLE
    for an empty event set with survivors present) with a warning; beyond the
    last defined grade the survival is set to zero, flagging the estimate as
    truncated.
    """
    hz = np.asarray(h.hazards, dtype=float)
    defined = np.asarray(h.defined_mask, dtype=bool)
    n = len(hz)
    last_def = int(np.max(np.nonzero(defined)[0])) if defined.any() else -1

    carried = [k for k in range(last_def + 1) if not defined[k]]
    if carried:
        warnings.warn(
            f"hazards undefined at grades {carried} within the observed range; "
            "carried forward as 0",
            stacklevel=2,
        )
    eff = np.where(defined, hz, 0.0)

    surv = np.zeros(n)
    surv[0] = 1.0
    for t in range(1, n):
        surv[t] = surv[t - 1] * (1.0 - eff[t - 1]) if t - 1 <= last_def else 0.0
    truncated = last_def < n - 2  # some t in 1..K was forced to zero

    cov_s = None
    if h.cov is not None:
        # J[t-1, j] = dS(t)/dh_j, computed as a leave-one-out product so the
        # h_j = 1 case stays finite
        jac = np.zeros((n - 1, n))
        for t in range(1, n):
            if t - 1 > last_def:
                continue
            factors = 1.0 - eff[:t]
            for j in range(t):
                if defined[j]:
                    jac[t - 1, j] = -np.prod(np.delete(factors, j))
        cov_s = jac @ np.asarray(h.cov) @ jac.T
    return SurvivalCurve(surv=surv, cov=cov_s, truncated=truncated)


def uys_from_survival(
    s: SurvivalCurve,
    n_eff: int = 0,
    method_tag: str = "modified",
    z: float = Z90,
) -> UysEstimate:
    """UYS as the sum of survival probabilities, mu = sum_{t=1..K} S(t).

    When the survival covariance is present the variance of mu is the sum of
    all its entries (mu is a linear functional of S).
    """
    mean = float(np.sum(s.surv[1:]))
    se = 0.0
    if s.cov is not None:
        se = float(np.sqrt(max(np.sum(s.cov), 0.0)))
    return UysEstimate(
        mean=mean,
        se=se,
        ci90=(mean - z * se, mean + z * se),
        n_eff=n_eff,
        method_tag=method_tag,
        truncated=s.truncated,
    )


def modified_weighted_uys(
    rows: Sequence[RiskRow],
    cohort: int,
    k_max: int | None = None,
    design_clusters: dict[str, str] | None = None,
    z: float = Z90,
) -> UysEstimate:
    """Full modified-weighted pipeline: hazards -> survival -> UYS."""
    hc = modified_weighted_hazards(rows, cohort, k_max=k_max, design_clusters=design_clusters)
    if not hc.defined_mask.any():
        raise NoDataError(f"no risk rows for cohort {cohort}")
    sc = survival_from_hazards(hc)
    n_eff = len({r.person_id for r in rows if r.cohort == cohort})
    return uys_from_survival(sc, n_eff=n_eff, method_tag="modified", z=z)


def _check_psd(sigma: np.ndarray, tol: float = 1e-8) -> None:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise NumericalError(f"covariance must be square, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, atol=tol):
        raise NumericalError("covariance is not symmetric within tolerance")
    eigmin = float(np.linalg.eigvalsh(sigma).min())
    scale = max(1.0, float(np.abs(sigma).max()))
    if eigmin < -tol * scale:
        raise NumericalError(f"covariance is not PSD (min eigenvalue {eigmin:g})")


def survival_gradient(beta: np.ndarray, t: int) -> np.ndarray:
    """Gradient of S(t) with respect to logit-hazards beta.

    dS(t)/dbeta_j = -S(t) * expit(beta_j) for j < t, zero otherwise.
    """
    beta = np.asarray(beta, dtype=float)
    h = expit(beta)
    s_t = float(np.prod(1.0 - h[:t]))
    g = np.zeros_like(beta)
    g[:t] = -s_t * h[:t]
    return g


def uys_gradient(beta: np.ndarray) -> np.ndarray:
    """Gradient of mu = sum_{t=1..K} S(t) with respect to logit-hazards.

    dmu/dbeta_j = -expit(beta_j) * sum_{t=j+1..K} S(t), K = len(beta).
    """
    beta = np.asarray(beta, dtype=float)
    h = expit(beta)
    k = len(beta)
    surv = np.cumprod(1.0 - h)  # surv[t-1] = S(t)
    tail = np.cumsum(surv[::-1])[::-1]  # tail[j] = sum_{t=j+1..K} S(t)
    return -h * tail


def delta_var_survival(beta: np.ndarray, sigma: np.ndarray, t: int) -> float:
    """Delta-method variance of S(t) given cov(beta) on the logit scale."""
    beta = np.asarray(beta, dtype=float)
    if not 1 <= t <= len(beta):
        raise NumericalError(f"t must be in [1, {len(beta)}], got {t}")
    _check_psd(sigma)
    g = survival_gradient(beta, t)
    return float(g @ np.asarray(sigma) @ g)


def delta_var_uys(beta: np.ndarray, sigma: np.ndarray) -> float:
    """Delta-method variance of mu = sum_t S(t) given cov(beta)."""
    _check_psd(sigma)
    g = uys_gradient(np.asarray(beta, dtype=float))
    return float(g @ np.asarray(sigma) @ g)
