"""Survey-weighted continuation-odds logistic model.

The logit of the grade-k discontinuation hazard is beta_k + gamma_b (+ alpha_i
with area effects), fitted by IRLS on the person-grade risk rows with design
weights. Coefficient covariance is the design-based sandwich A^-1 B A^-1 where
A is the weighted information and B the between-cluster (within-stratum)
outer product of cluster score sums. Refitting with a target domain as the
reference makes that domain's logit hazards the beta vector, which feeds the
delta method directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit, logit

from .aggregate import band_indices
from .data import RiskRow
from .errors import (
    ConvergenceError,
    DomainLookupError,
    NoDataError,
    RankDeficiencyError,
    SeparationError,
)
from .weighted import (
    UysEstimate,
    Z90,
    delta_var_uys,
    modified_weighted_hazards,
    survival_from_hazards,
)

SCORE_TOL = 1e-8
MAX_ITER = 100
PIN_TOL = 1e-10


@dataclass(frozen=True)
class GlmSpec:
    """Model specification: reference levels and structure."""

    reference_cohort: int
    reference_area: str | None = None
    include_area_effects: bool = False
    cohort_width: int = 1

    def cohort_bin(self, cohort: int) -> int:
        if self.cohort_width == 1:
            return cohort
        return cohort - (cohort % self.cohort_width)


@dataclass(frozen=True)
class GlmFit:
    """Fitted coefficients and design-based covariance.

    ``gamma`` and ``alpha`` include the reference levels as structural zeros.
    ``cov_beta`` is the grade-intercept block of ``cov_full`` under the fit's
    reference parameterization.
    """

    spec: GlmSpec
    k_max: int
    beta: np.ndarray
    gamma: dict[int, float]
    alpha: dict[str, float]
    cov_full: np.ndarray
    cov_beta: np.ndarray
    converged: bool
    iterations: int
    labels: tuple[str, ...]
    domain_persons: dict[tuple[int, str | None], int]

    def hazards_for(self, cohort: int, area: str | None = None) -> np.ndarray:
        """Fitted hazards h_k for any domain from the linear predictor."""
        b = self.spec.cohort_bin(cohort)
        if b not in self.gamma:
            raise DomainLookupError(f"cohort {cohort} not in fitted cohorts")
        eta = self.beta + self.gamma[b]
        if self.spec.include_area_effects:
            if area is None:
                raise DomainLookupError("fit has area effects; an area is required")
            if area not in self.alpha:
                raise DomainLookupError(f"area {area!r} not in fitted areas")
            eta = eta + self.alpha[area]
        return expit(eta)


def _build_design(
    rows: Sequence[RiskRow], spec: GlmSpec, k_max: int | None
):
    if not rows:
        raise NoDataError("no risk rows to fit")
    grades = np.array([r.grade for r in rows])
    if k_max is None:
        k_max = int(grades.max())
    present = set(grades.tolist())
    missing = [k for k in range(k_max + 1) if k not in present]
    if missing:
        raise NoDataError(f"no risk rows at grades {missing}")

    cohorts = sorted({spec.cohort_bin(r.cohort) for r in rows})
    ref_cohort = spec.cohort_bin(spec.reference_cohort)
    if ref_cohort not in cohorts:
        raise NoDataError(f"reference cohort {spec.reference_cohort} not in data")
    areas: list[str] = []
    if spec.include_area_effects:
        areas = sorted({r.area_id for r in rows})
        if spec.reference_area is None:
            raise NoDataError("include_area_effects requires a reference_area")
        if spec.reference_area not in areas:
            raise NoDataError(f"reference area {spec.reference_area!r} not in data")

    free_cohorts = [b for b in cohorts if b != ref_cohort]
    free_areas = [a for a in areas if a != spec.reference_area]
    labels = (
        [f"grade_{k}" for k in range(k_max + 1)]
        + [f"cohort_{b}" for b in free_cohorts]
        + [f"area_{a}" for a in free_areas]
    )
    p = len(labels)
    cohort_col = {b: k_max + 1 + j for j, b in enumerate(free_cohorts)}
    area_col = {a: k_max + 1 + len(free_cohorts) + j for j, a in enumerate(free_areas)}

    x = np.zeros((len(rows), p))
    x[np.arange(len(rows)), grades] = 1.0
    for i, r in enumerate(rows):
        b = spec.cohort_bin(r.cohort)
        if b != ref_cohort:
            x[i, cohort_col[b]] = 1.0
        if spec.include_area_effects and r.area_id != spec.reference_area:
            x[i, area_col[r.area_id]] = 1.0

    z = np.array([r.event for r in rows], dtype=float)
    w = np.array([r.weight for r in rows], dtype=float)
    meta = {
        "k_max": k_max,
        "cohorts": cohorts,
        "ref_cohort": ref_cohort,
        "free_cohorts": free_cohorts,
        "areas": areas,
        "free_areas": free_areas,
    }
    return x, z, w, tuple(labels), meta


def _check_rank(x: np.ndarray, labels: Sequence[str]) -> None:
    gram = x.T @ x
    _, r, piv = scipy.linalg.qr(gram, pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(gram.shape) * np.finfo(float).eps if diag[0] > 0 else 0.0
    rank = int(np.sum(diag > tol))
    if rank < len(labels):
        dropped = [labels[j] for j in piv[rank:]]
        raise RankDeficiencyError(f"design matrix rank deficient; collinear: {dropped}")


def _loglik(z, w, eta):
    return float(np.sum(w * (z * eta - np.logaddexp(0.0, eta))))


def _pinned_cells(rows, p_hat, all_event_grades: set[int]) -> list[str]:
    # hazard pinned at 1 is the legitimate boundary for an all-events grade
    # (the terminal grade of any fully observed sample); everything else
    # pinned at 0/1 signals a diverging coefficient
    offending = []
    for i in np.nonzero(p_hat < PIN_TOL)[0]:
        offending.append(rows[i].grade)
    for i in np.nonzero(p_hat > 1 - PIN_TOL)[0]:
        if rows[i].grade not in all_event_grades:
            offending.append(rows[i].grade)
    return [f"grade {g}" for g in sorted(set(offending))]


def fit_survey_glm(
    rows: Sequence[RiskRow],
    spec: GlmSpec,
    k_max: int | None = None,
    small_sample_correction: bool = True,
) -> GlmFit:
    """Fit the continuation-odds model by IRLS with design-based covariance.

    Weights are normalized to mean one during the iterations (point estimates
    are invariant); the information matrix and sandwich use original weights.
    ``small_sample_correction`` applies the n_h/(n_h-1) between-cluster factor;
    switching it off makes the sandwich reduce exactly to the classical MLE
    covariance for a saturated model under an iid one-PSU-per-unit design.
    """
    x, z, w, labels, meta = _build_design(rows, spec, k_max)
    _check_rank(x, labels)
    w_fit = w / w.mean()
    k = meta["k_max"]

    # structural separation: a grade whose risk set has no events at all has
    # no finite MLE for its intercept and leaves the survival path undefined
    grades_arr = np.array([r.grade for r in rows])
    zero_event, all_event_grades = [], set()
    for grade in range(k + 1):
        sel = grades_arr == grade
        share = float(np.average(z[sel], weights=w[sel]))
        if share == 0.0:
            zero_event.append(grade)
        elif share == 1.0:
            all_event_grades.add(grade)
    if zero_event:
        raise SeparationError(
            "separation: no discontinuation events at "
            + ", ".join(f"grade {g}" for g in zero_event)
        )

    # starting values: pooled empirical logit per grade, zero elsewhere
    theta = np.zeros(len(labels))
    for grade in range(k + 1):
        sel = x[:, grade] == 1.0
        p0 = min(max(np.average(z[sel], weights=w_fit[sel]), 1e-4), 1 - 1e-4)
        theta[grade] = logit(p0)

    converged = False
    iters = 0
    for iters in range(1, MAX_ITER + 1):
        eta = x @ theta
        p_hat = expit(eta)
        score = x.T @ (w_fit * (z - p_hat))
        if np.linalg.norm(score) < SCORE_TOL:
            converged = True
            break
        wt = w_fit * p_hat * (1.0 - p_hat)
        info = x.T @ (x * wt[:, None])
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            pinned = _pinned_cells(rows, p_hat, all_event_grades)
            if pinned:
                raise SeparationError(
                    f"separation: fitted probabilities pinned at 0/1 ({', '.join(pinned)})"
                )
            raise ConvergenceError("singular information matrix during IRLS")
        ll0 = _loglik(z, w_fit, eta)
        lam = 1.0
        while lam > 1e-10:
            candidate = theta + lam * step
            if _loglik(z, w_fit, x @ candidate) >= ll0 - 1e-12:
                break
            lam *= 0.5
        theta = theta + lam * step

    eta = x @ theta
    p_hat = expit(eta)
    pinned = _pinned_cells(rows, p_hat, all_event_grades)
    if pinned:
        raise SeparationError(
            f"separation: fitted probabilities pinned at 0/1 ({', '.join(pinned)})"
        )
    if not converged:
        raise ConvergenceError(
            f"IRLS did not reach score norm < {SCORE_TOL} in {MAX_ITER} iterations"
        )

    # sandwich with original weights
    info = x.T @ (x * (w * p_hat * (1.0 - p_hat))[:, None])
    resid = w * (z - p_hat)
    cluster_ids = [r.cluster_id for r in rows]
    stratum_of = {r.cluster_id: r.stratum_id for r in rows}
    totals: dict[str, np.ndarray] = {c: np.zeros(len(labels)) for c in stratum_of}
    for i, cid in enumerate(cluster_ids):
        totals[cid] += resid[i] * x[i]
    by_stratum: dict[str, list[np.ndarray]] = {}
    for cid, tot in totals.items():
        by_stratum.setdefault(stratum_of[cid], []).append(tot)
    bread = np.zeros((len(labels), len(labels)))
    singletons = []
    for stratum, cluster_totals in by_stratum.items():
        n_h = len(cluster_totals)
        if n_h < 2:
            singletons.append(stratum)
            continue
        mat = np.asarray(cluster_totals)
        centered = mat - mat.mean(axis=0)
        factor = n_h / (n_h - 1) if small_sample_correction else 1.0
        bread += factor * centered.T @ centered
    if singletons:
        warnings.warn(
            f"strata with a single cluster treated as certainty: {sorted(singletons)}",
            stacklevel=2,
        )
    cov_full = np.linalg.solve(info, np.linalg.solve(info, bread).T)
    cov_full = (cov_full + cov_full.T) / 2.0

    beta = theta[: k + 1]
    gamma = {meta["ref_cohort"]: 0.0}
    for j, b in enumerate(meta["free_cohorts"]):
        gamma[b] = float(theta[k + 1 + j])
    alpha = {}
    if spec.include_area_effects:
        alpha[spec.reference_area] = 0.0
        off = k + 1 + len(meta["free_cohorts"])
        for j, a in enumerate(meta["free_areas"]):
            alpha[a] = float(theta[off + j])

    persons: dict[tuple[int, str | None], set] = {}
    for r in rows:
        key = (
            spec.cohort_bin(r.cohort),
            r.area_id if spec.include_area_effects else None,
        )
        persons.setdefault(key, set()).add(r.person_id)

    return GlmFit(
        spec=spec,
        k_max=k,
        beta=beta,
        gamma=gamma,
        alpha=alpha,
        cov_full=cov_full,
        cov_beta=cov_full[: k + 1, : k + 1],
        converged=converged,
        iterations=iters,
        labels=labels,
        domain_persons={key: len(ids) for key, ids in persons.items()},
    )


def refit_per_reference(
    rows: Sequence[RiskRow],
    spec: GlmSpec,
    targets: Sequence[tuple[int, str | None]],
    k_max: int | None = None,
) -> dict[tuple[int, str | None], GlmFit]:
    """Refit with each target domain as the reference.

    Each returned fit's beta vector is that domain's logit hazards with
    ``cov_beta`` ready for the delta method. Fitted hazard surfaces are
    invariant to the reference choice.
    """
    fits = {}
    for cohort, area in targets:
        target_spec = replace(spec, reference_cohort=cohort, reference_area=area)
        fits[(cohort, area)] = fit_survey_glm(rows, target_spec, k_max=k_max)
    return fits


def glm_uys(
    fit: GlmFit,
    target: tuple[int, str | None],
    z: float = Z90,
) -> UysEstimate:
    """UYS with delta-method SE for the fit's reference domain.

    Hazards exist for every grade 0..K (no truncation); mu sums S(1)..S(K),
    which involves only the first K logit hazards.
    """
    cohort, area = target
    if fit.spec.cohort_bin(cohort) != fit.spec.cohort_bin(fit.spec.reference_cohort):
        raise DomainLookupError(
            f"fit is parameterized with reference cohort {fit.spec.reference_cohort}, "
            f"not {cohort}; use refit_per_reference"
        )
    if fit.spec.include_area_effects and area != fit.spec.reference_area:
        raise DomainLookupError(
            f"fit is parameterized with reference area {fit.spec.reference_area!r}, "
            f"not {area!r}"
        )
    beta_used = fit.beta[: fit.k_max]
    surv = np.cumprod(1.0 - expit(beta_used))
    mean = float(surv.sum())
    var = delta_var_uys(beta_used, fit.cov_beta[: fit.k_max, : fit.k_max])
    se = float(np.sqrt(max(var, 0.0)))
    key = (fit.spec.cohort_bin(cohort), area if fit.spec.include_area_effects else None)
    return UysEstimate(
        mean=mean,
        se=se,
        ci90=(mean - z * se, mean + z * se),
        n_eff=fit.domain_persons.get(key, 0),
        method_tag="glm",
    )


def proportional_odds_table(
    rows: Sequence[RiskRow],
    cohort_width: int = 5,
    by_urban: bool = False,
    k_max: int | None = None,
):
    """Per-group log-odds of grade-specific and level-band dropout.

    Groups are cohort bins, optionally split by urban/rural. Under
    proportional odds the log-odds curves are parallel across groups; the
    returned summary reports the largest pairwise deviation from parallelism
    and the grade where it occurs. Cells with empty risk sets or degenerate
    hazards are flagged missing rather than raised.
    """
    if k_max is None:
        k_max = max(r.grade for r in rows)

    def group_of(r: RiskRow):
        b = r.cohort - (r.cohort % cohort_width) if cohort_width > 1 else r.cohort
        return (b, r.urban) if by_urban else b

    groups = sorted({group_of(r) for r in rows}, key=str)
    design_clusters = {r.cluster_id: r.stratum_id for r in rows}

    table = []
    grade_logodds: dict = {}
    for g in groups:
        grows = [r for r in rows if group_of(r) == g]
        # reuse the hazard machinery by treating the group as one cohort
        relabeled = [replace(r, cohort=0) for r in grows]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            hc = modified_weighted_hazards(
                relabeled, 0, k_max=k_max, design_clusters=design_clusters
            )
            sc = survival_from_hazards(hc)
        lo_by_grade = {}
        for k in range(k_max + 1):
            h = hc.hazards[k]
            missing = (not hc.defined_mask[k]) or h <= 0.0 or h >= 1.0
            se = None
            value = None
            if not missing:
                value = float(logit(h))
                if hc.cov is not None:
                    se = float(np.sqrt(max(hc.cov[k, k], 0.0)) / (h * (1 - h)))
                lo_by_grade[k] = value
            table.append(
                {
                    "group": g,
                    "kind": "grade",
                    "index": k,
                    "log_odds": value,
                    "se": se,
                    "missing": missing,
                }
            )
        grade_logodds[g] = lo_by_grade

        if k_max >= 14:
            for name, lo_y, hi_y in band_indices(k_max):
                if hi_y >= len(sc.surv):
                    continue
                s_a = sc.surv[lo_y]
                # conditional dropout within the band: 1 - prod over band grades
                q = 1.0 - np.prod(1.0 - hc.hazards[lo_y : hi_y + 1])
                missing = s_a <= 0.0 or q <= 0.0 or q >= 1.0
                table.append(
                    {
                        "group": g,
                        "kind": "band",
                        "index": name,
                        "log_odds": None if missing else float(logit(q)),
                        "se": None,
                        "missing": missing,
                    }
                )

    worst = {"max_deviation": 0.0, "grade": None, "groups": None}
    for i, g1 in enumerate(groups):
        for g2 in groups[i + 1 :]:
            common = sorted(set(grade_logodds[g1]) & set(grade_logodds[g2]))
            if len(common) < 2:
                continue
            diff = np.array([grade_logodds[g1][k] - grade_logodds[g2][k] for k in common])
            dev = np.abs(diff - diff.mean())
            j = int(np.argmax(dev))
            if dev[j] > worst["max_deviation"]:
                worst = {
                    "max_deviation": float(dev[j]),
                    "grade": common[j],
                    "groups": (g1, g2),
                }
    return table, worst
