"""Cluster-level beta-binomial likelihood on grade-cell counts.

Risk rows are grouped into (cohort, cluster, grade) cells with a risk-set
size n and an event count y. The within-cluster correlation rho parameterizes
the mixing Beta as alpha = h(1-rho)/rho, beta = (1-h)(1-rho)/rho, so the cell
mean stays the hazard h and rho -> 0 recovers the binomial.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from ..data import RiskRow
from ..errors import NumericalError
from .graphs import LatentStructure


@dataclass(frozen=True)
class GradeCountCell:
    """Event count y out of n at risk for one (cohort, cluster, grade)."""

    cohort: int
    cluster_id: str
    area_id: str
    urban: bool
    grade: int
    n: int
    y: int


def build_cells(rows: Sequence[RiskRow]) -> list[GradeCountCell]:
    """Tally risk rows into grade-count cells; total y equals total events."""
    acc: dict[tuple, list[int]] = {}
    meta: dict[tuple, tuple[str, bool]] = {}
    for r in rows:
        key = (r.cohort, r.cluster_id, r.grade)
        if key not in acc:
            acc[key] = [0, 0]
            meta[key] = (r.area_id, r.urban)
        acc[key][0] += 1
        acc[key][1] += r.event
    cells = []
    for (cohort, cluster_id, grade), (n, y) in sorted(acc.items(), key=str):
        area_id, urban = meta[(cohort, cluster_id, grade)]
        cells.append(
            GradeCountCell(
                cohort=cohort,
                cluster_id=cluster_id,
                area_id=area_id,
                urban=urban,
                grade=grade,
                n=n,
                y=y,
            )
        )
    return cells


def beta_binomial_logpmf(y, n, h, rho) -> np.ndarray | float:
    """Log pmf of the beta-binomial with mean hazard h and correlation rho.

    Degenerate hazards follow the point-mass convention: h = 0 requires y = 0
    and h = 1 requires y = n, otherwise the log pmf is -inf.
    """
    y = np.asarray(y)
    n = np.asarray(n)
    h = np.asarray(h, dtype=float)
    rho = float(rho)
    if not 0.0 <= rho < 1.0:
        raise NumericalError(f"rho must be in [0, 1), got {rho}")
    if np.any((y < 0) | (y > n)):
        raise NumericalError("y must satisfy 0 <= y <= n")
    if np.any((h < 0.0) | (h > 1.0)):
        raise NumericalError("h must be in [0, 1]")

    log_choose = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    out = np.full(np.broadcast(y, n, h).shape, -np.inf, dtype=float)
    h_b, y_b, n_b, lc_b = np.broadcast_arrays(h, y, n, log_choose)

    interior = (h_b > 0.0) & (h_b < 1.0)
    if rho == 0.0:
        with np.errstate(divide="ignore", invalid="ignore"):
            val = lc_b + y_b * np.log(h_b) + (n_b - y_b) * np.log1p(-h_b)
        out = np.where(interior, val, out)
    else:
        # rising-factorial form of B(y+a, n-y+b)/B(a, b); exact for integer
        # counts and stable even as rho -> 0 where a, b blow up
        a = h_b * (1.0 - rho) / rho
        b = (1.0 - h_b) * (1.0 - rho) / rho
        c = (1.0 - rho) / rho
        val = np.array(lc_b, dtype=float, copy=True)
        max_n = int(np.max(n_b)) if n_b.size else 0
        with np.errstate(divide="ignore", invalid="ignore"):
            for j in range(max_n):
                val = val + np.where(y_b > j, np.log(a + j), 0.0)
                val = val + np.where(n_b - y_b > j, np.log(b + j), 0.0)
                val = val - np.where(n_b > j, np.log(c + j), 0.0)
        out = np.where(interior, val, out)
    out = np.where((h_b == 0.0) & (y_b == 0), 0.0, out)
    out = np.where((h_b == 1.0) & (y_b == n_b), 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CellData:
    """Cells flattened to index arrays against a latent structure."""

    y: np.ndarray
    n: np.ndarray
    log_choose: np.ndarray
    grade_idx: np.ndarray
    cohort_idx: np.ndarray
    area_idx: np.ndarray
    cells: tuple[GradeCountCell, ...]

    @property
    def size(self) -> int:
        return len(self.y)


def index_cells(
    cells: Sequence[GradeCountCell], structure: LatentStructure
) -> CellData:
    """Resolve each cell against the structure's grade/cohort/area indices."""
    cohort_pos = {b: i for i, b in enumerate(structure.cohorts)}
    area_pos = {a: i for i, a in enumerate(structure.graph.areas)}
    y = np.array([c.y for c in cells], dtype=float)
    n = np.array([c.n for c in cells], dtype=float)
    grade_idx = np.array([c.grade for c in cells], dtype=int)
    try:
        cohort_idx = np.array([cohort_pos[c.cohort] for c in cells], dtype=int)
    except KeyError as exc:
        raise NumericalError(f"cell cohort {exc} not in latent structure")
    try:
        area_idx = np.array([area_pos[c.area_id] for c in cells], dtype=int)
    except KeyError as exc:
        raise NumericalError(f"cell area {exc} not in spatial graph")
    if grade_idx.max(initial=0) > structure.k_max:
        raise NumericalError("cell grade exceeds the structure's k_max")
    log_choose = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    return CellData(
        y=y,
        n=n,
        log_choose=log_choose,
        grade_idx=grade_idx,
        cohort_idx=cohort_idx,
        area_idx=area_idx,
        cells=tuple(cells),
    )


def cell_loglik(data: CellData, h: np.ndarray, rho: float) -> float:
    """Total beta-binomial log likelihood for per-cell hazards h.

    Below rho = 1e-8 the binomial limit is used: the difference is under
    1e-6 while the gammaln form would lose precision to cancellation.
    """
    if rho <= 1e-8:
        with np.errstate(divide="ignore", invalid="ignore"):
            ll = data.log_choose + data.y * np.log(h) + (data.n - data.y) * np.log1p(-h)
        return float(np.sum(ll))
    c = (1.0 - rho) / rho
    a = h * c
    b = c - a
    ll = (
        data.log_choose
        + gammaln(data.y + a)
        + gammaln(data.n - data.y + b)
        - gammaln(data.n + c)
        - gammaln(a)
        - gammaln(b)
        + gammaln(c)
    )
    return float(np.sum(ll))
