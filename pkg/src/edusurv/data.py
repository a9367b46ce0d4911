"""Survey microdata model and person-grade risk expansion.

A respondent's education history is a right-censored duration: ``years_completed``
counts whole grades finished by the survey date, and ``censored`` is true when the
respondent was still enrolled (final attainment unobserved). Each history expands
into one Bernoulli trial per grade interval passed through, which is the common
currency consumed by every estimator in this package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import pandas as pd

from .errors import ConsistencyError, SchemaError, ValidationError

#: logical name -> default CSV column name
DEFAULT_COLUMNS = {
    "person_id": "person_id",
    "cluster_id": "cluster_id",
    "stratum_id": "stratum_id",
    "weight": "weight",
    "birth_year": "birth_year",
    "years_completed": "years_completed",
    "in_school": "in_school",
    "area_id": "area_id",
    "urban": "urban",
}


@dataclass(frozen=True, slots=True)
class PersonRecord:
    """One survey respondent.

    ``censored`` is true when the respondent was still in school at the survey,
    i.e. ``years_completed`` is a lower bound on final attainment.
    """

    person_id: str
    cluster_id: str
    stratum_id: str
    weight: float
    birth_year: int
    years_completed: int
    censored: bool
    area_id: str
    urban: bool


@dataclass(frozen=True, slots=True)
class RiskRow:
    """One person-grade Bernoulli trial.

    ``event`` is 1 only on a person's final row and only when the person is
    uncensored (they left school during that grade interval).
    """

    person_id: str
    cohort: int
    area_id: str
    urban: bool
    grade: int
    event: int
    weight: float
    cluster_id: str
    stratum_id: str


@dataclass(frozen=True)
class Dataset:
    """Validated, immutable collection of person records.

    ``k_max`` is the maximum possible schooling duration; hazards are indexed
    on grades 0..k_max. ``cohort_width`` groups birth years into 1- or 5-year
    cohorts for estimation. ``survey_year`` is needed by the censoring
    simulation (ages are computed relative to it).
    """

    records: tuple[PersonRecord, ...]
    k_max: int
    cohort_range: tuple[int, int]
    cohort_width: int = 1
    survey_year: int | None = None
    area_graph_ref: str | None = None

    def cohort_of(self, birth_year: int) -> int:
        """Cohort label for a birth year (the band's first year for width 5)."""
        if self.cohort_width == 1:
            return birth_year
        return birth_year - (birth_year % self.cohort_width)

    def cohorts(self) -> list[int]:
        """Sorted distinct cohort labels present in the data."""
        return sorted({self.cohort_of(r.birth_year) for r in self.records})

    def areas(self) -> list[str]:
        return sorted({r.area_id for r in self.records})


def build_dataset(
    records: Sequence[PersonRecord],
    k_max: int | None = None,
    cohort_width: int = 1,
    survey_year: int | None = None,
    area_graph_ref: str | None = None,
) -> Dataset:
    """Validate records and assemble a Dataset.

    Raises ValidationError for bad field values, ConsistencyError when a
    cluster maps to more than one (stratum, area, urban) triple or a person_id
    repeats. An explicit ``k_max`` below the observed maximum is a hard error:
    silently clamping attainment would bias hazards downward.
    """
    if not records:
        raise ValidationError("no records")
    if cohort_width not in (1, 5):
        raise ValidationError(f"cohort_width must be 1 or 5, got {cohort_width}")

    seen_ids: set[str] = set()
    cluster_key: dict[str, tuple[str, str, bool]] = {}
    max_years = 0
    for i, r in enumerate(records):
        if r.person_id in seen_ids:
            raise ConsistencyError(f"duplicate person_id {r.person_id!r} (row {i})")
        seen_ids.add(r.person_id)
        if not r.weight > 0:
            raise ValidationError(
                f"non-positive weight {r.weight} for person {r.person_id!r} (row {i})"
            )
        if r.years_completed < 0:
            raise ValidationError(
                f"negative years_completed for person {r.person_id!r} (row {i})"
            )
        key = (r.stratum_id, r.area_id, r.urban)
        prev = cluster_key.setdefault(r.cluster_id, key)
        if prev != key:
            raise ConsistencyError(
                f"cluster {r.cluster_id!r} maps to both {prev} and {key} (row {i})"
            )
        max_years = max(max_years, r.years_completed)

    if k_max is None:
        k_max = max_years
    elif k_max < max_years:
        raise ValidationError(
            f"k_max override {k_max} is below observed maximum years {max_years}"
        )

    years = [r.birth_year for r in records]
    return Dataset(
        records=tuple(records),
        k_max=int(k_max),
        cohort_range=(min(years), max(years)),
        cohort_width=cohort_width,
        survey_year=survey_year,
        area_graph_ref=area_graph_ref,
    )


def _as_bool(value, column: str, row: int) -> bool:
    if isinstance(value, bool):
        return value
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"column {column!r} not 0/1 at row {row}: {value!r}")
    if v not in (0, 1):
        raise ValidationError(f"column {column!r} not 0/1 at row {row}: {value!r}")
    return bool(v)


def load_dataset(path: str | Path, schema_config: Mapping | None = None) -> Dataset:
    """Load a flat CSV of person records.

    ``schema_config`` may remap column names ("columns": {logical: actual}) and
    set "k_max", "cohort_width" (1 or 5) and "survey_year". Censoring is read
    directly from the in_school column (1 = still enrolled = censored).
    """
    cfg = dict(schema_config or {})
    mapping = dict(DEFAULT_COLUMNS)
    for logical, actual in dict(cfg.get("columns", {})).items():
        if logical not in DEFAULT_COLUMNS:
            raise SchemaError(f"unknown logical column {logical!r} in mapping")
        mapping[logical] = actual

    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ValidationError(f"no records in {path}")
    if frame.empty:
        raise ValidationError(f"no records in {path}")

    for logical, actual in mapping.items():
        if actual not in frame.columns:
            raise SchemaError(f"missing column {actual!r} (maps to {logical!r})")

    records = []
    for i, row in enumerate(frame.itertuples(index=False)):
        row = dict(zip(frame.columns, row))
        try:
            weight = float(row[mapping["weight"]])
            birth_year = int(row[mapping["birth_year"]])
            years = int(row[mapping["years_completed"]])
        except ValueError as exc:
            raise ValidationError(f"unparseable numeric field at row {i}: {exc}")
        records.append(
            PersonRecord(
                person_id=row[mapping["person_id"]],
                cluster_id=row[mapping["cluster_id"]],
                stratum_id=row[mapping["stratum_id"]],
                weight=weight,
                birth_year=birth_year,
                years_completed=years,
                censored=_as_bool(row[mapping["in_school"]], mapping["in_school"], i),
                area_id=row[mapping["area_id"]],
                urban=_as_bool(row[mapping["urban"]], mapping["urban"], i),
            )
        )

    return build_dataset(
        records,
        k_max=cfg.get("k_max"),
        cohort_width=int(cfg.get("cohort_width", 1)),
        survey_year=cfg.get("survey_year"),
        area_graph_ref=cfg.get("area_graph_ref"),
    )


def load_schema_config(path: str | Path) -> dict:
    """Read a JSON schema/config file (column remapping, k_max, cohort_width)."""
    with open(path) as fh:
        return json.load(fh)


def expand_risk_rows(ds: Dataset) -> list[RiskRow]:
    """Expand each education history into person-grade Bernoulli rows.

    A person with t completed years contributes grades 0..t when uncensored
    (event fires on the last row) and 0..t-1 when censored. Total row count is
    therefore sum(t_j + delta_j).
    """
    rows: list[RiskRow] = []
    for r in ds.records:
        last = r.years_completed - (1 if r.censored else 0)
        cohort = ds.cohort_of(r.birth_year)
        for k in range(last + 1):
            rows.append(
                RiskRow(
                    person_id=r.person_id,
                    cohort=cohort,
                    area_id=r.area_id,
                    urban=r.urban,
                    grade=k,
                    event=int(k == last and not r.censored),
                    weight=r.weight,
                    cluster_id=r.cluster_id,
                    stratum_id=r.stratum_id,
                )
            )
    return rows


def write_risk_rows_csv(rows: Iterable[RiskRow], path: str | Path) -> None:
    """Write risk rows as CSV (stable column order, round-trip floats)."""
    with open(path, "w") as fh:
        fh.write(
            "person_id,cohort,area_id,urban,grade,event,weight,cluster_id,stratum_id\n"
        )
        for r in rows:
            fh.write(
                f"{r.person_id},{r.cohort},{r.area_id},{int(r.urban)},"
                f"{r.grade},{r.event},{r.weight!r},{r.cluster_id},{r.stratum_id}\n"
            )
