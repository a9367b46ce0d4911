"""Shared fixtures: quick record builders and randomized datasets."""

from __future__ import annotations

import numpy as np

from edusurv.data import Dataset, PersonRecord, build_dataset


def person(
    pid,
    years,
    censored=False,
    weight=1.0,
    birth_year=1990,
    cluster=None,
    stratum=None,
    area="a1",
    urban=False,
):
    cluster = cluster if cluster is not None else f"c{pid}"
    stratum = stratum if stratum is not None else "s1"
    return PersonRecord(
        person_id=str(pid),
        cluster_id=str(cluster),
        stratum_id=str(stratum),
        weight=float(weight),
        birth_year=int(birth_year),
        years_completed=int(years),
        censored=bool(censored),
        area_id=str(area),
        urban=bool(urban),
    )


def random_dataset(
    rng: np.random.Generator,
    n: int = 40,
    k_max: int = 6,
    n_cohorts: int = 3,
    n_clusters: int = 8,
    censoring: float = 0.0,
) -> Dataset:
    """Random small dataset; clusters nested in two strata, one area."""
    records = []
    for i in range(n):
        cl = int(rng.integers(n_clusters))
        records.append(
            person(
                pid=i,
                years=int(rng.integers(0, k_max + 1)),
                censored=bool(rng.random() < censoring),
                weight=float(rng.uniform(0.5, 3.0)),
                birth_year=int(1980 + rng.integers(n_cohorts)),
                cluster=f"c{cl}",
                stratum=f"s{cl % 2}",
            )
        )
    return build_dataset(records, k_max=k_max)
