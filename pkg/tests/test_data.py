import numpy as np
import pytest

from edusurv.data import (
    build_dataset,
    expand_risk_rows,
    load_dataset,
)
from edusurv.errors import ConsistencyError, SchemaError, ValidationError
from helpers import person, random_dataset


def write_csv(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


HEADER = "person_id,cluster_id,stratum_id,weight,birth_year,years_completed,in_school,area_id,urban\n"


class TestLoadDataset:
    def test_three_valid_rows(self, tmp_path):
        path = write_csv(
            tmp_path,
            HEADER
            + "p1,c1,s1,1.0,1990,4,0,a1,0\n"
            + "p2,c1,s1,2.0,1991,6,0,a1,0\n"
            + "p3,c2,s1,0.5,1990,0,1,a2,1\n",
        )
        ds = load_dataset(path)
        assert len(ds.records) == 3
        assert ds.k_max == 6
        assert ds.cohort_range == (1990, 1991)
        assert ds.records[2].censored is True

    def test_zero_weight_cites_row(self, tmp_path):
        path = write_csv(
            tmp_path,
            HEADER + "p1,c1,s1,1.0,1990,4,0,a1,0\n" + "p2,c1,s1,0.0,1991,6,0,a1,0\n",
        )
        with pytest.raises(ValidationError, match="row 1"):
            load_dataset(path)

    def test_cluster_spanning_urban_rural(self, tmp_path):
        path = write_csv(
            tmp_path,
            HEADER + "p1,c7,s1,1.0,1990,4,0,a1,1\n" + "p2,c7,s1,1.0,1990,4,0,a1,0\n",
        )
        with pytest.raises(ConsistencyError, match="c7"):
            load_dataset(path)

    def test_missing_column_named(self, tmp_path):
        path = write_csv(
            tmp_path,
            "person_id,cluster_id,stratum_id,weight,birth_year,years_completed,area_id,urban\n"
            "p1,c1,s1,1.0,1990,4,a1,0\n",
        )
        with pytest.raises(SchemaError, match="in_school"):
            load_dataset(path)

    def test_column_remapping(self, tmp_path):
        path = write_csv(
            tmp_path,
            "id,psu,strate,wt,by,yrs,enrolled,adm,urb\n" + "p1,c1,s1,1.0,1990,4,0,a1,0\n",
        )
        cfg = {
            "columns": {
                "person_id": "id",
                "cluster_id": "psu",
                "stratum_id": "strate",
                "weight": "wt",
                "birth_year": "by",
                "years_completed": "yrs",
                "in_school": "enrolled",
                "area_id": "adm",
                "urban": "urb",
            }
        }
        ds = load_dataset(path, cfg)
        assert ds.records[0].person_id == "p1"

    def test_unknown_logical_column(self, tmp_path):
        path = write_csv(tmp_path, HEADER + "p1,c1,s1,1.0,1990,4,0,a1,0\n")
        with pytest.raises(SchemaError, match="bogus"):
            load_dataset(path, {"columns": {"bogus": "x"}})

    def test_empty_file(self, tmp_path):
        path = write_csv(tmp_path, HEADER)
        with pytest.raises(ValidationError, match="no records"):
            load_dataset(path)

    def test_duplicate_person_id(self, tmp_path):
        path = write_csv(
            tmp_path,
            HEADER + "p1,c1,s1,1.0,1990,4,0,a1,0\n" + "p1,c1,s1,1.0,1990,4,0,a1,0\n",
        )
        with pytest.raises(ConsistencyError, match="p1"):
            load_dataset(path)

    def test_k_max_override_below_observed(self):
        with pytest.raises(ValidationError, match="k_max"):
            build_dataset([person(1, years=9)], k_max=5)

    def test_k_max_override_above_observed(self):
        ds = build_dataset([person(1, years=3)], k_max=10)
        assert ds.k_max == 10


class TestCohortGrouping:
    def test_five_year_bands(self):
        ds = build_dataset([person(1, 3, birth_year=1997)], cohort_width=5)
        assert ds.cohort_of(1997) == 1995
        assert ds.cohort_of(1995) == 1995
        assert ds.cohort_of(1999) == 1995
        assert ds.cohort_of(2000) == 2000


class TestExpandRiskRows:
    def test_uncensored_three_years(self):
        ds = build_dataset([person(1, years=3, censored=False)])
        rows = expand_risk_rows(ds)
        assert [r.grade for r in rows] == [0, 1, 2, 3]
        assert [r.event for r in rows] == [0, 0, 0, 1]

    def test_censored_three_years(self):
        ds = build_dataset([person(1, years=3, censored=True)])
        rows = expand_risk_rows(ds)
        assert [r.grade for r in rows] == [0, 1, 2]
        assert [r.event for r in rows] == [0, 0, 0]

    def test_never_attended(self):
        ds = build_dataset([person(1, years=0, censored=False)])
        rows = expand_risk_rows(ds)
        assert len(rows) == 1
        assert rows[0].grade == 0 and rows[0].event == 1
        # likelihood contribution is exactly log h_0
        h = np.full(1, 0.37)
        ll = sum(
            r.event * np.log(h[r.grade]) + (1 - r.event) * np.log1p(-h[r.grade])
            for r in rows
        )
        assert ll == pytest.approx(np.log(0.37), abs=1e-15)

    def test_censored_never_attended_contributes_nothing(self):
        ds = build_dataset([person(1, years=0, censored=True), person(2, years=2)])
        rows = expand_risk_rows(ds)
        assert all(r.person_id == "2" for r in rows)

    def test_row_count_identity(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            ds = random_dataset(rng, n=30, censoring=0.3)
            rows = expand_risk_rows(ds)
            expected = sum(
                r.years_completed + (0 if r.censored else 1) for r in ds.records
            )
            assert len(rows) == expected

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        ds = random_dataset(rng, n=50, censoring=0.4)
        rows = expand_risk_rows(ds)
        by_person = {}
        for r in rows:
            by_person.setdefault(r.person_id, []).append(r)
        for rec in ds.records:
            mine = by_person.get(rec.person_id, [])
            if rec.years_completed == 0 and rec.censored:
                assert mine == []
                continue
            max_grade = max(r.grade for r in mine)
            any_event = any(r.event for r in mine)
            t = max_grade if any_event else max_grade + 1
            assert (t, not any_event) == (rec.years_completed, rec.censored)

    def test_loglik_matches_closed_form(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            ds = random_dataset(rng, n=20, k_max=5, censoring=0.3)
            h = rng.uniform(0.05, 0.95, size=ds.k_max + 1)
            rows = expand_risk_rows(ds)
            for rec in ds.records:
                mine = [r for r in rows if r.person_id == rec.person_id]
                ll_rows = sum(
                    r.event * np.log(h[r.grade])
                    + (1 - r.event) * np.log1p(-h[r.grade])
                    for r in mine
                )
                t, delta = rec.years_completed, 0 if rec.censored else 1
                ll_closed = sum(np.log1p(-h[k]) for k in range(t)) + (
                    delta * np.log(h[t]) if delta else 0.0
                )
                assert ll_rows == pytest.approx(ll_closed, abs=1e-12)
