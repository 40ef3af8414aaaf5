import numpy as np
import pytest

from amsbench.cohort import (
    AdmissionRecord, Cohort, CohortParseError, PatientRecord, SchemaError, TABLES, parse_cohort, write_cohort,
)
from amsbench.courses import TARGETS, derive_all_targets
from amsbench.features import featurize_cohort
from amsbench.synth import SIGNATURES, SynthConfig, SynthConfigError, generate_synthetic

from conftest import at

HEADERS = {
    "patients": "patient_id,age_at_admission,gender",
    "admissions": "admission_id,patient_id,admit_time,discharge_time,admission_type,ethnicity,insurance",
    "chartevents": "admission_id,item_id,timestamp,value",
    "labevents": "admission_id,item_id,timestamp,value",
    "prescriptions": "admission_id,atc_code,route,start_time,end_time",
}


def write_tables(d, **rows):
    for t in TABLES:
        lines = [HEADERS[t]] + list(rows.get(t, []))
        (d / f"{t}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d


FIVE_ROWS = dict(
    patients=["P1,3.5,F"],
    admissions=["A1,P1,2016-01-01T00:00:00,2016-01-10T00:00:00,emergency,han,public"],
    chartevents=["A1,1003,2016-01-02T10:00:00,120.0", "A9,1003,2016-01-02T11:00:00,110.0"],
    prescriptions=["A1,J01DD04,intravenous,2016-01-01T10:00:00,2016-01-04T10:00:00"],
)


def test_orphan_event_quarantined(tmp_path):
    c = parse_cohort(write_tables(tmp_path, **FIVE_ROWS))
    assert sum(c.summary().values()) == 4
    assert c.rejects.to_dict("records") == [{"table": "chartevents", "line": 3, "reason": "unknown admission_id"}]


def test_empty_chartevents(tmp_path):
    rows = dict(FIVE_ROWS, chartevents=[])
    c = parse_cohort(write_tables(tmp_path, **rows))
    assert len(c.chartevents) == 0 and len(c.rejects) == 0


def test_malformed_timestamp_names_line(tmp_path):
    rows = dict(FIVE_ROWS, chartevents=["A1,1003,2016-01-02T10:00:00,120.0", "A1,1003,2016-13-40T00:00:00,1.0"])
    with pytest.raises(CohortParseError) as err:
        parse_cohort(write_tables(tmp_path, **rows))
    assert err.value.line == 3 and "2016-13-40" in str(err.value)


def test_unknown_item_warns_and_quarantines(tmp_path):
    rows = dict(FIVE_ROWS, chartevents=["A1,999999,2016-01-02T10:00:00,1.0"])
    with pytest.warns(UserWarning, match="unknown item_id"):
        c = parse_cohort(write_tables(tmp_path, **rows))
    assert list(c.rejects["reason"]) == ["unknown item_id"]


def test_event_outside_admission_quarantined(tmp_path):
    rows = dict(FIVE_ROWS, chartevents=["A1,1003,2016-02-02T10:00:00,1.0"])
    c = parse_cohort(write_tables(tmp_path, **rows))
    assert list(c.rejects["reason"]) == ["timestamp outside admission"]


def test_header_mismatch(tmp_path):
    write_tables(tmp_path, **FIVE_ROWS)
    (tmp_path / "patients.csv").write_text("pid,age,gender\nP1,3,F\n")
    with pytest.raises(SchemaError):
        parse_cohort(tmp_path)


def test_record_invariants():
    with pytest.raises(ValueError):
        PatientRecord("P", -1.0, "F")
    with pytest.raises(ValueError):
        AdmissionRecord("A", "P", at(10), at(5))


def test_round_trip_synthetic(tmp_path, small_cohort):
    write_cohort(small_cohort, tmp_path)
    back = parse_cohort(tmp_path)
    assert back == small_cohort
    assert len(back.rejects) == 0


def test_round_trip_empty(tmp_path):
    write_cohort(Cohort(), tmp_path)
    for t in TABLES:
        assert (tmp_path / f"{t}.csv").read_text().strip() == HEADERS[t]
    assert parse_cohort(tmp_path) == Cohort()


def test_round_trip_non_ascii(tmp_path):
    (tmp_path / "a").mkdir()
    c = parse_cohort(write_tables(tmp_path / "a", **FIVE_ROWS))
    adm = c.admissions.copy()
    adm.loc[0, "ethnicity"] = "汉族-Zoë"
    c2 = Cohort(patients=c.patients, admissions=adm, chartevents=c.chartevents, labevents=c.labevents,
                prescriptions=c.prescriptions)
    write_cohort(c2, tmp_path / "b")
    assert parse_cohort(tmp_path / "b").admissions.loc[0, "ethnicity"] == "汉族-Zoë"


def test_synthetic_deterministic(tmp_path):
    cfg = SynthConfig(n_patients=25, seed=42)
    a, b = generate_synthetic(cfg), generate_synthetic(cfg)
    assert a == b
    write_cohort(a, tmp_path / "a")
    write_cohort(b, tmp_path / "b")
    for t in TABLES:
        assert (tmp_path / "a" / f"{t}.csv").read_bytes() == (tmp_path / "b" / f"{t}.csv").read_bytes()
    assert generate_synthetic(SynthConfig(n_patients=25, seed=43)) != a


def test_synthetic_all_zero_prevalence():
    cfg = SynthConfig(n_patients=80, seed=3, target_prevalences={t: 0.0 for t in TARGETS})
    summary = derive_all_targets(generate_synthetic(cfg))
    assert summary.patient_days > 0
    assert summary.events == []


def test_synthetic_config_validation():
    with pytest.raises(SynthConfigError) as err:
        SynthConfig(target_prevalences={"short_course": 1.5})
    assert err.value.field == "target_prevalences.short_course"
    with pytest.raises(SynthConfigError):
        SynthConfig(n_patients=-1)


def test_synthetic_events_inside_admissions(small_cohort):
    adm = small_cohort.admissions.set_index("admission_id")
    for t in ("chartevents", "labevents"):
        ev = small_cohort.table(t)
        b = adm.loc[ev["admission_id"]]
        assert (ev["timestamp"].to_numpy() >= b["admit_time"].to_numpy()).all()
        assert (ev["timestamp"].to_numpy() <= b["discharge_time"].to_numpy()).all()
        assert np.isfinite(ev["value"]).all()
    rx = small_cohort.prescriptions
    assert (rx["end_time"] > rx["start_time"]).all()


def test_planted_signal_shifts_positive_days():
    table = featurize_cohort(generate_synthetic(SynthConfig(n_patients=120, seed=9)))
    j = table.schema.index["TEMP_mean"]
    n = table.X[:, table.schema.index["TEMP_n"]] > 0
    y = table.label("short_course") == 1
    shift = table.X[y & n, j].mean() - table.X[~y & n, j].mean()
    assert np.sign(shift) == np.sign(SIGNATURES["short_course"]["TEMP"])
    assert abs(shift) > 0.2
