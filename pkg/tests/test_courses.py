import logging
from datetime import timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amsbench.cohort import Cohort, PrescriptionRecord
from amsbench.courses import (
    AsiTable, TARGETS, admission_events, course_prescriptions, day_labels, derive_all_targets,
    label_deescalation, label_discontinuation, label_iv_to_oral, label_short_course, merge_courses,
)
from amsbench.synth import SynthConfig, generate_synthetic

from conftest import T0, admission, at, rx
from oracles import brute_events, courses_as_times
from target_fixtures import ADMISSIONS


def hours(t):
    return (t - T0) / timedelta(hours=1)


def fixture_events(adm_id, discharge, prescriptions):
    adm = admission(adm_id, discharge_h=discharge)
    courses = merge_courses([rx(a, s, e, route, adm=adm_id) for a, route, s, e in prescriptions])
    return {(ev.target, hours(ev.event_time)) for ev in admission_events(adm, courses)}


@pytest.mark.parametrize("adm_id,discharge,prescriptions,expected", ADMISSIONS, ids=[a[0] for a in ADMISSIONS])
def test_hand_traced_admissions(adm_id, discharge, prescriptions, expected):
    assert fixture_events(adm_id, discharge, prescriptions) == expected


# --- merging ---------------------------------------------------------------

def test_gap_within_24h_merges():
    courses = merge_courses([rx("J01GB06", 0, 24), rx("J01GB06", 30, 48)])
    assert [(hours(c.start_time), hours(c.end_time)) for c in courses] == [(0, 48)]


def test_gap_over_24h_splits():
    courses = merge_courses([rx("J01GB06", 0, 24), rx("J01GB06", 50, 80)])
    assert [(hours(c.start_time), hours(c.end_time)) for c in courses] == [(0, 24), (50, 80)]


def test_gap_of_exactly_24h_merges():
    courses = merge_courses([rx("J01GB06", 0, 24), rx("J01GB06", 48, 72)])
    assert len(courses) == 1 and hours(courses[0].end_time) == 72


def test_short_prescription_dropped():
    assert merge_courses([rx("J01GB06", 0, 20)]) == []
    assert merge_courses([]) == []


def test_overlapping_agents_all_kept():
    courses = merge_courses([rx("J01GB06", 0, 48), rx("J01XA01", 10, 60)])
    assert sorted(c.atc_code for c in courses) == ["J01GB06", "J01XA01"]


def test_routes_timeline_ordered():
    c, = merge_courses([rx("J01XX08", 30, 60, "oral"), rx("J01XX08", 0, 30)])
    assert [r for _, r in c.routes_timeline] == ["intravenous", "oral"]


# --- individual rules ------------------------------------------------------

def _course(*spans):
    c, = merge_courses([rx(a, s, e, route) for a, route, s, e in spans])
    return c


def test_iv_to_oral_examples():
    assert hours(label_iv_to_oral(_course(("J01XX08", "intravenous", 0, 50),
                                          ("J01XX08", "oral", 50, 80))).event_time) == 50
    assert label_iv_to_oral(_course(("J01XX08", "oral", 0, 30), ("J01XX08", "intravenous", 30, 60))) is None
    assert label_iv_to_oral(_course(("J01XX08", "intravenous", 0, 24),
                                    ("J01XX08", "intravenous", 24, 48))) is None


def test_iv_and_oral_same_start_is_not_a_switch():
    c = _course(("J01XX08", "intravenous", 0, 48), ("J01XX08", "oral", 0, 48))
    assert label_iv_to_oral(c) is None


def test_deescalation_single_course():
    assert label_deescalation(merge_courses([rx("J01DH51", 0, 100)])) is None


def test_deescalation_unscored_agent_excluded(caplog):
    # J02AX01 has no ASI: neither a trigger nor a comparison baseline
    courses = merge_courses([rx("J02AX01", 0, 100), rx("J01CE01", 40, 140)])
    with caplog.at_level(logging.WARNING):
        assert label_deescalation(courses) is None
    assert "J02AX01" in caplog.text


def test_asi_lookup_distinguishes_unmapped_from_unscored():
    asi = AsiTable.default()
    assert asi.score("J01DH51") == 10 and asi.score("J01CE01") == 2
    assert "J02AX01" in asi and asi.score("J02AX01") is None
    assert "XXXX" not in asi and asi.score("XXXX") is None


def test_discontinuation_examples():
    adm = admission(discharge_h=180)
    c = _course(("J01DD04", "intravenous", 0, 100))
    assert hours(label_discontinuation(c, adm, [c]).event_time) == 100
    assert label_discontinuation(c, admission(discharge_h=148), [c]) is None
    other, = merge_courses([rx("J01XA01", 90, 130)])
    assert label_discontinuation(c, admission(discharge_h=400), [c, other]) is None


def test_discontinuation_next_course_after_horizon_allowed():
    adm = admission(discharge_h=400)
    a, b = merge_courses([rx("J01DD04", 0, 100), rx("J01XA01", 173, 220)])
    assert label_discontinuation(a, adm, [a, b]) is not None
    a, b = merge_courses([rx("J01DD04", 0, 100), rx("J01XA01", 172, 220)])
    assert label_discontinuation(a, adm, [a, b]) is None


def test_short_course_boundaries():
    assert label_short_course(_course(("J01GB06", "intravenous", 0, 60))) is not None
    assert label_short_course(_course(("J01GB06", "intravenous", 0, 96))) is None
    assert label_short_course(_course(("J01GB06", "intravenous", 0, 100))) is None
    assert label_short_course(_course(("J01DB04", "intravenous", 0, 60))) is None


def test_end_targets_labelled_on_final_course_day():
    adm = admission(discharge_h=400)
    courses = merge_courses([rx("J01GB06", 10, 72)])  # ends exactly at midnight of day 3
    labels = day_labels(admission_events(adm, courses))
    last = (T0 + timedelta(hours=71)).date()
    assert labels == {last: {"short_course", "discontinuation"}}


def test_one_deescalation_per_admission():
    adm = admission(discharge_h=400)
    courses = merge_courses([rx("J01DH51", 0, 200), rx("J01CE01", 40, 140), rx("J01XA01", 60, 140)])
    evs = [e for e in admission_events(adm, courses) if e.target == "deescalation"]
    assert len(evs) == 1 and hours(evs[0].event_time) == 40


def test_derive_all_targets_empty_cohort():
    summary = derive_all_targets(Cohort())
    assert summary.events == [] and summary.patient_days == 0
    assert all(v == 0 for v in summary.prevalence.values())


# --- properties ------------------------------------------------------------

ATCS = ("J01GB06", "J01XA01", "J01DH51", "J01CE01")


@st.composite
def prescription_sets(draw, max_size=12):
    n = draw(st.integers(0, max_size))
    out = []
    for _ in range(n):
        s = draw(st.integers(0, 300))
        d = draw(st.integers(1, 80))
        out.append(rx(draw(st.sampled_from(ATCS)), s, s + d, draw(st.sampled_from(["intravenous", "oral"]))))
    return out


@settings(max_examples=200, deadline=None)
@given(prescription_sets())
def test_merge_matches_timeline_oracle(prescriptions):
    got = [(c.admission_id, c.atc_code, c.start_time, c.end_time) for c in merge_courses(prescriptions)]
    assert got == courses_as_times(prescriptions)


@settings(max_examples=150, deadline=None)
@given(prescription_sets())
def test_merge_idempotent(prescriptions):
    once = merge_courses(prescriptions)
    spans = [PrescriptionRecord(c.admission_id, c.atc_code, "intravenous", c.start_time, c.end_time) for c in once]
    twice = merge_courses(spans)
    assert [(c.atc_code, c.start_time, c.end_time) for c in once] == \
        [(c.atc_code, c.start_time, c.end_time) for c in twice]


@settings(max_examples=150, deadline=None)
@given(prescription_sets())
def test_course_invariants(prescriptions):
    for c in merge_courses(prescriptions):
        assert c.duration >= timedelta(hours=24)
        assert {p.atc_code for p in c.prescriptions} == {c.atc_code}
        end = c.prescriptions[0].end_time
        for p in c.prescriptions[1:]:
            assert p.start_time - end <= timedelta(hours=24)
            end = max(end, p.end_time)
        assert end == c.end_time
    # every surviving prescription appears in exactly one course
    kept = course_prescriptions(merge_courses(prescriptions))
    assert len(kept) == len(set(map(id, kept)))


@settings(max_examples=150, deadline=None)
@given(prescription_sets(), st.integers(100, 500))
def test_labels_match_brute_force(prescriptions, discharge):
    adm = admission(discharge_h=discharge)
    asi = AsiTable.default()
    got = {(e.target, e.event_time) for e in admission_events(adm, merge_courses(prescriptions), asi)}
    assert got == brute_events(adm, prescriptions, asi.score)


@settings(max_examples=60, deadline=None)
@given(prescription_sets(), st.integers(100, 500))
def test_labels_pure(prescriptions, discharge):
    adm = admission(discharge_h=discharge)
    a = admission_events(adm, merge_courses(prescriptions))
    b = admission_events(adm, merge_courses(list(reversed(prescriptions))))
    assert [(e.target, e.event_time) for e in a] == [(e.target, e.event_time) for e in b]


def test_synthetic_overlap_counts_match_brute_force():
    cohort = generate_synthetic(SynthConfig(n_patients=150, seed=7))
    asi = AsiTable.default()
    summary = derive_all_targets(cohort, asi)
    rx_by = cohort.prescriptions_by_admission()
    inter = {}
    for adm in cohort.admission_records():
        by_day = {}
        for target, t in brute_events(adm, rx_by.get(adm.admission_id, []), asi.score):
            d = (t - timedelta(microseconds=1)).date() if target in ("discontinuation", "short_course") else t.date()
            by_day.setdefault(d, set()).add(target)
        for targets in by_day.values():
            key = frozenset(targets)
            inter[key] = inter.get(key, 0) + 1
    assert dict(summary.intersections) == inter
    assert sum(summary.positive_days.values()) > 0
    assert set(summary.pairwise()) == {(a, b) for i, a in enumerate(TARGETS) for b in TARGETS[i + 1:]}
