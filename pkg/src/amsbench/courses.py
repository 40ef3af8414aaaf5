"""Antibiotic courses, the ASI spectrum table, and the four stewardship targets.

Prescriptions are gap-merged per (admission, ATC) into courses; the target
rules then run on the courses. Everything here is pure per admission.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from functools import lru_cache
from importlib import resources
from typing import Iterable, Optional

from .cohort import AdmissionRecord, Cohort, PrescriptionRecord

logger = logging.getLogger(__name__)

MERGE_GAP = timedelta(hours=24)  # gap <= MERGE_GAP merges (inclusive)
MIN_COURSE = timedelta(hours=24)  # merged courses shorter than this are dropped
SHORT_COURSE_MAX = timedelta(hours=96)
DISCONTINUATION_HORIZON = timedelta(hours=72)
CEFAZOLIN = "J01DB04"

IV_TO_ORAL = "iv_to_oral"
DEESCALATION = "deescalation"
DISCONTINUATION = "discontinuation"
SHORT_COURSE = "short_course"
TARGETS = (IV_TO_ORAL, DEESCALATION, DISCONTINUATION, SHORT_COURSE)
# targets whose event marks the end of a course; labelled on the course's last day
END_TARGETS = frozenset({DISCONTINUATION, SHORT_COURSE})

_EPS = timedelta(microseconds=1)


class AsiTable:
    """ATC code -> (label, ASI score). Codes without a score map to ``None``."""

    def __init__(self, rows: Iterable[tuple[str, str, Optional[int]]]):
        self._asi: dict[str, Optional[int]] = {}
        self._label: dict[str, str] = {}
        for atc, label, asi in rows:
            if atc in self._asi and self._asi[atc] != asi:
                raise ValueError(f"conflicting ASI values for {atc}")
            self._asi.setdefault(atc, asi)
            self._label.setdefault(atc, label)

    @classmethod
    @lru_cache(maxsize=None)
    def default(cls) -> "AsiTable":
        text = resources.files("amsbench").joinpath("data/asi_map.csv").read_text("utf-8")
        rows = []
        for line in text.strip().splitlines()[1:]:
            parts = line.split(",")
            atc, label, asi = parts[0], ",".join(parts[1:-1]), parts[-1]
            rows.append((atc, label, int(asi) if asi else None))
        return cls(rows)

    def __contains__(self, atc: str) -> bool:
        return atc in self._asi

    def is_mapped(self, atc: str) -> bool:
        return atc in self._asi

    def score(self, atc: str) -> Optional[int]:
        """ASI score; ``None`` if the code is unmapped or has no score."""
        return self._asi.get(atc)

    def label(self, atc: str) -> Optional[str]:
        return self._label.get(atc)

    def codes(self) -> list[str]:
        return sorted(self._asi)

    def scored_codes(self) -> list[str]:
        return sorted(a for a, s in self._asi.items() if s is not None)


@dataclass(frozen=True)
class AntibioticCourse:
    admission_id: str
    atc_code: str
    start_time: datetime
    end_time: datetime
    prescriptions: tuple[PrescriptionRecord, ...]

    @property
    def duration(self) -> timedelta:
        return self.end_time - self.start_time

    @property
    def routes_timeline(self) -> list[tuple[datetime, str]]:
        return [(p.start_time, p.route) for p in self.prescriptions]

    def active_at(self, t: datetime) -> bool:
        return self.start_time <= t < self.end_time


@dataclass(frozen=True)
class TargetEvent:
    admission_id: str
    target: str
    event_time: datetime
    source_course: AntibioticCourse = field(compare=False)

    @property
    def label_date(self) -> date:
        """Calendar day carrying the positive label."""
        if self.target in END_TARGETS:
            return last_active_date(self.event_time)
        return self.event_time.date()


# ---------------------------------------------------------------------------
# calendar-day helpers shared with the featurizer and the generator


def last_active_date(end_time: datetime) -> date:
    """Last calendar day touched by a half-open interval ending at ``end_time``."""
    return (end_time - _EPS).date()


def course_dates(course: AntibioticCourse) -> list[date]:
    d0, d1 = course.start_time.date(), last_active_date(course.end_time)
    return [d0 + timedelta(days=i) for i in range((d1 - d0).days + 1)]


def patient_dates(courses: Iterable[AntibioticCourse]) -> list[date]:
    """Sorted distinct calendar days on which any course is active."""
    return sorted({d for c in courses for d in course_dates(c)})


# ---------------------------------------------------------------------------
# merging


def merge_courses(prescriptions: Iterable[PrescriptionRecord]) -> list[AntibioticCourse]:
    """Gap-merge prescriptions into courses per (admission, ATC).

    Prescriptions are sorted by start; a prescription whose start lies at most
    ``MERGE_GAP`` after the running end of the current course extends it.
    Courses shorter than ``MIN_COURSE`` are discarded. Output is ordered by
    (start, atc).
    """
    groups: dict[tuple[str, str], list[PrescriptionRecord]] = defaultdict(list)
    for p in prescriptions:
        groups[(p.admission_id, p.atc_code)].append(p)
    courses = []
    for (adm, atc), rx in groups.items():
        rx.sort(key=lambda p: (p.start_time, p.end_time, p.route))
        current = [rx[0]]
        end = rx[0].end_time
        for p in rx[1:]:
            if p.start_time - end <= MERGE_GAP:
                current.append(p)
                end = max(end, p.end_time)
            else:
                courses.append(_course(adm, atc, current, end))
                current, end = [p], p.end_time
        courses.append(_course(adm, atc, current, end))
    kept = [c for c in courses if c.duration >= MIN_COURSE]
    kept.sort(key=lambda c: (c.admission_id, c.start_time, c.atc_code, c.end_time))
    return kept


def _course(adm, atc, rx, end) -> AntibioticCourse:
    return AntibioticCourse(adm, atc, rx[0].start_time, end, tuple(rx))


def course_prescriptions(courses: Iterable[AntibioticCourse]) -> list[PrescriptionRecord]:
    return [p for c in courses for p in c.prescriptions]


# ---------------------------------------------------------------------------
# target rules


def label_iv_to_oral(course: AntibioticCourse) -> Optional[TargetEvent]:
    """First non-IV prescription that starts strictly after an IV prescription."""
    first_iv = None
    for p in course.prescriptions:
        if p.route == "intravenous":
            if first_iv is None or p.start_time < first_iv:
                first_iv = p.start_time
        elif first_iv is not None and p.start_time > first_iv:
            return TargetEvent(course.admission_id, IV_TO_ORAL, p.start_time, course)
    return None


def _active_for_switch(course: AntibioticCourse, t: datetime) -> bool:
    # a course is "current" for a new prescription starting at t if it began
    # earlier and has not ended before t (hand-off at the boundary counts)
    return course.start_time < t <= course.end_time


def label_deescalation(courses: list[AntibioticCourse], asi: AsiTable | None = None) -> Optional[TargetEvent]:
    """First prescription whose ASI is strictly below the broadest active other-ATC course."""
    asi = asi or AsiTable.default()
    candidates = sorted(
        ((p, c) for c in courses for p in c.prescriptions),
        key=lambda pc: (pc[0].start_time, pc[0].atc_code),
    )
    warned = set()
    for p, own in candidates:
        new_score = asi.score(p.atc_code)
        if new_score is None:
            if p.atc_code not in warned:
                logger.warning("ATC %s has no ASI score; excluded from de-escalation", p.atc_code)
                warned.add(p.atc_code)
            continue
        active = [asi.score(c.atc_code) for c in courses
                  if c.atc_code != p.atc_code and _active_for_switch(c, p.start_time)]
        active = [s for s in active if s is not None]
        if active and new_score < max(active):
            return TargetEvent(own.admission_id, DEESCALATION, p.start_time, own)
    return None


def label_discontinuation(course: AntibioticCourse, admission: AdmissionRecord,
                          all_courses: list[AntibioticCourse]) -> Optional[TargetEvent]:
    """Course end with >=72h left in the stay and no course active in (end, end+72h]."""
    end = course.end_time
    if admission.discharge_time - end < DISCONTINUATION_HORIZON:
        return None
    horizon = end + DISCONTINUATION_HORIZON
    for other in all_courses:
        if other is course:
            continue
        # other is active somewhere in (end, horizon]
        if other.start_time <= horizon and other.end_time > end:
            return None
    return TargetEvent(course.admission_id, DISCONTINUATION, end, course)


def label_short_course(course: AntibioticCourse) -> Optional[TargetEvent]:
    if course.duration < SHORT_COURSE_MAX and course.atc_code != CEFAZOLIN:
        return TargetEvent(course.admission_id, SHORT_COURSE, course.end_time, course)
    return None


def admission_events(admission: AdmissionRecord, courses: list[AntibioticCourse],
                     asi: AsiTable | None = None) -> list[TargetEvent]:
    """All target events for one admission, ordered by (event_time, target)."""
    events = []
    for c in courses:
        for ev in (label_short_course(c), label_discontinuation(c, admission, courses)):
            if ev is not None:
                events.append(ev)
    # one switch label per admission: keep the earliest course-level event
    iv = [e for e in (label_iv_to_oral(c) for c in courses) if e is not None]
    if iv:
        events.append(min(iv, key=lambda e: (e.event_time, e.source_course.atc_code)))
    de = label_deescalation(courses, asi)
    if de is not None:
        events.append(de)
    events.sort(key=lambda e: (e.event_time, TARGETS.index(e.target), e.source_course.atc_code))
    return events


@dataclass
class TargetSummary:
    events: list[TargetEvent]
    patient_days: int
    positive_days: dict[str, int]
    intersections: Counter  # frozenset of targets -> number of positive patient-days

    @property
    def prevalence(self) -> dict[str, float]:
        n = self.patient_days
        return {t: (self.positive_days[t] / n if n else 0.0) for t in TARGETS}

    def pairwise(self) -> dict[tuple[str, str], int]:
        out = {}
        for i, a in enumerate(TARGETS):
            for b in TARGETS[i + 1:]:
                out[(a, b)] = sum(n for k, n in self.intersections.items() if a in k and b in k)
        return out


def day_labels(events: Iterable[TargetEvent]) -> dict[date, set[str]]:
    out: dict[date, set[str]] = defaultdict(set)
    for e in events:
        out[e.label_date].add(e.target)
    return out


def derive_admission(admission: AdmissionRecord, prescriptions: list[PrescriptionRecord],
                     asi: AsiTable | None = None):
    courses = merge_courses(prescriptions)
    return courses, admission_events(admission, courses, asi)


def derive_all_targets(cohort: Cohort, asi: AsiTable | None = None) -> TargetSummary:
    """Run merging and every target rule over the cohort.

    Returns the event list ordered by (admission_id, event_time) together with
    patient-day prevalences and the per-day intersection counts.
    """
    asi = asi or AsiTable.default()
    rx = cohort.prescriptions_by_admission()
    events: list[TargetEvent] = []
    n_days = 0
    positives = Counter()
    inter = Counter()
    for adm in sorted(cohort.admission_records(), key=lambda a: a.admission_id):
        courses, evs = derive_admission(adm, rx.get(adm.admission_id, []), asi)
        events.extend(evs)
        n_days += len(patient_dates(courses))
        for d, targets in day_labels(evs).items():
            inter[frozenset(targets)] += 1
            for t in targets:
                positives[t] += 1
    return TargetSummary(events, n_days, {t: positives[t] for t in TARGETS}, inter)
