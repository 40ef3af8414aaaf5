"""
From prescriptions to stewardship labels
=========================================

One admission, four prescriptions. Courses are merged per agent, then the
four target rules run over the merged courses.
"""

from datetime import datetime, timedelta

from amsbench.cohort import AdmissionRecord, PrescriptionRecord
from amsbench.courses import AsiTable, admission_events, day_labels, merge_courses

t0 = datetime(2021, 5, 3, 9, 0)
h = lambda x: t0 + timedelta(hours=x)  # noqa: E731

adm = AdmissionRecord("A1", "P1", h(-6), h(240))
rx = [
    # meropenem, two orders 10h apart: merged into one course
    PrescriptionRecord("A1", "J01DH02", "intravenous", h(0), h(30)),
    PrescriptionRecord("A1", "J01DH02", "intravenous", h(40), h(70)),
    # ceftriaxone started while meropenem runs: lower ASI, so de-escalation
    PrescriptionRecord("A1", "J01DD04", "intravenous", h(60), h(100)),
    # a 12h vancomycin order is too short to count as a course
    PrescriptionRecord("A1", "J01XA01", "intravenous", h(5), h(17)),
]

asi = AsiTable.default()
courses = merge_courses(rx)
for c in courses:
    print(f"{c.atc_code}  ASI {asi.score(c.atc_code)}  {c.start_time:%d %b %H:%M} -> {c.end_time:%d %b %H:%M}"
          f"  ({c.duration / timedelta(hours=1):.0f}h)")

events = admission_events(adm, courses, asi)
for e in events:
    print(f"{e.target:16s} at {e.event_time:%d %b %H:%M}, labelled on {e.label_date}")

# patient-day view: which calendar days carry which labels
for day, targets in sorted(day_labels(events).items()):
    print(day, sorted(targets))
