"""Twelve hand-traced admissions, three per target family.

Each entry: (admission id, discharge hour, prescriptions as
(atc, route, start_h, end_h), expected {(target, event hour)}).
Hours are offsets from conftest.T0.
"""

IV, PO = "intravenous", "oral"

ADMISSIONS = [
    # iv_to_oral -------------------------------------------------------
    ("iv-canonical", 150, [("J01XX08", IV, 0, 50), ("J01XX08", PO, 50, 120)],
     {("iv_to_oral", 50)}),
    ("iv-reversed", 150, [("J01XX08", PO, 0, 30), ("J01XX08", IV, 30, 120)],
     set()),
    # gap-merged course, second switch ignored
    ("iv-first-only", 150, [("J01XX08", IV, 0, 40), ("J01XX08", PO, 45, 60),
                            ("J01XX08", IV, 60, 100), ("J01XX08", PO, 100, 130)],
     {("iv_to_oral", 45)}),
    # de-escalation ------------------------------------------------------
    ("de-imipenem-penicillin", 160, [("J01DH51", IV, 0, 100), ("J01CE01", IV, 40, 140)],
     {("deescalation", 40)}),
    ("de-equal-asi", 160, [("J01GB06", IV, 0, 100), ("J01GB03", IV, 40, 140)],
     set()),
    # compared against the broadest active course (imipenem), not the oldest (vancomycin)
    ("de-max-active", 170, [("J01XA01", IV, 0, 100), ("J01DH51", IV, 30, 130), ("J01DD04", IV, 50, 150)],
     {("deescalation", 50)}),
    # discontinuation ----------------------------------------------------
    ("dc-exactly-72h", 172, [("J01DD04", IV, 0, 100)],
     {("discontinuation", 100)}),
    ("dc-71h", 171, [("J01DD04", IV, 0, 100)],
     set()),
    ("dc-overlap", 400, [("J01DD04", IV, 0, 100), ("J01XA01", IV, 50, 160)],
     {("discontinuation", 160)}),
    # short course -------------------------------------------------------
    ("sc-amikacin", 100, [("J01GB06", IV, 0, 60)],
     {("short_course", 60)}),
    ("sc-cefazolin", 100, [("J01DB04", IV, 0, 60)],
     set()),
    # the 20h course is dropped before any rule sees it
    ("sc-under-24h", 120, [("J01GB06", IV, 0, 20), ("J01XA01", IV, 0, 100)],
     set()),
]
