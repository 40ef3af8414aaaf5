import sys
from datetime import datetime, timedelta

import numpy as np
import pytest

from amsbench.cohort import AdmissionRecord, Cohort, EventRecord, PatientRecord, PrescriptionRecord
from amsbench.features import featurize_cohort
from amsbench.synth import SynthConfig, generate_synthetic

T0 = datetime(2020, 3, 1, 0, 0)


def at(hours: float) -> datetime:
    return T0 + timedelta(hours=hours)


def rx(atc, start_h, end_h, route="intravenous", adm="A1"):
    return PrescriptionRecord(adm, atc, route, at(start_h), at(end_h))


def admission(adm="A1", pid="P1", admit_h=0.0, discharge_h=400.0):
    return AdmissionRecord(adm, pid, at(admit_h), at(discharge_h))


def one_admission_cohort(prescriptions, events=(), discharge_h=400.0, admit_h=0.0):
    """Single patient / single admission cohort built from records."""
    return Cohort.from_records(
        patients=[PatientRecord("P1", 4.0, "F")],
        admissions=[admission(admit_h=admit_h, discharge_h=discharge_h)],
        events=list(events),
        prescriptions=list(prescriptions),
    )


def event(code_item, hours, value, adm="A1"):
    return EventRecord(adm, code_item, at(hours), value)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic(SynthConfig(n_patients=40, seed=5))


@pytest.fixture(scope="session")
def small_table(small_cohort):
    return featurize_cohort(small_cohort)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.LINES):
        terminalreporter.write_line(mod.LINES[n])
