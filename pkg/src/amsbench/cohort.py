"""Canonical EHR tables: schemas, CSV parsing with quarantine, and writing.

A :class:`Cohort` holds five pandas tables mirroring the source extracts
(patients, admissions, chartevents, labevents, prescriptions). Rows that fail
referential or value checks are not dropped silently; they are collected in
``Cohort.rejects`` and written to ``rejects.csv`` next to the tables.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

TIME_FORMAT = "%Y-%m-%dT%H:%M:%S"
ROUTES = ("intravenous", "oral", "other")

# column name -> kind ("str", "float", "time")
SCHEMA: dict[str, dict[str, str]] = {
    "patients": {"patient_id": "str", "age_at_admission": "float", "gender": "str"},
    "admissions": {
        "admission_id": "str",
        "patient_id": "str",
        "admit_time": "time",
        "discharge_time": "time",
        "admission_type": "str",
        "ethnicity": "str",
        "insurance": "str",
    },
    "chartevents": {"admission_id": "str", "item_id": "str", "timestamp": "time", "value": "float"},
    "labevents": {"admission_id": "str", "item_id": "str", "timestamp": "time", "value": "float"},
    "prescriptions": {
        "admission_id": "str",
        "atc_code": "str",
        "route": "str",
        "start_time": "time",
        "end_time": "time",
    },
}
TABLES = tuple(SCHEMA)
REJECT_COLUMNS = ["table", "line", "reason"]


class CohortError(Exception):
    """Base error for cohort IO."""


class CohortParseError(CohortError):
    """A table file could not be parsed; carries the offending line."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class SchemaError(CohortError):
    pass


@dataclass(frozen=True)
class Variable:
    code: str
    item_id: str
    table: str
    label: str
    kind: str  # "vital" or "lab"


@lru_cache(maxsize=None)
def variable_vocabulary() -> dict[str, Variable]:
    """All measurable variables known to the pipeline, keyed by item_id."""
    text = resources.files("amsbench").joinpath("data/variables.csv").read_text("utf-8")
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    return {r[1]: Variable(r[0], r[1], r[2], r[3], r[4]) for r in rows}


def variables_by_code() -> dict[str, Variable]:
    return {v.code: v for v in variable_vocabulary().values()}


# Row-level records. Tables are the storage format; these are convenient views
# for code that walks a handful of rows (course merging, fixtures).


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    age_at_admission: float
    gender: str

    def __post_init__(self):
        if not self.age_at_admission >= 0:
            raise ValueError(f"age_at_admission must be >= 0, got {self.age_at_admission}")


@dataclass(frozen=True)
class AdmissionRecord:
    admission_id: str
    patient_id: str
    admit_time: datetime
    discharge_time: datetime
    admission_type: str = "emergency"
    ethnicity: str = "unknown"
    insurance: str = "unknown"

    def __post_init__(self):
        if not self.discharge_time > self.admit_time:
            raise ValueError(f"admission {self.admission_id}: discharge_time must follow admit_time")


@dataclass(frozen=True)
class EventRecord:
    admission_id: str
    item_id: str
    timestamp: datetime
    value: float


@dataclass(frozen=True)
class PrescriptionRecord:
    admission_id: str
    atc_code: str
    route: str
    start_time: datetime
    end_time: datetime

    def __post_init__(self):
        if not self.end_time > self.start_time:
            raise ValueError(
                f"prescription {self.atc_code} in {self.admission_id}: end_time must follow start_time"
            )
        if self.route not in ROUTES:
            raise ValueError(f"unknown route {self.route!r}")


def _empty_frame(table: str) -> pd.DataFrame:
    cols = {}
    for col, kind in SCHEMA[table].items():
        if kind == "str":
            cols[col] = pd.Series([], dtype=object)
        elif kind == "float":
            cols[col] = pd.Series([], dtype=np.float64)
        else:
            cols[col] = pd.Series([], dtype="datetime64[ns]")
    return pd.DataFrame(cols)


def _normalize(table: str, df: pd.DataFrame) -> pd.DataFrame:
    """Coerce columns to canonical dtypes and order; resets the index."""
    out = {}
    for col, kind in SCHEMA[table].items():
        s = df[col]
        if kind == "str":
            out[col] = s.astype(object).map(str)
        elif kind == "float":
            out[col] = s.astype(np.float64)
        else:
            out[col] = pd.to_datetime(s).astype("datetime64[ns]")
    return pd.DataFrame(out).reset_index(drop=True)


@dataclass
class Cohort:
    """Immutable-by-convention bundle of the five source tables."""

    patients: pd.DataFrame = field(default_factory=lambda: _empty_frame("patients"))
    admissions: pd.DataFrame = field(default_factory=lambda: _empty_frame("admissions"))
    chartevents: pd.DataFrame = field(default_factory=lambda: _empty_frame("chartevents"))
    labevents: pd.DataFrame = field(default_factory=lambda: _empty_frame("labevents"))
    prescriptions: pd.DataFrame = field(default_factory=lambda: _empty_frame("prescriptions"))
    rejects: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=REJECT_COLUMNS))

    def __post_init__(self):
        for name in TABLES:
            setattr(self, name, _normalize(name, getattr(self, name)))

    def table(self, name: str) -> pd.DataFrame:
        return getattr(self, name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return all(self.table(t).equals(other.table(t)) for t in TABLES)

    def subset(self, patient_ids) -> "Cohort":
        """Cohort restricted to the given patients (rejects are not carried over)."""
        keep = set(map(str, patient_ids))
        pats = self.patients[self.patients["patient_id"].isin(keep)]
        adms = self.admissions[self.admissions["patient_id"].isin(keep)]
        ids = set(adms["admission_id"])
        part = {t: self.table(t)[self.table(t)["admission_id"].isin(ids)]
                for t in ("chartevents", "labevents", "prescriptions")}
        return Cohort(patients=pats, admissions=adms, **part)

    def summary(self) -> dict[str, int]:
        return {t: len(self.table(t)) for t in TABLES}

    # record views -----------------------------------------------------
    def admission_records(self) -> list[AdmissionRecord]:
        return [
            AdmissionRecord(r.admission_id, r.patient_id, r.admit_time.to_pydatetime(),
                            r.discharge_time.to_pydatetime(), r.admission_type, r.ethnicity,
                            r.insurance)
            for r in self.admissions.itertuples(index=False)
        ]

    def prescriptions_by_admission(self) -> dict[str, list[PrescriptionRecord]]:
        out: dict[str, list[PrescriptionRecord]] = {a: [] for a in self.admissions["admission_id"]}
        for r in self.prescriptions.itertuples(index=False):
            out.setdefault(r.admission_id, []).append(
                PrescriptionRecord(r.admission_id, r.atc_code, r.route,
                                   r.start_time.to_pydatetime(), r.end_time.to_pydatetime())
            )
        return out

    @classmethod
    def from_records(cls, patients=(), admissions=(), events=(), prescriptions=()) -> "Cohort":
        """Build a cohort from record objects; events are routed by item table."""
        vocab = variable_vocabulary()

        def frame(table, rows):
            if not rows:
                return _empty_frame(table)
            return pd.DataFrame([r.__dict__ for r in rows], columns=list(SCHEMA[table]))

        charts = [e for e in events if vocab.get(e.item_id, None) is None
                  or vocab[e.item_id].table == "chartevents"]
        labs = [e for e in events if e.item_id in vocab and vocab[e.item_id].table == "labevents"]
        return cls(
            patients=frame("patients", list(patients)),
            admissions=frame("admissions", list(admissions)),
            chartevents=frame("chartevents", charts),
            labevents=frame("labevents", labs),
            prescriptions=frame("prescriptions", list(prescriptions)),
        )


# ---------------------------------------------------------------------------
# parsing


def _read_table(path: Path, table: str) -> pd.DataFrame:
    if not path.exists():
        raise CohortError(f"missing table file: {path}")
    expected = list(SCHEMA[table])
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise SchemaError(f"{path}: empty file, expected header {expected}") from None
    if list(raw.columns) != expected:
        raise SchemaError(f"{path}: header {list(raw.columns)} does not match {expected}")
    for col, kind in SCHEMA[table].items():
        if kind == "time":
            s = raw[col]
            parsed = pd.to_datetime(s, format="ISO8601", errors="coerce")
            bad = np.flatnonzero(parsed.isna().to_numpy())
            if bad.size:
                i = int(bad[0])
                raise CohortParseError(path, i + 2, f"malformed timestamp {s.iloc[i]!r} in column {col}")
            raw[col] = parsed
        elif kind == "float":
            parsed = pd.to_numeric(raw[col], errors="coerce")
            bad = np.flatnonzero(parsed.isna().to_numpy() & (raw[col].str.lower() != "nan"))
            if bad.size:
                i = int(bad[0])
                raise CohortParseError(path, i + 2, f"malformed number {raw[col].iloc[i]!r} in column {col}")
            raw[col] = parsed.astype(np.float64)
    return raw


def parse_cohort(directory, strict_items: bool = True) -> Cohort:
    """Parse the five table files from ``directory`` into a cross-referenced cohort.

    Rows failing integrity checks go to ``Cohort.rejects`` with their 1-based
    file line (header is line 1). Malformed timestamps or numbers abort with
    :class:`CohortParseError`.
    """
    directory = Path(directory)
    frames = {t: _read_table(directory / f"{t}.csv", t) for t in TABLES}
    rejects: list[tuple[str, int, str]] = []

    def quarantine(table, df, bad_mask, reason):
        lines = df.index[bad_mask] + 2
        rejects.extend((table, int(ln), reason) for ln in lines)
        return df[~bad_mask]

    pat = frames["patients"]
    pat = quarantine("patients", pat, pat["patient_id"].duplicated().to_numpy(), "duplicate patient_id")
    pat = quarantine("patients", pat, ~(pat["age_at_admission"] >= 0).to_numpy(), "negative or missing age")

    adm = frames["admissions"]
    adm = quarantine("admissions", adm, adm["admission_id"].duplicated().to_numpy(), "duplicate admission_id")
    adm = quarantine("admissions", adm, ~adm["patient_id"].isin(pat["patient_id"]).to_numpy(), "unknown patient_id")
    adm = quarantine("admissions", adm, ~(adm["discharge_time"] > adm["admit_time"]).to_numpy(),
                     "discharge_time not after admit_time")

    bounds = adm.set_index("admission_id")[["admit_time", "discharge_time"]]
    vocab = variable_vocabulary()
    events = {}
    for table in ("chartevents", "labevents"):
        ev = frames[table]
        ev = quarantine(table, ev, ~ev["admission_id"].isin(bounds.index).to_numpy(), "unknown admission_id")
        unknown = ~ev["item_id"].map(lambda i: i in vocab and vocab[i].table == table).to_numpy(dtype=bool)
        if unknown.any():
            msg = f"{table}: {int(unknown.sum())} rows with unknown item_id quarantined"
            warnings.warn(msg, stacklevel=2)
            logger.warning(msg)
            ev = quarantine(table, ev, unknown, "unknown item_id")
        ev = quarantine(table, ev, ~np.isfinite(ev["value"].to_numpy()), "non-finite value")
        b = bounds.loc[ev["admission_id"]]
        inside = (ev["timestamp"].to_numpy() >= b["admit_time"].to_numpy()) & (
            ev["timestamp"].to_numpy() <= b["discharge_time"].to_numpy())
        ev = quarantine(table, ev, ~inside, "timestamp outside admission")
        events[table] = ev

    rx = frames["prescriptions"]
    rx = quarantine("prescriptions", rx, ~rx["admission_id"].isin(bounds.index).to_numpy(), "unknown admission_id")
    rx = quarantine("prescriptions", rx, ~rx["route"].isin(ROUTES).to_numpy(), "unknown route")
    rx = quarantine("prescriptions", rx, ~(rx["end_time"] > rx["start_time"]).to_numpy(),
                    "end_time not after start_time")

    rej = pd.DataFrame(rejects, columns=REJECT_COLUMNS)
    rej = rej.sort_values(["table", "line"], kind="stable").reset_index(drop=True)
    return Cohort(patients=pat, admissions=adm, chartevents=events["chartevents"],
                  labevents=events["labevents"], prescriptions=rx, rejects=rej)


def write_cohort(cohort: Cohort, directory) -> list[Path]:
    """Write all tables (and ``rejects.csv``) as UTF-8 CSV; returns the paths written."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CohortError(f"cannot create {directory}: {exc}") from exc
    written = []
    for table in TABLES:
        df = cohort.table(table).copy()
        for col, kind in SCHEMA[table].items():
            if kind == "time":
                df[col] = df[col].dt.strftime(TIME_FORMAT)
            elif kind == "float":
                df[col] = [repr(float(v)) for v in df[col]]
        path = directory / f"{table}.csv"
        try:
            df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
        except OSError as exc:
            raise CohortError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    path = directory / "rejects.csv"
    cohort.rejects.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    written.append(path)
    return written
