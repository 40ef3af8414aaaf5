"""Patient-day enumeration and leak-safe feature construction.

Every feature for the patient-day anchored at ``day_start`` is computed from
data strictly before ``day_start``: measurement windows are half-open
``[day_start - W, day_start)`` and antibiotic exposure only looks at
prescriptions that started before the anchor.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .cohort import AdmissionRecord, Cohort, PrescriptionRecord, variables_by_code
from .courses import (
    TARGETS, AntibioticCourse, AsiTable, TargetEvent, admission_events, day_labels,
    merge_courses, patient_dates,
)

HOUR = np.int64(3_600_000_000_000)  # ns
DAY = 24 * HOUR
GRID_MAGIC = b"AMSGRID1"

AGGREGATES = {"vital": ("sum", "mean", "n", "min", "max"), "lab": ("sum", "mean", "n")}


class FeatureConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FeaturizerConfig:
    anchor_hour: int = 8
    window_hours: int = 24
    bins: int = 24
    vitals: tuple = ("TEMP", "HR", "RR", "SPO2", "DBP", "SBP")
    labs: tuple = ("WBC", "CRP", "PCT", "HGB", "SODIUM")
    recent_codes: tuple = ("WBC", "CRP", "PCT")
    recent_days: int = 90
    trend_codes: tuple = ("TEMP", "RR", "HR", "SBP", "DBP", "SPO2")
    high_priority_asi: int = 8
    oral_lookback_hours: int = 72
    with_grid: bool = True

    def __post_init__(self):
        if self.bins <= 0:
            raise FeatureConfigError("bins must be positive")
        if self.window_hours <= 0 or (self.window_hours * 60) % self.bins:
            raise FeatureConfigError(
                f"window of {self.window_hours}h cannot be split into {self.bins} equal bins")
        codes = variables_by_code()
        for c in self.vitals + self.labs:
            if c not in codes:
                raise FeatureConfigError(f"unknown variable {c}")

    @property
    def series(self) -> tuple:
        return tuple(self.vitals) + tuple(self.labs)


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    kind: str  # static | one-hot | window-aggregate | trend | exposure | indicator
    source: str = ""
    aggregate: str = ""

    @property
    def binary(self) -> bool:
        return self.kind in ("one-hot", "indicator")


@dataclass
class FeatureSchema:
    columns: list[FeatureColumn]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise FeatureConfigError(f"duplicate feature names: {dup}")
        self.index = {c.name: i for i, c in enumerate(self.columns)}

    def __len__(self):
        return len(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def binary_mask(self) -> np.ndarray:
        return np.array([c.binary for c in self.columns], dtype=bool)

    def kinds(self, *kinds) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind in kinds]

    def presence_mask(self, X: np.ndarray) -> np.ndarray:
        """True where a value is defined; False where it holds a neutral default.

        Window means/extrema are undefined when the window count is 0; trend,
        recent and exposure values are undefined when their ``_missing`` flag is set.
        """
        X = np.atleast_2d(X)
        present = np.ones(X.shape, dtype=bool)
        for i, c in enumerate(self.columns):
            if c.kind == "window-aggregate" and c.aggregate in ("mean", "min", "max"):
                present[:, i] = X[:, self.index[f"{c.source}_n"]] > 0
            elif f"{c.name}_missing" in self.index:
                present[:, i] = X[:, self.index[f"{c.name}_missing"]] == 0
        return present


def build_schema(config: FeaturizerConfig, categories: dict[str, list[str]],
                 atc_vocab: list[str]) -> FeatureSchema:
    cols = [FeatureColumn("age_at_admission", "static", "patients"),
            FeatureColumn("los_hours", "static", "admissions"),
            FeatureColumn("icu_hours_cum", "static", "admissions")]
    for cat in ("gender", "ethnicity", "admission_type", "insurance"):
        cols += [FeatureColumn(f"{cat}={v}", "one-hot", cat) for v in categories[cat]]
    codes = variables_by_code()
    for code in config.series:
        kind = codes[code].kind
        cols += [FeatureColumn(f"{code}_{agg}", "window-aggregate", code, agg) for agg in AGGREGATES[kind]]
        if code in config.recent_codes:
            cols.append(FeatureColumn(f"{code}_recent_90d", "trend", code, "recent_90d"))
            cols.append(FeatureColumn(f"{code}_recent_90d_missing", "indicator", code))
    for code in config.trend_codes:
        if code not in config.vitals:
            continue
        for agg in ("delta_prev_day_max", "delta_abx_start_max", "var_3d"):
            cols.append(FeatureColumn(f"{code}_{agg}", "trend", code, agg))
            cols.append(FeatureColumn(f"{code}_{agg}_missing", "indicator", code))
    cols += [FeatureColumn(n, "exposure", "prescriptions") for n in (
        "distinct_atc_ever", "concurrent_atc_day", "hours_since_abx_start")]
    cols += [FeatureColumn(n, "indicator", "prescriptions") for n in (
        "high_priority_atc_ever", "any_oral_rx_last_3d", "iv_rx_day", "oral_rx_day",
        "hours_since_abx_start_missing")]
    cols += [FeatureColumn(f"primary_atc={a}", "one-hot", "prescriptions") for a in atc_vocab]
    return FeatureSchema(cols)


def default_atc_vocab(asi: AsiTable | None = None) -> list[str]:
    asi = asi or AsiTable.default()
    return asi.codes() + ["OTHER", "NONE"]


def cohort_categories(cohort: Cohort) -> dict[str, list[str]]:
    out = {"gender": sorted(set(cohort.patients["gender"]))}
    for cat in ("ethnicity", "admission_type", "insurance"):
        out[cat] = sorted(set(cohort.admissions[cat]))
    return out


# ---------------------------------------------------------------------------


@dataclass
class PatientDay:
    admission_id: str
    day_index: int
    date: date
    day_start: datetime
    labels: dict[str, int]
    features_24h: Optional[np.ndarray] = None
    hourly_grid: Optional[np.ndarray] = None
    grid_indicators: Optional[np.ndarray] = None
    valid: bool = True


def _ns(t) -> np.int64:
    return np.datetime64(t, "ns").astype(np.int64)


def anchor_of(d: date, anchor_hour: int) -> datetime:
    return datetime.combine(d, datetime.min.time()) + timedelta(hours=anchor_hour)


def enumerate_patient_days(admission: AdmissionRecord, courses: list[AntibioticCourse],
                           events: list[TargetEvent], anchor_hour: int = 8) -> list[PatientDay]:
    """One row per calendar day touched by a course, anchored at ``anchor_hour``."""
    labelled = day_labels(events)
    rows = []
    for i, d in enumerate(patient_dates(courses)):
        labels = {t: int(t in labelled.get(d, ())) for t in TARGETS}
        rows.append(PatientDay(admission.admission_id, i, d, anchor_of(d, anchor_hour), labels))
    return rows


class _Series:
    __slots__ = ("t", "v")

    def __init__(self, t: np.ndarray, v: np.ndarray):
        order = np.argsort(t, kind="stable")
        self.t, self.v = t[order], v[order]

    def window(self, lo, hi):
        a = np.searchsorted(self.t, lo, "left")
        b = np.searchsorted(self.t, hi, "left")
        return self.t[a:b], self.v[a:b]


def aggregate_window(series: _Series | None, day_start: np.int64, window: np.int64, kind: str) -> dict:
    """Aggregates over ``[day_start - window, day_start)``; empty windows give zeros."""
    aggs = AGGREGATES[kind]
    if series is None:
        return {a: 0.0 for a in aggs}
    _, v = series.window(day_start - window, day_start)
    if v.size == 0:
        return {a: 0.0 for a in aggs}
    out = {"sum": float(v.sum()), "mean": float(v.mean()), "n": float(v.size)}
    if "min" in aggs:
        out["min"] = float(v.min())
        out["max"] = float(v.max())
    return out


def build_hourly_grid(series_list: list[_Series | None], day_start, window, bins: int):
    """Last value per bin, forward-filled within the window; (grid, indicators) of shape (B, S)."""
    window = np.int64(window)
    if bins <= 0 or window % bins:
        raise FeatureConfigError(f"window {window} not divisible into {bins} bins")
    width = window // bins
    start = np.int64(day_start) - window
    S = len(series_list)
    grid = np.zeros((bins, S))
    ind = np.zeros((bins, S))
    for j, s in enumerate(series_list):
        if s is None:
            continue
        t, v = s.window(start, np.int64(day_start))
        if t.size == 0:
            continue
        b = ((t - start) // width).astype(np.int64)
        col = np.full(bins, np.nan)
        col[b] = v  # later events overwrite earlier ones in the same bin
        seen = ~np.isnan(col)
        first = int(np.argmax(seen))
        idx = np.where(seen, np.arange(bins), 0)
        np.maximum.accumulate(idx, out=idx)
        filled = col[idx]
        filled[:first] = 0.0
        grid[:, j] = filled
        ind[first:, j] = 1.0
    return grid, ind


class AdmissionFeaturizer:
    """Holds one admission's measurements and prescriptions; computes rows."""

    def __init__(self, config: FeaturizerConfig, schema: FeatureSchema, admission: AdmissionRecord,
                 patient: dict, events: dict[str, tuple[np.ndarray, np.ndarray]],
                 history: dict[str, tuple[np.ndarray, np.ndarray]],
                 prescriptions: list[PrescriptionRecord], prior_icu_hours: float,
                 asi: AsiTable, atc_vocab: list[str]):
        self.cfg, self.schema, self.adm, self.patient = config, schema, admission, patient
        self.asi, self.atc_vocab = asi, set(atc_vocab)
        codes = variables_by_code()
        self.kinds = {c: codes[c].kind for c in config.series}
        self.series = {c: (_Series(*events[c]) if c in events else None) for c in config.series}
        self.history = {c: (_Series(*history[c]) if c in history else None) for c in config.recent_codes}
        self.rx = sorted(prescriptions, key=lambda p: (p.start_time, p.atc_code, p.end_time))
        self.rx_start = np.array([_ns(p.start_time) for p in self.rx], dtype=np.int64)
        self.rx_end = np.array([_ns(p.end_time) for p in self.rx], dtype=np.int64)
        self.chain_start = self._chain_starts()
        self.admit_ns = _ns(admission.admit_time)
        self.prior_icu_hours = prior_icu_hours
        self.W = np.int64(config.window_hours) * HOUR
        self._max_cache: dict = {}

    def _chain_starts(self) -> np.ndarray:
        # start of the gap-merged run each prescription belongs to, looking backwards only
        out = np.zeros(len(self.rx), dtype=np.int64)
        last: dict[str, tuple[np.int64, np.int64]] = {}
        for i, p in enumerate(self.rx):
            s, e = self.rx_start[i], self.rx_end[i]
            prev = last.get(p.atc_code)
            if prev is not None and s - prev[1] <= 24 * HOUR:
                out[i] = prev[0]
                last[p.atc_code] = (prev[0], max(prev[1], e))
            else:
                out[i] = s
                last[p.atc_code] = (s, e)
        return out

    def _window_stat(self, code, day_start, offset_windows, stat):
        key = (code, int(day_start) - int(offset_windows) * int(self.W), stat)
        if key in self._max_cache:
            return self._max_cache[key]
        s = self.series.get(code)
        val = None
        if s is not None:
            hi = np.int64(day_start) - np.int64(offset_windows) * self.W
            _, v = s.window(hi - self.W, hi)
            if v.size:
                val = float(v.max()) if stat == "max" else float(v.mean())
        self._max_cache[key] = val
        return val

    def row(self, day_start: datetime) -> np.ndarray:
        cfg, idx = self.cfg, self.schema.index
        ds = _ns(day_start)
        x = np.zeros(len(self.schema))

        def put(name, value):
            j = idx.get(name)
            if j is not None:
                x[j] = value

        put("age_at_admission", self.patient["age_at_admission"])
        los = max(0.0, float(ds - self.admit_ns) / HOUR)
        put("los_hours", los)
        put("icu_hours_cum", self.prior_icu_hours + los)
        put(f"gender={self.patient['gender']}", 1.0)
        put(f"ethnicity={self.adm.ethnicity}", 1.0)
        put(f"admission_type={self.adm.admission_type}", 1.0)
        put(f"insurance={self.adm.insurance}", 1.0)

        for code in cfg.series:
            for agg, val in aggregate_window(self.series[code], ds, self.W, self.kinds[code]).items():
                put(f"{code}_{agg}", val)
        for code in cfg.recent_codes:
            s = self.history.get(code)
            recent = None
            if s is not None:
                _, v = s.window(ds - np.int64(cfg.recent_days) * DAY, ds)
                if v.size:
                    recent = float(v[-1])
            put(f"{code}_recent_90d", recent if recent is not None else 0.0)
            put(f"{code}_recent_90d_missing", float(recent is None))

        # exposure, prescriptions started before the anchor only
        started = self.rx_start < ds
        today = started & (self.rx_end > ds - self.W)
        atcs_ever = {self.rx[i].atc_code for i in np.flatnonzero(started)}
        atcs_today = sorted({self.rx[i].atc_code for i in np.flatnonzero(today)})
        put("distinct_atc_ever", float(len(atcs_ever)))
        put("concurrent_atc_day", float(len(atcs_today)))
        hp = any((self.asi.score(a) or 0) >= cfg.high_priority_asi for a in atcs_ever)
        put("high_priority_atc_ever", float(hp))
        oral_window = started & (self.rx_end > ds - np.int64(cfg.oral_lookback_hours) * HOUR)
        routes_today = {self.rx[i].route for i in np.flatnonzero(today)}
        put("any_oral_rx_last_3d", float(any(self.rx[i].route == "oral" for i in np.flatnonzero(oral_window))))
        put("iv_rx_day", float("intravenous" in routes_today))
        put("oral_rx_day", float("oral" in routes_today))
        primary = primary_atc(atcs_today, self.asi)
        if primary is None:
            put("primary_atc=NONE", 1.0)
        else:
            put(f"primary_atc={primary if primary in self.atc_vocab else 'OTHER'}", 1.0)
        abx_start = None
        if today.any():
            abx_start = int(self.chain_start[today].min())
            put("hours_since_abx_start", float(ds - abx_start) / HOUR)
        put("hours_since_abx_start_missing", float(abx_start is None))

        # trends
        for code in cfg.trend_codes:
            if code not in cfg.vitals:
                continue
            today_max = self._window_stat(code, ds, 0, "max")
            prev_max = self._window_stat(code, ds, 1, "max")
            self._put_opt(put, f"{code}_delta_prev_day_max",
                          None if today_max is None or prev_max is None else today_max - prev_max)
            base = None
            if abx_start is not None and today_max is not None:
                start_anchor = _ns(anchor_of(_date_of(abx_start), cfg.anchor_hour))
                base = self._window_stat(code, start_anchor, 0, "max")
            self._put_opt(put, f"{code}_delta_abx_start_max",
                          None if base is None else today_max - base)
            means = [m for m in (self._window_stat(code, ds, k, "mean") for k in range(3)) if m is not None]
            self._put_opt(put, f"{code}_var_3d", float(np.var(means)) if means else None)
        return x

    @staticmethod
    def _put_opt(put, name, value):
        put(name, 0.0 if value is None else value)
        put(f"{name}_missing", float(value is None))

    def grid(self, day_start: datetime):
        return build_hourly_grid([self.series[c] for c in self.cfg.series], _ns(day_start), self.W,
                                 self.cfg.bins)


def _date_of(ns: int) -> date:
    return np.datetime64(int(ns), "ns").astype("datetime64[D]").astype(object)


def primary_atc(atcs: list[str], asi: AsiTable) -> Optional[str]:
    """Highest-ASI agent; ties broken by lexicographic ATC; unscored agents rank last."""
    if not atcs:
        return None
    return min(atcs, key=lambda a: (-(asi.score(a) if asi.score(a) is not None else -1), a))


# ---------------------------------------------------------------------------


@dataclass
class PatientDayTable:
    meta: pd.DataFrame  # admission_id, patient_id, day_index, date, day_start
    X: np.ndarray
    labels: np.ndarray  # (n, len(TARGETS)) int8
    schema: FeatureSchema
    config: FeaturizerConfig
    grids: Optional[np.ndarray] = None  # (n, B, S)
    indicators: Optional[np.ndarray] = None
    course_end_dates: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.meta)

    def label(self, target: str) -> np.ndarray:
        return self.labels[:, TARGETS.index(target)]

    def take(self, rows) -> "PatientDayTable":
        rows = np.asarray(rows)
        return PatientDayTable(
            self.meta.iloc[rows].reset_index(drop=True), self.X[rows], self.labels[rows], self.schema,
            self.config,
            None if self.grids is None else self.grids[rows],
            None if self.indicators is None else self.indicators[rows],
        )

    def to_frame(self) -> pd.DataFrame:
        df = self.meta.copy()
        df["day_start"] = df["day_start"].dt.strftime("%Y-%m-%dT%H:%M:%S")
        df["date"] = df["date"].astype(str)
        feats = pd.DataFrame(self.X, columns=self.schema.names)
        labels = pd.DataFrame(self.labels.astype(int), columns=[f"label_{t}" for t in TARGETS])
        return pd.concat([df, feats, labels], axis=1)


def _events_by_admission(cohort: Cohort, codes: dict, wanted) -> dict:
    frames = []
    item_to_code = {codes[c].item_id: c for c in wanted}
    for table in ("chartevents", "labevents"):
        df = cohort.table(table)
        df = df[df["item_id"].isin(item_to_code)]
        if len(df):
            frames.append(df)
    out: dict = {}
    if not frames:
        return out
    df = pd.concat(frames, ignore_index=True)
    t = df["timestamp"].to_numpy().astype("datetime64[ns]").astype(np.int64)
    v = df["value"].to_numpy(dtype=np.float64)
    code = df["item_id"].map(item_to_code).to_numpy()
    adm = df["admission_id"].to_numpy()
    order = np.lexsort((t, code, adm))
    t, v, code, adm = t[order], v[order], code[order], adm[order]
    keys = np.char.add(np.char.add(adm.astype(str), "|"), code.astype(str)) if len(adm) else adm
    uniq, starts = np.unique(keys, return_index=True)
    bounds = list(starts) + [len(keys)]
    for k, (a, b) in enumerate(zip(bounds[:-1], bounds[1:])):
        adm_id, c = uniq[k].split("|", 1)
        out.setdefault(adm_id, {})[c] = (t[a:b], v[a:b])
    return out


def featurize_cohort(cohort: Cohort, config: FeaturizerConfig | None = None,
                     asi: AsiTable | None = None, categories: dict | None = None,
                     atc_vocab: list[str] | None = None,
                     admissions: list[str] | None = None) -> PatientDayTable:
    """Enumerate and featurize every patient-day; rows ordered by (admission_id, day_index)."""
    config = config or FeaturizerConfig()
    asi = asi or AsiTable.default()
    categories = categories or cohort_categories(cohort)
    atc_vocab = atc_vocab or default_atc_vocab(asi)
    schema = build_schema(config, categories, atc_vocab)
    codes = variables_by_code()
    events = _events_by_admission(cohort, codes, config.series)

    adm_records = sorted(cohort.admission_records(), key=lambda a: a.admission_id)
    if admissions is not None:
        keep = set(admissions)
        adm_records = [a for a in adm_records if a.admission_id in keep]
    patients = cohort.patients.set_index("patient_id")
    rx = cohort.prescriptions_by_admission()

    # per-patient history for long-lookback labs, and prior ICU time
    by_patient: dict[str, list[AdmissionRecord]] = {}
    for a in sorted(cohort.admission_records(), key=lambda a: (a.admit_time, a.admission_id)):
        by_patient.setdefault(a.patient_id, []).append(a)

    meta_rows, X_rows, label_rows, grids, inds = [], [], [], [], []
    for adm in adm_records:
        courses = merge_courses(rx.get(adm.admission_id, []))
        evs = admission_events(adm, courses, asi)
        days = enumerate_patient_days(adm, courses, evs, config.anchor_hour)
        if not days:
            continue
        prior = [a for a in by_patient[adm.patient_id] if a.admit_time < adm.admit_time]
        history = {}
        for code in config.recent_codes:
            parts = [events.get(a.admission_id, {}).get(code) for a in prior + [adm]]
            parts = [p for p in parts if p is not None]
            if parts:
                history[code] = (np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]))
        prior_icu = sum((a.discharge_time - a.admit_time).total_seconds() / 3600.0 for a in prior)
        pat = patients.loc[adm.patient_id]
        feat = AdmissionFeaturizer(
            config, schema, adm, {"age_at_admission": float(pat["age_at_admission"]), "gender": pat["gender"]},
            events.get(adm.admission_id, {}), history, rx.get(adm.admission_id, []), prior_icu, asi, atc_vocab)
        for day in days:
            meta_rows.append((adm.admission_id, adm.patient_id, day.day_index, day.date, day.day_start))
            X_rows.append(feat.row(day.day_start))
            label_rows.append([day.labels[t] for t in TARGETS])
            if config.with_grid:
                g, ind = feat.grid(day.day_start)
                grids.append(g)
                inds.append(ind)
    meta = pd.DataFrame(meta_rows, columns=["admission_id", "patient_id", "day_index", "date", "day_start"])
    meta["day_start"] = pd.to_datetime(meta["day_start"]).astype("datetime64[ns]")
    n, F = len(meta_rows), len(schema)
    S = len(config.series)
    return PatientDayTable(
        meta=meta,
        X=np.array(X_rows).reshape(n, F),
        labels=np.array(label_rows, dtype=np.int8).reshape(n, len(TARGETS)),
        schema=schema,
        config=config,
        grids=np.array(grids).reshape(n, config.bins, S) if config.with_grid else None,
        indicators=np.array(inds).reshape(n, config.bins, S) if config.with_grid else None,
    )


# ---------------------------------------------------------------------------
# grid file: magic, then little-endian uint32 B, S, rows; each row holds the
# B*S values followed by the B*S indicators, float32, row-major


def write_grids(path, grids: np.ndarray, indicators: np.ndarray) -> Path:
    path = Path(path)
    n, B, S = grids.shape
    payload = np.concatenate([grids.reshape(n, B * S), indicators.reshape(n, B * S)], axis=1)
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<III", B, S, n))
        fh.write(payload.astype("<f4").tobytes(order="C"))
    return path


def read_grids(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(GRID_MAGIC))
        if magic != GRID_MAGIC:
            raise ValueError(f"{path}: not a grid file")
        B, S, n = struct.unpack("<III", fh.read(12))
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n * 2 * B * S:
        raise ValueError(f"{path}: expected {n * 2 * B * S} values, found {data.size}")
    data = data.reshape(n, 2, B, S)
    return data[:, 0].astype(np.float64), data[:, 1].astype(np.float64)


# ---------------------------------------------------------------------------
# mutation-based leak check


class LeakError(RuntimeError):
    pass


def mutate_after(cohort: Cohort, patient_id: str, cutoff: datetime,
                 rng: np.random.Generator) -> Cohort:
    """Copy of one patient's data with everything at or after ``cutoff`` perturbed.

    Measurement values at/after the cutoff are shifted, new measurements and
    prescriptions are inserted after it, and prescriptions still running at the
    cutoff get a different (still later) end time.
    """
    sub = cohort.subset([patient_id])
    cut = pd.Timestamp(cutoff)
    adm = sub.admissions.set_index("admission_id")
    tables = {}
    for name in ("chartevents", "labevents"):
        df = sub.table(name).copy()
        late = df["timestamp"] >= cut
        df.loc[late, "value"] = df.loc[late, "value"] + rng.normal(5.0, 2.0, size=int(late.sum()))
        extra = []
        for aid, row in adm.iterrows():
            if row.discharge_time <= cut:
                continue
            items = df.loc[df["admission_id"] == aid, "item_id"].unique()
            if items.size == 0:
                continue
            lo, hi = max(cut, row.admit_time), row.discharge_time
            span = (hi - lo).total_seconds()
            for item in items[:4]:
                t = lo + pd.Timedelta(seconds=float(rng.uniform(0, span)) // 60 * 60)
                if t < hi:
                    extra.append((aid, item, t, float(rng.normal(100.0, 30.0))))
        if extra:
            df = pd.concat([df, pd.DataFrame(extra, columns=df.columns)], ignore_index=True)
        tables[name] = df
    rx = sub.prescriptions.copy()
    running = (rx["start_time"] < cut) & (rx["end_time"] > cut)
    for i in np.flatnonzero(running.to_numpy()):
        dis = adm.loc[rx["admission_id"].iat[i], "discharge_time"]
        lo = cut + pd.Timedelta(minutes=1)
        if dis > lo:
            rx.iat[i, rx.columns.get_loc("end_time")] = (lo + (dis - lo) * float(rng.uniform(0.1, 1.0))).ceil("min")
    late = rx["start_time"] >= cut
    shift = pd.to_timedelta(rng.integers(0, 180, size=int(late.sum())), unit="m")
    rx.loc[late, "start_time"] = rx.loc[late, "start_time"] + shift
    rx.loc[late, "end_time"] = rx.loc[late, "end_time"] + shift
    rx.loc[late, "route"] = rng.choice(["intravenous", "oral"], size=int(late.sum()))
    extra = []
    for aid, row in adm.iterrows():
        if row.discharge_time - pd.Timedelta(hours=2) > max(cut, row.admit_time):
            s = max(cut, row.admit_time) + pd.Timedelta(minutes=int(rng.integers(0, 60)))
            extra.append((aid, "J01DH51", "intravenous", s, s + pd.Timedelta(hours=30)))
    if extra:
        rx = pd.concat([rx, pd.DataFrame(extra, columns=rx.columns)], ignore_index=True)
    return Cohort(patients=sub.patients, admissions=sub.admissions, prescriptions=rx, **tables)


def leak_check(cohort: Cohort, samples: list[tuple[str, datetime]], config: FeaturizerConfig | None = None,
               seed: int = 0, categories=None, atc_vocab=None) -> list[str]:
    """Perturb post-anchor data for each (admission_id, day_start) and compare features.

    Returns a list of violations (empty when leak-safe); each names the
    admission, day and the columns that changed.
    """
    config = config or FeaturizerConfig()
    categories = categories or cohort_categories(cohort)
    atc_vocab = atc_vocab or default_atc_vocab()
    pid_of = dict(zip(cohort.admissions["admission_id"], cohort.admissions["patient_id"]))
    rng = np.random.default_rng(seed)
    problems = []
    for aid, day_start in samples:
        pid = pid_of[aid]
        kw = dict(config=config, categories=categories, atc_vocab=atc_vocab, admissions=[aid])
        base = featurize_cohort(cohort.subset([pid]), **kw)
        mutated = featurize_cohort(mutate_after(cohort, pid, day_start, rng), **kw)
        i = _row_of(base, aid, day_start)
        j = _row_of(mutated, aid, day_start)
        if i is None:
            raise LeakError(f"{aid} has no patient-day anchored at {day_start}")
        if j is None:
            problems.append(f"{aid} {day_start}: day vanished after mutation")
            continue
        diff = np.flatnonzero(base.X[i] != mutated.X[j])
        if diff.size:
            problems.append(f"{aid} {day_start}: " + ",".join(base.schema.names[k] for k in diff))
        if base.grids is not None and not (np.array_equal(base.grids[i], mutated.grids[j])
                                           and np.array_equal(base.indicators[i], mutated.indicators[j])):
            problems.append(f"{aid} {day_start}: hourly grid")
    return problems


def _row_of(table: PatientDayTable, aid: str, day_start) -> Optional[int]:
    hit = np.flatnonzero((table.meta["admission_id"].to_numpy() == aid)
                         & (table.meta["day_start"].to_numpy() == np.datetime64(day_start, "ns")))
    return int(hit[0]) if hit.size else None
