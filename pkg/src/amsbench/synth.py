"""Deterministic synthetic PICU cohorts with controllable target prevalences.

Generation is course-first. For every admission we draw a length of stay and a
"backbone" antibiotic course, then decide which targets to plant so that the
running number of positive patient-days tracks ``prevalence * patient_days``
(stochastic rounding on the deficit). The target engine is run on each finished
admission, so the bookkeeping uses the labels the engine actually derives.
Vitals and labs are filled in afterwards; windows preceding a positive day get
a systematic shift, which is the learnable signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from datetime import datetime, timedelta

import numpy as np
import pandas as pd

from .cohort import SCHEMA, Cohort, PrescriptionRecord, AdmissionRecord, variables_by_code
from .courses import (
    CEFAZOLIN, DEESCALATION, DISCONTINUATION, IV_TO_ORAL, SHORT_COURSE, TARGETS,
    day_labels, derive_admission, patient_dates,
)

# Test-set prevalences of the public cohort
PIC_PREVALENCES = {IV_TO_ORAL: 0.0035, DEESCALATION: 0.0392, DISCONTINUATION: 0.0169, SHORT_COURSE: 0.0577}

# ASI-5 agents; equal scores keep concurrent courses from triggering de-escalation
NARROW_POOL = ("J01DD04", "J01DD01", "J01GB06", "J01GB03", "J01XA01", "J01GB01",
               "J01DF01", "J01CA12", "J01BA01", "J01CA13")
BROAD_POOL = ("J01DH02", "J01DH51", "J01CR05", "J01DE01", "J01DD62")  # ASI >= 6
ORAL_CAPABLE = ("J01XX08", "J01AA02")  # ASI 5 with oral formulations

# mean, between-day sd for each variable (paediatric-ish ranges)
BASELINES = {
    "TEMP": (37.0, 0.5), "HR": (130.0, 15.0), "RR": (30.0, 6.0), "SPO2": (96.0, 2.0),
    "DBP": (55.0, 8.0), "SBP": (95.0, 10.0), "HEIGHT": (80.0, 1.0), "WEIGHT": (11.0, 0.5),
    "WBC": (10.0, 4.0), "CRP": (30.0, 25.0), "PCT": (1.0, 1.2), "HGB": (11.0, 1.5),
    "SODIUM": (138.0, 3.0), "ALB": (38.0, 4.0), "ALT": (30.0, 15.0), "LDH": (300.0, 80.0),
    "RBC": (4.2, 0.5), "LACT": (1.5, 0.8), "PCO2": (40.0, 6.0), "PH": (7.38, 0.05),
    "PO2": (90.0, 20.0), "SAO2": (96.0, 2.0),
}
NONNEGATIVE = {"WBC", "CRP", "PCT", "LACT", "ALT", "LDH"}

# shift (in between-day sd units) applied to the window preceding a positive day
SIGNATURES = {
    SHORT_COURSE: {"TEMP": -1.2, "HR": -1.0},
    DISCONTINUATION: {"RR": -1.0, "SPO2": 1.0},
    IV_TO_ORAL: {"SBP": 1.0, "DBP": 1.0},
    DEESCALATION: {"HR": -0.4, "TEMP": -0.4},
}
# de-escalation also leaves a marker one window earlier, invisible to a
# single-day snapshot but visible to a model with memory
MEMORY_MARKER = ("SODIUM", 3.0)


class SynthConfigError(ValueError):
    def __init__(self, fieldname: str, message: str):
        self.field = fieldname
        super().__init__(f"{fieldname}: {message}")


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 1000
    seed: int = 0
    target_prevalences: dict = field(default_factory=lambda: dict(PIC_PREVALENCES))
    los_median_days: float = 10.16
    los_q1_days: float = 4.59
    los_q3_days: float = 19.52
    los_min_days: float = 2.5
    los_max_days: float = 60.0
    vital_rate_per_hour: float = 0.5
    lab_rate_per_hour: float = 0.08
    vitals: tuple = ("TEMP", "HR", "RR", "SPO2", "DBP", "SBP")
    labs: tuple = ("WBC", "CRP", "PCT", "HGB", "SODIUM")
    readmission_fraction: float = 0.03
    signal_strength: float = 1.0
    anchor_hour: int = 8
    start_date: str = "2016-01-01"
    span_days: int = 730

    def __post_init__(self):
        validate_synth_config(self)


def validate_synth_config(cfg: SynthConfig) -> None:
    if cfg.n_patients < 0:
        raise SynthConfigError("n_patients", "must be non-negative")
    if not 0 <= cfg.seed < 2**64:
        raise SynthConfigError("seed", "must be a 64-bit unsigned integer")
    for t, p in cfg.target_prevalences.items():
        if t not in TARGETS:
            raise SynthConfigError(f"target_prevalences.{t}", "unknown target")
        if not 0.0 <= float(p) <= 1.0:
            raise SynthConfigError(f"target_prevalences.{t}", f"prevalence {p} outside [0, 1]")
    if not 0 < cfg.los_q1_days <= cfg.los_median_days <= cfg.los_q3_days:
        raise SynthConfigError("los_median_days", "need 0 < q1 <= median <= q3")
    if not 0 < cfg.los_min_days < cfg.los_max_days:
        raise SynthConfigError("los_min_days", "need 0 < min < max")
    if cfg.los_min_days < 2.5:
        raise SynthConfigError("los_min_days", "must be at least 2.5 days")
    for name in ("vital_rate_per_hour", "lab_rate_per_hour", "readmission_fraction", "signal_strength"):
        if getattr(cfg, name) < 0:
            raise SynthConfigError(name, "must be non-negative")
    if cfg.readmission_fraction > 1:
        raise SynthConfigError("readmission_fraction", "must be <= 1")
    if not 0 <= cfg.anchor_hour < 24:
        raise SynthConfigError("anchor_hour", "must be in [0, 24)")
    codes = variables_by_code()
    for name in ("vitals", "labs"):
        for code in getattr(cfg, name):
            if code not in codes:
                raise SynthConfigError(name, f"unknown variable {code}")


def synth_config_fields() -> list[str]:
    return [f.name for f in fields(SynthConfig)]


# ---------------------------------------------------------------------------


class _Plan:
    """Prescription rows for one admission, in hours relative to admission."""

    def __init__(self):
        self.rows: list[tuple[str, str, float, float]] = []  # atc, route, start_h, end_h

    def add(self, atc, route, s, e):
        self.rows.append((atc, route, s, e))


def _round_min(h: float) -> float:
    return round(h * 60.0) / 60.0


def _chunks(rng, s, e, max_chunks=None):
    """Split [s, e] into consecutive prescriptions separated by short gaps (< 24h)."""
    out = []
    t = s
    while True:
        length = rng.uniform(20.0, 60.0)
        if t + length >= e - 6.0 or (max_chunks is not None and len(out) == max_chunks - 1):
            out.append((t, e))
            return out
        end_c = _round_min(t + length)
        gap = 0.0 if rng.random() < 0.7 else rng.uniform(0.5, 8.0)
        nxt = _round_min(end_c + gap)
        if nxt >= e - 6.0:
            out.append((t, e))
            return out
        out.append((t, end_c))
        t = nxt


class SyntheticGenerator:
    def __init__(self, config: SynthConfig):
        self.cfg = config
        self.rng = np.random.default_rng(config.seed)
        self.prev = {t: float(config.target_prevalences.get(t, 0.0)) for t in TARGETS}
        self.days = 0
        self.pos = {t: 0 for t in TARGETS}
        q1, q3 = np.log(config.los_q1_days), np.log(config.los_q3_days)
        self.los_mu = np.log(config.los_median_days)
        self.los_sigma = max((q3 - q1) / 1.349, 1e-6)

    # -- controller ------------------------------------------------------
    def _deficit(self, target: str, extra_days: float) -> float:
        return self.prev[target] * (self.days + extra_days) - self.pos[target]

    def _want(self, target: str, extra_days: float) -> bool:
        if self.prev[target] <= 0:
            return False
        return self._deficit(target, extra_days) > self.rng.random()

    # -- admission ---------------------------------------------------------
    def _plan_admission(self, los_h: float, admit: datetime) -> _Plan:
        rng = self.rng
        plan = _Plan()
        s0 = _round_min(rng.uniform(1.0, 10.0))
        d_guess = los_h / 24.0

        disc = self._want(DISCONTINUATION, d_guess)
        if disc and los_h - s0 - 74.0 >= 30.0:
            hi = min(74.0 + 96.0, los_h - s0 - 30.0)
            # prefer a backbone that is not itself a short course
            lo_clean = los_h - s0 - 100.0
            e_off = rng.uniform(74.0, min(hi, lo_clean)) if lo_clean >= 74.0 else rng.uniform(74.0, hi)
        else:
            disc = False
            e_off = rng.uniform(6.0, min(60.0, los_h - s0 - 30.0))
        be = _round_min(los_h - e_off)
        bd = be - s0

        def n_dates(a, b):
            return ((admit + timedelta(hours=b) - timedelta(microseconds=1)).date()
                    - (admit + timedelta(hours=a)).date()).days + 1

        d_est = n_dates(s0, be)
        short_budget = 0
        deficit_short = self._deficit(SHORT_COURSE, d_est) if self.prev[SHORT_COURSE] > 0 else 0.0
        want_short = int(np.floor(deficit_short + rng.random())) if deficit_short > 0 else 0
        want_iv = self._want(IV_TO_ORAL, d_est)
        want_de = self._want(DEESCALATION, d_est) and bd >= 60.0

        oral_atc = str(rng.choice(ORAL_CAPABLE))
        narrow = list(NARROW_POOL)
        rng.shuffle(narrow)

        if want_de:
            broad = str(rng.choice(BROAD_POOL))
            sw_lo = s0 + 26.0
            sw_hi = be - 26.0
            clean_lo, clean_hi = s0 + 100.0, be - 100.0
            if clean_lo <= clean_hi:
                sw = rng.uniform(clean_lo, clean_hi)
            else:
                sw = rng.uniform(sw_lo, sw_hi)
            sw = _round_min(sw)
            ov = _round_min(rng.uniform(1.0, 12.0))
            for a, b in _chunks(rng, s0, sw + ov):
                plan.add(broad, "intravenous", a, b)
            era_start = sw + ov + 1.0
            if sw + ov - s0 < 96.0:
                short_budget += 1
            n_atc = oral_atc if want_iv else narrow.pop()
            self._backbone(plan, n_atc, sw, be, want_iv)
            if be - sw < 96.0:
                short_budget += 1
            want_iv = False
        else:
            era_start = s0 + 2.0
            if want_iv and bd >= 50.0:
                self._backbone(plan, oral_atc, s0, be, True)
                if bd < 96.0:
                    short_budget += 1
            elif bd < 100.0:
                if want_short > 0:
                    plan.add(narrow.pop(), "intravenous", s0, be)
                    short_budget += 1
                else:
                    plan.add(CEFAZOLIN, "intravenous", s0, be)
            else:
                self._backbone(plan, narrow.pop(), s0, be, False)

        # additional short courses inside the backbone's narrow era
        for _ in range(max(0, want_short - short_budget)):
            room = be - 1.0 - era_start
            if room < 27.0 or not narrow:
                break
            dur = _round_min(rng.uniform(26.0, min(92.0, room)))
            start = _round_min(rng.uniform(era_start, be - 1.0 - dur))
            atc = narrow.pop()
            for a, b in _chunks(rng, start, start + dur, max_chunks=2):
                plan.add(atc, "intravenous", a, b)
        return plan

    def _backbone(self, plan, atc, s, e, switch):
        chunks = _chunks(self.rng, s, e)
        if switch and len(chunks) == 1 and e - s >= 30.0:
            mid = _round_min(s + self.rng.uniform(24.0, max(24.5, e - s - 4.0)))
            chunks = [(s, mid), (mid, e)]
        k = None
        if switch and len(chunks) > 1:
            k = int(self.rng.integers(1, len(chunks)))
        for i, (a, b) in enumerate(chunks):
            route = "oral" if k is not None and i >= k else "intravenous"
            plan.add(atc, route, a, b)

    # -- measurements ---------------------------------------------------------
    def _measurements(self, adm_id, admit, los_h, signal_dates):
        """Per-table frames of vitals/labs for one admission."""
        cfg, rng = self.cfg, self.rng
        codes = variables_by_code()
        n_days = int(np.ceil(los_h / 24.0)) + 2
        admit64 = np.datetime64(admit, "m")
        # window of a timestamp t is the calendar day D with D+a-24h <= t < D+a
        shift_origin = admit64 + np.timedelta64(24 * 60 - 60 * cfg.anchor_hour, "m")
        marker_code, marker_shift = MEMORY_MARKER
        marker_days = [np.datetime64(d, "D") - np.timedelta64(1, "D")
                       for d, ts in signal_dates.items() if DEESCALATION in ts]
        frames = {"chartevents": [], "labevents": []}
        for names, rate in ((cfg.vitals, cfg.vital_rate_per_hour), (cfg.labs, cfg.lab_rate_per_hour)):
            for code in names:
                mean, sd = BASELINES[code]
                offset = rng.normal(0.0, 0.5 * sd)
                walk = np.cumsum(rng.normal(0.0, 0.3 * sd, size=n_days))
                n = rng.poisson(rate * los_h)
                minutes = rng.integers(0, int(los_h * 60) + 1, size=n)
                if code == marker_code and marker_days:
                    # guarantee an observation inside each marker window
                    anchors = np.array(marker_days) + np.timedelta64(60 * cfg.anchor_hour, "m")
                    extra = ((anchors - admit64) / np.timedelta64(1, "m")).astype(np.int64)
                    extra = extra - rng.integers(60, 600, size=extra.size)
                    extra = extra[(extra >= 0) & (extra <= los_h * 60)]
                    minutes = np.concatenate([minutes, extra])
                minutes = np.sort(minutes)
                if minutes.size == 0:
                    continue
                day_idx = (minutes // (24 * 60)).astype(int)
                vals = mean + offset + walk[day_idx] + rng.normal(0.0, 0.5 * sd, size=minutes.size)
                wdays = (shift_origin + minutes.astype("timedelta64[m]")).astype("datetime64[D]")
                uniq, inv = np.unique(wdays, return_inverse=True)
                shifts = np.zeros(uniq.size)
                for k, d in enumerate(uniq.astype(object)):
                    for tgt in signal_dates.get(d, ()):
                        shifts[k] += SIGNATURES[tgt].get(code, 0.0)
                    if code == marker_code and DEESCALATION in signal_dates.get(d + timedelta(days=1), ()):
                        shifts[k] += marker_shift
                vals = vals + cfg.signal_strength * sd * shifts[inv]
                if code in NONNEGATIVE:
                    vals = np.abs(vals)
                vals = np.round(vals, 2 if sd < 5 else 1)
                var = codes[code]
                frames[var.table].append(pd.DataFrame({
                    "admission_id": adm_id,
                    "item_id": var.item_id,
                    "timestamp": (admit64 + minutes.astype("timedelta64[m]")).astype("datetime64[ns]"),
                    "value": vals,
                }))
        return frames

    # -- driver -------------------------------------------------------------
    def generate(self) -> Cohort:
        cfg, rng = self.cfg, self.rng
        t0 = datetime.fromisoformat(cfg.start_date)
        patients, admissions, rx_rows = [], [], []
        charts, labs = [], []
        adm_counter = 0
        for i in range(cfg.n_patients):
            pid = f"P{i:06d}"
            age = float(round(min(18.0, np.exp(rng.normal(np.log(0.83), 1.2))), 2))
            gender = str(rng.choice(["F", "M"]))
            patients.append((pid, age, gender))
            n_adm = 1 + int(rng.random() < cfg.readmission_fraction)
            admit = t0 + timedelta(minutes=int(rng.integers(0, cfg.span_days * 24 * 60)))
            for _ in range(n_adm):
                adm_id = f"A{adm_counter:07d}"
                adm_counter += 1
                los_days = float(np.clip(np.exp(rng.normal(self.los_mu, self.los_sigma)),
                                         cfg.los_min_days, cfg.los_max_days))
                los_h = _round_min(los_days * 24.0)
                discharge = admit + timedelta(hours=los_h)
                record = AdmissionRecord(
                    adm_id, pid, admit, discharge,
                    str(rng.choice(["emergency", "elective", "urgent"], p=[0.7, 0.2, 0.1])),
                    str(rng.choice(["han", "other", "unknown"], p=[0.8, 0.1, 0.1])),
                    str(rng.choice(["public", "private", "self-pay"], p=[0.6, 0.3, 0.1])),
                )
                admissions.append(record)
                plan = self._plan_admission(los_h, admit)
                prescriptions = [
                    PrescriptionRecord(adm_id, atc, route, admit + timedelta(hours=s), admit + timedelta(hours=e))
                    for atc, route, s, e in plan.rows
                ]
                rx_rows.extend(prescriptions)
                courses, events = derive_admission(record, prescriptions)
                self.days += len(patient_dates(courses))
                labelled = day_labels(events)
                for targets in labelled.values():
                    for t in targets:
                        self.pos[t] += 1
                ev = self._measurements(adm_id, admit, los_h, labelled)
                charts.extend(ev["chartevents"])
                labs.extend(ev["labevents"])
                admit = discharge + timedelta(minutes=int(rng.integers(20 * 1440, 300 * 1440)))

        def frame(table, rows):
            return pd.DataFrame(rows, columns=list(SCHEMA[table]))

        def stack(table, parts):
            return pd.concat(parts, ignore_index=True) if parts else frame(table, [])

        return Cohort(
            patients=frame("patients", patients),
            admissions=pd.DataFrame([a.__dict__ for a in admissions], columns=list(SCHEMA["admissions"])),
            chartevents=stack("chartevents", charts),
            labevents=stack("labevents", labs),
            prescriptions=pd.DataFrame([p.__dict__ for p in rx_rows], columns=list(SCHEMA["prescriptions"])),
        )


def generate_synthetic(config: SynthConfig) -> Cohort:
    """Generate a cohort; a pure function of ``config``."""
    validate_synth_config(config)
    return SyntheticGenerator(config).generate()
