"""Independent brute-force re-derivations used as test oracles.

Nothing here imports the merge or label code under test: courses are
rebuilt from a per-minute coverage timeline, labels by scanning it.
"""

from collections import defaultdict
from datetime import timedelta
from itertools import product

import numpy as np

MINUTE = timedelta(minutes=1)


def _minutes(t, origin):
    d = (t - origin) / MINUTE
    assert d == int(d), "oracle needs minute-aligned timestamps"
    return int(d)


def timeline_courses(prescriptions, gap_min=24 * 60, min_len=24 * 60):
    """{(admission, atc): [(start_min, end_min, origin)]} via coverage + gap filling."""
    groups = defaultdict(list)
    for p in prescriptions:
        groups[(p.admission_id, p.atc_code)].append(p)
    out = {}
    for key, rx in groups.items():
        origin = min(p.start_time for p in rx)
        horizon = max(_minutes(p.end_time, origin) for p in rx)
        cover = np.zeros(horizon + 1, dtype=bool)
        for p in rx:
            cover[_minutes(p.start_time, origin):_minutes(p.end_time, origin)] = True
        # fill interior holes no longer than the gap
        runs = _runs(cover)
        for (s0, e0), (s1, _) in zip(runs[:-1], runs[1:]):
            if s1 - e0 <= gap_min:
                cover[e0:s1] = True
        out[key] = [(s, e, origin) for s, e in _runs(cover) if e - s >= min_len]
    return out


def _runs(mask):
    """Half-open [s, e) runs of True."""
    m = np.r_[False, mask, False].astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def courses_as_times(prescriptions):
    out = []
    for (adm, atc), spans in timeline_courses(prescriptions).items():
        for s, e, origin in spans:
            out.append((adm, atc, origin + s * MINUTE, origin + e * MINUTE))
    return sorted(out, key=lambda c: (c[0], c[2], c[1], c[3]))


def brute_events(admission, prescriptions, asi_score):
    """{(target, event_time)} for one admission, from raw prescriptions."""
    courses = courses_as_times(prescriptions)
    events = set()
    for adm, atc, s, e in courses:
        if e - s < timedelta(hours=96) and atc != "J01DB04":
            events.add(("short_course", e))
        if admission.discharge_time - e >= timedelta(hours=72):
            blocked = any(not (o[2] == s and o[1] == atc) and o[2] <= e + timedelta(hours=72) and o[3] > e
                          for o in courses)
            if not blocked:
                events.add(("discontinuation", e))
    # switch: first non-IV start strictly after an IV start inside one course
    switches = []
    for adm, atc, s, e in courses:
        inside = [p for p in prescriptions if p.atc_code == atc and s <= p.start_time < e]
        iv_starts = [p.start_time for p in inside if p.route == "intravenous"]
        later = [p.start_time for p in inside if p.route != "intravenous" and iv_starts
                 and p.start_time > min(iv_starts)]
        if later:
            switches.append(min(later))
    if switches:
        events.add(("iv_to_oral", min(switches)))
    # de-escalation: scan prescriptions in time order against active other-agent courses
    cands = sorted((p for p in prescriptions
                    if any(c[1] == p.atc_code and c[2] <= p.start_time < c[3] for c in courses)),
                   key=lambda p: (p.start_time, p.atc_code))
    for p in cands:
        new = asi_score(p.atc_code)
        if new is None:
            continue
        active = [asi_score(c[1]) for c in courses if c[1] != p.atc_code and c[2] < p.start_time <= c[3]]
        active = [a for a in active if a is not None]
        if active and new < max(active):
            events.add(("deescalation", p.start_time))
            break
    return events


def pair_auroc(scores, labels):
    s, y = np.asarray(scores, float), np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    if pos.size == 0 or neg.size == 0:
        return None
    wins = 0.0
    for a, b in product(pos, neg):
        wins += 1.0 if a > b else (0.5 if a == b else 0.0)
    return wins / (pos.size * neg.size)


def sweep_auprc(scores, labels):
    """Average precision by explicit threshold sweep over distinct scores."""
    s, y = np.asarray(scores, float), np.asarray(labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    ap, prev_recall = 0.0, 0.0
    for thr in sorted(set(s.tolist()), reverse=True):
        pred = s >= thr
        tp = int((pred & (y == 1)).sum())
        precision = tp / int(pred.sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap
