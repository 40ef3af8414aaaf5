"""Patient-wise splits, train-only scaling, and padded sequence batches."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .features import PatientDayTable

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = {"train": 0.72, "val": 0.08, "test": 0.20}
MAX_SEQ_LEN = 512


class PrepError(ValueError):
    pass


@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    seed: int
    fractions: dict[str, float]

    def patients(self, split: str) -> list[str]:
        return sorted(p for p, s in self.assignment.items() if s == split)

    def rows(self, table: PatientDayTable, split: str) -> np.ndarray:
        pids = table.meta["patient_id"].to_numpy()
        want = np.array([self.assignment.get(p) == split for p in pids], dtype=bool)
        return np.flatnonzero(want)

    def write(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="\n") as fh:
            fh.write("patient_id,split\n")
            for p in sorted(self.assignment):
                fh.write(f"{p},{self.assignment[p]}\n")
        return path

    @classmethod
    def read(cls, path, seed: int = 0, fractions=None) -> "SplitAssignment":
        lines = Path(path).read_text().strip().splitlines()[1:]
        assignment = dict(line.split(",") for line in lines)
        return cls(assignment, seed, dict(fractions or DEFAULT_FRACTIONS))


def validate_fractions(fractions: dict[str, float]) -> None:
    if set(fractions) != set(SPLITS):
        raise PrepError(f"fractions must name exactly {SPLITS}")
    if any(not (0.0 <= f <= 1.0) for f in fractions.values()):
        raise PrepError("fractions must lie in [0, 1]")
    if abs(sum(fractions.values()) - 1.0) > 1e-9:
        raise PrepError(f"fractions must sum to 1, got {sum(fractions.values())}")


def split_patients(patient_ids, fractions: dict[str, float] | None = None, seed: int = 0) -> SplitAssignment:
    """Shuffle the sorted patient ids with ``seed`` and cut at the fraction boundaries."""
    fractions = dict(fractions or DEFAULT_FRACTIONS)
    validate_fractions(fractions)
    ids = sorted(set(map(str, patient_ids)))
    order = np.random.default_rng(seed).permutation(len(ids))
    n = len(ids)
    n_train = int(round(fractions["train"] * n))
    n_val = int(round(fractions["val"] * n))
    n_val = min(n_val, n - n_train)
    out = {}
    for rank, i in enumerate(order):
        out[ids[i]] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return SplitAssignment(out, seed, fractions)


# ---------------------------------------------------------------------------


@dataclass
class Scaler:
    names: list[str]
    mean: np.ndarray
    std: np.ndarray
    low: np.ndarray
    high: np.ndarray
    fitted_on: str = "train"

    def transform(self, X: np.ndarray, present: np.ndarray | None = None) -> np.ndarray:
        """Clip, standardize; entries flagged absent map to 0 (the training mean)."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.names):
            raise PrepError(f"expected {len(self.names)} features, got {X.shape[-1]}")
        Z = (np.clip(X, self.low, self.high) - self.mean) / self.std
        if present is not None:
            Z = np.where(present, Z, 0.0)
        return Z

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.mean, self.std, self.low, self.high):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"fitted_on": self.fitted_on, "features": {
            n: {"mean": float(m), "std": float(s), "low": float(lo), "high": float(hi)}
            for n, m, s, lo, hi in zip(self.names, self.mean, self.std, self.low, self.high)}}

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "Scaler":
        d = json.loads(Path(path).read_text())
        feats = d["features"]
        names = list(feats)
        col = lambda k: np.array([feats[n][k] for n in names])  # noqa: E731
        return cls(names, col("mean"), col("std"), col("low"), col("high"), d.get("fitted_on", "train"))


def fit_scaler(X_train: np.ndarray, names: list[str], binary: np.ndarray | None = None,
               percentiles=(1.0, 99.0), fitted_on: str = "train",
               present: np.ndarray | None = None) -> Scaler:
    """Winsorize continuous columns at training percentiles, then standardize everything.

    With ``present`` given, statistics use only the defined entries of each column.
    """
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PrepError("need at least two training rows to fit a scaler")
    if np.isinf(X).any():
        raise PrepError("infinite values in training features")
    binary = np.zeros(X.shape[1], dtype=bool) if binary is None else np.asarray(binary, dtype=bool)
    lo_p, hi_p = percentiles
    if not 0 <= lo_p < hi_p <= 100:
        raise PrepError(f"bad winsor percentiles {percentiles}")
    F = X.shape[1]
    low, high = np.full(F, -np.inf), np.full(F, np.inf)
    mean, std = np.zeros(F), np.ones(F)
    for j in range(F):
        col = X[:, j] if present is None else X[present[:, j], j]
        col = col[~np.isnan(col)]  # NaNs pass through untouched; models reject them
        if col.size == 0:
            continue
        if not binary[j]:
            low[j], high[j] = np.percentile(col, [lo_p, hi_p])
            col = np.clip(col, low[j], high[j])
        mean[j] = col.mean()
        sd = col.std()
        std[j] = sd if sd > 0 else 1.0
    return Scaler(list(names), mean, std, low, high, fitted_on)


@dataclass
class GridScaler:
    """Per-series standardization of observed grid cells; unobserved cells stay 0."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, grids: np.ndarray, indicators: np.ndarray) -> np.ndarray:
        return (grids - self.mean) / self.std * indicators


def fit_grid_scaler(grids: np.ndarray, indicators: np.ndarray) -> GridScaler:
    S = grids.shape[-1]
    g = grids.reshape(-1, S)
    m = indicators.reshape(-1, S) > 0
    cnt = m.sum(0)
    mean = np.where(cnt > 0, (g * m).sum(0) / np.maximum(cnt, 1), 0.0)
    var = np.where(cnt > 0, (((g - mean) * m) ** 2).sum(0) / np.maximum(cnt, 1), 1.0)
    std = np.sqrt(var)
    std[std == 0] = 1.0
    return GridScaler(mean, std)


# ---------------------------------------------------------------------------


@dataclass
class Sequence:
    admission_id: str
    rows: np.ndarray  # row indices into the patient-day table, time ordered
    X: np.ndarray  # (T, F)
    labels: np.ndarray  # (T, K)
    grid: Optional[np.ndarray] = None  # (T, B, 2S): values then indicators

    def __len__(self):
        return len(self.rows)


@dataclass
class SequenceBatch:
    X: np.ndarray  # (N, T, F)
    mask: np.ndarray  # (N, T)
    labels: np.ndarray  # (N, T, K)
    rows: np.ndarray  # (N, T), -1 where padded
    grid: Optional[np.ndarray] = None  # (N, T, B, 2S)
    admission_ids: list = field(default_factory=list)

    @property
    def shape(self):
        return self.mask.shape


def make_sequences(table: PatientDayTable, rows: np.ndarray, X: np.ndarray,
                   grid: np.ndarray | None = None, max_len: int = MAX_SEQ_LEN) -> list[Sequence]:
    """Group ``rows`` by admission, order by day start, truncate to ``max_len``.

    ``X`` and ``grid`` are full-table arrays (already scaled); sequences hold
    copies of the selected rows.
    """
    rows = np.asarray(rows, dtype=np.int64)
    meta = table.meta
    adm = meta["admission_id"].to_numpy()[rows]
    starts = meta["day_start"].to_numpy()[rows]
    order = np.lexsort((starts, adm))
    rows, adm = rows[order], adm[order]
    seqs = []
    if rows.size == 0:
        return seqs
    cuts = np.flatnonzero(adm[1:] != adm[:-1]) + 1
    for chunk in np.split(rows, cuts):
        chunk = chunk[:max_len]
        seqs.append(Sequence(
            str(meta["admission_id"].iat[chunk[0]]),
            chunk, X[chunk], table.labels[chunk].astype(np.float64),
            None if grid is None else grid[chunk],
        ))
    return seqs


def pad_batch(seqs: list[Sequence], length: int | None = None) -> SequenceBatch:
    if not seqs:
        raise PrepError("empty batch")
    T = max(len(s) for s in seqs) if length is None else length
    N, F, K = len(seqs), seqs[0].X.shape[1], seqs[0].labels.shape[1]
    X = np.zeros((N, T, F))
    mask = np.zeros((N, T))
    labels = np.zeros((N, T, K))
    rows = np.full((N, T), -1, dtype=np.int64)
    grid = None
    if seqs[0].grid is not None:
        grid = np.zeros((N, T) + seqs[0].grid.shape[1:])
    for i, s in enumerate(seqs):
        n = min(len(s), T)
        X[i, :n] = s.X[:n]
        mask[i, :n] = 1.0
        labels[i, :n] = s.labels[:n]
        rows[i, :n] = s.rows[:n]
        if grid is not None:
            grid[i, :n] = s.grid[:n]
    return SequenceBatch(X, mask, labels, rows, grid, [s.admission_id for s in seqs])


def batches(seqs: list[Sequence], batch_size: int, rng: np.random.Generator | None = None):
    """Yield padded batches; shuffled when ``rng`` is given."""
    idx = np.arange(len(seqs)) if rng is None else rng.permutation(len(seqs))
    for k in range(0, len(idx), batch_size):
        yield pad_batch([seqs[i] for i in idx[k:k + batch_size]])


@dataclass
class PreparedData:
    """Scaled arrays for one patient-day table under one split."""

    table: PatientDayTable
    split: SplitAssignment
    scaler: Scaler
    X: np.ndarray
    grid: Optional[np.ndarray] = None
    grid_scaler: Optional[GridScaler] = None

    def rows(self, split: str) -> np.ndarray:
        return self.split.rows(self.table, split)

    def sequences(self, split: str, max_len: int = MAX_SEQ_LEN) -> list[Sequence]:
        return make_sequences(self.table, self.rows(split), self.X, self.grid, max_len)


def prepare(table: PatientDayTable, split: SplitAssignment, percentiles=(1.0, 99.0),
            columns: list[int] | None = None) -> PreparedData:
    """Fit scalers on the train rows and transform the whole table.

    ``columns`` restricts the tabular branch to a subset of schema columns.
    """
    cols = np.arange(len(table.schema)) if columns is None else np.asarray(columns)
    names = [table.schema.names[i] for i in cols]
    binary = table.schema.binary_mask()[cols]
    train = split.rows(table, "train")
    if train.size < 2:
        raise PrepError("training split has fewer than two patient-days")
    raw = table.X[:, cols]
    present = table.schema.presence_mask(table.X)[:, cols]
    scaler = fit_scaler(raw[train], names, binary, percentiles, present=present[train])
    X = scaler.transform(raw, present)
    grid = gs = None
    if table.grids is not None:
        gs = fit_grid_scaler(table.grids[train], table.indicators[train])
        grid = np.concatenate([gs.transform(table.grids, table.indicators), table.indicators], axis=-1)
    return PreparedData(table, split, scaler, X, grid, gs)


def inject_label_noise(labels: np.ndarray, rate: float, seed: int = 0) -> np.ndarray:
    """Flip each positive with probability ``rate`` and the same expected number of negatives.

    Column-wise over a (n, K) 0/1 matrix; prevalence is preserved in expectation.
    """
    if not 0.0 <= rate < 0.5:
        raise PrepError(f"label noise rate must be in [0, 0.5), got {rate}")
    y = np.array(labels, copy=True)
    if rate == 0.0:
        return y
    rng = np.random.default_rng(seed)
    for k in range(y.shape[1]):
        col = y[:, k]
        pos = col == 1
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        flip_pos = pos & (rng.random(col.size) < rate)
        neg_rate = rate * n_pos / n_neg if n_neg else 0.0
        flip_neg = ~pos & (rng.random(col.size) < neg_rate)
        col[flip_pos] = 0
        col[flip_neg] = 1
    return y
