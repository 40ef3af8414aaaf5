"""End-to-end stages behind the command line: synth, prepare, train, report.

Directory layout produced under an output root by ``run_all``::

    cohort/     five table CSVs, rejects.csv, manifest.txt
    prepared/   patient_days.csv, grids.bin, schema.csv, split.csv, scaler.json,
                prevalence.csv, config.cfg, manifest.txt
    registry/   one directory per training run
    report/     results.csv, calibration_*.csv, calibration_*.svg, stl_mtl_delta.csv
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .cohort import Cohort, parse_cohort, write_cohort
from .config import Config
from .courses import TARGETS
from .evalkit import (
    calibration_svg, evaluate, result_row, stl_mtl_deltas, write_calibration, write_deltas, write_results,
)
from .features import (
    FeatureColumn, FeatureSchema, FeaturizerConfig, LeakError, PatientDayTable, featurize_cohort, leak_check,
    read_grids, write_grids,
)
from .models import (
    EncoderSpec, LogisticRegression, MLPClassifier, SequenceNet, TrainConfig, embed_rows, fit_sequence,
    predict_sequences, task_labels,
)
from .nn import load_checkpoint, restore, save_checkpoint
from .prep import SplitAssignment, inject_label_noise, prepare, split_patients
from .synth import SynthConfig, generate_synthetic

logger = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, names) -> str:
    """sha256 of each file, one per line; returns the hash of the manifest itself."""
    directory = Path(directory)
    lines = [f"{_sha(directory / n)}  {n}" for n in sorted(names)]
    text = "\n".join(lines) + "\n"
    (directory / "manifest.txt").write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def require(path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# synth


def synth_config(cfg: Config) -> SynthConfig:
    s, f = cfg["synth"], cfg["features"]
    return SynthConfig(
        n_patients=s["n_patients"], seed=cfg.get("run", "seed"),
        target_prevalences={t: s[f"prevalence_{t}"] for t in TARGETS},
        vital_rate_per_hour=s["vital_rate_per_hour"], lab_rate_per_hour=s["lab_rate_per_hour"],
        readmission_fraction=s["readmission_fraction"], signal_strength=s["signal_strength"],
        vitals=tuple(f["vitals"]), labs=tuple(f["labs"]), anchor_hour=f["anchor_hour"],
    )


def run_synth(cfg: Config, out) -> str:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cohort = generate_synthetic(synth_config(cfg))
    paths = write_cohort(cohort, out)
    return write_manifest(out, [p.name for p in paths])


# ---------------------------------------------------------------------------
# prepare


def featurizer_config(cfg: Config, with_grid: bool | None = None) -> FeaturizerConfig:
    f = cfg["features"]
    if with_grid is None:
        with_grid = "1h-fused" in f["resolutions"]
    return FeaturizerConfig(
        anchor_hour=f["anchor_hour"], window_hours=f["window_hours"], bins=f["bins"],
        vitals=tuple(f["vitals"]), labs=tuple(f["labs"]),
        recent_codes=tuple(c for c in ("WBC", "CRP", "PCT") if c in f["labs"]),
        trend_codes=tuple(c for c in ("TEMP", "RR", "HR", "SBP", "DBP", "SPO2") if c in f["vitals"]),
        high_priority_asi=f["high_priority_asi"], with_grid=with_grid,
    )


def self_leak_check(cohort: Cohort, table: PatientDayTable, fcfg: FeaturizerConfig, seed: int,
                    max_days: int = 8) -> None:
    """Mutation leak test on one sampled admission; raises LeakError on any violation."""
    if len(table) == 0:
        return
    rng = np.random.default_rng(seed)
    aids = sorted(set(table.meta["admission_id"]))
    aid = aids[int(rng.integers(len(aids)))]
    rows = table.meta.index[table.meta["admission_id"] == aid][:max_days]
    samples = [(aid, table.meta["day_start"].iat[i]) for i in rows]
    problems = leak_check(cohort, samples, fcfg, seed=seed)
    if problems:
        raise LeakError("leak check failed: " + "; ".join(problems[:3]))


def prevalence_summary(table: PatientDayTable, split: SplitAssignment) -> list[list]:
    rows = []
    for name in ("all", "train", "val", "test"):
        idx = np.arange(len(table)) if name == "all" else split.rows(table, name)
        for k, t in enumerate(TARGETS):
            pos = int(table.labels[idx, k].sum())
            rows.append([name, t, len(idx), pos, pos / len(idx) if len(idx) else None])
    return rows


def run_prepare(cfg: Config, cohort_dir, out) -> str:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cohort = parse_cohort(require(cohort_dir, "cohort directory"))
    fcfg = featurizer_config(cfg)
    seed = cfg.get("run", "seed")
    table = featurize_cohort(cohort, fcfg)
    if cfg.get("features", "leak_check"):
        self_leak_check(cohort, table, fcfg, seed)
    noise = cfg.get("prep", "label_noise")
    if noise > 0:
        table.labels = inject_label_noise(table.labels, noise, seed).astype(np.int8)
    sp = cfg["split"]
    split = split_patients(cohort.patients["patient_id"], {k: sp[k] for k in ("train", "val", "test")}, seed)
    prepared = prepare(table, split, (cfg.get("prep", "winsor_low"), cfg.get("prep", "winsor_high")))

    names = ["patient_days.csv", "schema.csv", "split.csv", "scaler.json", "prevalence.csv", "config.cfg"]
    table.to_frame().to_csv(out / "patient_days.csv", index=False, lineterminator="\n")
    pd.DataFrame([(c.name, c.kind, c.source, c.aggregate) for c in table.schema.columns],
                 columns=["name", "kind", "source", "aggregate"]).to_csv(
        out / "schema.csv", index=False, lineterminator="\n")
    split.write(out / "split.csv")
    prepared.scaler.write(out / "scaler.json")
    pd.DataFrame(prevalence_summary(table, split),
                 columns=["split", "target", "patient_days", "positives", "prevalence"]).to_csv(
        out / "prevalence.csv", index=False, lineterminator="\n", float_format="%.6f")
    cfg.write(out / "config.cfg")
    grid_path = out / "grids.bin"
    if table.grids is not None:
        write_grids(grid_path, table.grids, table.indicators)
        names.append("grids.bin")
    elif grid_path.exists():
        grid_path.unlink()
    return write_manifest(out, names)


@lru_cache(maxsize=4)
def _load_prepared_cached(directory: str, stamp: str):
    d = Path(directory)
    df = pd.read_csv(d / "patient_days.csv", dtype={"admission_id": str, "patient_id": str},
                     float_precision="round_trip", keep_default_na=False, na_values=["nan", "NaN"])
    sch = pd.read_csv(d / "schema.csv", dtype=str, keep_default_na=False)
    schema = FeatureSchema([FeatureColumn(r.name, r.kind, r.source, r.aggregate) for r in sch.itertuples()])
    meta = df[["admission_id", "patient_id", "day_index", "date", "day_start"]].copy()
    meta["day_start"] = pd.to_datetime(meta["day_start"]).astype("datetime64[ns]")
    meta["date"] = pd.to_datetime(meta["date"]).dt.date
    X = df[schema.names].to_numpy(dtype=np.float64)
    labels = df[[f"label_{t}" for t in TARGETS]].to_numpy(dtype=np.int8)
    grids = inds = None
    if (d / "grids.bin").exists():
        grids, inds = read_grids(d / "grids.bin")
        if len(grids) != len(meta):
            raise MissingArtifact(f"grids.bin holds {len(grids)} rows but patient_days.csv {len(meta)}")
    table = PatientDayTable(meta, X, labels, schema, FeaturizerConfig(with_grid=grids is not None),
                            grids, inds)
    split = SplitAssignment.read(d / "split.csv")
    return table, split


def load_prepared(directory):
    d = require(directory, "prepared directory")
    for n in ("patient_days.csv", "schema.csv", "split.csv", "manifest.txt"):
        require(d / n, n)
    return _load_prepared_cached(str(d.resolve()), (d / "manifest.txt").read_text())


# ---------------------------------------------------------------------------
# training runs


@dataclass(frozen=True)
class RunSpec:
    model: str
    resolution: str
    task_mode: str
    targets: tuple

    @property
    def label(self) -> str:
        return f"{self.model}-{self.resolution}-{self.task_mode}"

    @property
    def slug(self) -> str:
        tgt = self.targets[0] if len(self.targets) == 1 else "mtl"
        return f"{self.label}-{tgt}"


def run_matrix(cfg: Config) -> list[RunSpec]:
    m = cfg["matrix"]
    runs = []
    for res in m["resolutions"]:
        if "gru" in m["models"]:
            for mode in m["task_modes"]:
                if mode == "stl":
                    runs += [RunSpec("gru", res, "stl", (t,)) for t in m["targets"]]
                else:
                    runs.append(RunSpec("gru", res, mode, tuple(m["mtl_targets"])))
        for fam in ("logreg", "mlp"):
            if fam in m["models"]:
                runs += [RunSpec(fam, res, "stl", (t,)) for t in m["targets"]]
    return runs


def run_id(cfg: Config, spec: RunSpec, data_hash: str) -> str:
    text = (f"{spec}\n{cfg.section_text('features', 'split', 'prep', 'train')}\n"
            f"version={__version__}\nseed={cfg.get('run', 'seed')}\ndata={data_hash}\n")
    return hashlib.sha256(text.encode()).hexdigest()


def run_dir(registry, spec: RunSpec, rid: str) -> Path:
    return Path(registry) / f"{spec.slug}-{rid[:12]}"


def train_config(cfg: Config) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(lr=t["lr"], weight_decay=t["weight_decay"], batch_size=t["batch_size"],
                       max_epochs=t["max_epochs"], patience=t["patience"], clip_norm=t["clip_norm"],
                       seed=cfg.get("run", "seed"), pos_weight_cap=t["pos_weight_cap"],
                       betas=(t["beta1"], t["beta2"]), eps=t["eps"])


def fused_columns(schema: FeatureSchema) -> list[int]:
    """Tabular columns kept next to the grid embedding (window aggregates dropped)."""
    return [i for i, c in enumerate(schema.columns) if c.kind != "window-aggregate"]


def build_sequence_net(cfg: Config, spec: RunSpec, n_features: int, grid_channels=None) -> SequenceNet:
    t = cfg["train"]
    mode = spec.task_mode
    return SequenceNet(
        n_features, spec.targets, mode, hidden=t["hidden"], layers=t["layers"], dropout=t["dropout"],
        grid_channels=grid_channels,
        encoder=EncoderSpec(t["proj_width"], tuple(t["conv_channels"]), t["kernel"]),
        n_experts=t["n_experts"], expert_dim=t["expert_dim"], seed=cfg.get("run", "seed"),
    )


def _prepared_for(cfg: Config, table, split, resolution):
    cols = fused_columns(table.schema) if resolution == "1h-fused" else None
    if resolution == "1h-fused" and table.grids is None:
        raise MissingArtifact("1h-fused runs need grids.bin; enable 1h-fused in features.resolutions")
    return prepare(table, split, (cfg.get("prep", "winsor_low"), cfg.get("prep", "winsor_high")), cols)


def _fit_gru(cfg, spec, table, split, out: Path):
    prep = _prepared_for(cfg, table, split, spec.resolution)
    if spec.resolution == "24h":
        prep.grid = None
    k = [TARGETS.index(t) for t in spec.targets]
    max_len = cfg.get("prep", "max_seq_len")
    seqs = {s: task_labels(prep.sequences(s, max_len), k) for s in ("train", "val", "test")}
    if not seqs["train"]:
        raise ValueError("no training sequences")
    channels = None if prep.grid is None else prep.grid.shape[-1]
    model = build_sequence_net(cfg, spec, prep.X.shape[1], channels)
    res = fit_sequence(model, seqs["train"], seqs["val"], train_config(cfg))
    save_checkpoint(out / "checkpoint", res.model.named_parameters(), cfg.digest(), cfg.get("run", "seed"))
    scores = predict_sequences(res.model, seqs["test"], len(table))
    return res.curve, scores


def _fit_tabular(cfg, spec, table, split, out: Path, registry: Path, data_hash: str):
    prep = _prepared_for(cfg, table, split, spec.resolution)
    X = prep.X
    if spec.resolution == "1h-fused":
        src = RunSpec("gru", "1h-fused", "stl", spec.targets)
        d = run_dir(registry, src, run_id(cfg, src, data_hash))
        if _status(d) != "done":
            raise MissingArtifact(f"{spec.slug} needs the embeddings of {src.slug}, which has not completed")
        net = build_sequence_net(cfg, src, prep.X.shape[1], prep.grid.shape[-1])
        params, _ = load_checkpoint(d / "checkpoint")
        restore(net, params)
        all_rows = np.arange(len(table))
        seqs = [s for part in ("train", "val", "test") for s in prep.sequences(part, len(table))]
        X = np.hstack([X, embed_rows(net, seqs, len(all_rows))])
    k = TARGETS.index(spec.targets[0])
    y = table.labels[:, k].astype(np.float64)
    tr, va, te = prep.rows("train"), prep.rows("val"), prep.rows("test")
    t = cfg["train"]
    if spec.model == "logreg":
        model = LogisticRegression(C=t["logreg_c"], max_iter=t["logreg_max_iter"]).fit(X[tr], y[tr])
        p_tr, p_va = model.predict_proba(X[tr]), model.predict_proba(X[va]) if va.size else None
        curve = [(0, _logloss(p_tr, y[tr]), _logloss(p_va, y[va]) if va.size else None)]
        params = list(model.named_parameters())
    else:
        model = MLPClassifier(hidden=t["mlp_hidden"], max_epochs=t["mlp_max_epochs"],
                              patience=t["patience"], seed=cfg.get("run", "seed"), clip=t["clip_norm"])
        model.fit(X[tr], y[tr], X[va] if va.size else None, y[va] if va.size else None)
        curve = model.curve
        params = [(n, p.value) for n, p in model.named_parameters()]
    save_checkpoint(out / "checkpoint", params, cfg.digest(), cfg.get("run", "seed"))
    scores = np.full((len(table), 1), np.nan)
    scores[te, 0] = model.predict_proba(X[te])
    return curve, scores


def _logloss(p, y) -> float:
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def _status(d: Path) -> str:
    f = d / "status"
    return f.read_text().split("\n", 1)[0].strip() if f.exists() else "missing"


def execute_run(cfg: Config, spec: RunSpec, prepared_dir, registry) -> tuple[str, str]:
    """Train one run into its registry directory; returns (status, message)."""
    registry = Path(registry)
    table, split = load_prepared(prepared_dir)
    data_hash = hashlib.sha256((Path(prepared_dir) / "manifest.txt").read_bytes()).hexdigest()
    rid = run_id(cfg, spec, data_hash)
    out = run_dir(registry, spec, rid)
    if _status(out) == "done":
        return "skipped", str(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.txt").write_text(
        f"model = {spec.model}\nresolution = {spec.resolution}\ntask_mode = {spec.task_mode}\n"
        f"targets = {', '.join(spec.targets)}\nrun_id = {rid}\nversion = {__version__}\n")
    cfg.write(out / "config.cfg")
    try:
        if spec.model == "gru":
            curve, scores = _fit_gru(cfg, spec, table, split, out)
        else:
            curve, scores = _fit_tabular(cfg, spec, table, split, out, registry, data_hash)
    except Exception as exc:  # isolate failures; sibling runs continue
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        (out / "status").write_text(f"failed\n{msg}\n")
        return "failed", msg
    with open(out / "curve.csv", "w", newline="\n") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for e, a, b in curve:
            fh.write(f"{e},{a:.10f},{'' if b is None else f'{b:.10f}'}\n")
    te = split.rows(table, "test")
    with open(out / "scores.csv", "w", newline="\n") as fh:
        fh.write("row,admission_id,day_index,target,label,score\n")
        for k, tgt in enumerate(spec.targets):
            kk = TARGETS.index(tgt)
            for r in te:
                fh.write(f"{r},{table.meta['admission_id'].iat[r]},{table.meta['day_index'].iat[r]},{tgt},"
                         f"{int(table.labels[r, kk])},{float(scores[r, k])!r}\n")
    (out / "status").write_text("done\n")
    return "done", str(out)


def _run_worker(args):
    cfg, spec, prepared_dir, registry = args
    return spec, execute_run(cfg, spec, prepared_dir, registry)


def run_train(cfg: Config, prepared_dir, registry, jobs: int = 1, echo=None) -> dict:
    """Train the configured matrix; GRU runs first since fused tabular runs reuse their encoders."""
    registry = Path(registry)
    registry.mkdir(parents=True, exist_ok=True)
    load_prepared(prepared_dir)
    specs = run_matrix(cfg)
    phases = [[s for s in specs if s.model == "gru"], [s for s in specs if s.model != "gru"]]
    results = {}
    for phase in phases:
        work = [(cfg, s, str(prepared_dir), str(registry)) for s in phase]
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_run_worker, work))
        else:
            outcomes = [_run_worker(w) for w in work]
        for spec, (status, msg) in outcomes:
            results[spec] = (status, msg)
            if echo:
                echo(spec, status, msg)
    return results


# ---------------------------------------------------------------------------
# report


def run_report(cfg: Config, registry, prepared_dir, out) -> Path:
    registry = require(registry, "registry")
    table, _ = load_prepared(prepared_dir)
    data_hash = hashlib.sha256((Path(prepared_dir) / "manifest.txt").read_bytes()).hexdigest()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.get("run", "seed")
    n_bins, thr = cfg.get("report", "n_bins"), cfg.get("report", "threshold")
    rows, curves = [], {}
    done = 0
    for spec in run_matrix(cfg):
        d = run_dir(registry, spec, run_id(cfg, spec, data_hash))
        if _status(d) != "done":
            rows += [result_row(spec.model, t, spec.resolution, spec.task_mode, seed, None) for t in spec.targets]
            continue
        done += 1
        sc = pd.read_csv(d / "scores.csv", dtype={"admission_id": str, "target": str})
        for tgt in spec.targets:
            part = sc[sc["target"] == tgt]
            r = part["row"].to_numpy()
            labels = table.labels[r, TARGETS.index(tgt)]  # recomputed, not trusted from the registry
            if len(r) == 0:
                rows.append(result_row(spec.model, tgt, spec.resolution, spec.task_mode, seed, None))
                continue
            scores = part["score"].to_numpy(dtype=np.float64)
            ok = ~np.isnan(scores)  # rows beyond the sequence cap carry no score
            rep = evaluate(scores[ok], labels[ok], thr, n_bins)
            rows.append(result_row(spec.model, tgt, spec.resolution, spec.task_mode, seed, rep))
            write_calibration(out / f"calibration_{spec.label}_{tgt}.csv", rep.calibration)
            curves.setdefault(tgt, {})[spec.label] = rep.calibration
    if done == 0:
        raise MissingArtifact(f"no completed runs in {registry}")
    write_results(out / "results.csv", rows)
    write_deltas(out / "stl_mtl_delta.csv", stl_mtl_deltas(rows))
    for tgt, c in sorted(curves.items()):
        calibration_svg(out / f"calibration_{tgt}.svg", c, title=tgt)
    return out / "results.csv"


def run_all(cfg: Config, out, jobs: int = 1, echo=None) -> Path:
    out = Path(out)
    cohort_dir = out / "cohort"
    if cfg.get("cohort", "source") == "tables":
        cohort_dir = Path(cfg.get("cohort", "path"))
    else:
        run_synth(cfg, cohort_dir)
    run_prepare(cfg, cohort_dir, out / "prepared")
    run_train(cfg, out / "prepared", out / "registry", jobs, echo)
    return run_report(cfg, out / "registry", out / "prepared", out / "report")
