"""
A small benchmark on a synthetic cohort
========================================

Generate a cohort, build patient-day features, split by patient, then
compare a per-day logistic regression with a GRU that reads each admission
as a sequence. Takes about a minute on one core.
"""

import numpy as np

from amsbench.courses import TARGETS
from amsbench.evalkit import auprc, auroc, bins_below_diagonal, calibration_curve, max_calibration_gap
from amsbench.features import featurize_cohort
from amsbench.models import LogisticRegression, SequenceNet, TrainConfig, fit_sequence, predict_sequences
from amsbench.models import task_labels
from amsbench.prep import prepare, split_patients
from amsbench.synth import SynthConfig, generate_synthetic

cohort = generate_synthetic(SynthConfig(n_patients=300, seed=3))
print(cohort.summary())

table = featurize_cohort(cohort)
print(f"{len(table)} patient-days x {table.X.shape[1]} features")
print("prevalence", dict(zip(TARGETS, table.labels.mean(0).round(4))))

# patient-wise split, scaler fitted on train rows only
data = prepare(table, split_patients(cohort.patients["patient_id"], seed=3))
tr, te = data.rows("train"), data.rows("test")

target = "deescalation"
k = TARGETS.index(target)
y = table.labels[:, k].astype(float)

logreg = LogisticRegression().fit(data.X[tr], y[tr])
p_lr = logreg.predict_proba(data.X[te])

seqs = {s: task_labels(data.sequences(s), [k]) for s in ("train", "val", "test")}
net = SequenceNet(data.X.shape[1], (target,), hidden=64, seed=0)
res = fit_sequence(net, seqs["train"], seqs["val"], TrainConfig(batch_size=8, max_epochs=15, seed=0))
print("best epoch", res.best_epoch, "pos_weight", np.round(res.pos_weights, 1))
p_gru = predict_sequences(res.model, seqs["test"], len(table))[te, 0]

for name, p in (("logreg", p_lr), ("gru", p_gru)):
    bins = calibration_curve(p, y[te])
    below, occ = bins_below_diagonal(bins)
    print(f"{name:7s} AUROC {auroc(p, y[te]):.3f}  AUPRC {auprc(p, y[te]):.3f}  "
          f"max calibration gap {max_calibration_gap(bins):.3f}  ({below}/{occ} bins over-confident)")
