import hashlib

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression as SkLogReg

from amsbench.evalkit import auroc
from amsbench.models import (
    EncoderSpec, EventGridEncoder, LogisticRegression, MLPClassifier, MMoE, ModelInputError, SequenceNet,
    TrainConfig, fit_sequence, pcgrad_combine, predict_sequences, task_labels,
)
from amsbench.nn import hard_sum, numerical_grad, relative_error, uncertainty_loss
from amsbench.prep import Sequence, pad_batch, prepare, split_patients
from amsbench.synth import SynthConfig, generate_synthetic
from amsbench.features import featurize_cohort
from amsbench.courses import TARGETS


# --- logistic regression ---------------------------------------------------

def test_logreg_matches_independent_solver():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 5))
    y = (X @ [1.0, -2.0, 0.5, 0.0, 1.0] + rng.normal(size=50) > 0).astype(int)
    ours = LogisticRegression(C=1.0).fit(X, y)
    ref = SkLogReg(C=1.0, tol=1e-12, max_iter=10000).fit(X, y)
    assert np.abs(ours.coef_ - ref.coef_[0]).max() < 1e-4
    assert abs(ours.intercept_ - ref.intercept_[0]) < 1e-4


def test_logreg_separable():
    X = np.r_[np.linspace(-3, -1, 20), np.linspace(1, 3, 20)][:, None]
    y = np.r_[np.zeros(20), np.ones(20)]
    assert auroc(LogisticRegression().fit(X, y).predict_proba(X), y) == 1.0


def test_logreg_all_negative():
    X = np.random.default_rng(1).normal(size=(100, 3))
    p = LogisticRegression().fit(X, np.zeros(100)).predict_proba(X)
    assert (p < 0.05).all()


def test_logreg_rejects_non_finite():
    X = np.ones((4, 2))
    X[2, 1] = np.nan
    with pytest.raises(ModelInputError, match="first row 2"):
        LogisticRegression().fit(X, np.array([0, 1, 0, 1]))


# --- MLP -------------------------------------------------------------------

def _xor(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, 2))
    return X, ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)


def test_mlp_learns_xor():
    X, y = _xor()
    m = MLPClassifier(lr=1e-2, batch_size=32, max_epochs=300, patience=300, seed=0).fit(X, y)
    assert ((m.predict_proba(X) > 0.5) == y).mean() > 0.95


def test_mlp_zero_epochs_is_chance():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2000, 5))
    y = np.r_[np.ones(1000), np.zeros(1000)]
    a = auroc(MLPClassifier(seed=3).init_only(5).predict_proba(X), y)
    assert abs(a - 0.5) < 0.1


def _digest(model):
    h = hashlib.sha256()
    for _, p in model.named_parameters():
        h.update(np.ascontiguousarray(p.value).tobytes())
    return h.hexdigest()


def test_mlp_deterministic():
    X, y = _xor(100)
    a = MLPClassifier(max_epochs=5, seed=4).fit(X, y)
    b = MLPClassifier(max_epochs=5, seed=4).fit(X, y)
    c = MLPClassifier(max_epochs=5, seed=5).fit(X, y)
    assert _digest(a) == _digest(b) != _digest(c)


# --- event-grid encoder ----------------------------------------------------

SMALL = EncoderSpec(proj_width=4, channels=(3, 5), kernel=3)


def test_encoder_zero_grid_zero_params():
    enc = EventGridEncoder(6, SMALL)
    enc.zero_weights()
    assert np.array_equal(enc.forward(np.zeros((2, 24, 6))), np.zeros((2, 5)))


def test_encoder_channel_permutation_symmetry():
    rng = np.random.default_rng(0)
    enc = EventGridEncoder(6, SMALL, rng)
    g = rng.normal(size=(3, 24, 6))
    before = enc.forward(g)
    perm = np.array([1, 0, 2, 3, 5, 4])  # swap two series, with their indicator channels
    enc.proj.W.value[:] = enc.proj.W.value[perm]
    # same products, summed in a different order
    assert np.abs(enc.forward(g[..., perm]) - before).max() < 1e-12


def test_encoder_rejects_wrong_channels():
    with pytest.raises(ValueError, match=r"\(M, B, 6\)"):
        EventGridEncoder(6, SMALL).forward(np.zeros((2, 24, 5)))


def test_encoder_conv_gradient_end_to_end():
    rng = np.random.default_rng(3)
    net = SequenceNet(3, ("short_course",), hidden=4, layers=1, dropout=0.0, grid_channels=4,
                      encoder=SMALL, seed=3)
    X = rng.normal(size=(2, 3, 3))
    grid = rng.normal(size=(2, 3, 6, 4))
    mask = np.array([[1, 1, 1], [1, 1, 0.0]])
    y = (rng.random((2, 3, 1)) < 0.5).astype(float)

    def loss():
        return net.loss(net.forward(X, mask, grid), y, mask, [2.0])[0]

    net.zero_grad()
    net.backward(net.loss(net.forward(X, mask, grid), y, mask, [2.0])[2])
    for p in (net.encoder.convs[0].W, net.encoder.convs[1].W, net.encoder.proj.W):
        assert relative_error(p.grad.copy(), numerical_grad(loss, p.value)) < 1e-5


# --- fusion ----------------------------------------------------------------

def test_fused_width():
    net = SequenceNet(300, ("short_course",), hidden=8, layers=1, grid_channels=10)
    assert net.norm.dim == 364 and net.trunk.layers[0].n_in == 364


def test_fused_norm_moments():
    net = SequenceNet(20, ("short_course",), hidden=8, layers=1, grid_channels=4, encoder=SMALL)
    rng = np.random.default_rng(0)
    x = rng.normal(3, 2, size=(4, 25))
    y = net.norm.forward(x)
    assert np.allclose(y.mean(-1), 0, atol=1e-12) and np.allclose(y.var(-1), 1, atol=1e-4)
    assert np.allclose(net.norm.forward(np.full((2, 25), 7.0)), 0)


def test_zeroed_encoder_reduces_to_plain_trunk():
    """With the encoder frozen at zero, the fused model is the 24h trunk on LN([x, 0])."""
    rng = np.random.default_rng(5)
    F = 6
    fused = SequenceNet(F, ("short_course",), hidden=5, layers=1, dropout=0.0, grid_channels=4,
                        encoder=SMALL, seed=1)
    fused.encoder.zero_weights()
    plain = SequenceNet(F + SMALL.out_dim, ("short_course",), hidden=5, layers=1, dropout=0.0, seed=2)
    for (_, a), (_, b) in zip(fused.trunk.named_parameters(), plain.trunk.named_parameters()):
        b.value[...] = a.value
    plain.heads[0].W.value[...] = fused.heads[0].W.value
    plain.heads[0].b.value[...] = fused.heads[0].b.value
    X = rng.normal(size=(2, 4, F))
    mask = np.ones((2, 4))
    got = fused.forward(X, mask, rng.normal(size=(2, 4, 6, 4)))
    cat = np.concatenate([X, np.zeros((2, 4, SMALL.out_dim))], axis=-1)
    mu, sd = cat.mean(-1, keepdims=True), np.sqrt(cat.var(-1, keepdims=True) + 1e-5)
    assert np.abs(got - plain.forward((cat - mu) / sd, mask)).max() < 1e-12


# --- MTL losses ------------------------------------------------------------

def test_hard_sum():
    total, g = hard_sum([0.5, 0.7, 0.3])
    assert total == pytest.approx(1.5) and list(g) == [1, 1, 1]


def test_uncertainty_reduces_to_hard_at_zero():
    L = np.array([0.5, 0.7, 0.3])
    assert uncertainty_loss(L, np.zeros(3))[0] == hard_sum(L)[0]


def test_uncertainty_stationary_at_log_loss():
    L = np.array([0.5, 0.7, 2.3])
    _, w, ds = uncertainty_loss(L, np.log(L))
    assert np.allclose(ds, 0, atol=1e-15)
    assert np.allclose(ds, 1 - np.exp(-np.log(L)) * L)


def test_uncertainty_larger_s_smaller_shared_gradient():
    rng = np.random.default_rng(0)
    net = SequenceNet(3, ("deescalation", "short_course"), mode="uncertainty", hidden=4, layers=1,
                      dropout=0.0, seed=0)
    X = rng.normal(size=(2, 5, 3))
    mask = np.ones((2, 5))
    y = (rng.random((2, 5, 2)) < 0.5).astype(float)
    y[..., 1] = 0.0
    norms = []
    for s0 in (-1.0, 0.0, 1.0, 2.0):
        net.log_var.value[:] = [s0, 0.0]
        net.zero_grad()
        logits = net.forward(X, mask)
        _, _, dl = net.loss(logits, y, mask, [1.0, 1.0])
        dl[..., 1] = 0.0  # isolate task 0
        net.backward(dl)
        norms.append(np.sqrt(sum((p.grad ** 2).sum() for p in net.shared_parameters())))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_one_task_all_masked_contributes_zero():
    net = SequenceNet(3, ("deescalation", "short_course"), mode="hard", hidden=4, layers=1, seed=0)
    net.eval()
    rng = np.random.default_rng(1)
    X = rng.normal(size=(1, 4, 3))
    y = np.ones((1, 4, 2))
    logits = net.forward(X, np.ones((1, 4)))
    with pytest.warns(RuntimeWarning):
        total, per, _ = net.loss(logits, y, np.zeros((1, 4)), [1.0, 1.0])
    assert total == 0.0 and (per == 0).all()


# --- PCGrad ----------------------------------------------------------------

def test_pcgrad_hand_example():
    g1, g2 = np.array([1.0, 0.0]), np.array([-1.0, 1.0])
    combined, inner = pcgrad_combine([g1, g2], order=[0, 1])
    # g1 -> (0.5, 0.5), g2 -> (0, 1)
    assert np.allclose(combined, [0.5, 1.5])
    assert all(abs(v) < 1e-12 for v in inner)
    single, _ = pcgrad_combine([g1, np.zeros(2)], order=[0, 1])
    assert np.array_equal(single, g1)


def test_pcgrad_orthogonal_unchanged():
    g = [np.array([1.0, 0.0, 0.0]), np.array([0.0, 2.0, 0.0]), np.array([0.0, 0.0, -3.0])]
    combined, inner = pcgrad_combine(g, np.random.default_rng(0))
    assert np.array_equal(combined, [1.0, 2.0, -3.0]) and inner == []


def test_pcgrad_projected_pairs_non_conflicting():
    rng = np.random.default_rng(0)
    for _ in range(200):
        grads = list(rng.normal(size=(3, 6)))
        _, inner = pcgrad_combine(grads, rng)
        assert min(inner, default=0.0) >= -1e-12


# --- MMoE ------------------------------------------------------------------

def test_mmoe_single_expert_gate_is_one():
    rng = np.random.default_rng(0)
    m = MMoE(4, 2, n_experts=1, expert_dim=3, rng=rng)
    h = rng.normal(size=(2, 3, 4))
    reps = m.forward(h)
    expert = np.maximum(m.experts[0].forward(h), 0)
    assert all(np.allclose(r, expert, atol=1e-15) for r in reps)


def test_mmoe_one_hot_gate_selects_expert():
    rng = np.random.default_rng(1)
    m = MMoE(4, 1, n_experts=3, expert_dim=2, rng=rng)
    m.gates[0].W.value[:] = 0
    m.gates[0].b.value[:] = [0.0, 1000.0, 0.0]
    h = rng.normal(size=(5, 4))
    rep, = m.forward(h)
    assert np.array_equal(rep, np.maximum(m.experts[1].forward(h), 0))


# --- sequence model --------------------------------------------------------

def _net(mode="stl", tasks=("short_course",), **kw):
    kw = {"hidden": 6, "layers": 2, "dropout": 0.0, "seed": 0, **kw}
    net = SequenceNet(5, tasks, mode=mode, **kw)
    net.eval()
    return net


@pytest.mark.parametrize("mode,tasks", [("stl", ("short_course",)),
                                        ("mmoe", ("deescalation", "short_course"))])
def test_sequence_causal(mode, tasks):
    net = _net(mode, tasks)
    X = np.random.default_rng(0).normal(size=(1, 7, 5))
    a = net.forward(X, np.ones((1, 7)))
    X[:, 4:] = 50.0
    b = net.forward(X, np.ones((1, 7)))
    assert np.array_equal(a[:, :4], b[:, :4])


def test_sequence_padding_invariance():
    rng = np.random.default_rng(0)
    net = _net(grid_channels=4, encoder=SMALL)
    seqs = [Sequence(f"A{i}", np.arange(n), rng.normal(size=(n, 5)), np.zeros((n, 1)),
                     rng.normal(size=(n, 6, 4))) for i, n in enumerate([3, 8, 5])]
    alone = pad_batch(seqs[:1])
    together = pad_batch(seqs)
    a = net.forward(alone.X, alone.mask, alone.grid)
    b = net.forward(together.X, together.mask, together.grid)
    assert np.abs(a[0] - b[0, :3]).max() < 1e-10


def test_hard_single_task_equals_stl_logits():
    X = np.random.default_rng(0).normal(size=(2, 4, 5))
    a = _net("stl").forward(X, np.ones((2, 4)))
    b = _net("hard").forward(X, np.ones((2, 4)))
    assert np.array_equal(a, b)


def test_mode_validation():
    with pytest.raises(ValueError):
        SequenceNet(3, ("a", "b"), mode="stl")
    with pytest.raises(ValueError):
        SequenceNet(3, ("a",), mode="bogus")
    with pytest.raises(ValueError, match="hourly grids"):
        _net(grid_channels=4, encoder=SMALL).forward(np.zeros((1, 2, 5)), np.ones((1, 2)))


def test_fit_rejects_non_finite_inputs():
    X = np.ones((3, 5))
    X[1, 2] = np.inf
    seqs = [Sequence("A9", np.arange(3), X, np.zeros((3, 1)))]
    with pytest.raises(ModelInputError, match="A9"):
        fit_sequence(_net(), seqs, None, TrainConfig(max_epochs=1))


@pytest.fixture(scope="module")
def null_data():
    table = featurize_cohort(generate_synthetic(SynthConfig(n_patients=400, seed=21)))
    split = split_patients(table.meta["patient_id"].unique(), seed=21)
    return table, prepare(table, split)


def test_label_permutation_gives_chance(null_data):
    table, data = null_data
    k = TARGETS.index("short_course")
    rng = np.random.default_rng(0)
    labels = table.labels.copy()
    for s in ("train", "val", "test"):
        rows = data.rows(s)
        labels[rows] = labels[rng.permutation(rows)]
    shuffled = [Sequence(q.admission_id, q.rows, q.X, labels[q.rows].astype(float), q.grid)
                for q in data.sequences("train")]
    val = [Sequence(q.admission_id, q.rows, q.X, labels[q.rows].astype(float), q.grid)
           for q in data.sequences("val")]
    net = SequenceNet(data.X.shape[1], ("short_course",), hidden=16, layers=1, seed=0)
    res = fit_sequence(net, task_labels(shuffled, [k]), task_labels(val, [k]),
                       TrainConfig(batch_size=16, max_epochs=4, patience=2, seed=0))
    test_rows = data.rows("test")
    p = predict_sequences(res.model, data.sequences("test"), len(table.meta))[test_rows, 0]
    a = auroc(p, labels[test_rows, k])
    assert 0.45 <= a <= 0.55, a
