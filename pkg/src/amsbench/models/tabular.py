"""Tabular baselines: L2 logistic regression and a one-hidden-layer MLP."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..nn import AdamW, Linear, Module, ReLU, bce_with_logits, check_finite, clip_grad_norm, sigmoid


class ModelInputError(ValueError):
    pass


def _check_inputs(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ModelInputError(f"expected a 2-D feature matrix, got shape {X.shape}")
    if not np.isfinite(X).all():
        rows = np.flatnonzero(~np.isfinite(X).all(axis=1))
        raise ModelInputError(f"non-finite feature values in {rows.size} rows (first row {rows[0]})")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ModelInputError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    return X, y


@dataclass
class LogisticRegression:
    """Minimizes 0.5*|w|^2 + C * sum(logloss); the intercept is not penalized."""

    C: float = 1.0
    max_iter: int = 3000
    tol: float = 1e-6
    coef_: np.ndarray = field(default=None, repr=False)
    intercept_: float = 0.0
    n_iter_: int = 0

    def _objective(self, theta, X, y):
        w, b = theta[:-1], theta[-1]
        z = X @ w + b
        # logloss = softplus(z) - y*z
        loss = self.C * float((np.logaddexp(0.0, z) - y * z).sum()) + 0.5 * float(w @ w)
        r = self.C * (sigmoid(z) - y)
        grad = np.empty_like(theta)
        grad[:-1] = X.T @ r + w
        grad[-1] = r.sum()
        return loss, grad

    def fit(self, X, y):
        X, y = _check_inputs(X, y)
        theta0 = np.zeros(X.shape[1] + 1)
        res = minimize(self._objective, theta0, args=(X, y), jac=True, method="L-BFGS-B",
                       options={"maxiter": self.max_iter, "gtol": self.tol, "ftol": 0.0, "maxcor": 20})
        self.coef_, self.intercept_ = res.x[:-1].copy(), float(res.x[-1])
        self.n_iter_ = int(res.nit)
        return self

    def decision_function(self, X):
        return _check_inputs(X) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def named_parameters(self):
        yield "coef", self.coef_
        yield "intercept", np.array([self.intercept_])


class _MLPNet(Module):
    def __init__(self, n_in, hidden, rng):
        self.fc1 = Linear(n_in, hidden, rng)
        self.act = ReLU()
        self.fc2 = Linear(hidden, 1, rng)

    def forward(self, x):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x)))[:, 0]

    def backward(self, dz):
        self.fc1.backward(self.act.backward(self.fc2.backward(dz[:, None])))


@dataclass
class MLPClassifier:
    hidden: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 200
    max_epochs: int = 200
    patience: int = 10
    clip: float = 2.0
    pos_weight: float = 1.0
    seed: int = 0
    net: _MLPNet = field(default=None, repr=False)
    curve: list = field(default_factory=list, repr=False)

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = _check_inputs(X, y)
        rng = np.random.default_rng(self.seed)
        self.net = _MLPNet(X.shape[1], self.hidden, rng)
        if X_val is None:
            X_val, y_val = X, y
        X_val, y_val = _check_inputs(X_val, y_val)
        opt = AdamW(self.net.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        best, best_state, wait = np.inf, copy.deepcopy(self.net), 0
        self.curve = []
        for epoch in range(self.max_epochs):
            order = rng.permutation(len(y))
            tr = []
            for k in range(0, len(order), self.batch_size):
                idx = order[k:k + self.batch_size]
                self.net.zero_grad()
                loss, dz = bce_with_logits(self.net.forward(X[idx]), y[idx], pos_weight=self.pos_weight)
                self.net.backward(dz)
                check_finite(self.net.named_parameters())
                clip_grad_norm(self.net.parameters(), self.clip)
                opt.step()
                tr.append(loss)
            val, _ = bce_with_logits(self.net.forward(X_val), y_val, pos_weight=self.pos_weight)
            self.curve.append((epoch, float(np.mean(tr)), float(val)))
            if val < best - 1e-12:
                best, best_state, wait = val, copy.deepcopy(self.net), 0
            else:
                wait += 1
                if wait >= self.patience:
                    break
        self.net = best_state
        return self

    def init_only(self, n_features: int):
        """Initialized network without any training (zero-epoch budget)."""
        self.net = _MLPNet(n_features, self.hidden, np.random.default_rng(self.seed))
        return self

    def decision_function(self, X):
        return self.net.forward(_check_inputs(X))

    def predict_proba(self, X):
        return sigmoid(self.decision_function(X))

    def named_parameters(self):
        return self.net.named_parameters()
