"""Epsilon-SVR with an RBF kernel, trained by SMO.

The dual is solved in the usual doubled form (one variable for the upper
and one for the lower side of the tube per sample); the stored model keeps
only the net coefficients beta_i = alpha_i - alpha_i*.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConvergenceWarning, InvalidInput

TAU = 1e-12


@dataclass(frozen=True)
class SvrParams:
    C: float = 10.0
    epsilon: float = 0.05
    gamma: Union[float, str] = "auto"
    tol: float = 1e-3
    max_passes: int = 200

    def __post_init__(self):
        if not self.C > 0:
            raise InvalidInput("C must be positive")
        if not self.epsilon >= 0:
            raise InvalidInput("epsilon must be non-negative")
        if self.gamma != "auto" and not float(self.gamma) > 0:
            raise InvalidInput("gamma must be positive or 'auto'")
        if not self.tol > 0 or self.max_passes < 1:
            raise InvalidInput("tol and max_passes must be positive")

    def resolve_gamma(self, n_features: int) -> float:
        return 1.0 / n_features if self.gamma == "auto" else float(self.gamma)


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # normalized inputs, (m, d)
    coefficients: np.ndarray  # beta, (m,)
    bias: float
    gamma: float
    input_mean: np.ndarray
    input_scale: np.ndarray
    target_mean: float = 0.0
    target_scale: float = 1.0
    target: str = ""
    converged: bool = True
    iterations: int = 0

    def decision(self, x_norm: np.ndarray) -> np.ndarray:
        """Normalized-unit output for already-normalized rows."""
        x_norm = np.atleast_2d(x_norm)
        if len(self.coefficients) == 0:
            return np.full(x_norm.shape[0], self.bias)
        k = rbf_matrix(x_norm, self.support_vectors, self.gamma)
        return k @ self.coefficients + self.bias

    def normalize(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.input_mean) / self.input_scale

    def predict(self, x) -> Union[float, np.ndarray]:
        x = np.asarray(x, dtype=float)
        out = self.decision(self.normalize(np.atleast_2d(x))) * self.target_scale + self.target_mean
        return float(out[0]) if x.ndim == 1 else out

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "gamma": self.gamma,
            "bias": self.bias,
            "input_mean": self.input_mean.tolist(),
            "input_scale": self.input_scale.tolist(),
            "target_mean": self.target_mean,
            "target_scale": self.target_scale,
            "support_vectors": self.support_vectors.tolist(),
            "coefficients": self.coefficients.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvrModel":
        mean = np.asarray(d["input_mean"], dtype=float)
        sv = np.asarray(d["support_vectors"], dtype=float).reshape(-1, mean.shape[0])
        return cls(
            support_vectors=sv,
            coefficients=np.asarray(d["coefficients"], dtype=float),
            bias=float(d["bias"]),
            gamma=float(d["gamma"]),
            input_mean=mean,
            input_scale=np.asarray(d["input_scale"], dtype=float),
            target_mean=float(d["target_mean"]),
            target_scale=float(d["target_scale"]),
            target=d.get("target", ""),
        )


def rbf_kernel(a, b, gamma: float) -> float:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return math.exp(-gamma * float(d @ d))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-gamma * d2)


class _KernelColumns:
    """Dense Gram matrix when small enough, otherwise columns on demand."""

    DENSE_LIMIT = 4096

    def __init__(self, X: np.ndarray, gamma: float):
        self.X = X
        self.gamma = gamma
        self.dense = rbf_matrix(X, X, gamma) if X.shape[0] <= self.DENSE_LIMIT else None
        if self.dense is not None:
            np.fill_diagonal(self.dense, 1.0)
        self._sq = (X * X).sum(1)

    def column(self, i: int) -> np.ndarray:
        if self.dense is not None:
            return self.dense[:, i]
        d2 = self._sq + self._sq[i] - 2.0 * (self.X @ self.X[i])
        np.maximum(d2, 0.0, out=d2)
        col = np.exp(-self.gamma * d2)
        col[i] = 1.0
        return col


def _solve_smo(K: _KernelColumns, z: np.ndarray, C: float, eps: float, tol: float, max_iter: int):
    l = z.shape[0]
    y = np.concatenate([np.ones(l), -np.ones(l)])
    alpha = np.zeros(2 * l)
    G = np.concatenate([eps - z, eps + z])
    it = 0
    converged = False
    while it < max_iter:
        # maximal violating pair with second-order choice of the partner
        g = -y * G
        up = np.where(y > 0, alpha < C, alpha > 0)
        low = np.where(y > 0, alpha > 0, alpha < C)
        g_up = np.where(up, g, -np.inf)
        i = int(np.argmax(g_up))
        gmax = g_up[i]
        gmin = np.where(low, g, np.inf).min()
        if gmax - gmin < tol:
            converged = True
            break

        ii = i % l
        Ki = K.column(ii)
        Ki2 = np.concatenate([Ki, Ki])
        b = gmax - g
        # Q_ii + Q_tt - 2 y_i y_t Q_it with Q_st = y_s y_t K_st and K_tt = 1
        a = 2.0 - 2.0 * Ki2
        a = np.where(a > 0, a, TAU)
        cand = low & (b > 0)
        obj = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(obj))
        jj = j % l
        Kj = K.column(jj)

        yi, yj = y[i], y[j]
        Kij = Ki[jj]
        old_i, old_j = alpha[i], alpha[j]
        if yi != yj:
            quad = max(2.0 - 2.0 * Kij, TAU)
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = max(2.0 - 2.0 * Kij, TAU)
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        di = alpha[i] - old_i
        dj = alpha[j] - old_j
        w = (yi * di) * Ki + (yj * dj) * Kj
        G[:l] += w
        G[l:] -= w
        it += 1

    beta = alpha[:l] - alpha[l:]
    return beta, _bias(alpha, G, y, C), it, converged


def _bias(alpha, G, y, C) -> float:
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        return -float(yG[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    return -float((ub + lb) / 2)


def _check_inputs(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise InvalidInput(f"X has shape {X.shape} but y has {y.shape[0]} entries")
    if X.shape[0] < 1:
        raise InvalidInput("need at least one sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidInput("non-finite values in training data")
    return X, y


def svr_train(X, y, p: SvrParams = SvrParams(), target: str = "") -> SvrModel:
    """Fit on already-normalized inputs and targets (identity normalization is stored)."""
    X, y = _check_inputs(X, y)
    n, d = X.shape
    gamma = p.resolve_gamma(d)
    K = _KernelColumns(X, gamma)
    max_iter = p.max_passes * max(n, 1)
    beta, b, it, converged = _solve_smo(K, y, p.C, p.epsilon, p.tol, max_iter)
    if not converged:
        warnings.warn(f"SMO stopped after {it} updates without meeting tol={p.tol}",
                      ConvergenceWarning, stacklevel=2)
    keep = beta != 0
    return SvrModel(
        support_vectors=X[keep].copy(),
        coefficients=beta[keep].copy(),
        bias=b,
        gamma=gamma,
        input_mean=np.zeros(d),
        input_scale=np.ones(d),
        target=target,
        converged=converged,
        iterations=it,
    )


def fit_svr(X, y, p: SvrParams = SvrParams(), normalize_target: bool = True,
            target: str = "") -> SvrModel:
    """z-score the inputs (and optionally the target), then train."""
    X, y = _check_inputs(X, y)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[~(scale > 1e-12)] = 1.0
    if normalize_target:
        t_mean = float(y.mean())
        t_scale = float(y.std())
        if not t_scale > 1e-12:
            t_scale = 1.0
    else:
        t_mean, t_scale = 0.0, 1.0
    model = svr_train((X - mean) / scale, (y - t_mean) / t_scale, p, target=target)
    model.input_mean = mean
    model.input_scale = scale
    model.target_mean = t_mean
    model.target_scale = t_scale
    return model


def svr_predict(m: SvrModel, x) -> float:
    return m.predict(np.asarray(x, dtype=float).ravel())


def dual_objective(beta, K: np.ndarray, y, eps: float) -> float:
    beta = np.asarray(beta, dtype=float)
    return float(-0.5 * beta @ K @ beta - eps * np.abs(beta).sum() + np.asarray(y) @ beta)


def kkt_violations(model: SvrModel, X, y, C: float, eps: float) -> np.ndarray:
    """Per-sample violation of the epsilon-tube optimality conditions, normalized units.

    ``X`` and ``y`` are the normalized training data the model was fit on.
    Samples that are not support vectors carry beta = 0.
    """
    X, y = _check_inputs(X, y)
    f = model.decision(X)
    r = y - f
    beta = np.zeros(X.shape[0])
    if len(model.coefficients):
        # recover each sample's coefficient by matching stored rows
        lookup = {row.tobytes(): c for row, c in zip(model.support_vectors, model.coefficients)}
        beta = np.array([lookup.get(row.tobytes(), 0.0) for row in X])
    bound = C * (1 - 1e-12)
    v = np.empty_like(r)
    zero = beta == 0
    v[zero] = np.maximum(0.0, np.abs(r[zero]) - eps)
    pos_free = (beta > 0) & (beta < bound)
    v[pos_free] = np.abs(r[pos_free] - eps)
    neg_free = (beta < 0) & (beta > -bound)
    v[neg_free] = np.abs(r[neg_free] + eps)
    upper = beta >= bound
    v[upper] = np.maximum(0.0, eps - r[upper])
    lower = beta <= -bound
    v[lower] = np.maximum(0.0, r[lower] + eps)
    return v
