"""Lagged vector-autoregressive baseline with L1 sparsity and a smooth
acyclicity score on the instantaneous matrix.

This is a deliberately simple re-implementation of that family of
score-based Granger methods (fixed-weight penalties, plain Adam, no
augmented-Lagrangian schedule); outputs are labeled var-baseline to avoid
claiming fidelity to any particular tool.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from .solver import matrix_exponential
from .structure import CausalGraph
from .trajectory import Trajectory


@dataclass
class VarFitConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1000


@dataclass
class VarModel:
    """X(t) ~ sum_tau W[tau] X(t - tau); W[0] has a hard zero diagonal.

    matrices[tau][i][j] is the influence of X_j(t - tau) on X_i(t).
    """

    matrices: list
    lambda0: float
    lambda_rest: float
    mu: float
    objective_history: list = dc_field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.matrices) - 1

    @property
    def n(self) -> int:
        return self.matrices[0].shape[0]


def acyclicity(W: np.ndarray) -> float:
    """Smooth DAG-ness score: trace(expm(W * W)) - n; zero iff W is acyclic."""
    W = np.asarray(W, dtype=float)
    return float(np.trace(matrix_exponential(W * W)) - W.shape[0])


def _acyclicity_grad(W: np.ndarray) -> np.ndarray:
    return matrix_exponential(W * W).T * (2.0 * W)


def _uniform_grid(traj: Trajectory) -> np.ndarray:
    diffs = np.diff(traj.times)
    if np.allclose(diffs, diffs[0], rtol=1e-8, atol=1e-12):
        return traj.states
    warnings.warn(
        "var baseline needs a uniform grid; linearly interpolating the trajectory",
        stacklevel=3,
    )
    uniform_t = np.linspace(traj.times[0], traj.times[-1], len(traj))
    states = np.empty_like(traj.states)
    for j in range(traj.dim):
        states[:, j] = np.interp(uniform_t, traj.times, traj.states[:, j])
    return states


def fit_var(
    traj: Trajectory,
    k: int = 2,
    lambda0: float = 0.01,
    lambda_rest: float = 0.01,
    mu: float = 1.0,
    cfg: VarFitConfig | None = None,
) -> VarModel:
    """Adam on mean squared one-step residual + L1 terms + mu * acyclicity.

    The instantaneous matrix W[0] keeps a zero diagonal throughout so the
    trivial identity regression is excluded. Lag default k=2 lets the model
    express second-derivative information.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    cfg = cfg or VarFitConfig()
    states = _uniform_grid(traj)
    N, n = states.shape
    if N <= k + 1:
        raise ValueError(f"need more than k+1={k + 1} samples, got {N}")

    Y = states[k:]
    lagged = [states[k - tau: N - tau] for tau in range(k + 1)]
    S = Y.shape[0]
    diag = np.eye(n, dtype=bool)

    Ws = [np.zeros((n, n)) for _ in range(k + 1)]
    m = [np.zeros((n, n)) for _ in range(k + 1)]
    v = [np.zeros((n, n)) for _ in range(k + 1)]
    history = []
    for step in range(1, cfg.epochs + 1):
        R = Y.copy()
        for tau in range(k + 1):
            R -= lagged[tau] @ Ws[tau].T
        mse = float(np.mean(R * R))
        h = acyclicity(Ws[0])
        obj = (
            mse
            + lambda0 * float(np.abs(Ws[0]).sum())
            + lambda_rest * sum(float(np.abs(W).sum()) for W in Ws[1:])
            + mu * h
        )
        if not np.isfinite(obj):
            raise FloatingPointError(f"var fit diverged at epoch {step - 1}")
        history.append(obj)
        scale = -2.0 / (S * n)
        b1c = 1.0 - cfg.beta1 ** step
        b2c = 1.0 - cfg.beta2 ** step
        for tau in range(k + 1):
            g = scale * (R.T @ lagged[tau])
            lam = lambda0 if tau == 0 else lambda_rest
            g += lam * np.sign(Ws[tau])
            if tau == 0:
                g += mu * _acyclicity_grad(Ws[0])
                g[diag] = 0.0
            m[tau] = cfg.beta1 * m[tau] + (1 - cfg.beta1) * g
            v[tau] = cfg.beta2 * v[tau] + (1 - cfg.beta2) * g * g
            Ws[tau] -= cfg.lr * (m[tau] / b1c) / (np.sqrt(v[tau] / b2c) + cfg.eps)
        Ws[0][diag] = 0.0
    return VarModel(Ws, lambda0, lambda_rest, mu, history)


def var_to_graph(model: VarModel, epsilon: float = 0.05) -> CausalGraph:
    """Edge score = largest coefficient magnitude of (i, j) across all lags."""
    S = np.max(np.stack([np.abs(W) for W in model.matrices]), axis=0)
    return CausalGraph(S, epsilon)
