"""Fit a neural field to one observed trajectory.

The rollout integrates the field with fixed-step RK4 through all observed
times and the gradient is the exact reverse traversal of that unrolled
computation (discretize-then-optimize): no adjoint ODE, no approximation
beyond floating point. The training loss is the reconstruction MSE plus
lambda times the L1 path penalty.

Two rollout kernels share the same contract: a buffered layer-by-layer one
for nonlinear activations, and a collapsed affine one for linear activation
where the whole network is first folded into a single (A, c) pair. Their
gradients agree with finite differences either way.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import neural
from .fields import FuncField, VectorField
from .neural import NeuralField
from .solver import (
    GENERATION_CONFIG,
    DivergenceError,
    SolverConfig,
    reduce_second_order,
    solve_ivp,
)
from .trajectory import Trajectory

_DIVERGENCE_LIMIT = 1e12


class TrainingDivergedError(RuntimeError):
    """Rollout blew up or a gradient went non-finite; carries the epoch."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lam: float = 0.01
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 2000
    h_train: float | None = None  # None: min observed spacing / 4
    normalization: str | None = None  # None: affine, or maxabs for cube features
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.normalization not in (None, "affine", "maxabs", "none"):
            raise ValueError("normalization must be affine, maxabs, none, or None for auto")


@dataclass
class ArchSpec:
    """Network layout: hidden widths, activation, system order, input features.

    hidden=None picks two hidden layers whose width grows with the number of
    variables (20 up to n=10, 50 up to n=20, 100 beyond).
    """

    hidden: tuple | None = None
    activation: str = "elu"
    order: int = 1
    input_features: str = "identity"
    velocity_hidden: int = 20


def default_hidden_width(n: int) -> int:
    if n <= 10:
        return 20
    if n <= 20:
        return 50
    return 100


@dataclass
class TrainReport:
    """Entry k of the loss lists is measured at the parameters entering epoch k."""

    data_losses: list
    penalties: list
    seconds: float
    field: NeuralField
    normalization: "Normalization"

    @property
    def final_data_loss(self) -> float:
        return self.data_losses[-1]


@dataclass
class Normalization:
    """Per-variable affine map into training space: encoded = (x - offset)/scale."""

    kind: str
    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, states: np.ndarray, kind: str) -> "Normalization":
        states = np.asarray(states, dtype=float)
        n = states.shape[1]
        if kind == "none":
            return cls("none", np.zeros(n), np.ones(n))
        if kind == "affine":
            lo = states.min(axis=0)
            scale = states.max(axis=0) - lo
        elif kind == "maxabs":
            lo = np.zeros(n)
            scale = np.abs(states).max(axis=0)
        else:
            raise ValueError(f"unknown normalization kind {kind!r}")
        scale = np.where(scale < 1e-12, 1.0, scale)
        return cls(kind, lo, scale)

    def encode(self, states: np.ndarray) -> np.ndarray:
        return (states - self.offset) / self.scale

    def decode(self, states: np.ndarray) -> np.ndarray:
        return states * self.scale + self.offset

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "offset": self.offset.tolist(),
            "scale": self.scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(d["kind"], np.asarray(d["offset"], float), np.asarray(d["scale"], float))


class Adam:
    """Plain Adam updating parameter arrays in place."""

    def __init__(self, params: list, lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _substep_schedule(times: np.ndarray, h: float) -> list:
    sched = []
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        nsub = max(1, math.ceil(dt / h - 1e-12))
        sched.append((nsub, dt / nsub))
    return sched


def _check_row(y: np.ndarray, t_last_valid: float):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > _DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"rollout diverged after t={t_last_valid:.6g}", last_time=t_last_valid
        )


# ---------------------------------------------------------------------------
# Collapsed affine kernel (linear activation): the network is exactly the
# single affine map feats -> A feats + c, so each RK4 stage is one matvec and
# its VJP another; per-layer gradients are recovered by backpropagating
# (dA, dc) through the layer-folding recursion afterwards.
# ---------------------------------------------------------------------------

def _collapse(field: NeuralField):
    d_in = field.weights[0].shape[1]
    Ps = [np.eye(d_in)]
    qs = [np.zeros(d_in)]
    for W, b in zip(field.weights, field.biases):
        Ps.append(W @ Ps[-1])
        qs.append(W @ qs[-1] + b)
    return Ps, qs


def _collapse_backward(field: NeuralField, Ps, qs, dA, dc):
    grads = [None] * (2 * len(field.weights))
    for l in range(len(field.weights) - 1, -1, -1):
        grads[2 * l] = dA @ Ps[l].T + np.outer(dc, qs[l])
        grads[2 * l + 1] = dc.copy()
        dA = field.weights[l].T @ dA
        dc = field.weights[l].T @ dc
    return grads


def _rollout_affine(field: NeuralField, y0: np.ndarray, times: np.ndarray, sched: list):
    n = field.dim
    order2 = field.order == 2
    cube = field.input_features == "cube"
    Ps, qs = _collapse(field)
    A, c = Ps[-1], qs[-1]
    AT = A.T
    d = y0.size
    S = sum(ns for ns, _ in sched)
    stage_u = np.empty((4 * S, d))
    states = np.empty((len(times), d))
    states[0] = y0

    def f_stage(u):
        acc = A @ (u * u * u if cube else u) + c
        if not order2:
            return acc
        k = np.empty(d)
        k[:n] = u[n:]
        k[n:] = acc
        return k

    y = y0.astype(float).copy()
    si = 0
    for idx, (nsub, hs) in enumerate(sched):
        for _ in range(nsub):
            k1 = f_stage(y)
            u2 = y + (0.5 * hs) * k1
            k2 = f_stage(u2)
            u3 = y + (0.5 * hs) * k2
            k3 = f_stage(u3)
            u4 = y + hs * k3
            k4 = f_stage(u4)
            stage_u[si] = y
            stage_u[si + 1] = u2
            stage_u[si + 2] = u3
            stage_u[si + 3] = u4
            si += 4
            y = y + (hs / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        _check_row(y, times[idx])
        states[idx + 1] = y

    def backward(G):
        G = np.asarray(G, dtype=float)
        cots = np.empty((4 * S, n if order2 else d))
        g = G[-1].copy()
        si = 4 * S

        def stage_vjp(u, w, row):
            if order2:
                wv = w[n:]
                cots[row] = wv
                iu = AT @ wv
                if cube:
                    iu = iu * (3.0 * u * u)
                iu[n:] += w[:n]
                return iu
            cots[row] = w
            iu = AT @ w
            if cube:
                iu = iu * (3.0 * u * u)
            return iu

        for k in range(len(sched) - 1, -1, -1):
            nsub, hs = sched[k]
            for _ in range(nsub):
                si -= 4
                u1, u2, u3, u4 = stage_u[si], stage_u[si + 1], stage_u[si + 2], stage_u[si + 3]
                gk4 = (hs / 6.0) * g
                i4 = stage_vjp(u4, gk4, si + 3)
                gk3 = (hs / 3.0) * g + hs * i4
                i3 = stage_vjp(u3, gk3, si + 2)
                gk2 = (hs / 3.0) * g + (0.5 * hs) * i3
                i2 = stage_vjp(u2, gk2, si + 1)
                gk1 = (hs / 6.0) * g + (0.5 * hs) * i2
                i1 = stage_vjp(u1, gk1, si)
                g = g + i1 + i2 + i3 + i4
            g = g + G[k]
        feats = stage_u * stage_u * stage_u if cube else stage_u
        dA = cots.T @ feats
        dc = cots.sum(axis=0)
        return _collapse_backward(field, Ps, qs, dA, dc), g

    return states, backward


# ---------------------------------------------------------------------------
# General kernel (tanh/elu): per-stage layer activations and pre-activations
# go into flat buffers so the reverse sweep stays allocation-free and the
# weight gradients reduce to one matmul per layer at the end.
# ---------------------------------------------------------------------------

def _rollout_general(field: NeuralField, y0: np.ndarray, times: np.ndarray, sched: list):
    n = field.dim
    order2 = field.order == 2
    cube = field.input_features == "cube"
    act = field.activation
    Ws, bs = field.weights, field.biases
    L = len(Ws)
    d = y0.size
    S = sum(ns for ns, _ in sched)
    rows = 4 * S

    layer_in = [np.empty((rows, W.shape[1])) for W in Ws]
    preact = [np.empty((rows, W.shape[0])) for W in Ws[:-1]]
    raw_u = np.empty((rows, d)) if cube else None
    states = np.empty((len(times), d))
    states[0] = y0

    row = 0

    def f_stage(u):
        nonlocal row
        a = u * u * u if cube else u
        if cube:
            raw_u[row] = u
        for l in range(L):
            layer_in[l][row] = a
            z = Ws[l] @ a + bs[l]
            if l < L - 1:
                preact[l][row] = z
                a = neural._act(z, act)
            else:
                a = z
        row += 1
        if not order2:
            return a
        k = np.empty(d)
        k[:n] = u[n:]
        k[n:] = a
        return k

    y = y0.astype(float).copy()
    for idx, (nsub, hs) in enumerate(sched):
        for _ in range(nsub):
            k1 = f_stage(y)
            k2 = f_stage(y + (0.5 * hs) * k1)
            k3 = f_stage(y + (0.5 * hs) * k2)
            k4 = f_stage(y + hs * k3)
            y = y + (hs / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        _check_row(y, times[idx])
        states[idx + 1] = y

    def backward(G):
        G = np.asarray(G, dtype=float)
        dz_buf = [np.empty((rows, W.shape[0])) for W in Ws]
        g = G[-1].copy()
        si = rows

        def stage_vjp(row):
            # consumes the current stage cotangent in `w`, returns input cotangent
            gl = w[n:] if order2 else w
            for l in range(L - 1, -1, -1):
                if l < L - 1:
                    gl = gl * neural._act_deriv(preact[l][row], layer_in[l + 1][row], act)
                dz_buf[l][row] = gl
                gl = Ws[l].T @ gl
            if cube:
                u = raw_u[row]
                gl = gl * (3.0 * u * u)
            if order2:
                gl[n:] += w[:n]
            return gl

        for k in range(len(sched) - 1, -1, -1):
            nsub, hs = sched[k]
            for _ in range(nsub):
                si -= 4
                w = (hs / 6.0) * g
                i4 = stage_vjp(si + 3)
                w = (hs / 3.0) * g + hs * i4
                i3 = stage_vjp(si + 2)
                w = (hs / 3.0) * g + (0.5 * hs) * i3
                i2 = stage_vjp(si + 1)
                w = (hs / 6.0) * g + (0.5 * hs) * i2
                i1 = stage_vjp(si)
                g = g + i1 + i2 + i3 + i4
            g = g + G[k]
        grads = [None] * (2 * L)
        for l in range(L):
            grads[2 * l] = dz_buf[l].T @ layer_in[l]
            grads[2 * l + 1] = dz_buf[l].sum(axis=0)
        return grads, g

    return states, backward


def rollout(
    field: NeuralField,
    x0: np.ndarray,
    times: np.ndarray,
    h_train: float,
    collapse: bool | None = None,
):
    """Fixed-step RK4 rollout with an exact backprop closure.

    Each observed interval is split into ceil(dt/h_train) equal substeps.
    The closure maps a cotangent array of the trajectory's shape to
    (gradients for this field's own parameters, cotangent of the initial
    state). `collapse` overrides the automatic linear-activation fast path
    (used for cross-checking the two kernels).
    """
    times = np.asarray(times, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValueError("times must be a non-empty 1-d array")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("times must be strictly increasing")
    if x0.shape != (field.input_dim,):
        raise ValueError(f"x0 shape {x0.shape} does not match field input ({field.input_dim},)")
    if h_train <= 0:
        raise ValueError("h_train must be positive")
    sched = _substep_schedule(times, h_train)
    use_affine = field.activation == "linear" if collapse is None else collapse
    if use_affine and field.activation != "linear":
        raise ValueError("collapsed rollout requires linear activation")
    kernel = _rollout_affine if use_affine else _rollout_general
    states, backward = kernel(field, x0, times, sched)
    return Trajectory(times, states), backward


def estimate_initial_velocity(observed: Trajectory, velocity_net: NeuralField) -> np.ndarray:
    """Velocity-net estimate of the unobserved initial velocity.

    Evaluated at the first observed row, in whatever space that row lives in
    (train feeds the normalized row; gradients flow through the rollout loss).
    """
    if len(observed) < 2:
        raise ValueError("need at least 2 observations")
    out, _ = neural.forward(velocity_net, observed.states[0])
    return out


def default_h_train(times: np.ndarray) -> float:
    return float(np.min(np.diff(times))) / 4.0


def train(
    observed: Trajectory, arch: ArchSpec, cfg: TrainConfig
) -> tuple[NeuralField, TrainReport]:
    """Full-batch Adam on MSE(rollout, observations) + lam * L1 path penalty.

    The rollout always starts from the first observed row (second-order
    models prepend the velocity net's estimate). Deterministic for fixed
    (data, arch, cfg): the loss sequence is bit-reproducible on one platform.
    """
    if len(observed) < 2:
        raise ValueError("need at least 2 observations to train")
    n = observed.dim
    norm_kind = cfg.normalization
    if norm_kind is None:
        norm_kind = "maxabs" if arch.input_features == "cube" else "affine"
    norm = Normalization.fit(observed.states, norm_kind)
    target = norm.encode(observed.states)

    hidden = arch.hidden if arch.hidden is not None else (default_hidden_width(n),) * 2
    sizes = [n * arch.order, *hidden, n]
    field = neural.init_field(
        sizes,
        arch.activation,
        np.random.default_rng(cfg.seed),
        order=arch.order,
        input_features=arch.input_features,
        with_velocity_net=arch.order == 2,
        velocity_hidden=arch.velocity_hidden,
    )
    params = field.param_list()
    own = 2 * len(field.weights)
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    h = cfg.h_train if cfg.h_train is not None else default_h_train(observed.times)

    data_losses: list = []
    penalties: list = []
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        try:
            if arch.order == 2:
                v0, vel_tape = neural.forward(field.velocity_net, target[0])
                y0 = np.concatenate([target[0], v0])
            else:
                y0 = target[0]
            traj, closure = rollout(field, y0, observed.times, h)
            pos = traj.states[:, :n]
            resid = pos - target
            data_loss = float(np.mean(resid * resid))
            penalty, pen_grads = neural.l1_path_penalty(field)
            if not np.isfinite(data_loss):
                raise TrainingDivergedError("non-finite loss", epoch)
            G = np.zeros_like(traj.states)
            G[:, :n] = (2.0 / resid.size) * resid
            grads, g0 = closure(G)
            if cfg.lam != 0.0:
                for i in range(own):
                    grads[i] = grads[i] + cfg.lam * pen_grads[i]
            if arch.order == 2:
                vel_grads, _ = neural.vjp(field.velocity_net, vel_tape, g0[n:])
                grads = grads + vel_grads
            for g in grads:
                if not np.all(np.isfinite(g)):
                    raise TrainingDivergedError("non-finite gradient", epoch)
        except DivergenceError as err:
            raise TrainingDivergedError(str(err), epoch) from err
        data_losses.append(data_loss)
        penalties.append(penalty)
        opt.step(grads)
    seconds = time.perf_counter() - t_start
    return field, TrainReport(data_losses, penalties, seconds, field, norm)


def predict(
    field: NeuralField,
    x0: np.ndarray,
    times: np.ndarray,
    v0: np.ndarray | None = None,
    cfg: SolverConfig | None = None,
) -> Trajectory:
    """Adaptive dopri5 prediction at arbitrary query times.

    Inputs and outputs live in the field's own (training) space. Second-order
    fields return the position block; v0 defaults to the velocity net's
    estimate of the initial velocity.
    """
    cfg = cfg or GENERATION_CONFIG
    x0 = np.asarray(x0, dtype=float)
    if field.order == 2:
        if v0 is None:
            if field.velocity_net is None:
                raise ValueError("second-order prediction needs v0 or a velocity net")
            v0, _ = neural.forward(field.velocity_net, x0)
        reduced, y0 = reduce_second_order(field, x0, v0)
        full = solve_ivp(reduced, y0, times, cfg)
        return Trajectory(full.times, full.states[:, : field.dim])
    return solve_ivp(field, x0, times, cfg)


def denormalized_field(field: NeuralField, norm: Normalization) -> VectorField:
    """View the learned normalized-space dynamics in original data units."""
    n = field.dim
    scale, offset = norm.scale, norm.offset

    if field.order == 1:
        def fn(x, t):
            return scale * field((x - offset) / scale, t)
        return FuncField(n, fn, order=1)

    def fn2(u, t):
        xn = (u[:n] - offset) / scale
        vn = u[n:] / scale
        return scale * field(np.concatenate([xn, vn]), t)

    return FuncField(n, fn2, order=2)


def path_matrix_original_units(field: NeuralField, norm: Normalization) -> np.ndarray:
    """Rescale the path matrix from normalized training space to data units.

    Row i is scaled by scale_i; column j is divided by scale_j (or scale_j^3
    for cubic input features). Second-order fields scale both blocks the
    same way since positions and velocities share per-variable scales.
    """
    A = neural.path_matrix(field)
    col_scale = np.tile(norm.scale, field.order)
    if field.input_features == "cube":
        col_scale = col_scale ** 3
    return A * norm.scale[:, None] / col_scale[None, :]


def affine_view_original_units(
    field: NeuralField, norm: Normalization
) -> tuple[np.ndarray, np.ndarray]:
    """Exact (A, b) of a linear-activation, identity-feature field in data units.

    For order 1 this is dx/dt = A x + b. For order 2 the returned matrix is
    the n x 2n block (d2x/dt2 = A @ (x, v) + b).
    """
    if field.activation != "linear" or field.input_features != "identity":
        raise ValueError("affine view requires linear activation and identity features")
    Ps, qs = _collapse(field)
    A_n, c_n = Ps[-1], qs[-1]
    A = A_n * norm.scale[:, None] / np.tile(norm.scale, field.order)[None, :]
    # offsets enter only through the position columns
    full_offset = np.concatenate([norm.offset, np.zeros(field.dim)]) if field.order == 2 else norm.offset
    b = norm.scale * c_n - A @ full_offset
    return A, b


def checkpoint_dict(field: NeuralField, norm: Normalization, cfg: TrainConfig) -> dict:
    snap = neural.to_dict(field)
    snap["normalization"] = norm.to_dict()
    snap["train_config"] = asdict(cfg)
    return snap


def checkpoint_from_dict(snap: dict) -> tuple[NeuralField, Normalization, TrainConfig]:
    field = neural.from_dict(snap)
    norm = Normalization.from_dict(snap["normalization"])
    cfg = TrainConfig(**snap["train_config"])
    return field, norm, cfg
