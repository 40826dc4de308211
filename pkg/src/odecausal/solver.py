"""Explicit IVP integration: fixed-step RK4 and adaptive Dormand-Prince 5(4).

Also provides the second-order -> first-order reduction and a
scaled-and-squared matrix exponential used as the analytic oracle for
linear systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import LinearField, VectorField
from .trajectory import Trajectory

# Any state component beyond this magnitude is treated as divergence.
DIVERGENCE_LIMIT = 1e12

# Dormand-Prince 5(4) tableau. Row k of A_DP holds the coefficients that
# combine stages 0..k-1; B5 propagates the 5th-order solution, ERR = b5 - b4
# gives the embedded error estimate.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_ERR = np.array(
    [71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]
)
# Dense-output correction weights for the quartic interpolant.
_DP_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)


class IntegrationError(RuntimeError):
    """Base class for solver failures; carries the last time that was still valid."""

    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = last_time


class DivergenceError(IntegrationError):
    pass


class MaxStepsError(IntegrationError):
    pass


@dataclass
class SolverConfig:
    """Integration settings.

    method "rk4" uses fixed substeps of size <= h per output interval;
    "dopri5" adapts its step against (rtol, atol) and never takes more
    than max_steps accepted+rejected steps.
    """

    method: str = "dopri5"
    h: float = 0.01
    rtol: float = 1e-7
    atol: float = 1e-9
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in ("rk4", "dopri5"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


# Default configs: data generation must out-precision training rollouts.
GENERATION_CONFIG = SolverConfig(method="dopri5", rtol=1e-7, atol=1e-9)
TRAINING_CONFIG = SolverConfig(method="dopri5", rtol=1e-5, atol=1e-7)


def _check_state(y: np.ndarray, t_last_valid: float):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > DIVERGENCE_LIMIT:
        raise DivergenceError(
            f"state diverged after t={t_last_valid:.6g}", last_time=t_last_valid
        )


def _rk4_step(fn, y, t, h):
    k1 = fn(y, t)
    k2 = fn(y + 0.5 * h * k1, t + 0.5 * h)
    k3 = fn(y + 0.5 * h * k2, t + 0.5 * h)
    k4 = fn(y + h * k3, t + h)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _solve_rk4(field, x0, times, h):
    out = np.empty((len(times), x0.size))
    out[0] = x0
    y = x0.copy()
    for k in range(len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        nsub = max(1, math.ceil((t1 - t0) / h - 1e-12))
        hs = (t1 - t0) / nsub
        t = t0
        for _ in range(nsub):
            y = _rk4_step(field, y, t, hs)
            _check_state(y, t)
            t += hs
        out[k + 1] = y
    return out


def _dense_coeffs(h, y0, y1, k):
    """Quartic Hermite-type interpolant over one accepted step.

    Matches the states and derivatives at both step endpoints; the fifth
    coefficient is the stage combination that restores the method's own
    interpolation order in the interior.
    """
    ydiff = y1 - y0
    bspl = h * k[0] - ydiff
    return (
        y0,
        ydiff,
        bspl,
        ydiff - h * k[6] - bspl,
        h * (_DP_D @ k),
    )


def _dense_eval(coeffs, t, t0, t1):
    s = (t - t0) / (t1 - t0)
    s1 = 1.0 - s
    c0, c1, c2, c3, c4 = coeffs
    return c0 + s * (c1 + s1 * (c2 + s * (c3 + s1 * c4)))


def _solve_dopri5(field, x0, times, rtol, atol, max_steps):
    t_end = times[-1]
    out = np.empty((len(times), x0.size))
    out[0] = x0
    next_out = 1
    if next_out == len(times):
        return out

    t = times[0]
    y = x0.copy()
    f = field(y, t)

    # Initial step from the classic rule of thumb on the scaled derivative.
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f / scale) ** 2))
    h = 1e-6 if d1 < 1e-10 else 0.01 * d0 / d1
    h = min(max(h, 1e-10), t_end - t)

    k = np.empty((7, x0.size))
    nsteps = 0
    while t < t_end:
        if nsteps >= max_steps:
            raise MaxStepsError(
                f"exceeded {max_steps} steps at t={t:.6g}", last_time=t
            )
        nsteps += 1
        h = min(h, t_end - t)

        k[0] = f
        for i in range(1, 7):
            yi = y + h * (_DP_A[i] @ k[:i])
            k[i] = field(yi, t + _DP_C[i] * h)
        y_new = y + h * (_DP_B5 @ k)
        err_vec = h * (_DP_ERR @ k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))

        if err <= 1.0 or not np.isfinite(err):
            t_new = t + h
            _check_state(y_new, t)
            # Emit all requested outputs inside the accepted step.
            coeffs = None
            while next_out < len(times) and times[next_out] <= t_new + 1e-14:
                tq = times[next_out]
                if tq >= t_new:
                    out[next_out] = y_new
                else:
                    if coeffs is None:
                        coeffs = _dense_coeffs(h, y, y_new, k)
                    out[next_out] = _dense_eval(coeffs, tq, t, t_new)
                next_out += 1
            # FSAL: the last stage is f(t_new, y_new); copy it out of the
            # stage buffer so a later rejected trial cannot corrupt it.
            t, y, f = t_new, y_new, k[6].copy()
            if next_out == len(times):
                break
            factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            factor = max(0.2, 0.9 * err ** -0.2)
        h *= factor
    return out


def solve_ivp(
    field: VectorField,
    x0: np.ndarray,
    times: np.ndarray,
    cfg: SolverConfig | None = None,
) -> Trajectory:
    """Integrate dx/dt = field(x, t) through the given output times.

    The first output row is x0 exactly. Raises DivergenceError when the
    state exceeds the divergence guard, MaxStepsError when dopri5 stalls.
    """
    cfg = cfg or GENERATION_CONFIG
    times = np.asarray(times, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValueError("times must be a non-empty 1-d array")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("times must be strictly increasing")
    if field.order != 1:
        raise ValueError("solve_ivp handles first-order fields; reduce higher orders first")
    if x0.shape != (field.input_dim,):
        raise ValueError(
            f"x0 has shape {x0.shape}, field expects ({field.input_dim},)"
        )

    if cfg.method == "rk4":
        states = _solve_rk4(field, x0, times, cfg.h)
    else:
        states = _solve_dopri5(field, x0, times, cfg.rtol, cfg.atol, cfg.max_steps)
    return Trajectory(times, states)


class _ReducedField(VectorField):
    def __init__(self, inner: VectorField):
        self.inner = inner
        self.dim = 2 * inner.dim
        self.order = 1

    def __call__(self, u, t):
        n = self.inner.dim
        du = np.empty_like(u)
        du[:n] = u[n:]
        du[n:] = self.inner(u, t)
        return du


def reduce_second_order(
    field: VectorField, x0: np.ndarray, v0: np.ndarray
) -> tuple[VectorField, np.ndarray]:
    """Rewrite d2x/dt2 = f(x, v, t) as a first-order system over (x, v).

    Returns the 2n-dimensional field and the stacked initial state (x0, v0).
    The first n components of its solution are the positions, the last n the
    velocities.
    """
    if field.order != 2:
        raise ValueError("reduce_second_order requires a second-order field")
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if x0.shape != (field.dim,) or v0.shape != (field.dim,):
        raise ValueError("x0 and v0 must both have the field's dimension")
    return _ReducedField(field), np.concatenate([x0, v0])


def matrix_exponential(M: np.ndarray) -> np.ndarray:
    """exp(M) by scaling-and-squaring around an 18-term Taylor series.

    M is halved until its 1-norm drops below 0.5, the series is summed by
    Horner's rule, and the result squared back up.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    n = M.shape[0]
    norm = np.linalg.norm(M, 1)
    nsquare = 0 if norm <= 0.5 else max(0, math.ceil(math.log2(norm / 0.5)))
    S = M / (2.0 ** nsquare)
    E = np.eye(n) / math.factorial(18)
    for i in range(17, -1, -1):
        E = S @ E + np.eye(n) / math.factorial(i)
    for _ in range(nsquare):
        E = E @ E
    return E


def matrix_exponential_solution(
    A: np.ndarray, x0: np.ndarray, times: np.ndarray
) -> Trajectory:
    """Analytic solution of dx/dt = A x: row k is expm(A * times[k]) @ x0."""
    A = np.asarray(A, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    times = np.asarray(times, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if x0.shape != (A.shape[0],):
        raise ValueError("x0 dimension must match A")
    t0 = times[0]
    states = np.empty((times.size, x0.size))
    for k, t in enumerate(times):
        states[k] = matrix_exponential(A * (t - t0)) @ x0
    return Trajectory(times, states)


def linear_field(A: np.ndarray, bias: np.ndarray | None = None) -> LinearField:
    """Convenience constructor for dx/dt = A x + b."""
    return LinearField(A, bias)
