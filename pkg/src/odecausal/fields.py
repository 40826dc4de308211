"""Vector fields: the right-hand sides f(x, t) that drive every simulation.

A field of order 1 maps an n-vector state to its n-vector derivative.
A field of order 2 maps the concatenated (position, velocity) 2n-vector to
the n-vector of accelerations; `odecausal.solver.reduce_second_order` turns
it into an equivalent first-order field over 2n states.
"""

from __future__ import annotations

import numpy as np


class VectorField:
    """Base class for evaluatable dynamics.

    Attributes:
        dim: number of observed variables n.
        order: 1 for dx/dt = f(x, t), 2 for d2x/dt2 = f(x, dx/dt, t).

    Subclasses implement `__call__(u, t)` where `u` has length `input_dim`.
    Evaluation must be deterministic for fixed inputs.
    """

    dim: int
    order: int = 1

    @property
    def input_dim(self) -> int:
        return self.dim * self.order

    def __call__(self, u: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def _check_input(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.input_dim,):
            raise ValueError(
                f"field expects input of shape ({self.input_dim},), got {u.shape}"
            )
        return u


class FuncField(VectorField):
    """Wrap a plain callable `(u, t) -> du` as a first-order field."""

    def __init__(self, dim: int, fn, order: int = 1):
        self.dim = dim
        self.order = order
        self._fn = fn

    def __call__(self, u, t):
        return np.asarray(self._fn(u, t), dtype=float)


class LinearField(VectorField):
    """Autonomous affine system dx/dt = A x + b (homogeneous when b is None)."""

    def __init__(self, matrix: np.ndarray, bias: np.ndarray | None = None):
        A = np.asarray(matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        if not np.all(np.isfinite(A)):
            raise ValueError("matrix has non-finite entries")
        self.matrix = A
        self.bias = None if bias is None else np.asarray(bias, dtype=float)
        if self.bias is not None and self.bias.shape != (A.shape[0],):
            raise ValueError("bias length must match matrix dimension")
        self.dim = A.shape[0]
        self.order = 1

    def __call__(self, u, t):
        du = self.matrix @ u
        if self.bias is not None:
            du = du + self.bias
        return du


class SecondOrderLinearField(VectorField):
    """d2x/dt2 = Wv dx/dt + Wx x (+ b), taking the concatenated (x, v) as input."""

    def __init__(
        self,
        velocity_matrix: np.ndarray,
        position_matrix: np.ndarray,
        bias: np.ndarray | None = None,
    ):
        Wv = np.asarray(velocity_matrix, dtype=float)
        Wx = np.asarray(position_matrix, dtype=float)
        if Wv.shape != Wx.shape or Wv.ndim != 2 or Wv.shape[0] != Wv.shape[1]:
            raise ValueError("velocity and position matrices must be square and equal shape")
        self.velocity_matrix = Wv
        self.position_matrix = Wx
        self.bias = None if bias is None else np.asarray(bias, dtype=float)
        if self.bias is not None and self.bias.shape != (Wv.shape[0],):
            raise ValueError("bias length must match system dimension")
        self.dim = Wv.shape[0]
        self.order = 2

    def __call__(self, u, t):
        n = self.dim
        x, v = u[:n], u[n:]
        acc = self.velocity_matrix @ v + self.position_matrix @ x
        if self.bias is not None:
            acc = acc + self.bias
        return acc
