"""Fully connected field f_theta with explicit forward/reverse passes.

Everything here is plain numpy: forward evaluation records a Tape of
intermediates, and the reverse sweep turns an output cotangent into
parameter gradients and an input cotangent. The product of all weight
matrices (the "path matrix") doubles as the sparsity surrogate: its
element-wise L1 norm is the training penalty, and a zero entry certifies
that the corresponding input cannot influence the corresponding output.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .fields import VectorField

ACTIVATIONS = ("linear", "tanh", "elu")
INPUT_FEATURES = ("identity", "cube")


class TapeMismatchError(ValueError):
    """Tape was produced by a field with different parameter shapes."""


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return z
    if kind == "tanh":
        return np.tanh(z)
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(z))
    raise ValueError(f"unknown activation {kind!r}")


def _act_deriv(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    # a is the already-computed activation value at z.
    if kind == "linear":
        return np.ones_like(z)
    if kind == "tanh":
        return 1.0 - a * a
    if kind == "elu":
        return np.where(z > 0, 1.0, a + 1.0)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class NeuralField(VectorField):
    """Layered affine field: out = W[-1] s(... s(W[0] feat(y) + b[0]) ...) + b[-1].

    weights[l] has shape (width_out, width_in); the hidden nonlinearity is
    applied after every layer except the last. order=2 fields take the
    concatenated (position, velocity) vector and emit accelerations; the
    optional velocity_net (its own first-order NeuralField) estimates the
    unobserved initial velocity from the first observation.
    """

    weights: list
    biases: list
    activation: str = "elu"
    order: int = 1
    input_features: str = "identity"
    velocity_net: "NeuralField | None" = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.input_features not in INPUT_FEATURES:
            raise ValueError(f"input_features must be one of {INPUT_FEATURES}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ValueError(f"layer {l}: bias shape {b.shape} vs weight {W.shape}")
            if l > 0 and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l} input width does not match layer {l-1} output")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")
        self.dim = self.weights[-1].shape[0]
        if self.weights[0].shape[1] != self.dim * self.order:
            raise ValueError(
                f"first layer expects width {self.weights[0].shape[1]}, "
                f"but order={self.order} over {self.dim} variables needs {self.dim * self.order}"
            )

    def __call__(self, u, t=0.0):
        out, _ = forward(self, u)
        return out

    def param_list(self) -> list:
        """Flat parameter order: W0, b0, W1, b1, ..., then the velocity net's."""
        params = []
        for W, b in zip(self.weights, self.biases):
            params.extend((W, b))
        if self.velocity_net is not None:
            params.extend(self.velocity_net.param_list())
        return params

    def copy(self) -> "NeuralField":
        return NeuralField(
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.order,
            self.input_features,
            None if self.velocity_net is None else self.velocity_net.copy(),
        )


@dataclass
class Tape:
    """Forward intermediates: layer inputs and pre-activations.

    inputs[0] is the feature vector fed to layer 0; raw_input is the state
    before the feature transform (needed for the cube chain rule).
    """

    raw_input: np.ndarray
    inputs: list = dc_field(default_factory=list)
    preacts: list = dc_field(default_factory=list)


def init_field(
    layer_sizes: list[int],
    activation: str = "elu",
    seed: int | np.random.Generator = 0,
    order: int = 1,
    input_features: str = "identity",
    with_velocity_net: bool = False,
    velocity_hidden: int = 20,
) -> NeuralField:
    """Random field with weights uniform in +-1/sqrt(fan_in), zero biases.

    layer_sizes runs input width .. output width, e.g. [2, 20, 20, 2].
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    for w_in, w_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(w_in)
        weights.append(rng.uniform(-bound, bound, size=(w_out, w_in)))
        biases.append(np.zeros(w_out))
    velocity_net = None
    if with_velocity_net:
        n = layer_sizes[-1]
        velocity_net = init_field(
            [n, velocity_hidden, velocity_hidden, n], "tanh", rng
        )
    return NeuralField(weights, biases, activation, order, input_features, velocity_net)


def apply_features(y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "identity":
        return y
    return y ** 3


def feature_chain(y: np.ndarray, cotangent: np.ndarray, kind: str) -> np.ndarray:
    """Pull an input-feature cotangent back to the raw input."""
    if kind == "identity":
        return cotangent
    return 3.0 * y * y * cotangent


def forward(field: NeuralField, y: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Evaluate the field and record the tape for a later reverse sweep."""
    y = np.asarray(y, dtype=float)
    if y.shape != (field.weights[0].shape[1],):
        raise ValueError(
            f"input has shape {y.shape}, field expects ({field.weights[0].shape[1]},)"
        )
    tape = Tape(raw_input=y)
    a = apply_features(y, field.input_features)
    last = len(field.weights) - 1
    for l, (W, b) in enumerate(zip(field.weights, field.biases)):
        tape.inputs.append(a)
        z = W @ a + b
        tape.preacts.append(z)
        a = z if l == last else _act(z, field.activation)
    return a, tape


def _check_tape(field: NeuralField, tape: Tape):
    if len(tape.inputs) != len(field.weights):
        raise TapeMismatchError("tape layer count does not match field")
    for l, W in enumerate(field.weights):
        if tape.inputs[l].shape != (W.shape[1],) or tape.preacts[l].shape != (W.shape[0],):
            raise TapeMismatchError(f"tape shapes stale at layer {l}")


def vjp(
    field: NeuralField, tape: Tape, cotangent: np.ndarray
) -> tuple[list, np.ndarray]:
    """Reverse sweep: returns (parameter gradients, raw-input cotangent).

    Gradients follow param_list order for this field (velocity net excluded).
    """
    _check_tape(field, tape)
    g = np.asarray(cotangent, dtype=float)
    L = len(field.weights)
    grads: list = [None] * (2 * L)
    for l in range(L - 1, -1, -1):
        if l != L - 1:
            g = g * _act_deriv(tape.preacts[l], tape.inputs[l + 1], field.activation)
        grads[2 * l] = np.outer(g, tape.inputs[l])
        grads[2 * l + 1] = g.copy()
        g = field.weights[l].T @ g
    g = feature_chain(tape.raw_input, g, field.input_features)
    return grads, g


def grad_params(field: NeuralField, tape: Tape, cotangent: np.ndarray) -> list:
    """Gradient of <cotangent, field(y)> with respect to the parameters."""
    grads, _ = vjp(field, tape, cotangent)
    return grads


def input_jacobian(field: NeuralField, y: np.ndarray) -> np.ndarray:
    """Exact Jacobian d out_i / d y_j via one batched reverse sweep per output."""
    out, tape = forward(field, y)
    L = len(field.weights)
    G = np.eye(out.size)
    for l in range(L - 1, -1, -1):
        if l != L - 1:
            G = G * _act_deriv(tape.preacts[l], tape.inputs[l + 1], field.activation)[None, :]
        G = G @ field.weights[l]
    if field.input_features == "cube":
        G = G * (3.0 * tape.raw_input * tape.raw_input)[None, :]
    return G


def path_matrix(field: NeuralField) -> np.ndarray:
    """Product of all weight matrices, last to first; biases ignored."""
    A = field.weights[0]
    for W in field.weights[1:]:
        A = W @ A
    return A


def l1_path_penalty(field: NeuralField) -> tuple[float, list]:
    """Element-wise L1 norm of the path matrix and its parameter gradient.

    The subgradient of |x| at 0 is taken as 0, so exact zeros stay put.
    Gradients follow param_list order; bias entries are zero.
    """
    L = len(field.weights)
    below = [None] * L  # product of weights strictly below layer l
    P = np.eye(field.weights[0].shape[1])
    for l in range(L):
        below[l] = P
        P = field.weights[l] @ P
    A = P
    S = np.sign(A)
    grads: list = [None] * (2 * L)
    above = np.eye(A.shape[0])  # product of weights strictly above layer l
    for l in range(L - 1, -1, -1):
        grads[2 * l] = above.T @ S @ below[l].T
        grads[2 * l + 1] = np.zeros_like(field.biases[l])
        above = above @ field.weights[l]
    return float(np.abs(A).sum()), grads


def to_dict(field: NeuralField) -> dict:
    """JSON-ready snapshot: shapes, row-major weights, biases, tags."""
    layers = []
    for W, b in zip(field.weights, field.biases):
        layers.append(
            {
                "shape": list(W.shape),
                "weight": W.ravel(order="C").tolist(),
                "bias": b.tolist(),
            }
        )
    snap = {
        "layers": layers,
        "activation": field.activation,
        "order": field.order,
        "input_features": field.input_features,
    }
    if field.velocity_net is not None:
        snap["velocity_net"] = to_dict(field.velocity_net)
    return snap


def from_dict(snap: dict) -> NeuralField:
    weights, biases = [], []
    for layer in snap["layers"]:
        rows, cols = layer["shape"]
        weights.append(np.asarray(layer["weight"], dtype=float).reshape(rows, cols))
        biases.append(np.asarray(layer["bias"], dtype=float))
    velocity_net = None
    if snap.get("velocity_net") is not None:
        velocity_net = from_dict(snap["velocity_net"])
    return NeuralField(
        weights,
        biases,
        snap["activation"],
        snap.get("order", 1),
        snap.get("input_features", "identity"),
        velocity_net,
    )
