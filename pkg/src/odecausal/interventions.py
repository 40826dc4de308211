"""Variable and system interventions on analytic and learned fields.

A variable intervention clamps X_i to a constant: its own derivative is
zeroed and every other equation sees the clamped value. A system
intervention rewrites coefficients of a linear system in place. Both kinds
apply identically to ground-truth fields and to trained models (through
their linear view in data units), with no retraining.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .fields import LinearField, SecondOrderLinearField, VectorField
from .neural import NeuralField
from .solver import GENERATION_CONFIG, DivergenceError, solve_ivp
from .structure import CausalGraph, UnsupportedModeError
from .trajectory import Trajectory
from .training import Normalization, affine_view_original_units, denormalized_field


@dataclass
class Clamp:
    index: int
    value: float


@dataclass
class SystemEdit:
    """One coefficient rewrite: multiply or overwrite entry (row, col).

    block picks the position or velocity coefficient matrix of second-order
    systems and is ignored for first-order ones.
    """

    row: int
    col: int
    multiplier: float | None = None
    set_to: float | None = None
    block: str = "position"

    def __post_init__(self):
        if (self.multiplier is None) == (self.set_to is None):
            raise ValueError("edit needs exactly one of multiplier or set_to")
        if self.block not in ("position", "velocity"):
            raise ValueError("block must be 'position' or 'velocity'")


@dataclass
class InterventionSpec:
    clamps: list = dc_field(default_factory=list)
    edits: list = dc_field(default_factory=list)
    t_end: float = 5.0
    points: int = 200

    def __post_init__(self):
        idx = [c.index for c in self.clamps]
        if len(set(idx)) != len(idx):
            raise ValueError("clamp indices must be distinct")

    @classmethod
    def from_dict(cls, d: dict) -> "InterventionSpec":
        clamps = [Clamp(int(c["index"]), float(c["value"])) for c in d.get("clamps", [])]
        edits = [
            SystemEdit(
                int(e["row"]),
                int(e["col"]),
                multiplier=e.get("multiplier"),
                set_to=e.get("set_to"),
                block=e.get("block", "position"),
            )
            for e in d.get("edits", [])
        ]
        horizon = d.get("horizon", {})
        return cls(
            clamps,
            edits,
            float(horizon.get("t_end", 5.0)),
            int(horizon.get("points", 200)),
        )

    def to_dict(self) -> dict:
        return {
            "clamps": [{"index": c.index, "value": c.value} for c in self.clamps],
            "edits": [
                {
                    "row": e.row,
                    "col": e.col,
                    **({"multiplier": e.multiplier} if e.multiplier is not None else {}),
                    **({"set_to": e.set_to} if e.set_to is not None else {}),
                    "block": e.block,
                }
                for e in self.edits
            ],
            "horizon": {"t_end": self.t_end, "points": self.points},
        }

    def horizon_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.points)


class _ClampedField(VectorField):
    def __init__(self, inner: VectorField, clamps: list):
        self.inner = inner
        self.dim = inner.dim
        self.order = 1
        self._idx = np.array([c.index for c in clamps], dtype=int)
        self._vals = np.array([c.value for c in clamps], dtype=float)

    def __call__(self, u, t):
        ui = np.array(u, dtype=float)
        ui[self._idx] = self._vals
        du = np.asarray(self.inner(ui, t), dtype=float).copy()
        du[self._idx] = 0.0
        return du


def clamp_variables(field: VectorField, clamps: list) -> VectorField:
    """Clamp variables to constants: f_i := 0 and X_i := c_i everywhere else.

    Idempotent: re-clamping the same (index, value) changes nothing. Only
    first-order fields are supported; reduce second-order systems first.
    """
    if field.order != 1:
        raise ValueError("clamp_variables expects a first-order field")
    if not clamps:
        return field
    for c in clamps:
        if not 0 <= c.index < field.dim:
            raise IndexError(f"clamp index {c.index} out of range for dim {field.dim}")
    if isinstance(field, _ClampedField):
        merged = {int(i): float(v) for i, v in zip(field._idx, field._vals)}
        for c in clamps:
            merged[c.index] = c.value
        return _ClampedField(field.inner, [Clamp(i, v) for i, v in merged.items()])
    return _ClampedField(field, clamps)


def clamped_initial_state(x0: np.ndarray, clamps: list) -> np.ndarray:
    """Initial state with clamped components overwritten from t = 0 on."""
    x = np.array(x0, dtype=float)
    for c in clamps:
        x[c.index] = c.value
    return x


def linear_view(
    field_like, norm: Normalization | None = None
) -> LinearField | SecondOrderLinearField:
    """Coefficient-level view of a linear system, in data units.

    Accepts analytic LinearField / SecondOrderLinearField directly, or a
    linear-activation NeuralField (with its normalization) whose folded
    weights give the learned coefficients. Nonlinear models have no
    interpretable coefficients and are rejected.
    """
    if isinstance(field_like, (LinearField, SecondOrderLinearField)):
        return field_like
    if isinstance(field_like, NeuralField):
        if field_like.activation != "linear" or field_like.input_features != "identity":
            raise UnsupportedModeError(
                "system edits need a linear-activation model; "
                "nonlinear fields have no coefficient matrix to edit"
            )
        if norm is None:
            n = field_like.dim
            norm = Normalization("none", np.zeros(n), np.ones(n))
        A, b = affine_view_original_units(field_like, norm)
        if field_like.order == 1:
            return LinearField(A, b)
        n = field_like.dim
        return SecondOrderLinearField(A[:, n:], A[:, :n], b)
    raise TypeError(f"cannot take a linear view of {type(field_like).__name__}")


def edit_linear_system(
    field_like, edits: list, norm: Normalization | None = None
) -> LinearField | SecondOrderLinearField:
    """Apply coefficient edits and return the edited linear system."""
    view = linear_view(field_like, norm)
    if isinstance(view, LinearField):
        A = view.matrix.copy()
        for e in edits:
            if not (0 <= e.row < A.shape[0] and 0 <= e.col < A.shape[1]):
                raise IndexError(f"edit ({e.row}, {e.col}) out of range")
            A[e.row, e.col] = (
                e.set_to if e.set_to is not None else A[e.row, e.col] * e.multiplier
            )
        return LinearField(A, None if view.bias is None else view.bias.copy())
    W1 = view.velocity_matrix.copy()
    W2 = view.position_matrix.copy()
    for e in edits:
        M = W1 if e.block == "velocity" else W2
        if not (0 <= e.row < M.shape[0] and 0 <= e.col < M.shape[1]):
            raise IndexError(f"edit ({e.row}, {e.col}) out of range")
        M[e.row, e.col] = (
            e.set_to if e.set_to is not None else M[e.row, e.col] * e.multiplier
        )
    return SecondOrderLinearField(W1, W2, view.bias)


def apply_intervention(field_like, spec: InterventionSpec, norm=None) -> VectorField:
    """Edits first (linear systems only), then clamps."""
    target = field_like
    if spec.edits:
        target = edit_linear_system(field_like, spec.edits, norm)
    elif isinstance(field_like, NeuralField):
        target = denormalized_field(
            field_like,
            norm
            if norm is not None
            else Normalization("none", np.zeros(field_like.dim), np.ones(field_like.dim)),
        )
    if spec.clamps:
        target = clamp_variables(target, spec.clamps)
    return target


def simulate_intervention(
    field_like, spec: InterventionSpec, x0: np.ndarray, norm=None
) -> Trajectory:
    """Intervene and integrate the result over the spec's horizon."""
    intervened = apply_intervention(field_like, spec, norm)
    if intervened.order != 1:
        raise ValueError("simulate_intervention expects first-order dynamics")
    start = clamped_initial_state(x0, spec.clamps)
    return solve_ivp(intervened, start, spec.horizon_times(), GENERATION_CONFIG)


def descendants(truth: CausalGraph, source: int) -> set:
    """Variables reachable from source through directed truth edges (excl. source)."""
    adj = truth.adjacency
    seen = {source}
    frontier = [source]
    while frontier:
        j = frontier.pop()
        for i in np.flatnonzero(adj[:, j]):
            if i not in seen:
                seen.add(int(i))
                frontier.append(int(i))
    seen.discard(source)
    return seen


EXPONENTIAL_CAVEAT = (
    "Intervened dynamics are often exponential; exponentials amplify even small "
    "errors in the learned coefficients, so sign agreement is the robust measure "
    "while trajectory gaps can grow with the horizon."
)


def compare_interventions(
    truth_field,
    learned_field,
    spec: InterventionSpec,
    x0: np.ndarray,
    learned_norm: Normalization | None = None,
) -> dict:
    """Intervene identically on truth and learned dynamics and compare.

    Both systems are simulated from the same clamped x0 on the same grid.
    The report carries per-variable sup-norm gaps, the rate at which the
    two fields' derivative signs agree along their own trajectories, and
    both trajectories; divergence of one side is recorded, not fatal.
    """
    result: dict = {"notes": EXPONENTIAL_CAVEAT, "spec": spec.to_dict()}
    sims: dict = {}
    fields: dict = {}
    for name, fl, nm in (
        ("truth", truth_field, None),
        ("learned", learned_field, learned_norm),
    ):
        try:
            fields[name] = apply_intervention(fl, spec, nm)
            start = clamped_initial_state(x0, spec.clamps)
            sims[name] = solve_ivp(fields[name], start, spec.horizon_times(), GENERATION_CONFIG)
            result[name] = {"diverged": False}
        except DivergenceError as err:
            result[name] = {"diverged": True, "last_time": err.last_time}
    if all(name in sims for name in ("truth", "learned")):
        gap = np.abs(sims["truth"].states - sims["learned"].states)
        result["per_variable_sup_gap"] = gap.max(axis=0).tolist()
        times = spec.horizon_times()
        dt_truth = np.stack(
            [fields["truth"](s, t) for s, t in zip(sims["truth"].states, times)]
        )
        dt_learned = np.stack(
            [fields["learned"](s, t) for s, t in zip(sims["learned"].states, times)]
        )
        agree = np.sign(dt_truth) == np.sign(dt_learned)
        result["sign_agreement"] = agree.mean(axis=0).tolist()
    result["trajectories"] = {name: sim for name, sim in sims.items()}
    return result
