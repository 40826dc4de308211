"""Ground-truth systems and dataset generation.

Covers random sparse linear second-order systems, the cubic spiral, the
Lotka-Volterra predator-prey pair, and a three-species transcription
network, plus Gaussian measurement noise and irregular subsampling.
Every generator is a pure function of (spec, seed).

The module-level *_DEFAULTS dicts are repository defaults: window lengths,
grid sizes and coefficients that the source material leaves open are fixed
here and echoed into every dataset bundle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import FuncField, LinearField, SecondOrderLinearField, VectorField
from .solver import (
    GENERATION_CONFIG,
    DivergenceError,
    reduce_second_order,
    solve_ivp,
)
from .structure import CausalGraph
from .trajectory import Trajectory

MAX_OBSERVATIONS = 200
STABILITY_SUP_NORM = 1e3

LINEAR_DEFAULTS = {
    "n": 10,
    "density": 0.25,
    "mag_low": 0.3,
    "mag_high": 1.0,
    "t_end": 5.0,
    "points": 200,
}
SPIRAL_DEFAULTS = {"alpha": 0.1, "beta": 2.0, "x0": [2.0, 0.0], "t_end": 10.0, "points": 200}
LV_DEFAULTS = {
    "alpha": 1.5,
    "beta": 1.0,
    "gamma": 1.0,
    "delta": 3.0,
    "variant": "classical",
    "x0": [1.0, 1.0],
    "t_end": 10.0,
    "points": 200,
}
TRANSCRIPTION_DEFAULTS = {
    "rate": 1.0,
    "cap": 2.0,
    "alpha0": 0.1,
    "u0": 0.0,
    "s0": 0.0,
    "beta": 1.0,
    "gamma": 1.0,
    "t_end": 8.0,
    "points": 200,
}


class GenerationError(RuntimeError):
    pass


@dataclass
class LinearSecondOrderSystem:
    """d2x/dt2 = W1 dx/dt + W2 x with initial position x0 and velocity v0."""

    W1: np.ndarray
    W2: np.ndarray
    x0: np.ndarray
    v0: np.ndarray

    def __post_init__(self):
        self.W1 = np.asarray(self.W1, dtype=float)
        self.W2 = np.asarray(self.W2, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        self.v0 = np.asarray(self.v0, dtype=float)
        if self.W1.shape != self.W2.shape or self.W1.ndim != 2:
            raise ValueError("W1 and W2 must be square matrices of equal shape")
        n = self.W1.shape[0]
        if self.W1.shape != (n, n) or self.x0.shape != (n,) or self.v0.shape != (n,):
            raise ValueError("inconsistent system dimensions")
        for M in (self.W1, self.W2, self.x0, self.v0):
            if not np.all(np.isfinite(M)):
                raise ValueError("system has non-finite entries")

    @property
    def n(self) -> int:
        return self.W1.shape[0]

    def field(self) -> SecondOrderLinearField:
        return SecondOrderLinearField(self.W1, self.W2)

    def truth_graph(self) -> CausalGraph:
        scores = np.maximum(np.abs(self.W1), np.abs(self.W2))
        signs = np.where(np.abs(self.W2) >= np.abs(self.W1), np.sign(self.W2), np.sign(self.W1))
        return CausalGraph(
            scores, 0.0, signs, blocks={"position": self.W2, "velocity": self.W1}
        )


@dataclass
class SparseSystemSpec:
    """Sampler settings for random linear second-order systems."""

    n: int = 10
    density: float = LINEAR_DEFAULTS["density"]
    mag_low: float = LINEAR_DEFAULTS["mag_low"]
    mag_high: float = LINEAR_DEFAULTS["mag_high"]
    max_retries: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not 0.0 <= self.density <= 1.0:
            raise ValueError("density must lie in [0, 1]")
        if not 0 < self.mag_low <= self.mag_high:
            raise ValueError("need 0 < mag_low <= mag_high")
        if self.max_retries < 1:
            raise ValueError("max_retries must be positive")


@dataclass
class CorruptionSpec:
    """Measurement corruption: additive Gaussian noise then row dropping."""

    sigma: float = 0.0
    irr: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if not 0.0 <= self.irr < 1.0:
            raise ValueError("irr must lie in [0, 1)")


def _random_sparse_matrix(rng: np.random.Generator, spec: SparseSystemSpec) -> np.ndarray:
    mask = rng.random((spec.n, spec.n)) < spec.density
    mags = rng.uniform(spec.mag_low, spec.mag_high, size=(spec.n, spec.n))
    signs = rng.choice([-1.0, 1.0], size=(spec.n, spec.n))
    return mask * mags * signs


def simulate_second_order(
    system: LinearSecondOrderSystem, times: np.ndarray
) -> tuple[Trajectory, Trajectory]:
    """(positions, velocities) of the system at the given times."""
    reduced, y0 = reduce_second_order(system.field(), system.x0, system.v0)
    full = solve_ivp(reduced, y0, times, GENERATION_CONFIG)
    n = system.n
    return (
        Trajectory(full.times, full.states[:, :n]),
        Trajectory(full.times, full.states[:, n:]),
    )


def gen_random_linear(
    spec: SparseSystemSpec, times: np.ndarray
) -> tuple[LinearSecondOrderSystem, CausalGraph, Trajectory]:
    """Sample a sparse second-order system and its (position) trajectory.

    Systems whose positions leave [-1e3, 1e3] on the window are rejected and
    resampled; the observation grid may not exceed 200 rows.
    """
    times = np.asarray(times, dtype=float)
    if times.size > MAX_OBSERVATIONS:
        raise ValueError(f"at most {MAX_OBSERVATIONS} observations are supported")
    rng = np.random.default_rng(spec.seed)
    for _ in range(spec.max_retries):
        W1 = _random_sparse_matrix(rng, spec)
        W2 = _random_sparse_matrix(rng, spec)
        x0 = rng.uniform(-1.0, 1.0, size=spec.n)
        v0 = rng.uniform(-1.0, 1.0, size=spec.n)
        system = LinearSecondOrderSystem(W1, W2, x0, v0)
        try:
            positions, _ = simulate_second_order(system, times)
        except DivergenceError:
            continue
        if np.max(np.abs(positions.states)) <= STABILITY_SUP_NORM:
            return system, system.truth_graph(), positions
    raise GenerationError(
        f"no stable system found in {spec.max_retries} draws; "
        "try smaller magnitudes or lower density"
    )


def spiral_field(alpha: float, beta: float) -> FuncField:
    """Cubic spiral: dx0/dt = -a x0^3 + b x1^3, dx1/dt = -b x0^3 + a x1^3."""

    def fn(u, t):
        c = u * u * u
        return np.array(
            [-alpha * c[0] + beta * c[1], -beta * c[0] + alpha * c[1]]
        )

    return FuncField(2, fn)


def spiral_matrix(alpha: float, beta: float) -> np.ndarray:
    """Coefficients of the spiral over cubed states: dx/dt = M @ x**3."""
    return np.array([[-alpha, beta], [-beta, alpha]])


def spiral_truth_graph() -> CausalGraph:
    return CausalGraph.from_adjacency(np.ones((2, 2), dtype=bool))


def lotka_volterra_field(
    alpha: float, beta: float, gamma: float, delta: float, variant: str = "printed"
) -> FuncField:
    """Predator-prey pair; both variables enter both equations.

    variant "printed": dx0/dt = -a x0 - b x0 x1, dx1/dt = -d x1 + g x0 x1.
    variant "classical" flips the prey's own-growth sign (+a x0), which is the
    textbook form with closed orbits and a conserved quantity.
    """
    if variant not in ("printed", "classical"):
        raise ValueError("variant must be 'printed' or 'classical'")
    a0 = -alpha if variant == "printed" else alpha

    def fn(u, t):
        x, y = u
        return np.array([a0 * x - beta * x * y, -delta * y + gamma * x * y])

    return FuncField(2, fn)


def lv_truth_graph() -> CausalGraph:
    return CausalGraph.from_adjacency(np.ones((2, 2), dtype=bool))


def lv_conserved_quantity(
    states: np.ndarray, alpha: float, beta: float, gamma: float, delta: float
) -> np.ndarray:
    """First integral of the classical variant, constant along exact orbits."""
    x, y = states[:, 0], states[:, 1]
    return gamma * x - delta * np.log(x) + beta * y - alpha * np.log(y)


def transcription_field(
    beta: float,
    gamma: float,
    rate: float = TRANSCRIPTION_DEFAULTS["rate"],
    cap: float = TRANSCRIPTION_DEFAULTS["cap"],
) -> FuncField:
    """Three-species transcription model over (alpha, u, s).

    The transcription rate alpha follows its own logistic law
    d alpha/dt = rate * alpha * (1 - alpha/cap), so the system stays
    autonomous in state; unspliced u is produced at rate alpha and spliced
    into s at rate beta, which degrades at rate gamma. Nothing feeds back
    into alpha.
    """

    def fn(state, t):
        a, u, s = state
        return np.array(
            [rate * a * (1.0 - a / cap), a - beta * u, beta * u - gamma * s]
        )

    return FuncField(3, fn)


def transcription_truth_graph(rate: float = TRANSCRIPTION_DEFAULTS["rate"]) -> CausalGraph:
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 0] = rate != 0.0  # alpha drives itself through the logistic law
    adj[1, 0] = True  # alpha -> u
    adj[1, 1] = True  # u -> u
    adj[2, 1] = True  # u -> s
    adj[2, 2] = True  # s -> s
    return CausalGraph.from_adjacency(adj)


def corrupt(traj: Trajectory, spec: CorruptionSpec) -> Trajectory:
    """Add N(0, sigma^2) noise per entry, then drop floor(irr*N) rows.

    Row 0 anchors the initial value and is never dropped; remaining times
    keep their original order. The same seed draws the same standard-normal
    noise for every sigma, so noise levels are coupled across runs.
    """
    rng = np.random.default_rng(spec.seed)
    noisy = traj.states + spec.sigma * rng.standard_normal(traj.states.shape)
    N = len(traj)
    n_drop = math.floor(spec.irr * N)
    if N - n_drop < 2:
        raise ValueError("corruption would leave fewer than 2 rows")
    keep = np.arange(N)
    if n_drop > 0:
        dropped = rng.choice(np.arange(1, N), size=n_drop, replace=False)
        keep = np.setdiff1d(keep, dropped)
    return Trajectory(traj.times[keep], noisy[keep])


def intervention_demo_system() -> tuple[LinearField, CausalGraph, np.ndarray]:
    """Fixed 3-variable first-order system for the intervention walkthrough.

    X1 evolves on its own, X2 listens to X0, so interventions on X0 must
    move X0 and X2 while leaving X1 untouched.
    """
    A = np.array(
        [
            [-0.5, 0.0, 0.0],
            [0.0, -0.8, 0.0],
            [1.0, 0.0, -1.0],
        ]
    )
    truth = CausalGraph(np.abs(A), 0.0, np.sign(A))
    x0 = np.array([1.0, 1.0, 0.5])
    return LinearField(A), truth, x0


# ---------------------------------------------------------------------------
# Config-driven construction used by dataset generation and the CLI.
# ---------------------------------------------------------------------------

@dataclass
class SystemBundle:
    kind: str
    field: VectorField
    truth: CausalGraph
    x0: np.ndarray
    v0: np.ndarray | None
    config: dict  # fully materialized, JSON-ready


def system_from_config(kind: str, config: dict | None = None, seed: int = 0) -> SystemBundle:
    """Build a ground-truth system from a (partial) config dict.

    Unspecified keys fall back to the repository defaults; the returned
    bundle echoes every value actually used. kind "linear" samples a random
    sparse second-order system unless explicit coefficients ("W1"/"W2" or a
    first-order "A") are supplied.
    """
    config = dict(config or {})
    if kind == "linear":
        cfg = {**LINEAR_DEFAULTS, **config}
        if "A" in cfg:
            A = np.asarray(cfg["A"], dtype=float)
            x0 = np.asarray(cfg.get("x0", np.ones(A.shape[0])), dtype=float)
            field = LinearField(A)
            truth = CausalGraph(np.abs(A), 0.0, np.sign(A))
            out = {**cfg, "A": A.tolist(), "x0": x0.tolist(), "order": 1, "n": A.shape[0]}
            for key in ("density", "mag_low", "mag_high"):
                out.pop(key, None)
            return SystemBundle("linear", field, truth, x0, None, out)
        if "W1" in cfg and "W2" in cfg:
            system = LinearSecondOrderSystem(
                np.asarray(cfg["W1"], float),
                np.asarray(cfg["W2"], float),
                np.asarray(cfg.get("x0", np.ones(np.asarray(cfg["W1"]).shape[0])), float),
                np.asarray(cfg.get("v0", np.zeros(np.asarray(cfg["W1"]).shape[0])), float),
            )
        else:
            spec = SparseSystemSpec(
                n=int(cfg["n"]),
                density=float(cfg["density"]),
                mag_low=float(cfg["mag_low"]),
                mag_high=float(cfg["mag_high"]),
                seed=seed,
            )
            times = np.linspace(0.0, float(cfg["t_end"]), int(cfg["points"]))
            system, _, _ = gen_random_linear(spec, times)
        out = {
            **cfg,
            "order": 2,
            "n": system.n,
            "W1": system.W1.tolist(),
            "W2": system.W2.tolist(),
            "x0": system.x0.tolist(),
            "v0": system.v0.tolist(),
        }
        return SystemBundle(
            "linear", system.field(), system.truth_graph(), system.x0, system.v0, out
        )
    if kind == "spiral":
        cfg = {**SPIRAL_DEFAULTS, **config}
        field = spiral_field(float(cfg["alpha"]), float(cfg["beta"]))
        x0 = np.asarray(cfg["x0"], dtype=float)
        return SystemBundle("spiral", field, spiral_truth_graph(), x0, None, {**cfg, "order": 1, "n": 2})
    if kind == "lv":
        cfg = {**LV_DEFAULTS, **config}
        field = lotka_volterra_field(
            float(cfg["alpha"]), float(cfg["beta"]), float(cfg["gamma"]),
            float(cfg["delta"]), cfg["variant"],
        )
        x0 = np.asarray(cfg["x0"], dtype=float)
        return SystemBundle("lv", field, lv_truth_graph(), x0, None, {**cfg, "order": 1, "n": 2})
    if kind == "transcription":
        cfg = {**TRANSCRIPTION_DEFAULTS, **config}
        field = transcription_field(
            float(cfg["beta"]), float(cfg["gamma"]), float(cfg["rate"]), float(cfg["cap"])
        )
        x0 = np.array([float(cfg["alpha0"]), float(cfg["u0"]), float(cfg["s0"])])
        return SystemBundle(
            "transcription", field, transcription_truth_graph(float(cfg["rate"])), x0, None,
            {**cfg, "order": 1, "n": 3},
        )
    raise ValueError(f"unknown system kind {kind!r}")


def simulate_bundle(bundle: SystemBundle, times: np.ndarray) -> Trajectory:
    """Clean (noise-free) position trajectory of a system bundle."""
    if bundle.field.order == 2:
        system = LinearSecondOrderSystem(
            np.asarray(bundle.config["W1"]), np.asarray(bundle.config["W2"]),
            bundle.x0, bundle.v0,
        )
        positions, _ = simulate_second_order(system, times)
        return positions
    return solve_ivp(bundle.field, bundle.x0, times, GENERATION_CONFIG)
