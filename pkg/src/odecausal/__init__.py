"""odecausal: learn governing ODEs from one trajectory, read off the causal
graph, and predict behavior under variable and system interventions."""

__version__ = "0.1.0"

from .trajectory import Trajectory
from .fields import VectorField, LinearField, SecondOrderLinearField, FuncField
from .solver import (
    SolverConfig,
    GENERATION_CONFIG,
    TRAINING_CONFIG,
    IntegrationError,
    DivergenceError,
    MaxStepsError,
    solve_ivp,
    reduce_second_order,
    matrix_exponential,
    matrix_exponential_solution,
)
from .neural import (
    NeuralField,
    Tape,
    init_field,
    forward,
    grad_params,
    vjp,
    input_jacobian,
    path_matrix,
    l1_path_penalty,
)
from .training import (
    ArchSpec,
    TrainConfig,
    TrainReport,
    Normalization,
    TrainingDivergedError,
    train,
    rollout,
    estimate_initial_velocity,
    predict,
    denormalized_field,
    path_matrix_original_units,
    affine_view_original_units,
    checkpoint_dict,
    checkpoint_from_dict,
)

__all__ = [name for name in dir() if not name.startswith("_")]
