import numpy as np
import pytest

import odecausal as oc
from odecausal import systems
from odecausal.systems import (
    CorruptionSpec,
    SparseSystemSpec,
    corrupt,
    gen_random_linear,
    lotka_volterra_field,
    spiral_field,
    system_from_config,
    transcription_field,
    transcription_truth_graph,
)


class TestSpiral:
    def test_zero_parameters_give_zero_field(self):
        f = spiral_field(0.0, 0.0)
        assert np.array_equal(f(np.array([1.3, -2.0]), 0.0), np.zeros(2))

    def test_unit_point_substitution(self):
        a, b = 0.3, 1.7
        f = spiral_field(a, b)
        out = f(np.array([1.0, 1.0]), 0.0)
        assert np.allclose(out, [-a + b, -b + a])

    def test_norm_behavior_matches_fine_step_oracle(self):
        f = spiral_field(0.1, 2.0)
        times = np.linspace(0, 5, 26)
        x0 = np.array([2.0, 0.0])
        fine = oc.solve_ivp(f, x0, times, oc.SolverConfig(method="rk4", h=1e-4))
        fast = oc.solve_ivp(f, x0, times, oc.GENERATION_CONFIG)
        norm_fine = np.linalg.norm(fine.states, axis=1)
        norm_fast = np.linalg.norm(fast.states, axis=1)
        assert np.abs(norm_fine - norm_fast).max() < 1e-5


class TestLotkaVolterra:
    def test_prey_zero_annihilates_prey_terms(self):
        f = lotka_volterra_field(1.5, 1.0, 1.0, 3.0)
        out = f(np.array([0.0, 0.7]), 0.0)
        assert out[0] == 0.0
        assert np.isclose(out[1], -3.0 * 0.7)

    def test_unit_point_substitution(self):
        a, b, g, d = 1.5, 1.0, 1.0, 3.0
        f = lotka_volterra_field(a, b, g, d)
        out = f(np.array([1.0, 1.0]), 0.0)
        assert np.allclose(out, [-a - b, -d + g])

    def test_classical_variant_conserves_first_integral(self):
        a, b, g, d = 1.5, 1.0, 1.0, 3.0
        f = lotka_volterra_field(a, b, g, d, variant="classical")
        traj = oc.solve_ivp(f, np.array([1.0, 1.0]), np.linspace(0, 10, 200), oc.GENERATION_CONFIG)
        V = systems.lv_conserved_quantity(traj.states, a, b, g, d)
        assert np.abs(V - V[0]).max() < 1e-4

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            lotka_volterra_field(1, 1, 1, 1, variant="sideways")


class TestTranscription:
    def test_fixed_point_is_constant(self):
        # constant alpha (rate 0), u = alpha/beta, s = beta*u/gamma
        beta, gamma, alpha = 2.0, 0.5, 1.0
        f = transcription_field(beta, gamma, rate=0.0, cap=2.0)
        x0 = np.array([alpha, alpha / beta, beta * (alpha / beta) / gamma])
        traj = oc.solve_ivp(f, x0, np.linspace(0, 5, 20), oc.GENERATION_CONFIG)
        assert np.abs(traj.states - x0).max() < 1e-8

    def test_unit_rates_analytic_rise(self):
        # alpha fixed at 1: u(t) = 1 - e^t* -> u(1) = 0.6321206
        f = transcription_field(1.0, 1.0, rate=0.0, cap=2.0)
        traj = oc.solve_ivp(f, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0]), oc.GENERATION_CONFIG)
        assert abs(traj.states[-1, 1] - 0.6321206) < 1e-6

    def test_truth_graph_edges(self):
        g = transcription_truth_graph()
        assert int(g.adjacency.sum()) == 5
        # nothing feeds back into the transcription rate
        assert not g.adjacency[0, 1] and not g.adjacency[0, 2]


class TestGenRandomLinear:
    def test_density_zero_gives_free_motion(self):
        spec = SparseSystemSpec(n=3, density=0.0, seed=1)
        times = np.linspace(0, 2, 20)
        system, truth, traj = gen_random_linear(spec, times)
        assert np.all(system.W1 == 0) and np.all(system.W2 == 0)
        assert not truth.adjacency.any()
        expected = system.x0 + np.outer(times, system.v0)
        assert np.abs(traj.states - expected).max() < 1e-9

    def test_realized_density_tracks_request(self):
        times = np.linspace(0, 5, 100)
        densities = []
        for seed in range(20):
            spec = SparseSystemSpec(n=10, density=0.15, seed=seed)
            _, truth, _ = gen_random_linear(spec, times)
            densities.append(truth.adjacency.mean())
        requested = 1 - (1 - 0.15) ** 2  # either matrix can carry the edge
        assert abs(np.mean(densities) - requested) < 0.15

    def test_deterministic_for_fixed_seed(self):
        spec = SparseSystemSpec(n=4, density=0.3, seed=9)
        times = np.linspace(0, 3, 50)
        s1, _, t1 = gen_random_linear(spec, times)
        s2, _, t2 = gen_random_linear(spec, times)
        assert np.array_equal(s1.W1, s2.W1) and np.array_equal(s1.W2, s2.W2)
        assert np.array_equal(t1.states, t2.states)

    def test_outputs_are_finite_and_bounded(self):
        times = np.linspace(0, 5, 80)
        for seed in range(10):
            spec = SparseSystemSpec(n=5, density=0.3, seed=seed)
            _, _, traj = gen_random_linear(spec, times)
            assert np.all(np.isfinite(traj.states))
            assert np.abs(traj.states).max() <= 1e3

    def test_rejects_oversized_grid(self):
        spec = SparseSystemSpec(n=3, density=0.2, seed=0)
        with pytest.raises(ValueError):
            gen_random_linear(spec, np.linspace(0, 5, 201))


class TestCorrupt:
    def test_noop_spec_is_identity(self):
        traj = oc.Trajectory(np.linspace(0, 1, 10), np.random.default_rng(0).normal(size=(10, 2)))
        out = corrupt(traj, CorruptionSpec(sigma=0.0, irr=0.0, seed=3))
        assert np.array_equal(out.states, traj.states)
        assert np.array_equal(out.times, traj.times)

    def test_noise_variance_matches_sigma(self):
        rng = np.random.default_rng(1)
        traj = oc.Trajectory(np.linspace(0, 1, 200), rng.normal(size=(200, 10)))
        out = corrupt(traj, CorruptionSpec(sigma=0.1, irr=0.0, seed=5))
        noise = out.states - traj.states
        assert 0.008 <= noise.var() <= 0.012

    def test_drop_count_and_anchor_row(self):
        traj = oc.Trajectory(np.linspace(0, 1, 200), np.zeros((200, 2)))
        out = corrupt(traj, CorruptionSpec(sigma=0.0, irr=0.5, seed=7))
        assert len(out) == 100
        assert out.times[0] == traj.times[0]
        assert np.all(np.diff(out.times) > 0)

    def test_same_seed_couples_noise_across_sigmas(self):
        traj = oc.Trajectory(np.linspace(0, 1, 50), np.zeros((50, 2)))
        a = corrupt(traj, CorruptionSpec(sigma=0.1, irr=0.0, seed=11))
        b = corrupt(traj, CorruptionSpec(sigma=0.2, irr=0.0, seed=11))
        assert np.allclose(2.0 * a.states, b.states)

    def test_leaving_fewer_than_two_rows_rejected(self):
        traj = oc.Trajectory(np.linspace(0, 1, 3), np.zeros((3, 2)))
        with pytest.raises(ValueError):
            corrupt(traj, CorruptionSpec(sigma=0.0, irr=0.67, seed=0))


class TestSystemFromConfig:
    def test_lv_defaults_materialize(self):
        bundle = system_from_config("lv")
        assert bundle.config["alpha"] == 1.5
        assert bundle.truth.adjacency.all()
        assert bundle.kind == "lv"

    def test_linear_explicit_first_order(self):
        cfg = {"A": [[-1.0, 0.0], [0.5, -2.0]], "x0": [1.0, 1.0], "t_end": 2.0, "points": 10}
        bundle = system_from_config("linear", cfg)
        assert bundle.config["order"] == 1
        traj = systems.simulate_bundle(bundle, np.linspace(0, 2, 10))
        assert traj.states.shape == (10, 2)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            system_from_config("pendulum")

    def test_intervention_demo_structure(self):
        field, truth, x0 = systems.intervention_demo_system()
        # X1 must not be reachable from X0
        from odecausal.interventions import descendants

        assert 1 not in descendants(truth, 0)
        assert 2 in descendants(truth, 0)
