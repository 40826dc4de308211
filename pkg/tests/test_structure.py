import numpy as np
import pytest

import odecausal.neural as nn
from odecausal import Trajectory
from odecausal.structure import (
    CausalGraph,
    UnsupportedModeError,
    extract_linear,
    extract_nonlinear,
    jacobian_timeseries,
    score_graph,
    verify_unidentifiability,
)


def linear_net_with_path(A, seed=0):
    """Two-layer linear net whose weight product equals A exactly."""
    n_out, n_in = A.shape
    field = nn.NeuralField([np.eye(n_in), np.asarray(A, float)], [np.zeros(n_in), np.zeros(n_out)], "linear")
    return field


class TestCausalGraph:
    def test_adjacency_follows_threshold(self):
        g = CausalGraph(np.array([[0.9, 0.0], [0.2, 0.5]]), 0.05)
        assert g.adjacency.tolist() == [[True, False], [True, True]]

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(0)
        S = rng.uniform(0, 1, (6, 6))
        g = CausalGraph(S, 0.0)
        eps = sorted(rng.uniform(0, 1, 5))
        adjs = [g.with_epsilon(e).adjacency for e in eps]
        for wide, narrow in zip(adjs, adjs[1:]):
            assert np.all(wide | ~narrow)  # narrow is a subset of wide

    def test_rejects_negative_scores(self):
        with pytest.raises(ValueError):
            CausalGraph(np.array([[-0.1, 0.0], [0.0, 0.0]]))


class TestExtractLinear:
    def test_threshold_example(self):
        field = linear_net_with_path(np.array([[0.9, 0.0], [0.2, -0.5]]))
        g = extract_linear(field, 0.05)
        assert g.adjacency.tolist() == [[True, False], [True, True]]
        assert g.signs[0, 0] == 1 and g.signs[1, 1] == -1

    def test_zero_field_empty_graph(self):
        field = linear_net_with_path(np.zeros((3, 3)))
        g = extract_linear(field, 0.05)
        assert not g.adjacency.any()

    def test_rejects_nonlinear_activation(self):
        field = nn.init_field([2, 4, 2], "elu", 0)
        with pytest.raises(UnsupportedModeError):
            extract_linear(field)

    def test_second_order_blocks_max(self):
        # path matrix 2x4: position block then velocity block
        A = np.array([[0.1, 0.0, 0.9, 0.0], [0.0, 0.3, 0.0, 0.2]])
        field = nn.NeuralField([np.eye(4), A], [np.zeros(4), np.zeros(2)], "linear", order=2)
        g = extract_linear(field, 0.05)
        assert np.allclose(g.scores, [[0.9, 0.0], [0.0, 0.3]])
        assert g.blocks["position"].shape == (2, 2)


class TestExtractNonlinear:
    def test_linear_field_is_trajectory_independent(self):
        rng = np.random.default_rng(1)
        field = nn.init_field([2, 5, 2], "linear", rng)
        times = np.linspace(0, 1, 20)
        t1 = Trajectory(times, rng.normal(size=(20, 2)))
        t2 = Trajectory(times, rng.normal(size=(20, 2)) * 3)
        g1 = extract_nonlinear(field, t1)
        g2 = extract_nonlinear(field, t2)
        assert np.abs(g1.scores - g2.scores).max() < 1e-10
        assert np.abs(g1.scores - np.abs(nn.path_matrix(field))).max() < 1e-10

    def test_masked_column_scores_zero(self):
        rng = np.random.default_rng(2)
        field = nn.init_field([3, 6, 3], "elu", rng)
        field.weights[0][:, 2] = 0.0
        traj = Trajectory(np.linspace(0, 1, 10), rng.normal(size=(10, 3)))
        g = extract_nonlinear(field, traj)
        assert np.all(g.scores[:, 2] == 0.0)

    def test_mean_vs_sum_reduction(self):
        rng = np.random.default_rng(3)
        field = nn.init_field([2, 4, 2], "tanh", rng)
        traj = Trajectory(np.linspace(0, 1, 8), rng.normal(size=(8, 2)))
        g_mean = extract_nonlinear(field, traj, reduce="mean")
        g_sum = extract_nonlinear(field, traj, reduce="sum")
        assert np.allclose(g_sum.scores, 8 * g_mean.scores)

    def test_empty_trajectory_rejected(self):
        field = nn.init_field([2, 4, 2], "elu", 0)
        with pytest.raises(ValueError):
            jacobian_timeseries(field, Trajectory(np.array([0.0]), np.zeros((1, 3))))


class TestJacobianTimeseries:
    def test_constant_for_linear_field(self):
        rng = np.random.default_rng(4)
        field = nn.init_field([2, 5, 2], "linear", rng)
        traj = Trajectory(np.linspace(0, 1, 6), rng.normal(size=(6, 2)))
        J = jacobian_timeseries(field, traj)
        assert J.shape == (6, 2, 2)
        assert np.abs(J - J[0]).max() < 1e-12

    def test_zero_field_zero_jacobians(self):
        field = nn.NeuralField(
            [np.zeros((4, 2)), np.zeros((2, 4))], [np.zeros(4), np.zeros(2)], "elu"
        )
        traj = Trajectory(np.linspace(0, 1, 4), np.ones((4, 2)))
        assert np.all(jacobian_timeseries(field, traj) == 0)


class TestScoreGraph:
    def test_identical_graphs(self):
        g = CausalGraph.from_adjacency(np.array([[1, 0], [1, 1]], dtype=bool))
        m = score_graph(g, g)
        assert (m.shd, m.tpr, m.tnr) == (0.0, 1.0, 1.0)
        assert m.shd_bar == 1.0

    def test_reversed_edge_counts_once(self):
        # truth: 0 -> 1 (adjacency[1][0]); estimate: 1 -> 0 only
        truth = CausalGraph.from_adjacency(np.array([[0, 0], [1, 0]], dtype=bool))
        est = CausalGraph.from_adjacency(np.array([[0, 1], [0, 0]], dtype=bool))
        m = score_graph(est, truth)
        assert m.reversed == 1 and m.missing == 0 and m.extra == 0
        assert m.shd == 0.25

    def test_strict_mode_counts_both_sides(self):
        truth = CausalGraph.from_adjacency(np.array([[0, 0], [1, 0]], dtype=bool))
        est = CausalGraph.from_adjacency(np.array([[0, 1], [0, 0]], dtype=bool))
        m = score_graph(est, truth, strict=True)
        assert m.reversed == 0 and m.missing == 1 and m.extra == 1
        assert m.shd == 0.5

    def test_missing_edge_example(self):
        truth = CausalGraph.from_adjacency(np.array([[0, 0], [1, 0]], dtype=bool))
        est = CausalGraph.from_adjacency(np.zeros((2, 2), dtype=bool))
        m = score_graph(est, truth)
        assert m.missing == 1 and m.shd == 0.25
        assert m.tpr == 0.0 and m.tnr == 1.0

    def test_bidirectional_truth_is_not_reversal(self):
        # both directions true, only one estimated: that is one missing edge
        truth = CausalGraph.from_adjacency(np.array([[0, 1], [1, 0]], dtype=bool))
        est = CausalGraph.from_adjacency(np.array([[0, 1], [0, 0]], dtype=bool))
        m = score_graph(est, truth)
        assert m.reversed == 0 and m.missing == 1 and m.extra == 0

    def test_shd_in_unit_interval_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            est = CausalGraph.from_adjacency(rng.random((n, n)) < 0.4)
            tru = CausalGraph.from_adjacency(rng.random((n, n)) < 0.4)
            m = score_graph(est, tru)
            assert 0.0 <= m.shd <= 1.0
            assert abs(m.shd + m.shd_bar - 1.0) < 1e-15
            assert score_graph(est, est).shd == 0.0

    def test_dimension_mismatch(self):
        a = CausalGraph.from_adjacency(np.zeros((2, 2), dtype=bool))
        b = CausalGraph.from_adjacency(np.zeros((3, 3), dtype=bool))
        with pytest.raises(ValueError):
            score_graph(a, b)


class TestStructuralMaskingSoundness:
    def test_masked_column_zero_under_both_extractors(self):
        rng = np.random.default_rng(6)
        field = nn.init_field([3, 6, 3], "linear", rng)
        field.weights[0][:, 1] = 0.0
        g_lin = extract_linear(field)
        traj = Trajectory(np.linspace(0, 1, 12), rng.normal(size=(12, 3)))
        g_jac = extract_nonlinear(field, traj)
        assert np.all(g_lin.scores[:, 1] == 0)
        assert np.all(g_jac.scores[:, 1] == 0)


class TestVerifyUnidentifiability:
    def test_identity_and_swap_share_the_trajectory(self):
        report = verify_unidentifiability()
        assert report["sup_deviation_exact"] < 1e-10
        assert report["sup_deviation_dopri5"] < 1e-6
        assert report["l11_identity"] == 2.0
        assert report["l11_swap"] == 2.0
        assert report["nonzero_count_identity"] == 2
        assert report["nonzero_count_swap"] == 2

    def test_off_diagonal_control_separates_systems(self):
        report = verify_unidentifiability()
        expected = (np.e - np.exp(-1.0)) * np.sqrt(2.0)
        assert abs(report["control_deviation_t1"] - expected) < 1e-9
        assert "summary" in report
