"""
Test task builders, gradient oracles and the convergence constants
"""

import unittest
import math
import os
import sys
import tempfile

import numpy as np
import pandas as pd
from scipy.optimize import check_grad

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.tasks import (
    ConvergenceConstants,
    GradientOracle,
    counterexample_loss,
    estimate_constants,
    load_csv_dataset,
    make_counterexample,
    make_logistic,
    make_mlp,
    make_quadratic,
    probe_points_around,
    rate_bound,
    reference_optimum,
    tuned_eta,
)
from src.tasks.constants import fit_dissimilarity
from stat_checks import assert_unbiased


class TestBuilders(unittest.TestCase):
    """Test the task families"""

    def test_counterexample(self):
        task = make_counterexample()
        self.assertEqual(task.dimension, 1)
        self.assertEqual(task.loss([1.0]), 0.0)
        self.assertEqual(task.loss([2.0]), 1.0)
        self.assertEqual(task.loss([0.0]), 0.5)
        self.assertEqual(float(counterexample_loss(3.0)), 4.0)
        np.testing.assert_array_equal(task.optimum, [1.0])

    def test_quadratic_optimum(self):
        task = make_quadratic(6, 10.0, seed=1, clients=4, heterogeneity=2.0)
        np.testing.assert_allclose(task.gradient(task.optimum), np.zeros(6), atol=1e-10)
        self.assertAlmostEqual(task.smoothness, 1.0)
        w_star, f_star = reference_optimum(task)
        self.assertIs(w_star, task.optimum)
        self.assertLessEqual(f_star, task.loss(task.initial_weights))

    def test_quadratic_condition_checked(self):
        with self.assertRaises(ValueError):
            make_quadratic(3, 0.5, seed=0)

    def test_logistic_shards(self):
        task = make_logistic(8, 12, 20, 0.5, seed=3)
        self.assertEqual(task.clients, 8)
        self.assertEqual(task.dimension, 12)
        for obj in task.objectives:
            self.assertEqual(obj.n_samples, 20)
            dominant = 1.0 if obj.client_id % 2 else -1.0
            self.assertGreaterEqual(np.mean(obj.labels == dominant), 0.5)

    def test_full_skew_flags_degenerate_clients(self):
        task = make_logistic(6, 8, 10, 1.0, seed=0)
        self.assertEqual(task.degenerate_clients, list(range(6)))

    def test_logistic_gradient_matches_finite_differences(self):
        task = make_logistic(4, 6, 15, 0.3, seed=2, reg=0.01, shift=0.5)
        w = np.random.default_rng(0).normal(size=6)
        self.assertLess(check_grad(task.loss, task.gradient, w), 1e-5)

    def test_mlp_gradient_matches_finite_differences(self):
        data = make_logistic(3, 5, 12, 0.5, seed=4)
        for activation in ('tanh', 'sigmoid'):
            task = make_mlp((5, 4), activation, data, seed=1, reg=0.01)
            self.assertEqual(task.dimension, 4 * 5 + 2 * 4 + 1)
            self.assertLess(check_grad(task.loss, task.gradient, task.initial_weights), 1e-5)

    def test_mlp_parameter_limit(self):
        with self.assertRaises(ValueError):
            make_mlp((1000, 200), 'tanh', [], seed=0)

    def test_csv_dataset(self):
        frame = pd.DataFrame({'f1': [0.1, 0.2, 0.3, 0.4], 'f2': [1.0, 0.0, 1.0, 0.0],
                              'label': ['a', 'b', 'b', 'a']})
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'data.csv')
            frame.to_csv(path, index=False)
            features, labels = load_csv_dataset(path)
        self.assertEqual(features.shape, (4, 2))
        np.testing.assert_array_equal(labels, [-1.0, 1.0, 1.0, -1.0])

    def test_csv_dataset_needs_two_labels(self):
        frame = pd.DataFrame({'f1': [0.1, 0.2, 0.3], 'label': [0, 1, 2]})
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'data.csv')
            frame.to_csv(path, index=False)
            with self.assertRaises(ValueError):
                load_csv_dataset(path)


class TestGradientOracle(unittest.TestCase):
    """Test seeded stochastic gradients"""

    def setUp(self):
        self.task = make_logistic(4, 8, 20, 0.5, seed=0)

    def test_full_batch_is_exact(self):
        oracle = GradientOracle(self.task)
        w = np.ones(8)
        self.assertTrue(oracle.is_deterministic)
        self.assertEqual(oracle.noise_model, 'exact')
        np.testing.assert_array_equal(oracle.gradient(2, w, round_index=5), self.task.objectives[2].gradient(w))
        self.assertEqual(oracle.variance(2, w), 0.0)

    def test_draws_are_keyed(self):
        oracle = GradientOracle(self.task, batch_size=5, seed=3)
        w = np.ones(8)
        np.testing.assert_array_equal(oracle.gradient(1, w, 7), oracle.gradient(1, w, 7))
        self.assertFalse(np.array_equal(oracle.gradient(1, w, 7), oracle.gradient(1, w, 8)))
        self.assertEqual(oracle.noise_model, 'minibatch')

    def test_minibatch_unbiased(self):
        oracle = GradientOracle(self.task, batch_size=5, seed=1)
        w = np.random.default_rng(2).normal(size=8)
        samples = [oracle.gradient(0, w, round_index=t) for t in range(4000)]
        assert_unbiased(self, samples, self.task.objectives[0].gradient(w))
        self.assertGreater(oracle.variance(0, w), 0.0)

    def test_gaussian_noise_model(self):
        task = make_quadratic(4, 2.0, seed=0, clients=2, noise=0.5)
        self.assertEqual(GradientOracle(task).noise_model, 'gaussian')


class TestConstants(unittest.TestCase):
    """Test the constant estimates and the step-size rule"""

    def test_dissimilarity_envelope(self):
        x = np.linspace(0.0, 5.0, 12)
        G_sq, B_sq = fit_dissimilarity(2.0 + 3.0 * x, x)
        self.assertAlmostEqual(G_sq, 2.0, places=6)
        self.assertAlmostEqual(B_sq, 3.0, places=6)

    def test_estimated_constants_bound_the_probes(self):
        task = make_quadratic(5, 4.0, seed=2, clients=6, heterogeneity=1.5, noise=0.2)
        oracle = GradientOracle(task, seed=0)
        constants = estimate_constants(task, probe_points_around(task, seed=0), oracle)

        self.assertAlmostEqual(constants.beta, 1.0)
        self.assertGreater(constants.M, 0.0)
        self.assertGreater(constants.sigma_sq, 0.0)
        profile = constants.profile
        envelope = constants.G_sq + constants.B_sq * profile.global_sq_norms
        self.assertTrue(np.all(profile.client_sq_norms <= envelope + 1e-9))

    def test_too_few_probes(self):
        task = make_quadratic(3, 2.0, seed=0)
        with self.assertRaises(ValueError):
            estimate_constants(task, probe_points_around(task, count=3), GradientOracle(task))

    def test_noiseless_step_size_is_smoothness_term(self):
        constants = ConvergenceConstants(M=1.0, beta=1.0, sigma_sq=0.0, G_sq=0.0, B_sq=0.0, clients=10)
        self.assertAlmostEqual(tuned_eta(constants, 1000, 10, 0.0, 10, 3), 1.0 / 30.0)

    def test_step_size_terms(self):
        constants = ConvergenceConstants(M=1.0, beta=1.0, sigma_sq=1.0, G_sq=0.0, B_sq=0.0, clients=10)
        self.assertAlmostEqual(tuned_eta(constants, 10_000, 10, 1.0, 1, 1), 1.0 / 60.0)
        self.assertAlmostEqual(tuned_eta(constants, 1_000_000, 10, 1.0, 1, 1), math.sqrt(2e-5))

    def test_partial_participation_terms(self):
        constants = ConvergenceConstants(M=1.0, beta=1.0, sigma_sq=1.0, G_sq=2.0, B_sq=4.0, clients=10)
        self.assertAlmostEqual(constants.sigma_tilde_sq(5), 1.0 + 4.0 * 0.5 * 2.0)
        self.assertAlmostEqual(constants.gamma(5), 1.0 + 0.5 * 4.0 / 5)
        self.assertEqual(ConvergenceConstants.theta(0.5, 10, 3), 16.0)

    def test_rate_bound_shrinks_with_horizon(self):
        constants = ConvergenceConstants(M=1.0, beta=2.0, sigma_sq=1.0, G_sq=0.5, B_sq=1.0, clients=20)
        short = rate_bound(constants, 1000, 5, 0.5, 10, 3)
        long = rate_bound(constants, 100_000, 5, 0.5, 10, 3)
        self.assertGreater(short, long)
        self.assertGreater(long, 0.0)

    def test_invalid_constants(self):
        with self.assertRaises(ValueError):
            ConvergenceConstants(M=-1.0, beta=1.0, sigma_sq=0.0, G_sq=0.0, B_sq=0.0, clients=1)
        constants = ConvergenceConstants(M=0.0, beta=1.0, sigma_sq=0.0, G_sq=0.0, B_sq=0.0, clients=1)
        with self.assertRaises(ValueError):
            tuned_eta(constants, 100, 1, 0.0, 1, 1)


if __name__ == '__main__':
    unittest.main()
