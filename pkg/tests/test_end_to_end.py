"""
End-to-End Test: config -> task + schedule -> round loop -> artifacts

Desk-scale versions of the headline experiments: equivalence with the
uncompressed baseline, bandwidth reductions, the anchor-error ratio, the
K x V staleness trend and the counter-example separation.
"""

import unittest
from unittest.mock import patch
import io
import os
import sys
import tempfile

import numpy as np
import pandas as pd

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.harness import ExperimentConfig
from src.harness.commands import counterexample_cmd, kv_sweep
from src.orchestrator import run


class PipelineTestCase(unittest.TestCase):
    """Runs land in a temporary output directory; banners are swallowed"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.env_patcher = patch.dict(os.environ, {'DOCOFL_OUTPUT_DIR': self.tmp.name,
                                                   'DOCOFL_LOG_LEVEL': 'WARNING'})
        self.env_patcher.start()
        self.stdout_patcher = patch('sys.stdout', new_callable=io.StringIO)
        self.stdout_patcher.start()

    def tearDown(self):
        self.stdout_patcher.stop()
        self.env_patcher.stop()
        self.tmp.cleanup()

    def _run(self, **overrides):
        params = dict(task='logistic', dimension=16, clients=20, per_round=5, samples_per_client=20,
                      rounds=200, log_every=0)
        params.update(overrides)
        return run(ExperimentConfig(**params), archive=False)


# ============================================================================
# BASELINE EQUIVALENCE AND BANDWIDTH
# ============================================================================

class TestBaselineEquivalence(PipelineTestCase):

    def test_lossless_codecs_match_baseline(self):
        docofl = self._run(run_name='lossless', rounds=500)
        baseline = self._run(run_name='baseline', mode='baseline', rounds=500)

        a = pd.read_csv(docofl.metrics_path)
        b = pd.read_csv(baseline.metrics_path)
        self.assertEqual(len(a), 500)
        np.testing.assert_array_equal(a['train_loss'].values, b['train_loss'].values)
        np.testing.assert_array_equal(a['grad_sq_norm'].values, b['grad_sq_norm'].values)
        self.assertEqual(docofl.summary['final_loss'], baseline.summary['final_loss'])

    def test_compressed_run_tracks_baseline(self):
        """anchor 4 bits, correction 2 bits, gradient 2 bits; K=10, V=3, T=2000 over three seeds"""
        common = dict(dimension=32, clients=50, per_round=10, rounds=2000, learning_rate='0.05',
                      anchor_rate=10, queue_capacity=3)
        compressed, full = [], []
        for seed in (0, 1, 2):
            docofl = self._run(run_name=f'compressed-{seed}', seed=seed, anchor_codec='ecuq:4',
                               correction_codec='sq:2', gradient_codec='sq:2', **common)
            baseline = self._run(run_name=f'full-{seed}', seed=seed, mode='baseline', **common)
            compressed.append(docofl.summary['final_loss'])
            full.append(baseline.summary['final_loss'])

        reference = float(np.mean(full))
        self.assertLessEqual(abs(float(np.mean(compressed)) - reference), 0.02 * reference)

    def test_reduction_factors(self):
        # random initial weights keep every correction non-constant
        result = self._run(run_name='bits', task='mlp', anchor_codec='sq:2', correction_codec='sq:2', rounds=50)
        reduction = result.summary['reduction']
        d = result.summary['dimension']
        self.assertEqual(reduction['online'], 16.0)
        self.assertEqual(reduction['total'], 8.0)
        self.assertEqual(reduction['nominal_online'], 16.0)
        self.assertEqual(result.summary['total_corr_bits'], 50 * 5 * 2 * d)


# ============================================================================
# ANCHOR ERROR RATIO
# ============================================================================

class TestAnchorErrorRatio(PipelineTestCase):

    def test_mean_rho_under_uniform_policy(self):
        """Anchor rounds hold age-0 anchors only and leave rho undefined"""
        rho = {}
        for bits in (2, 4, 8):
            result = self._run(run_name=f'uniform-rho-{bits}', dimension=64, clients=100, per_round=10, rounds=300,
                               learning_rate='0.5', sampling='iid', anchor_rate=10, queue_capacity=3,
                               anchor_codec=f'ecuq:{bits}', correction_codec='sq:2')
            frame = pd.read_csv(result.metrics_path)
            self.assertTrue(frame.loc[frame['round'] % 10 == 0, 'rho'].isna().all())
            self.assertTrue(frame.loc[frame['round'] % 10 != 0, 'rho'].notna().all())
            rho[bits] = result.summary['mean_rho']

        self.assertGreater(rho[2], rho[4])
        self.assertGreater(rho[4], rho[8])
        self.assertGreaterEqual(rho[8], 0.9)
        self.assertLessEqual(rho[8], 1.1)

    def test_rho_falls_with_anchor_bits(self):
        """Notice windows of 5 and 15 rounds keep every anchor at least 5 rounds old"""
        rho = {}
        for bits in (2, 4, 8):
            result = self._run(run_name=f'rho-{bits}', dimension=64, clients=100, per_round=10, rounds=600,
                               learning_rate='0.5', policy='two_tier', strong_delay=5, weak_delay=15,
                               anchor_rate=10, queue_capacity=3, anchor_codec=f'ecuq:{bits}',
                               correction_codec='sq:2')
            self.assertGreaterEqual(result.summary['mean_anchor_age'], 5.0)
            rho[bits] = result.summary['pooled_rho']

        self.assertGreater(rho[2], rho[4])
        self.assertGreater(rho[4], rho[8])
        self.assertGreaterEqual(rho[8], 0.999)
        self.assertLessEqual(rho[8], 1.1)


# ============================================================================
# STALENESS
# ============================================================================

class TestStaleness(PipelineTestCase):

    def _sweep(self, anchor_rates, capacities):
        template = ExperimentConfig(run_name='kv', task='logistic', dimension=16, clients=20, per_round=5,
                                    samples_per_client=20, rounds=200, anchor_choice='oldest', log_every=0)
        result = kv_sweep(template, anchor_rates=anchor_rates, capacities=capacities)
        self.assertEqual(result['status'], 'success')
        return result['table']

    def test_correction_norm_grows_with_anchor_rate(self):
        table = self._sweep((1, 2, 5, 10), (1,))
        self.assertEqual(list(table['staleness']), [1, 2, 5, 10])
        self.assertTrue(table['mean_corr_norm'].is_monotonic_increasing)
        self.assertTrue(table['mean_corr_norm'].is_unique)

    def test_correction_norm_grows_with_queue_capacity(self):
        table = self._sweep((2,), (1, 2, 3))
        self.assertEqual(list(table['staleness']), [2, 4, 6])
        self.assertTrue(table['mean_corr_norm'].is_monotonic_increasing)
        self.assertTrue(table['mean_corr_norm'].is_unique)

    def test_staleness_costs_loss_at_fixed_budgets(self):
        """ecuq:4 anchors, 1-bit corrections, full-batch gradients"""
        template = ExperimentConfig(run_name='kv-budget', task='logistic', dimension=16, clients=20, per_round=5,
                                    samples_per_client=20, rounds=400, batch_size=0, anchor_choice='oldest',
                                    anchor_codec='ecuq:4', correction_codec='sq:1', log_every=0)
        result = kv_sweep(template, anchor_rates=(1, 10), capacities=(1, 5))
        self.assertEqual(result['status'], 'success')
        table = result['table']
        smallest, largest = table.iloc[0], table.iloc[-1]
        self.assertEqual((smallest['staleness'], largest['staleness']), (1, 50))
        self.assertGreaterEqual(largest['final_loss'], smallest['final_loss'])
        self.assertGreater(largest['mean_corr_norm'], smallest['mean_corr_norm'])

        single = run(template.with_updates(anchor_rate=1, queue_capacity=1, run_name='kv-budget-K1-V1'), archive=False)
        self.assertEqual(single.summary['final_loss'], smallest['final_loss'])
        self.assertEqual(single.summary['mean_corr_norm'], smallest['mean_corr_norm'])


# ============================================================================
# COUNTER-EXAMPLE
# ============================================================================

class TestCounterexampleSeparation(unittest.TestCase):

    def test_naive_bias_dwarfs_docofl(self):
        table = counterexample_cmd(omegas=[0.0, 0.5], T=20000, seeds=5)['table']
        clean, noisy = table.iloc[0], table.iloc[1]

        self.assertLess(clean['naive_bias'], 1e-6)
        self.assertGreater(noisy['naive_bias'], 10 * noisy['docofl_bias'])
        self.assertGreater(noisy['residual_at_optimum'], 0.0)


# ============================================================================
# DETERMINISM
# ============================================================================

class TestDeterminism(PipelineTestCase):

    def test_rerun_is_byte_identical(self):
        params = dict(run_name='repeat', anchor_codec='ecuq:4', correction_codec='sq:2', gradient_codec='sq:2',
                      batch_size=5, seed=11)
        first = self._run(**params)
        with open(first.metrics_path, 'rb') as f:
            metrics = f.read()
        with open(os.path.join(first.run_dir, 'schedule.csv'), 'rb') as f:
            schedule = f.read()

        second = self._run(**params)
        self.assertEqual(second.run_dir, first.run_dir)
        with open(second.metrics_path, 'rb') as f:
            self.assertEqual(f.read(), metrics)
        with open(os.path.join(second.run_dir, 'schedule.csv'), 'rb') as f:
            self.assertEqual(f.read(), schedule)

    def test_workers_do_not_change_results(self):
        serial = self._run(run_name='serial', anchor_codec='sq:4', correction_codec='sq:2', rounds=60)
        pooled = self._run(run_name='pooled', anchor_codec='sq:4', correction_codec='sq:2', rounds=60, workers=3)
        a = pd.read_csv(serial.metrics_path)
        b = pd.read_csv(pooled.metrics_path)
        pd.testing.assert_frame_equal(a, b)


if __name__ == '__main__':
    unittest.main()
