"""
Test bandwidth accounting, reduction factors and the metrics file
"""

import unittest
import math
import os
import sys
import tempfile

import numpy as np
import pandas as pd

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.codec import make_compressor
from src.codec.blob import encode_raw
from src.telemetry import (
    ANCHOR_DOWNLINK,
    CORRECTION_DOWNLINK,
    METRICS_COLUMNS,
    UPLINK,
    BandwidthLedger,
    MetricsRow,
    convergence_summary,
    read_metrics_csv,
    record_transfer,
    pooled_rho,
    reduction_report,
    rho_ratio,
    rho_terms,
    write_metrics_csv,
)


def _sessions(anchor_spec, correction_spec, d=1024, sessions=5):
    rng = np.random.default_rng(0)
    anchor_codec = make_compressor(anchor_spec)
    correction_codec = make_compressor(correction_spec)
    ledger = BandwidthLedger()
    for k in range(sessions):
        x = rng.normal(size=d)
        record_transfer(ledger, ANCHOR_DOWNLINK, anchor_codec.encode(x, seed=k), client_id=k)
        record_transfer(ledger, CORRECTION_DOWNLINK, correction_codec.encode(0.1 * x, seed=k), client_id=k)
        ledger.record_session(d)
    return ledger


def _row(t, loss=1.0, grad=1.0, corr=1.0, rho=math.nan, bits=100):
    return MetricsRow(round=t, train_loss=loss, grad_sq_norm=grad, mean_corr_norm=corr, rho=rho,
                      anchor_bits=0, corr_bits=bits, uplink_bits=bits, cum_anchor_bits=0,
                      cum_corr_bits=bits * (t + 1), cum_uplink_bits=bits * (t + 1))


class TestBandwidthLedger(unittest.TestCase):
    """Test bit-exact recording"""

    def test_identity_costs_full_precision(self):
        ledger = record_transfer(BandwidthLedger(), UPLINK, encode_raw(np.zeros(100)))
        self.assertEqual(ledger.total(UPLINK), 3200)
        self.assertEqual(ledger.side_info_bits[UPLINK], 0)

    def test_empty_payload_adds_nothing(self):
        blob = make_compressor('sq:2').encode(np.zeros(16), seed=0)
        ledger = record_transfer(BandwidthLedger(), CORRECTION_DOWNLINK, blob, client_id=3)
        self.assertEqual(ledger.total(CORRECTION_DOWNLINK), 0)
        self.assertGreater(ledger.total(CORRECTION_DOWNLINK, include_side_info=True), 0)
        self.assertEqual(ledger.transfers[CORRECTION_DOWNLINK], 1)

    def test_records_are_additive(self):
        a = encode_raw(np.ones(10))
        b = make_compressor('sq:3').encode(np.arange(10.0), seed=1)
        ledger = BandwidthLedger()
        record_transfer(ledger, UPLINK, a)
        record_transfer(ledger, UPLINK, b)
        self.assertEqual(ledger.total(UPLINK), a.bit_length + b.bit_length)
        self.assertEqual(ledger.round_bits[UPLINK], a.bit_length + b.bit_length)

        ledger.start_round()
        self.assertEqual(ledger.round_bits[UPLINK], 0)
        self.assertEqual(ledger.total(UPLINK), a.bit_length + b.bit_length)

    def test_unknown_channel(self):
        with self.assertRaises(ValueError):
            record_transfer(BandwidthLedger(), 'sidechannel', encode_raw(np.ones(2)))

    def test_per_client_online_bits(self):
        ledger = _sessions('sq:2', 'sq:2', d=64, sessions=3)
        self.assertEqual(dict(ledger.client_online_bits), {0: 128, 1: 128, 2: 128})


class TestReductionReport(unittest.TestCase):
    """Test reduction factors against 32-bit transport"""

    def test_two_and_two_bits(self):
        report = reduction_report(_sessions('sq:2', 'sq:2'))
        self.assertEqual(report.online, 16.0)
        self.assertEqual(report.total, 8.0)

    def test_full_precision(self):
        report = reduction_report(_sessions('identity', 'identity'))
        self.assertEqual(report.online, 1.0)
        self.assertEqual(report.total, 0.5)

    def test_four_and_one_bits(self):
        report = reduction_report(_sessions('sq:4', 'sq:1'))
        self.assertEqual(report.online, 32.0)
        self.assertAlmostEqual(report.total, 6.4)

    def test_side_info_lowers_reduction(self):
        report = reduction_report(_sessions('sq:2', 'sq:2'))
        self.assertLess(report.online_with_side_info, report.online)

    def test_nominal_budgets(self):
        ledger = _sessions('sq:2', 'sq:2')
        report = reduction_report(ledger, {'b_w': 2, 'b_c': 2})
        self.assertEqual(report.nominal_online, 16.0)
        self.assertEqual(report.nominal_total, 8.0)

        report = reduction_report(ledger, {'anchor_codec': 'ecuq:4', 'correction_codec': 'sq:1'})
        self.assertEqual(report.nominal_online, 32.0)
        self.assertAlmostEqual(report.nominal_total, 6.4)

    def test_no_sessions(self):
        with self.assertRaises(ValueError):
            reduction_report(BandwidthLedger())


class TestMetrics(unittest.TestCase):
    """Test rho, run summaries and the CSV layout"""

    def test_rho_ratio(self):
        self.assertEqual(rho_ratio([2.0, 2.0], [1.0, 3.0]), 1.0)
        self.assertTrue(math.isnan(rho_ratio([1.0], [0.0])))

    def test_negative_rho_rejected(self):
        with self.assertRaises(ValueError):
            _row(0, rho=-0.5)

    def test_summary(self):
        rows = [_row(t, loss=10.0 - t, grad=float(t), corr=10.0 - t, rho=1.0 + 0.1 * t) for t in range(10)]
        summary = convergence_summary(rows, warmup=5, final_distance=5e-4)

        self.assertEqual(summary['rounds'], 10)
        self.assertEqual(summary['final_loss'], 1.0)
        self.assertEqual(summary['avg_grad_sq_norm'], 4.5)
        self.assertEqual(summary['first_decile_corr_norm'], 10.0)
        self.assertEqual(summary['last_decile_corr_norm'], 1.0)
        self.assertAlmostEqual(summary['mean_rho'], 1.7)
        self.assertEqual(summary['total_corr_bits'], 1000)
        self.assertTrue(summary['converged'])

    def test_pooled_rho_sums_errors(self):
        rows = [_row(0, rho=3.0), _row(1, rho=2.0), _row(2, rho=1.0)]
        for row, (compressed, exact) in zip(rows, [(3.0, 1.0), (4.0, 2.0), (1.0, 1.0)]):
            row.rho_numerator, row.rho_denominator = compressed, exact
        rows.append(_row(3))
        summary = convergence_summary(rows, warmup=1)
        self.assertAlmostEqual(summary[pooled_rho], 5.0 / 3.0)
        self.assertAlmostEqual(summary[mean_rho], 1.5)
        self.assertTrue(math.isnan(pooled_rho([_row(0)])))

    def test_rho_terms_drop_fresh_anchors(self):
        errors = [(4.0, 2.0), (1.0, 0.0), (5.0, 1e-3), None]
        compressed, exact = rho_terms(errors, [0, 3, 2, 1], weights_sq_norm=1.0)
        self.assertEqual(compressed, [5.0])
        self.assertEqual(exact, [1e-3])

    def test_rho_terms_drop_rounding_noise(self):
        """Exact errors at float32 rounding scale carry no ratio"""
        w_sq = 100.0
        noise = 0.25 * float(np.finfo(np.float32).eps) ** 2 * w_sq
        compressed, exact = rho_terms([(1e-3, noise), (2.0, 1.0)], [1, 1], weights_sq_norm=w_sq)
        self.assertEqual(exact, [1.0])
        self.assertTrue(math.isnan(rho_ratio(*rho_terms([(1e-3, noise)], [1], w_sq))))

    def test_summary_nan_rho(self):
        summary = convergence_summary([_row(t) for t in range(3)])
        self.assertTrue(math.isnan(summary['mean_rho']))
        self.assertNotIn('converged', summary)
        with self.assertRaises(ValueError):
            convergence_summary([])

    def test_csv_columns_and_nan(self):
        rows = [_row(0), _row(1, rho=1.05)]
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'metrics.csv')
            write_metrics_csv(rows, path)
            with open(path) as f:
                header = f.readline().strip().split(',')
                first = f.readline().strip().split(',')
            frame = read_metrics_csv(path)

        self.assertEqual(header, METRICS_COLUMNS)
        self.assertEqual(first[METRICS_COLUMNS.index('rho')], 'nan')
        self.assertIsInstance(frame, pd.DataFrame)
        self.assertAlmostEqual(frame['rho'].iloc[1], 1.05)


if __name__ == '__main__':
    unittest.main()
