"""
Test the anchor queue, the server and client agents and the round loop
"""

import unittest
import os
import sys

import numpy as np

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.codec import decode_blob, make_compressor
from src.codec.blob import encode_raw
from src.exceptions import NumericBlowup, ProtocolViolation
from src.protocol import (
    AnchorEntry,
    AnchorQueue,
    ClientAgent,
    ClientSession,
    FederatedSimulation,
    ParameterServerAgent,
    ProtocolSettings,
    asymptotic_bias,
    download_rounds,
    noisy_gradient_residual,
    reconstruct_estimate,
    run_docofl_counterexample,
    run_meta_algorithm,
    run_naive_weight_compression,
    run_protocol,
)
from src.scheduler import Population, two_tier_policy, uniform_policy
from src.tasks import GradientOracle, counterexample_grad, make_logistic, make_quadratic
from stat_checks import assert_unbiased


def _entry(stamp, weights):
    blob = encode_raw(weights)
    decoded = decode_blob(blob).astype(np.float64)
    return AnchorEntry(stamp=stamp, blob=blob, decoded=decoded, reference=decoded)


def _settings(**overrides):
    params = dict(mode='docofl', learning_rate=0.5, anchor_rate=5, queue_capacity=2, log_every=0, seed=3)
    params.update(overrides)
    return ProtocolSettings(**params)


class TestAnchorQueue(unittest.TestCase):
    """Test FIFO eviction and stamp checks"""

    def test_capacity_three_keeps_latest_stamps(self):
        """Anchors at 0, 10, 20, 30 with V=3 leave {10, 20, 30}"""
        queue = AnchorQueue(capacity=3, anchor_rate=10)
        evicted = [queue.enqueue(_entry(t, np.zeros(4))) for t in (0, 10, 20, 30)]

        self.assertEqual(queue.stamps, [10, 20, 30])
        self.assertEqual(evicted[-1].stamp, 0)
        self.assertTrue(all(e is None for e in evicted[:3]))
        self.assertEqual(queue.top().stamp, 30)
        self.assertEqual(queue.oldest().stamp, 10)

    def test_capacity_one_holds_latest(self):
        queue = AnchorQueue(capacity=1, anchor_rate=2)
        for t in (0, 2, 4):
            queue.enqueue(_entry(t, np.ones(2)))
            self.assertEqual(queue.stamps, [t])

    def test_off_multiple_stamp_rejected(self):
        queue = AnchorQueue(capacity=2, anchor_rate=10)
        with self.assertRaises(ProtocolViolation):
            queue.enqueue(_entry(5, np.zeros(2)))

    def test_non_increasing_stamp_rejected(self):
        queue = AnchorQueue(capacity=2, anchor_rate=10)
        queue.enqueue(_entry(10, np.zeros(2)))
        with self.assertRaises(ProtocolViolation):
            queue.enqueue(_entry(10, np.zeros(2)))

    def test_empty_queue(self):
        queue = AnchorQueue(capacity=2, anchor_rate=1)
        with self.assertRaises(ProtocolViolation):
            queue.top()
        with self.assertRaises(ValueError):
            AnchorQueue(capacity=0, anchor_rate=1)


class TestParameterServer(unittest.TestCase):
    """Test anchor deployment, corrections and the aggregation step"""

    def test_off_schedule_deployment(self):
        server = ParameterServerAgent(np.zeros(3), learning_rate=0.1, anchor_rate=10)
        server.deploy_anchor()
        server.aggregate_and_step([np.zeros(3)])
        with self.assertRaises(ProtocolViolation):
            server.deploy_anchor()

    def test_identity_anchor_decodes_to_weights(self):
        w = np.array([0.5, -1.25, 3.0])
        server = ParameterServerAgent(w, learning_rate=0.1)
        queue = server.deploy_anchor()
        np.testing.assert_array_equal(queue.top().decoded, w)

    def test_identity_correction_gives_exact_estimate(self):
        rng = np.random.default_rng(0)
        server = ParameterServerAgent(rng.normal(size=16), learning_rate=0.1, anchor_codec='sq:2')
        server.deploy_anchor()
        client = ClientAgent(oracle=None)
        session = client.obtain_anchor(client.open_session(0, 0, 0), server.queue, 0)

        packet = server.serve_correction(session)
        estimate = client.construct_estimate(session, packet)

        self.assertTrue(packet.absolute)
        np.testing.assert_array_equal(estimate, server.transported_weights)

    def test_fresh_anchor_gives_zero_correction(self):
        w = np.array([0.5, 0.25, -2.0, 1.0])
        server = ParameterServerAgent(w, learning_rate=0.1, correction_codec='sq:2')
        server.deploy_anchor()
        client = ClientAgent(oracle=None)
        session = client.obtain_anchor(client.open_session(0, 0, 0), server.queue, 0)

        packet = server.serve_correction(session)

        self.assertFalse(packet.absolute)
        self.assertEqual(packet.bits, 0)
        np.testing.assert_array_equal(client.construct_estimate(session, packet), w)

    def test_estimate_unbiased_with_biased_anchor(self):
        """Top-K anchor plus SQ corrections average to w_t"""
        rng = np.random.default_rng(7)
        w = rng.normal(size=64)
        server = ParameterServerAgent(w, learning_rate=0.1, anchor_codec='topk:0.25', correction_codec='sq:2')
        server.deploy_anchor()
        client = ClientAgent(oracle=None)

        estimates = []
        for client_id in range(10000):
            session = client.obtain_anchor(client.open_session(client_id, 0, 0), server.queue, 0)
            estimates.append(reconstruct_estimate(session.anchor, server.serve_correction(session)))

        assert_unbiased(self, estimates, w)

    def test_correction_dimension_mismatch(self):
        server = ParameterServerAgent(np.zeros(4), learning_rate=0.1, correction_codec='sq:2')
        session = ClientSession(0, 0, 0, anchor=np.zeros(3))
        with self.assertRaises(ProtocolViolation):
            server.serve_correction(session)

    def test_zero_learning_rate_keeps_weights(self):
        server = ParameterServerAgent(np.array([1.0, 2.0]), learning_rate=0.0)
        server.aggregate_and_step([np.array([5.0, -5.0])])
        np.testing.assert_array_equal(server.weights, [1.0, 2.0])
        self.assertEqual(server.round, 1)

    def test_single_exact_gradient_step(self):
        """f(w) = w^2/2, w_0 = 1, eta = 0.5 -> w_1 = 0.5"""
        server = ParameterServerAgent(np.array([1.0]), learning_rate=0.5)
        gradient = make_compressor('identity').encode(server.weights)
        server.aggregate_and_step([gradient])
        self.assertEqual(server.weights[0], 0.5)

    def test_opposite_gradients_cancel(self):
        server = ParameterServerAgent(np.array([1.0, -1.0]), learning_rate=0.3, participants_per_round=2)
        g = np.array([0.75, 2.5])
        server.aggregate_and_step([g, -g])
        np.testing.assert_array_equal(server.weights, [1.0, -1.0])

    def test_wrong_gradient_count_and_dimension(self):
        server = ParameterServerAgent(np.zeros(2), learning_rate=0.1, participants_per_round=2)
        with self.assertRaises(ProtocolViolation):
            server.aggregate_and_step([np.zeros(2)])
        with self.assertRaises(ProtocolViolation):
            server.aggregate_and_step([np.zeros(2), np.zeros(3)])

    def test_non_finite_step_raises_blowup(self):
        server = ParameterServerAgent(np.array([1.0]), learning_rate=1.0)
        with self.assertRaises(NumericBlowup) as ctx:
            server.aggregate_and_step([np.array([np.inf])])
        self.assertEqual(ctx.exception.last_good_round, 0)

    def test_raw_age_history(self):
        server = ParameterServerAgent(np.zeros(1), learning_rate=1.0, history=2)
        for t in range(4):
            server.record_history()
            server.aggregate_and_step([np.array([-1.0])])
        server.record_history()
        self.assertEqual(server.anchor_at_age(2).stamp, 2)
        self.assertEqual(server.anchor_at_age(2).decoded[0], 2.0)
        with self.assertRaises(ProtocolViolation):
            server.anchor_at_age(3)


class TestClientAgent(unittest.TestCase):
    """Test anchor acquisition, estimates and gradients"""

    def _queue(self, K, stamps, d=4):
        queue = AnchorQueue(capacity=len(stamps), anchor_rate=K)
        for stamp in stamps:
            queue.enqueue(_entry(stamp, np.full(d, float(stamp))))
        return queue

    def test_anchor_age_from_notification_fetch(self):
        """K=10, V=3, t=25, fetched at round 21 -> stamp 20, age 5"""
        client = ClientAgent(oracle=None)
        session = client.obtain_anchor(client.open_session(3, 21, 25), self._queue(10, [0, 10, 20]), 21)
        self.assertEqual(session.anchor_stamp, 20)
        self.assertEqual(session.anchor_age, 5)
        self.assertEqual(session.fetch_round, 21)

    def test_fetch_outside_window(self):
        client = ClientAgent(oracle=None)
        with self.assertRaises(ProtocolViolation):
            client.obtain_anchor(client.open_session(0, 21, 25), self._queue(10, [0, 10, 20]), 26)
        with self.assertRaises(ProtocolViolation):
            client.open_session(0, 5, 4)

    def test_empty_queue_fetch(self):
        client = ClientAgent(oracle=None)
        with self.assertRaises(ProtocolViolation):
            client.obtain_anchor(client.open_session(0, 0, 0), AnchorQueue(2, 1), 0)

    def test_oldest_choice_and_age_bound(self):
        client = ClientAgent(oracle=None)
        session = client.obtain_anchor(client.open_session(0, 20, 25), self._queue(10, [0, 10, 20]), 20,
                                       choice='oldest')
        self.assertEqual(session.anchor_age, 25)
        with self.assertRaises(ProtocolViolation):
            client.obtain_anchor(client.open_session(0, 20, 25), self._queue(10, [0, 10, 20]), 20,
                                 choice='oldest', max_age=10)

    def test_download_capacity_strict_and_lenient(self):
        """Newest anchor needs 3 rounds from its deployment; the previous one arrives in time"""
        queue = self._queue(1, [0, 1, 2], d=64)
        bits = queue.top().blob.total_bits
        capacity = -(-bits // 3)
        self.assertEqual(download_rounds(queue.top().blob, capacity), 3)

        strict = ClientAgent(oracle=None, download_capacity=capacity, strict_anchor=True)
        with self.assertRaises(ProtocolViolation):
            strict.obtain_anchor(strict.open_session(0, 0, 3), queue, 2)

        lenient = ClientAgent(oracle=None, download_capacity=capacity, strict_anchor=False)
        session = lenient.obtain_anchor(lenient.open_session(0, 0, 3), queue, 2)
        self.assertEqual(session.anchor_stamp, 1)

    def test_unlimited_download(self):
        self.assertEqual(download_rounds(encode_raw(np.zeros(8)), 0), 0)
        self.assertEqual(download_rounds(encode_raw(np.zeros(8)), 1), 256)

    def test_exact_quadratic_gradient(self):
        """f(w) = ||w||^2/2 at [1, 2] -> [1, 2]"""
        task = make_quadratic(2, 1.0, 0, clients=1, matrix=np.eye(2), centers=np.zeros((1, 2)))
        client = ClientAgent(GradientOracle(task))
        session = client.open_session(0, 0, 0)
        client.receive_weights(session, encode_raw([1.0, 2.0]))

        np.testing.assert_array_equal(decode_blob(client.compute_gradient(session)), [1.0, 2.0])

        client.receive_weights(session, encode_raw([0.0, 0.0]))
        np.testing.assert_array_equal(decode_blob(client.compute_gradient(session)), [0.0, 0.0])

    def test_compressed_gradient_unbiased(self):
        rng = np.random.default_rng(11)
        center = rng.normal(size=(1, 32))
        task = make_quadratic(32, 1.0, 0, clients=1, matrix=np.eye(32), centers=center)
        client = ClientAgent(GradientOracle(task), gradient_codec='sq:2', seed=5)
        w = rng.normal(size=32)

        samples = []
        for t in range(4000):
            session = client.open_session(0, t, t)
            session.estimate = w
            samples.append(decode_blob(client.compute_gradient(session)))

        assert_unbiased(self, samples, w - center[0])

    def test_gradient_needs_estimate(self):
        client = ClientAgent(oracle=None)
        with self.assertRaises(ProtocolViolation):
            client.compute_gradient(client.open_session(0, 0, 0))


class TestSimulation(unittest.TestCase):
    """Test the round loop and its comparison modes"""

    def setUp(self):
        self.task = make_logistic(10, 16, 20, 0.5, seed=0)
        self.schedule = uniform_policy(Population(10, 3), 60, seed=1)

    def test_identity_codecs_reproduce_baseline(self):
        docofl = run_protocol(self.task, self.schedule, _settings(), keep_trajectory=True)
        baseline = run_protocol(self.task, self.schedule, _settings(mode='baseline'), keep_trajectory=True)
        np.testing.assert_array_equal(docofl.trajectory, baseline.trajectory)

    def test_meta_age_zero_matches_baseline(self):
        settings = _settings(anchor_codec='sq:2')
        meta = run_meta_algorithm(self.task, self.schedule, settings, max_age=0, keep_trajectory=True)
        baseline = run_protocol(self.task, self.schedule, _settings(mode='baseline'), keep_trajectory=True)
        np.testing.assert_array_equal(meta.trajectory, baseline.trajectory)

    def test_meta_oldest_age(self):
        result = run_meta_algorithm(self.task, self.schedule, _settings(correction_codec='sq:4'),
                                    max_age=6, age_policy='oldest')
        self.assertEqual(max(result.anchor_ages), 6)
        self.assertEqual(result.anchor_ages[-3:], [6, 6, 6])

    def test_oldest_anchor_age_reaches_staleness_bound(self):
        K, V = 2, 3
        population = Population(10, 3).with_tiers(0.5, seed=2)
        schedule = two_tier_policy(population, 0, 1, 80, seed=2)
        result = run_protocol(self.task, schedule, _settings(anchor_rate=K, queue_capacity=V,
                                                             anchor_choice='oldest', correction_codec='sq:4'))
        self.assertEqual(max(result.anchor_ages), K * V)

    def test_queue_law_holds(self):
        K, V = 5, 2
        simulation = FederatedSimulation(self.task, self.schedule, _settings(anchor_rate=K, queue_capacity=V))
        for _ in range(23):
            simulation.step()
        t = simulation.server.round - 1
        expected = [K * (t // K) - K * j for j in reversed(range(V))]
        self.assertEqual(simulation.server.queue.stamps, expected)

    def test_workers_do_not_change_results(self):
        settings = dict(anchor_codec='sq:2', correction_codec='sq:2', gradient_codec='sq:2')
        serial = run_protocol(self.task, self.schedule, _settings(**settings))
        threaded = run_protocol(self.task, self.schedule, _settings(workers=4, **settings))
        np.testing.assert_array_equal(serial.final_weights, threaded.final_weights)
        self.assertEqual([r.cum_corr_bits for r in serial.rows], [r.cum_corr_bits for r in threaded.rows])

    def test_rows_and_ledger(self):
        result = run_protocol(self.task, self.schedule, _settings(anchor_codec='sq:4', correction_codec='sq:2'))
        self.assertEqual(result.rounds, 60)
        self.assertEqual([r.round for r in result.rows], list(range(60)))
        self.assertEqual(result.ledger.sessions, 60 * 3)
        self.assertEqual(result.rows[-1].cum_uplink_bits, 60 * 3 * 32 * 16)
        self.assertTrue(all(r.rho >= 0 or np.isnan(r.rho) for r in result.rows))

    def test_lossless_correction_leaves_rho_undefined(self):
        result = run_protocol(self.task, self.schedule, _settings(anchor_codec='sq:2'))
        self.assertTrue(all(np.isnan(r.rho) for r in result.rows))

    def test_identity_anchor_gives_unit_rho(self):
        result = run_protocol(self.task, self.schedule, _settings(correction_codec='sq:2'))
        defined = [r.rho for r in result.rows if not np.isnan(r.rho)]
        self.assertTrue(defined)
        for rho in defined:
            self.assertEqual(rho, 1.0)

    def test_checkpoints_written(self):
        import tempfile
        from src.codec import read_blob_stream

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'checkpoints.bin')
            result = run_protocol(self.task, self.schedule, _settings(checkpoint_every=20, checkpoint_path=path))
            blobs = list(read_blob_stream(path))
        self.assertEqual(len(blobs), 4)
        np.testing.assert_allclose(decode_blob(blobs[-1]), result.final_weights, rtol=1e-6)

    def test_invalid_settings(self):
        with self.assertRaises(ValueError):
            _settings(mode='gossip')
        with self.assertRaises(ValueError):
            _settings(anchor_rate=0)


class TestCounterexample(unittest.TestCase):
    """Test the scalar task where naive weight compression stalls"""

    def test_gradient_values(self):
        self.assertEqual(float(counterexample_grad(1.0)), 0.0)
        self.assertEqual(float(counterexample_grad(2.0)), 2.0)
        self.assertEqual(float(counterexample_grad(0.0)), -1.0)

    def test_noiseless_naive_converges(self):
        trajectory = run_naive_weight_compression(0.0, 0.1, 500, seed=0)
        self.assertLess(abs(trajectory[-1] - 1.0), 1e-6)

    def test_residual_at_optimum(self):
        self.assertEqual(noisy_gradient_residual(1.0, 0.0), 0.0)
        self.assertAlmostEqual(noisy_gradient_residual(1.0, 0.5), 0.25)

    def test_naive_bias_exceeds_docofl(self):
        naive = asymptotic_bias(run_naive_weight_compression(0.5, 0.05, 4000, seed=1))
        docofl = asymptotic_bias(run_docofl_counterexample(0.5, 0.05, 4000, seed=1))
        self.assertGreater(naive, 10 * docofl)

    def test_negative_noise_rejected(self):
        with self.assertRaises(ValueError):
            run_naive_weight_compression(-0.1, 0.05, 10, seed=0)


if __name__ == '__main__':
    unittest.main()
