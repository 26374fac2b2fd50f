"""
Test the flat key=value experiment configuration
"""

import unittest
import os
import sys
import tempfile

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.exceptions import ConfigError
from src.harness import ExperimentConfig, load_config, parse_config


class TestParseConfig(unittest.TestCase):
    """Test parsing, validation and fingerprints"""

    def test_round_trip_is_fixed_point(self):
        config = ExperimentConfig(run_name='kv-check', anchor_codec='ecuq:4', correction_codec='sq:2',
                                  gradient_codec='hadamard_sq:2', learning_rate='0.05', skew=0.3,
                                  strict_anchor=False, seed=7)
        restored = parse_config(config.to_text())
        self.assertEqual(restored, config)
        self.assertEqual(restored.to_text(), config.to_text())

    def test_comments_case_and_defaults(self):
        text = "# logistic run\n\nRUN_NAME=example\nanchor_codec = sq:4\nrounds=50\nrho_enabled=off\n"
        config = parse_config(text)
        self.assertEqual(config.run_name, 'example')
        self.assertEqual(config.anchor_codec, 'sq:4')
        self.assertEqual(config.rounds, 50)
        self.assertFalse(config.rho_enabled)
        self.assertEqual(config.queue_capacity, 3)
        self.assertEqual(config.b_w, 4.0)

    def test_unknown_key_reports_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("run_name=a\n# comment\nbogus=3\n")
        self.assertEqual(ctx.exception.line, 3)
        self.assertEqual(ctx.exception.field, 'bogus')
        self.assertIn('line 3', str(ctx.exception))

    def test_bad_value_reports_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("seed=1\nrounds=many\n")
        self.assertEqual(ctx.exception.line, 2)
        self.assertEqual(ctx.exception.field, 'rounds')

    def test_bad_boolean(self):
        with self.assertRaises(ConfigError):
            parse_config("strict_anchor=maybe\n")

    def test_cross_field_error_reports_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("per_round=20\nclients=10\n")
        self.assertEqual(ctx.exception.field, 'per_round')
        self.assertEqual(ctx.exception.line, 1)

    def test_unknown_codec(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config("correction_codec=zip:3\n")
        self.assertEqual(ctx.exception.field, 'correction_codec')

    def test_window_beyond_anchor_horizon(self):
        with self.assertRaises(ConfigError) as ctx:
            ExperimentConfig(policy='two_tier', anchor_rate=2, queue_capacity=2, weak_delay=5)
        self.assertEqual(ctx.exception.field, 'weak_delay')
        ExperimentConfig(policy='two_tier', anchor_rate=2, queue_capacity=2, weak_delay=3)
        ExperimentConfig(mode='baseline', policy='two_tier', anchor_rate=2, queue_capacity=2, weak_delay=5)

    def test_tuned_learning_rate(self):
        config = parse_config("learning_rate=tuned\n")
        self.assertTrue(config.is_tuned)
        with self.assertRaises(ConfigError):
            config.eta
        with self.assertRaises(ConfigError):
            parse_config("learning_rate=fast\n")
        self.assertEqual(ExperimentConfig(learning_rate='0.25').eta, 0.25)

    def test_fingerprint(self):
        config = ExperimentConfig()
        self.assertEqual(config.fingerprint(), ExperimentConfig().fingerprint())
        self.assertEqual(len(config.fingerprint()), 12)
        self.assertNotEqual(config.fingerprint(), config.with_updates(seed=1).fingerprint())

    def test_with_updates_validates(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig().with_updates(anchor_rate=0)


class TestLoadConfig(unittest.TestCase):
    """Test reading config files"""

    def test_load_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.env')
            with open(path, 'w') as f:
                f.write("run_name=from-file\nmode=baseline\n")
            config = load_config(path)
        self.assertEqual(config.run_name, 'from-file')
        self.assertEqual(config.mode, 'baseline')

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config('/nonexistent/run.env')


if __name__ == '__main__':
    unittest.main()
