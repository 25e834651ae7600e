from unittest import TestCase
import os
import tempfile

from dynorder.context import RunConfig, ConfigFileException, InvalidWorkersException, load_config_file
from dynorder.errors import ValidationException
from dynorder.fusion import TaskLoss


class RunConfigTestCase(TestCase):

    def test_defaults(self):
        cfg = RunConfig()
        self.assertEqual(cfg.clusters, 12)
        self.assertEqual(cfg.direction, 'descending')
        self.assertEqual(cfg.mutation_prob, 0.2)
        self.assertEqual(cfg.tolerance, 0.021)
        self.assertEqual(cfg.lambda_d, 0.4)
        self.assertEqual(cfg.lambda_g, 0.3)
        self.assertEqual(cfg.lr, 0.001)
        self.assertEqual(cfg.thresholds, [0.9975, 0.99, 0.95, 0.90])

    def test_sets_known_fields(self):
        cfg = RunConfig({'clusters': 3, 'metric': 'kl'})
        self.assertEqual(cfg.clusters, 3)
        self.assertEqual(cfg.metric, 'kl')

    def test_ignores_none_and_unknown_fields(self):
        cfg = RunConfig({'clusters': None, 'colour': 'blue'})
        self.assertEqual(cfg.clusters, 12)
        self.assertFalse(hasattr(cfg, 'colour'))

    def test_validate_rejects_non_positive_workers(self):
        for workers in (0, -2, 'two', True):
            with self.assertRaises(InvalidWorkersException) as context:
                RunConfig({'workers': workers}).validate()
            self.assertEqual(context.exception.exit_code, 3)
        self.assertEqual(RunConfig({'workers': 3}).validate().workers, 3)
        self.assertIsNone(RunConfig().validate().workers)

    def test_from_sources_validates(self):
        with self.assertRaises(InvalidWorkersException):
            RunConfig.from_sources({'workers': 0})

    def test_rewiring_config(self):
        cfg = RunConfig({'lam': 0.2, 'decay': 0.03, 'theta': 0.5, 'centrality': 'eigenvector', 'seed': 9})
        rewiring = cfg.rewiring_config()
        self.assertEqual(rewiring.learning_rate_lambda, 0.2)
        self.assertEqual(rewiring.decay_epsilon, 0.03)
        self.assertEqual(rewiring.prune_theta, 0.5)
        self.assertEqual(rewiring.centrality, 'eigenvector')
        self.assertEqual(rewiring.seed, 9)
        rewiring.validate()

    def test_loss_and_fusion_configs(self):
        cfg = RunConfig({'loss': 'dispersion', 'lambda_reg': 0.2, 'd': 4, 'window': 2})
        loss = cfg.loss_config(TaskLoss.CCE, [1.0, 2.0, 3.0])
        self.assertEqual(loss.mode, 'dispersion')
        self.assertEqual(loss.lambda_reg, 0.2)
        self.assertEqual(loss.class_weights, [1.0, 2.0, 3.0])
        fusion = cfg.fusion_config(5, TaskLoss.CCE, 3)
        self.assertEqual((fusion.m, fusion.d, fusion.outputs, fusion.window), (5, 4, 3, 2))
        self.assertEqual(cfg.fusion_config(5, TaskLoss.BCE, 2).outputs, 1)


class ConfigFileTestCase(TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.directory.cleanup()

    def write(self, text):
        path = os.path.join(self.directory.name, 'dynorder.yaml')
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_explicit_arguments_override_file(self):
        path = self.write('clusters: 4\nmetric: manhattan\nthresholds: [0.99, 0.9]\n')
        cfg = RunConfig.from_sources({'clusters': 6, 'metric': None}, path)
        self.assertEqual(cfg.clusters, 6)
        self.assertEqual(cfg.metric, 'manhattan')
        self.assertEqual(cfg.thresholds, [0.99, 0.9])

    def test_empty_file(self):
        self.assertEqual(load_config_file(self.write('')), {})

    def test_missing_file(self):
        with self.assertRaises(ConfigFileException) as context:
            load_config_file(os.path.join(self.directory.name, 'missing.yaml'))
        self.assertEqual(context.exception.exit_code, 2)

    def test_invalid_yaml(self):
        with self.assertRaises(ValidationException):
            load_config_file(self.write('clusters: [4\n'))

    def test_must_be_a_mapping(self):
        with self.assertRaises(ValidationException):
            load_config_file(self.write('- 1\n- 2\n'))

    def test_unknown_keys_are_logged(self):
        with self.assertLogs('dynorder.context', level='WARNING') as logs:
            load_config_file(self.write('clusters: 4\ncolour: blue\n'))
        self.assertIn('colour', logs.output[0])
