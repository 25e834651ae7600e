from unittest import TestCase
from unittest.mock import patch, call, Mock
import contextlib
import csv
import io
import json
import logging
import os
import tempfile

import numpy as np
from sklearn.datasets import load_iris

from dynorder.dataset import synth_blocks, synth_low_rank, synth_separable, write_csv
from dynorder.errors import DataIOException, ValidationException
from dynorder.main import main, add_arguments, parse_arguments, build_config, run_command, arg_parser
from dynorder.main import activate_logging, get_log_level, print_version, COMMANDS
from dynorder.rewiring import Direction


def write_iris(path):
    data = load_iris()
    names = ['sepal_length', 'sepal_width', 'petal_length', 'petal_width']
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(names + ['class'])
        for row, target in zip(data.data, data.target):
            writer.writerow([repr(float(v)) for v in row] + [data.target_names[target]])


class DynorderMainTestCase(TestCase):

    @patch('dynorder.main.write_report')
    @patch('dynorder.main.run_command')
    @patch('dynorder.main.build_config')
    @patch('dynorder.main.initialize_reporter')
    @patch('dynorder.main.activate_logging')
    @patch('dynorder.main.get_log_level')
    @patch('dynorder.main.parse_arguments')
    @patch('dynorder.main.add_arguments')
    @patch('dynorder.main.arg_parser')
    def test_main_runs_command_and_returns_exit_code(self, mock_arg_parser, mock_add_arguments,
                                                     mock_parse_arguments, mock_get_log_level,
                                                     mock_activate_logging, mock_initialize_reporter,
                                                     mock_build_config, mock_run_command, mock_write_report):
        mock_parse_arguments.return_value = Mock(command='order', usage_report='usage.json')
        result = main()
        self.assertEqual(mock_add_arguments.call_args, call(mock_arg_parser.return_value))
        self.assertEqual(mock_parse_arguments.call_args, call(mock_arg_parser.return_value, None))
        self.assertEqual(mock_get_log_level.call_args, call(mock_parse_arguments.return_value))
        self.assertEqual(mock_activate_logging.call_args, call(mock_get_log_level.return_value))
        self.assertEqual(mock_initialize_reporter.call_args, call('dynorder order'))
        self.assertEqual(mock_build_config.call_args, call(mock_parse_arguments.return_value))
        self.assertEqual(mock_run_command.call_args, call(mock_build_config.return_value))
        self.assertEqual(result, mock_run_command.return_value)
        self.assertEqual(mock_write_report.call_args, call('usage.json'))

    @patch('dynorder.main.write_report')
    @patch('dynorder.main.run_command')
    @patch('dynorder.main.build_config')
    @patch('dynorder.main.initialize_reporter')
    @patch('dynorder.main.activate_logging')
    @patch('dynorder.main.parse_arguments')
    @patch('dynorder.main.add_arguments')
    @patch('dynorder.main.arg_parser')
    def test_main_returns_exception_exit_code(self, mock_arg_parser, mock_add_arguments, mock_parse_arguments,
                                              mock_activate_logging, mock_initialize_reporter, mock_build_config,
                                              mock_run_command, mock_write_report):
        mock_parse_arguments.return_value = Mock(command='order', usage_report=None, quiet=True)
        mock_run_command.side_effect = DataIOException('unreadable')
        with contextlib.redirect_stderr(io.StringIO()) as stderr:
            result = main()
        self.assertEqual(result, 2)
        self.assertIn('unreadable', stderr.getvalue())
        self.assertFalse(mock_write_report.called)

    def test_add_arguments_creates_commands(self):
        parser = arg_parser()
        add_arguments(parser)
        parsed = parser.parse_args(['order', '--input', 'a.csv', '--clusters', '3', '--lambda', '0.2'])
        self.assertEqual(parsed.command, 'order')
        self.assertEqual(parsed.input, ['a.csv'])
        self.assertEqual(parsed.clusters, 3)
        self.assertEqual(parsed.lam, 0.2)
        self.assertIsNone(parsed.metric)

    @patch('dynorder.main.sys')
    def test_parse_arguments_exits_without_command(self, mock_sys):
        mock_parser = Mock()
        mock_parser.parse_args.return_value = Mock(version=False, command=None)
        parse_arguments(mock_parser)
        self.assertEqual(mock_sys.exit.call_args, call(1))
        self.assertTrue(mock_parser.print_help.called)

    @patch('dynorder.main.sys')
    @patch('dynorder.main.print_version')
    def test_parse_arguments_exits_with_version(self, mock_print_version, mock_sys):
        mock_parser = Mock()
        mock_parser.parse_args.return_value = Mock(version=True)
        parsed = parse_arguments(mock_parser)
        self.assertEqual(parsed, mock_parser.parse_args.return_value)
        self.assertTrue(mock_print_version.called)
        self.assertEqual(mock_sys.exit.call_args, call(0))

    @patch('dynorder.main.version')
    def test_print_version(self, mock_version):
        mock_version.return_value = 'dynorder 0.1.0 (numpy 1.26.4)'
        with contextlib.redirect_stdout(io.StringIO()) as stdout:
            print_version()
        self.assertEqual(stdout.getvalue(), 'dynorder 0.1.0 (numpy 1.26.4)\n')

    def test_get_log_level(self):
        self.assertEqual(get_log_level(Mock(quiet=True)), logging.CRITICAL)
        self.assertEqual(get_log_level(Mock(quiet=False, verbose=True)), logging.INFO)
        self.assertEqual(get_log_level(Mock(quiet=False, verbose=False, debug=True)), logging.DEBUG)
        self.assertEqual(get_log_level(Mock(quiet=False, verbose=False, debug=False)), logging.WARNING)

    @patch('dynorder.main.logging')
    def test_activate_logging(self, mock_logging):
        activate_logging(logging.INFO)
        self.assertIn(call('dynorder.rewiring'), mock_logging.getLogger.call_args_list)
        self.assertEqual(mock_logging.getLogger.return_value.setLevel.call_args, call(logging.INFO))

    def test_build_config_normalizes_direction(self):
        parser = arg_parser()
        add_arguments(parser)
        cfg = build_config(parser.parse_args(['order', '--input', 'a.csv', '--direction', 'asc']))
        self.assertEqual(cfg.direction, Direction.ASCENDING)
        self.assertEqual(cfg.input, ['a.csv'])

    def test_build_config_requires_input(self):
        parser = arg_parser()
        add_arguments(parser)
        with self.assertRaises(ValidationException):
            build_config(parser.parse_args(['order']))

    def test_run_command_dispatches(self):
        cfg = Mock(command='analyze')
        with patch.dict(COMMANDS, {'analyze': Mock(return_value=0)}):
            self.assertEqual(run_command(cfg), 0)
            self.assertEqual(COMMANDS['analyze'].call_args, call(cfg))

    def test_run_command_wraps_linear_algebra_errors(self):
        with patch.dict(COMMANDS, {'order': Mock(side_effect=np.linalg.LinAlgError('singular'))}):
            with self.assertRaises(Exception) as context:
                run_command(Mock(command='order'))
        self.assertEqual(context.exception.exit_code, 4)


    def test_run_command_wraps_os_errors(self):
        with patch.dict(COMMANDS, {'train': Mock(side_effect=PermissionError('denied'))}):
            with self.assertRaises(DataIOException) as context:
                run_command(Mock(command='train'))
        self.assertEqual(context.exception.exit_code, 2)


class CommandLineTestCase(TestCase):

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.iris = self.path('iris.csv')
        write_iris(self.iris)

    def tearDown(self):
        self.directory.cleanup()

    def path(self, name):
        return os.path.join(self.directory.name, name)

    def run_main(self, *argv):
        with contextlib.redirect_stdout(io.StringIO()) as stdout, contextlib.redirect_stderr(io.StringIO()) as stderr:
            code = main(['--quiet'] + list(argv))
        self.errors = stderr.getvalue()
        return code, stdout.getvalue()

    def read(self, name):
        with open(self.path(name), 'rb') as f:
            return f.read()

    def test_analyze_iris(self):
        code, output = self.run_main('analyze', '--input', self.iris, '--label', 'class', '--out', self.path('r.json'))
        self.assertEqual(code, 0)
        with open(self.path('r.json')) as f:
            report = json.load(f)
        self.assertEqual(report['dataset'], 'iris')
        self.assertAlmostEqual(report['mean_idf'], 0.6875)
        self.assertEqual(report['intrinsic_dims'], [4, 3, 2, 2])
        self.assertIn('iris: ordering not recommended', self.errors)
        self.assertEqual(output, '')

    def test_analyze_stdout_is_json_and_repeatable(self):
        code, first = self.run_main('analyze', '--input', self.iris, '--label', 'class')
        self.assertEqual(code, 0)
        self.assertEqual(json.loads(first)['intrinsic_dims'], [4, 3, 2, 2])
        _, second = self.run_main('analyze', '--input', self.iris, '--label', 'class')
        self.assertEqual(first.encode('utf-8'), second.encode('utf-8'))

    def test_analyze_csv_to_stdout(self):
        code, output = self.run_main('analyze', '--input', self.iris, '--label', 'class', '--format', 'csv')
        self.assertEqual(code, 0)
        rows = list(csv.reader(io.StringIO(output)))
        self.assertEqual(rows[0][:2], ['rank', 'dataset'])
        self.assertEqual(rows[1][:2], ['1', 'iris'])
        self.assertEqual(len(rows), 2)

    def test_analyze_ranking_csv(self):
        blocks = self.path('blocks.csv')
        write_csv(synth_blocks(80, [10, 10], 0.95, seed=0), blocks)
        low_rank = self.path('low_rank.csv')
        write_csv(synth_low_rank(80, 30, 2, seed=0), low_rank)
        code, _ = self.run_main('analyze', '--input', blocks, low_rank, '--format', 'csv',
                                '--out', self.path('rank.csv'))
        self.assertEqual(code, 0)
        with open(self.path('rank.csv')) as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['rank', 'dataset', 'foe', 'complexity', 'psi_star', 'mean_idf', 'auc'])
        self.assertEqual([row[0] for row in rows[1:]], ['1', '2'])

    def test_order_writes_outputs(self):
        code, _ = self.run_main('order', '--input', self.iris, '--label', 'class', '--clusters', '3',
                                '--out', self.path('perm.json'), '--trace', self.path('trace.jsonl'),
                                '--reordered-out', self.path('reordered.csv'), '--edges-out', self.path('edges.csv'))
        self.assertEqual(code, 0)
        with open(self.path('perm.json')) as f:
            permutation = json.load(f)
        self.assertEqual(sorted(permutation['order']), [0, 1, 2, 3])
        with open(self.path('reordered.csv')) as f:
            header = f.readline().strip().split(',')
        self.assertEqual(header, permutation['column_names'] + ['class'])
        with open(self.path('trace.jsonl')) as f:
            self.assertTrue(all('quality' in json.loads(line) for line in f))
        with open(self.path('edges.csv')) as f:
            self.assertEqual(f.readline().strip(), 'cluster_id,u,v,weight,dissimilarity')

    def test_order_is_deterministic(self):
        for name in ('a.json', 'b.json'):
            self.run_main('order', '--input', self.iris, '--label', 'class', '--seed', '7', '--out', self.path(name))
        self.assertEqual(self.read('a.json'), self.read('b.json'))

    def test_order_permutation_csv(self):
        code, _ = self.run_main('order', '--input', self.iris, '--label', 'class', '--clusters', '2', '--format', 'csv',
                                '--out', self.path('perm.csv'))
        self.assertEqual(code, 0)
        self.assertTrue(self.read('perm.csv').startswith(b'order\n'))

    def test_train_and_reuse_permutation(self):
        data = self.path('toy.csv')
        write_csv(synth_separable(120, 3, seed=1, margin=1.0), data, 'y')
        self.run_main('order', '--input', data, '--label', 'y', '--clusters', '2', '--out', self.path('perm.json'))
        for name in ('m1.json', 'm2.json'):
            code, output = self.run_main('train', '--input', data, '--label', 'y', '--permutation',
                                         self.path('perm.json'), '--epochs', '20', '--lr', '0.05',
                                         '--out', self.path(name), '--trace', self.path('loss.csv'))
            self.assertEqual(code, 0)
        summary = json.loads(output)
        self.assertEqual(summary['epochs'], 20)
        self.assertIn('accuracy', summary)
        self.assertEqual(self.read('m1.json'), self.read('m2.json'))
        with open(self.path('loss.csv')) as f:
            self.assertEqual(len(f.readlines()), 21)

    def test_train_needs_labels(self):
        unlabeled = self.path('unlabeled.csv')
        write_csv(synth_blocks(40, [2, 2], 0.5, seed=0), unlabeled)
        code, _ = self.run_main('train', '--input', unlabeled, '--out', self.path('m.json'))
        self.assertEqual(code, 3)

    def test_missing_input_is_io_error(self):
        code, _ = self.run_main('analyze', '--input', self.path('missing.csv'))
        self.assertEqual(code, 2)

    def test_non_utf8_input_is_validation_error(self):
        with open(self.path('latin.csv'), 'wb') as f:
            f.write(b'a,b\n1,2\n\xff\xfe,3\n')
        code, _ = self.run_main('analyze', '--input', self.path('latin.csv'))
        self.assertEqual(code, 3)
        self.assertIn('Row 3', self.errors)

    def test_zero_workers_is_validation_error(self):
        code, _ = self.run_main('order', '--input', self.iris, '--label', 'class', '--workers', '0')
        self.assertEqual(code, 3)

    def test_unknown_label_is_validation_error(self):
        code, _ = self.run_main('order', '--input', self.iris, '--label', 'species')
        self.assertEqual(code, 3)

    def test_too_many_clusters_is_validation_error(self):
        code, _ = self.run_main('order', '--input', self.iris, '--label', 'class', '--clusters', '151')
        self.assertEqual(code, 3)

    def test_yaml_config_supplies_settings(self):
        config = self.path('dynorder.yaml')
        with open(config, 'w') as f:
            f.write('input: {}\nlabel: class\nclusters: 2\nformat: csv\n'.format(self.iris))
        code, _ = self.run_main('--config', config, 'order', '--out', self.path('perm.csv'))
        self.assertEqual(code, 0)
        self.assertTrue(self.read('perm.csv').startswith(b'order\n'))

    def test_usage_report(self):
        code, _ = self.run_main('--usage-report', self.path('usage.json'), 'order', '--input', self.iris,
                                '--label', 'class', '--clusters', '2', '--out', self.path('perm.json'))
        self.assertEqual(code, 0)
        with open(self.path('usage.json')) as f:
            usage = json.load(f)
        self.assertEqual(usage['name'], 'dynorder order')
        self.assertIn('rewire cluster 0', [child['name'] for child in usage['children']])

    def test_wide_input_smoke(self):
        wide = self.path('wide.csv')
        write_csv(synth_blocks(300, [50] * 4, 0.6, seed=2), wide)
        code, _ = self.run_main('order', '--input', wide, '--clusters', '4', '--out', self.path('perm.json'))
        self.assertEqual(code, 0)
        with open(self.path('perm.json')) as f:
            self.assertEqual(sorted(json.load(f)['order']), list(range(200)))
