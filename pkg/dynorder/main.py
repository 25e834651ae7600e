import argparse
import json
import logging
import os
import sys

import numpy as np

from dynorder import foe
from dynorder.context import RunConfig
from dynorder.dataset import Task, load_csv, standardize, write_csv
from dynorder.errors import DataIOException, DynorderException, NumericException, ValidationException
from dynorder.fusion import (TaskLoss, accuracy, balanced_class_weights, fit, predict, save_checkpoint,
                             write_loss_trace)
from dynorder.global_order import apply_permutation, read_permutation, write_permutation
from dynorder.graph import Metric, write_edge_list
from dynorder.pipeline import order_features
from dynorder.report import initialize_reporter, timed_stage, to_csv_text, to_json_text, write_json_lines_atomic, \
    write_report, write_text_atomic
from dynorder.rewiring import Centrality, Direction
from dynorder.version import version

log = logging.getLogger("dynorder.main")

DIRECTIONS = {'asc': Direction.ASCENDING, 'desc': Direction.DESCENDING,
              Direction.ASCENDING: Direction.ASCENDING, Direction.DESCENDING: Direction.DESCENDING}

TASK_LOSSES = {Task.BINARY: TaskLoss.BCE, Task.MULTICLASS: TaskLoss.CCE, Task.REGRESSION: TaskLoss.MSE}


class UnlabeledDataException(ValidationException):
    pass


def get_log_level(parsed_args):
    level = logging.WARNING
    if parsed_args.quiet:
        level = logging.CRITICAL
    elif parsed_args.verbose:
        level = logging.INFO
    elif parsed_args.debug:
        level = logging.DEBUG
    return level


def activate_logging(level):
    loggers = ['dataset', 'foe', 'graph', 'rewiring', 'global_order', 'fusion', 'executor', 'pipeline', 'report',
               'context', 'main']
    for logger in loggers:
        logging.getLogger('dynorder.{}'.format(logger)).setLevel(level)
        logging.getLogger('dynorder.{}'.format(logger)).addHandler(logging.StreamHandler())


def add_data_arguments(parser):
    parser.add_argument('--input', type=str, nargs='+', help='Input CSV file(s) with a header row')
    parser.add_argument('--label', type=str, help='Name of the label column')
    parser.add_argument('--drop-missing', action='store_true', default=None, help='Drop rows with missing values')
    parser.add_argument('--seed', type=int, help='Random seed')
    parser.add_argument('--out', type=str, help='Output file; standard output when omitted')
    parser.add_argument('--format', type=str, choices=['json', 'csv'], help='Output format')


def add_ordering_arguments(parser):
    parser.add_argument('--clusters', type=int, help='Number of sample clusters k')
    parser.add_argument('--metric', type=str, choices=Metric.ALL, help='Edge metric between features')
    parser.add_argument('--direction', type=str, choices=sorted(DIRECTIONS), help='Sorting direction of local orders')
    parser.add_argument('--tolerance', type=float, help='Stop rewiring when quality improves by less than this')
    parser.add_argument('--mutation-prob', type=float, help='Probability of trying a random transposition')
    parser.add_argument('--theta', type=float, help='Pruning threshold for edge weights')
    parser.add_argument('--lambda', dest='lam', type=float, help='Hebbian learning rate')
    parser.add_argument('--decay', type=float, help='Hebbian weight decay')
    parser.add_argument('--centrality', type=str, choices=Centrality.ALL, help='Centrality used for rewiring')
    parser.add_argument('--max-rounds', type=int, help='Maximum rewiring rounds per cluster')
    parser.add_argument('--workers', type=int, help='Threads used to rewire clusters')


def add_training_arguments(parser):
    parser.add_argument('--permutation', type=str, help='Permutation file from the order command')
    parser.add_argument('--loss', type=str, choices=['dfo', 'dispersion'], help='Training loss mode')
    parser.add_argument('--lambda-d', type=float, help='Weight of the dispersion penalty')
    parser.add_argument('--lambda-g', type=float, help='Weight of the coherence penalty')
    parser.add_argument('--lambda-reg', type=float, help='Weight of the dispersion penalty in dispersion mode')
    parser.add_argument('--d', type=int, help='Token width')
    parser.add_argument('--d-k', type=int, help='Attention width')
    parser.add_argument('--window', type=int, help='Attention window; full causal when omitted')
    parser.add_argument('--balanced', action='store_true', default=None, help='Weight classes by inverse frequency')
    parser.add_argument('--epochs', type=int, help='Full-batch training epochs')
    parser.add_argument('--lr', type=float, help='Learning rate')


def add_arguments(parser):
    parser.add_argument('--version', action='store_true', help='Print version and exit')
    parser.add_argument('--quiet', action='store_true', help='Only log critical errors')
    parser.add_argument('--verbose', action='store_true', help='Log progress')
    parser.add_argument('--debug', action='store_true', help='Log details')
    parser.add_argument('--config', type=str, help='YAML file of settings; explicit flags take precedence')
    parser.add_argument('--usage-report', type=str, help='Output JSON file name to record stage timings')
    commands = parser.add_subparsers(dest='command')

    analyze = commands.add_parser('analyze', help='Predict whether feature ordering will help')
    add_data_arguments(analyze)

    order = commands.add_parser('order', help='Compute a global feature order')
    add_data_arguments(order)
    add_ordering_arguments(order)
    order.add_argument('--trace', type=str, help='JSON lines file of rewiring rounds')
    order.add_argument('--reordered-out', type=str, help='CSV file of the input with columns reordered')
    order.add_argument('--edges-out', type=str, help='CSV edge list of the rewired graphs')

    train = commands.add_parser('train', help='Train the order-aware fusion network')
    add_data_arguments(train)
    add_ordering_arguments(train)
    add_training_arguments(train)
    train.add_argument('--trace', type=str, help='CSV file of per-epoch losses')


def print_version():
    print(version())


def parse_arguments(parser, argv=None):
    args = parser.parse_args(argv)
    if args.version:
        print_version()
        sys.exit(0)
    if not args.command:
        parser.print_help()
        sys.exit(1)
    return args


def build_config(parsed_args):
    arguments = dict(vars(parsed_args))
    config = RunConfig.from_sources(arguments, parsed_args.config)
    if isinstance(config.input, str):
        config.input = [config.input]
    if not config.input:
        raise ValidationException('No input file given (--input)')
    if config.direction not in DIRECTIONS:
        raise ValidationException('Unknown direction {}'.format(config.direction))
    config.direction = DIRECTIONS[config.direction]
    return config


def emit(path, text):
    if path:
        write_text_atomic(path, text)
    else:
        sys.stdout.write(text)


def dataset_name(path):
    return os.path.splitext(os.path.basename(path))[0]


def load_input(cfg, path):
    with timed_stage('load {}'.format(dataset_name(path))):
        return load_csv(path, cfg.label, bool(cfg.drop_missing))


def single_input(cfg):
    if len(cfg.input) != 1:
        raise ValidationException('{} takes one input file, got {}'.format(cfg.command, len(cfg.input)))
    return load_input(cfg, cfg.input[0])


def cmd_analyze(cfg):
    reports = []
    for path in cfg.input:
        X = standardize(load_input(cfg, path))
        with timed_stage('analyze {}'.format(dataset_name(path))):
            reports.append(foe.analyze(X, cfg.thresholds, cfg.s, dataset=dataset_name(path)))
    if cfg.format == 'csv':
        emit(cfg.out, to_csv_text(foe.RANKING_HEADER, foe.ranking_rows(reports)))
    else:
        documents = [report.to_dict() for report in reports]
        emit(cfg.out, to_json_text(documents[0] if len(documents) == 1 else documents))
    for report in reports:
        verdict = 'ordering recommended' if foe.recommends_ordering(report) else 'ordering not recommended'
        sys.stderr.write('{}: {} (mean IDF {:.5f})\n'.format(report.dataset, verdict, report.mean_idf))
    return 0


def cmd_order(cfg):
    X = single_input(cfg)
    result = order_features(X, cfg)
    if cfg.out:
        write_permutation(cfg.out, result.ordering, cfg.format)
    else:
        emit(None, to_json_text(result.ordering.to_dict()))
    if cfg.trace:
        write_json_lines_atomic(cfg.trace, result.trace)
    if cfg.reordered_out:
        write_csv(apply_permutation(X, result.ordering.order), cfg.reordered_out, cfg.label or 'label')
    if cfg.edges_out:
        write_edge_list(cfg.edges_out, result.rewired)
    return 0


def training_ordering(cfg, X):
    if cfg.permutation:
        ordering = read_permutation(cfg.permutation)
        if ordering.m != X.m:
            raise ValidationException('Permutation covers {} features, input has {}'.format(ordering.m, X.m))
        gamma = ordering.importance if ordering.importance is not None else np.full(X.m, 0.5)
        return ordering, gamma
    ordering = order_features(X, cfg).ordering
    return ordering, ordering.importance


def cmd_train(cfg):
    X = single_input(cfg)
    if X.labels is None:
        raise UnlabeledDataException('Training needs a label column (--label)')
    if not cfg.out:
        raise ValidationException('train needs --out for the checkpoint')
    ordering, gamma = training_ordering(cfg, X)
    task = TASK_LOSSES[X.task]
    class_weights = balanced_class_weights(X.labels, X.num_classes) if cfg.balanced and X.num_classes else None
    fusion_cfg = cfg.fusion_config(X.m, task, X.num_classes)
    loss_cfg = cfg.loss_config(task, class_weights)
    standardized = standardize(X)
    with timed_stage('train'):
        params, trace = fit(standardized, X.labels, ordering, gamma, fusion_cfg, loss_cfg, cfg.epochs, cfg.lr,
                            cfg.seed)
    save_checkpoint(cfg.out, params, fusion_cfg, loss_cfg)
    if cfg.trace:
        write_loss_trace(cfg.trace, trace)
    summary = {'epochs': cfg.epochs, 'task': task}
    if trace:
        summary['initial_loss'] = trace[0][4]
        summary['final_loss'] = trace[-1][4]
    prediction = predict(standardized, ordering, gamma, params, task, fusion_cfg.window)
    if task == TaskLoss.MSE:
        summary['mse'] = float(np.mean((prediction - X.labels) ** 2))
    else:
        summary['accuracy'] = accuracy(prediction, X.labels, task)
    print(json.dumps(summary, sort_keys=True))
    return 0


COMMANDS = {'analyze': cmd_analyze, 'order': cmd_order, 'train': cmd_train}


def run_command(cfg):
    try:
        return COMMANDS[cfg.command](cfg)
    except (np.linalg.LinAlgError, FloatingPointError) as ex:
        raise NumericException('Numerical failure: {}'.format(ex)) from ex
    except OSError as ex:
        raise DataIOException('File access failed: {}'.format(ex)) from ex


def arg_parser():
    return argparse.ArgumentParser(prog='dynorder', description='Feature ordering for tabular data')


def main(argv=None):
    parser = arg_parser()
    add_arguments(parser)
    parsed_args = parse_arguments(parser, argv)
    level = get_log_level(parsed_args)
    activate_logging(level)
    initialize_reporter('dynorder {}'.format(parsed_args.command))
    try:
        cfg = build_config(parsed_args)
        return run_command(cfg)
    except DynorderException as ex:
        log.error('{}: {}'.format(type(ex).__name__, ex))
        sys.stderr.write('dynorder: {}\n'.format(ex))
        return ex.exit_code
    finally:
        if parsed_args.usage_report:
            write_report(parsed_args.usage_report)


if __name__ == '__main__':
    sys.exit(main())
