import logging
import os

import yaml

from dynorder.errors import DataIOException, ValidationException
from dynorder.foe import DEFAULT_SENSITIVITY, DEFAULT_THRESHOLDS
from dynorder.fusion import FusionConfig, LossConfig, TaskLoss
from dynorder.graph import DEFAULT_ALPHA_EPS, DEFAULT_KL_BINS
from dynorder.rewiring import RewiringConfig

log = logging.getLogger('dynorder.context')


class ConfigFileException(DataIOException):
    pass


class InvalidWorkersException(ValidationException):
    pass


class RunConfig(object):
    """
    Settings of one command-line run.

    Defaults are the tuned values (k=12, descending, mutation probability 0.2,
    tolerance 0.021, lambda_d 0.4, lambda_g 0.3, lr 0.001). Values are taken from kwargs only for attributes this
    class defines, and None never overrides a value.
    """

    def __init__(self, kwargs=None):
        self.command = None
        self.input = []
        self.label = None
        self.drop_missing = False
        self.clusters = 12
        self.metric = 'euclidean'
        self.kl_bins = DEFAULT_KL_BINS
        self.alpha_eps = DEFAULT_ALPHA_EPS
        self.direction = 'descending'
        self.tolerance = 0.021
        self.mutation_prob = 0.2
        self.theta = 0.1
        self.lam = 0.05
        self.decay = 0.01
        self.centrality = 'degree'
        self.rewire_fraction = 0.25
        self.max_rounds = 50
        self.loss = 'dfo'
        self.lambda_d = 0.4
        self.lambda_g = 0.3
        self.lambda_reg = 0.4
        self.d = 8
        self.d_k = 8
        self.window = None
        self.balanced = False
        self.epochs = 100
        self.lr = 0.001
        self.seed = 0
        self.workers = None
        self.thresholds = list(DEFAULT_THRESHOLDS)
        self.s = DEFAULT_SENSITIVITY
        self.out = None
        self.format = 'json'
        self.trace = None
        self.permutation = None
        self.reordered_out = None
        self.edges_out = None
        self.usage_report = None
        self.update(kwargs or {})

    def update(self, values):
        for key, value in values.items():
            if value is not None and hasattr(self, key):
                setattr(self, key, value)
        return self

    @classmethod
    def from_sources(cls, arguments, config_file=None):
        """
        Defaults, overridden by a YAML config file, overridden by explicit arguments
        :param arguments: dict of parsed arguments, None for flags not given
        :param config_file: optional path of a YAML mapping with the same keys
        """
        config = cls()
        if config_file:
            config.update(load_config_file(config_file))
        return config.update(arguments).validate()

    def validate(self):
        """
        Check settings that no later stage checks; returns self
        """
        if self.workers is not None and (isinstance(self.workers, bool) or not isinstance(self.workers, int)
                                         or self.workers < 1):
            raise InvalidWorkersException('workers must be a positive integer, got {}'.format(self.workers))
        return self

    def rewiring_config(self):
        return RewiringConfig(centrality=self.centrality, learning_rate_lambda=self.lam, decay_epsilon=self.decay,
                              prune_theta=self.theta, tolerance=self.tolerance, mutation_prob=self.mutation_prob,
                              max_rounds=self.max_rounds, seed=self.seed, direction=self.direction,
                              rewire_fraction=self.rewire_fraction)

    def loss_config(self, task, class_weights=None):
        return LossConfig(mode=self.loss, lambda_d=self.lambda_d, lambda_g=self.lambda_g,
                          lambda_reg=self.lambda_reg, task=task, class_weights=class_weights)

    def fusion_config(self, m, task, num_classes=0):
        outputs = num_classes if task == TaskLoss.CCE else 1
        return FusionConfig(m, d=self.d, d_k=self.d_k, outputs=outputs, window=self.window)


def load_config_file(path):
    if not os.path.isfile(path):
        raise ConfigFileException('Config file not found: {}'.format(path))
    try:
        with open(path, encoding='utf-8') as f:
            values = yaml.safe_load(f)
    except yaml.YAMLError as ex:
        raise ValidationException('Invalid YAML in {}: {}'.format(path, ex)) from ex
    if values is None:
        return {}
    if not isinstance(values, dict):
        raise ValidationException('Config file {} must hold a mapping'.format(path))
    known = set(vars(RunConfig()))
    unknown = sorted(set(values) - known)
    if unknown:
        log.warning('Ignoring unknown config keys in {}: {}'.format(path, ', '.join(unknown)))
    return values
