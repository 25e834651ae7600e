"""
Order-aware fusion network in plain numpy.

Each sample is read as a sequence of feature tokens in the global order: a per-feature linear lift of the value plus
a positional embedding, scaled by a sigmoid importance gate, passed through one causally masked attention block with
a residual connection, mean-pooled and fed to a linear head. Gradients are analytic; gradient_check compares them
with central differences.
"""
import json
import logging
import math

import numpy as np
from scipy.special import expit, logsumexp, softmax

from dynorder.errors import DataIOException, NumericException, ValidationException
from dynorder.permutation import check_permutation
from dynorder.report import to_json_text, write_csv_atomic, write_text_atomic

log = logging.getLogger("dynorder.fusion")

CHECKPOINT_FORMAT_VERSION = 1
DEFAULT_INIT_SCALE = 0.1
FD_STEP = 1e-5

PARAM_NAMES = ('value_w', 'value_b', 'pos_embed', 'gate_w', 'gate_b', 'w_q', 'w_k', 'w_v', 'w_o', 'head_w', 'head_b')

LOSS_TRACE_HEADER = ['epoch', 'task_loss', 'p_d', 'p_g', 'total']


class ShapeMismatchException(ValidationException):
    pass


class InvalidWindowException(ValidationException):
    pass


class InvalidLambdasException(ValidationException):
    pass


class TooFewFeaturesException(ValidationException):
    pass


class NonFiniteParametersException(NumericException):
    pass


class CheckpointException(DataIOException):
    pass


class TaskLoss(object):
    BCE = 'bce'
    CCE = 'cce'
    MSE = 'mse'

    ALL = (BCE, CCE, MSE)


class LossMode(object):
    DFO = 'dfo'
    DISPERSION = 'dispersion'

    ALL = (DFO, DISPERSION)


class FusionConfig(object):
    """
    Sizes of the network: m features, token width d, attention width d_k, head outputs and the attention window
    (None means full causal, i.e. window m).
    """

    def __init__(self, m, d=8, d_k=8, outputs=1, window=None, init_scale=DEFAULT_INIT_SCALE):
        self.m = m
        self.d = d
        self.d_k = d_k
        self.outputs = outputs
        self.window = window
        self.init_scale = init_scale

    def validate(self):
        for name in ('m', 'd', 'd_k', 'outputs'):
            if getattr(self, name) < 1:
                raise ShapeMismatchException('{} must be at least 1, got {}'.format(name, getattr(self, name)))
        if self.window is not None and not 1 <= self.window <= self.m:
            raise InvalidWindowException('Window must be in 1..{}, got {}'.format(self.m, self.window))

    @property
    def effective_window(self):
        return self.m if self.window is None else self.window

    def shapes(self):
        m, d, d_k, o = self.m, self.d, self.d_k, self.outputs
        return {
            'value_w': (m, d), 'value_b': (m, d), 'pos_embed': (m, d),
            'gate_w': (), 'gate_b': (),
            'w_q': (d, d_k), 'w_k': (d, d_k), 'w_v': (d, d_k), 'w_o': (d_k, d),
            'head_w': (d, o), 'head_b': (o,),
        }

    def to_dict(self):
        return dict(vars(self))

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class LossConfig(object):

    def __init__(self, mode=LossMode.DFO, lambda_d=0.4, lambda_g=0.3, lambda_reg=0.4, task=TaskLoss.BCE,
                 class_weights=None):
        self.mode = mode
        self.lambda_d = lambda_d
        self.lambda_g = lambda_g
        self.lambda_reg = lambda_reg
        self.task = task
        self.class_weights = None if class_weights is None else [float(w) for w in class_weights]

    def validate(self):
        if self.task not in TaskLoss.ALL:
            raise ValidationException('Unknown task loss {}'.format(self.task))
        if self.mode == LossMode.DFO:
            if self.lambda_d < 0 or self.lambda_g < 0 or self.lambda_d + self.lambda_g > 1:
                raise InvalidLambdasException('Need lambda_d, lambda_g >= 0 and lambda_d + lambda_g <= 1, got {}, {}'
                                              .format(self.lambda_d, self.lambda_g))
        elif self.mode == LossMode.DISPERSION:
            if not 0 <= self.lambda_reg <= 1:
                raise InvalidLambdasException('lambda_reg must be in [0, 1], got {}'.format(self.lambda_reg))
        else:
            raise ValidationException('Unknown loss mode {}'.format(self.mode))

    @property
    def task_coefficient(self):
        if self.mode == LossMode.DFO:
            return 1.0 - self.lambda_d - self.lambda_g
        return 1.0 - self.lambda_reg

    def to_dict(self):
        return dict(vars(self))

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class FusionParams(object):
    """
    Trainable arrays by name, each with a gradient buffer of the same shape
    """

    def __init__(self, values):
        self.values = dict((name, np.array(values[name], dtype=np.float64)) for name in PARAM_NAMES)
        self.grads = dict((name, np.zeros_like(value)) for name, value in self.values.items())

    @classmethod
    def initialize(cls, cfg, seed):
        # uniform(-scale, scale), drawn in PARAM_NAMES order
        cfg.validate()
        rng = np.random.default_rng(seed)
        shapes = cfg.shapes()
        return cls(dict((name, rng.uniform(-cfg.init_scale, cfg.init_scale, size=shapes[name]))
                        for name in PARAM_NAMES))

    @classmethod
    def zeros(cls, cfg):
        shapes = cfg.shapes()
        return cls(dict((name, np.zeros(shapes[name])) for name in PARAM_NAMES))

    def __getitem__(self, name):
        return self.values[name]

    def copy(self):
        return FusionParams(self.values)

    def zero_grad(self):
        for grad in self.grads.values():
            grad.fill(0.0)

    def step(self, lr):
        for name in PARAM_NAMES:
            self.values[name] -= lr * self.grads[name]
        if not all(np.all(np.isfinite(value)) for value in self.values.values()):
            raise NonFiniteParametersException('Parameters became non-finite; lower the learning rate')

    def to_json(self):
        return dict((name, {'shape': list(value.shape), 'values': value.ravel().tolist()})
                    for name, value in self.values.items())

    @classmethod
    def from_json(cls, data, cfg):
        values = {}
        for name, shape in cfg.shapes().items():
            entry = data[name]
            if tuple(entry['shape']) != shape:
                raise ShapeMismatchException('Parameter {} has shape {}, expected {}'.format(name, entry['shape'], shape))
            values[name] = np.array(entry['values'], dtype=np.float64).reshape(shape)
        return cls(values)


def importance_scores(graphs, alphas):
    """
    Per-feature importance: min-max normalized alpha-weighted incident edge weight over the rewired graphs.
    A constant vector maps to 0.5 everywhere.
    """
    alphas = np.asarray(getattr(alphas, 'alphas', alphas), dtype=np.float64)
    strength = sum(alpha * graph.incident_weight() for alpha, graph in zip(alphas, graphs))
    low, high = strength.min(), strength.max()
    if high - low <= 1e-12 * max(1.0, abs(high)):
        return np.full(strength.shape[0], 0.5)
    return (strength - low) / (high - low)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def ope_forward(x, params, order=None):
    """
    Tokens of reordered feature values: value_w[f] * x + value_b[f] + pos_embed[position]
    :param x: reordered values, one row (m) or a batch (N x m)
    :param params: FusionParams
    :param order: permutation giving the feature at each position; identity when None
    :return: tokens, m x d for one row or N x m x d for a batch
    """
    batch = _as_batch(x)
    m = params['pos_embed'].shape[0]
    if batch.shape[1] != m:
        raise ShapeMismatchException('Got {} feature values for {} positions'.format(batch.shape[1], m))
    order = np.arange(m) if order is None else check_permutation(order, m)
    tokens = (batch[:, :, None] * params['value_w'][order][None] + params['value_b'][order][None]
              + params['pos_embed'][None])
    return tokens[0] if np.ndim(x) == 1 else tokens


def pigl_gates(gamma, params):
    return expit(params['gate_w'] * np.asarray(gamma, dtype=np.float64) + params['gate_b'])


def pigl_forward(tokens, gamma, params):
    # gamma is aligned with token positions
    gates = pigl_gates(gamma, params)
    return gates[:, None] * tokens


def dma_mask(m, window=None):
    """
    Additive attention mask: 0 where position q <= p and p - q <= window, -inf elsewhere
    """
    window = m if window is None else window
    if m < 1 or not 1 <= window <= m:
        raise InvalidWindowException('Window must be in 1..{}, got {}'.format(m, window))
    p = np.arange(m)[:, None]
    q = np.arange(m)[None, :]
    allowed = (q <= p) & (p - q <= window)
    return np.where(allowed, 0.0, -np.inf)


def _masked_softmax(scores, allowed):
    masked = np.where(allowed, scores, -np.inf)
    weights = softmax(masked, axis=-1)
    return np.where(allowed, weights, 0.0)


def attention_weights(tokens, mask, params):
    tokens = np.asarray(tokens, dtype=np.float64)
    d_k = params['w_q'].shape[1]
    queries = tokens @ params['w_q']
    keys = tokens @ params['w_k']
    scores = queries @ np.swapaxes(keys, -1, -2) / math.sqrt(d_k)
    return _masked_softmax(scores, np.isfinite(mask))


def masked_attention(tokens, mask, params):
    """
    One attention block with residual: tokens + softmax(Q K^T / sqrt(d_k) + mask) V W_o
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    weights = attention_weights(tokens, mask, params)
    return tokens + (weights @ (tokens @ params['w_v'])) @ params['w_o']


def dispersion_penalty(batch):
    """
    Mean over rows of the summed absolute differences between adjacent reordered columns
    """
    batch = _as_batch(batch)
    if batch.shape[1] < 2:
        raise TooFewFeaturesException('Dispersion penalty needs at least 2 features, got {}'.format(batch.shape[1]))
    return float(np.abs(np.diff(batch, axis=1)).sum(axis=1).mean())


def train_loss(task_loss, p_d, p_g, cfg):
    cfg.validate()
    if cfg.mode == LossMode.DFO:
        return cfg.lambda_d * p_d + cfg.lambda_g * p_g + (1.0 - cfg.lambda_d - cfg.lambda_g) * task_loss
    return cfg.lambda_reg * p_d + (1.0 - cfg.lambda_reg) * task_loss


def _sample_weights(labels, task, class_weights):
    if class_weights is None or task == TaskLoss.MSE:
        return np.ones(labels.shape[0])
    return np.asarray(class_weights, dtype=np.float64)[labels.astype(np.int64)]


def task_loss(logits, labels, task, class_weights=None):
    """
    Mean per-sample task loss and its gradient with respect to the logits
    :param logits: N x outputs
    :param labels: N targets (0/1, class ids or reals)
    :return: (loss, dlogits)
    """
    labels = np.asarray(labels)
    n = logits.shape[0]
    weights = _sample_weights(labels, task, class_weights)
    if task == TaskLoss.BCE:
        z = logits[:, 0]
        y = labels.astype(np.float64)
        losses = np.logaddexp(0.0, z) - y * z
        gradient = ((expit(z) - y) * weights / n)[:, None]
    elif task == TaskLoss.CCE:
        classes = labels.astype(np.int64)
        losses = logsumexp(logits, axis=1) - logits[np.arange(n), classes]
        gradient = softmax(logits, axis=1)
        gradient[np.arange(n), classes] -= 1.0
        gradient *= (weights / n)[:, None]
    elif task == TaskLoss.MSE:
        residual = logits[:, 0] - labels.astype(np.float64)
        losses = residual ** 2
        gradient = (2.0 * residual * weights / n)[:, None]
    else:
        raise ValidationException('Unknown task loss {}'.format(task))
    return float(np.mean(weights * losses)), gradient


def link(logits, task):
    if task == TaskLoss.BCE:
        return expit(logits[:, 0])
    if task == TaskLoss.CCE:
        return softmax(logits, axis=1)
    return logits[:, 0]


class ForwardResult(object):

    def __init__(self, prediction, loss, task_loss, p_d, p_g, cache):
        self.prediction = prediction
        self.loss = loss
        self.task_loss = task_loss
        self.p_d = p_d
        self.p_g = p_g
        self.cache = cache


def _network(reordered, gamma_r, order, params, mask):
    tokens = ope_forward(reordered, params, order)
    gates = pigl_gates(gamma_r, params)
    gated = gates[None, :, None] * tokens
    allowed = np.isfinite(mask)
    d_k = params['w_q'].shape[1]
    queries = gated @ params['w_q']
    keys = gated @ params['w_k']
    values = gated @ params['w_v']
    attention = _masked_softmax(queries @ np.swapaxes(keys, 1, 2) / math.sqrt(d_k), allowed)
    mixed = attention @ values
    hidden = gated + mixed @ params['w_o']
    pooled = hidden.mean(axis=1)
    logits = pooled @ params['head_w'] + params['head_b']
    cache = {
        'reordered': reordered, 'order': order, 'gamma_r': gamma_r, 'tokens': tokens, 'gates': gates,
        'gated': gated, 'queries': queries, 'keys': keys, 'values': values, 'attention': attention,
        'mixed': mixed, 'pooled': pooled, 'logits': logits,
    }
    return logits, cache


def _ordering_order(ordering, m):
    order = getattr(ordering, 'order', ordering)
    return check_permutation(order, m)


def forward(X, labels, ordering, gamma, params, loss_cfg, window=None):
    """
    Predictions and training loss for a batch
    :param X: N x m values (or DataMatrix) in the original column order
    :param labels: N targets, or None to skip the loss
    :param ordering: GlobalOrdering (or a bare permutation); its coherence is the global penalty
    :param gamma: per-feature importance in the original column order
    :param params: FusionParams
    :param loss_cfg: LossConfig
    :param window: attention window, full causal when None
    :return: ForwardResult
    """
    values = _as_batch(getattr(X, 'values', X))
    m = params['pos_embed'].shape[0]
    if values.shape[1] != m:
        raise ShapeMismatchException('Got {} features for a network of {}'.format(values.shape[1], m))
    order = _ordering_order(ordering, m)
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (m,):
        raise ShapeMismatchException('Got {} importance scores for {} features'.format(gamma.size, m))
    reordered = values[:, order]
    logits, cache = _network(reordered, gamma[order], order, params, dma_mask(m, window))
    prediction = link(logits, loss_cfg.task)
    if labels is None:
        return ForwardResult(prediction, None, None, None, None, cache)
    base_loss, dlogits = task_loss(logits, labels, loss_cfg.task, loss_cfg.class_weights)
    p_d = dispersion_penalty(reordered)
    p_g = float(getattr(ordering, 'coherence', None) or 0.0)
    cache['dlogits'] = dlogits
    return ForwardResult(prediction, train_loss(base_loss, p_d, p_g, loss_cfg), base_loss, p_d, p_g, cache)


def backward(result, params, loss_cfg):
    """
    Analytic gradients of the training loss for the batch of a forward call, stored in params.grads.
    The penalties do not depend on the parameters, so only the task term carries gradient.
    :return: params.grads
    """
    c = result.cache
    n, m = c['reordered'].shape
    d_k = params['w_q'].shape[1]
    grads = params.grads
    dlogits = loss_cfg.task_coefficient * c['dlogits']

    grads['head_w'][...] = c['pooled'].T @ dlogits
    grads['head_b'][...] = dlogits.sum(axis=0)
    dhidden = np.repeat((dlogits @ params['head_w'].T)[:, None, :] / m, m, axis=1)

    dgated = dhidden.copy()
    grads['w_o'][...] = np.einsum('npk,npd->kd', c['mixed'], dhidden)
    dmixed = dhidden @ params['w_o'].T
    dattention = dmixed @ np.swapaxes(c['values'], 1, 2)
    dvalues = np.swapaxes(c['attention'], 1, 2) @ dmixed
    attention = c['attention']
    dscores = attention * (dattention - (dattention * attention).sum(axis=-1, keepdims=True)) / math.sqrt(d_k)
    dqueries = dscores @ c['keys']
    dkeys = np.swapaxes(dscores, 1, 2) @ c['queries']
    gated = c['gated']
    grads['w_q'][...] = np.einsum('npd,npk->dk', gated, dqueries)
    grads['w_k'][...] = np.einsum('npd,npk->dk', gated, dkeys)
    grads['w_v'][...] = np.einsum('npd,npk->dk', gated, dvalues)
    dgated += dqueries @ params['w_q'].T + dkeys @ params['w_k'].T + dvalues @ params['w_v'].T

    gates = c['gates']
    dtokens = gates[None, :, None] * dgated
    dgate_logits = (dgated * c['tokens']).sum(axis=(0, 2)) * gates * (1.0 - gates)
    grads['gate_w'][...] = (dgate_logits * c['gamma_r']).sum()
    grads['gate_b'][...] = dgate_logits.sum()

    order = c['order']
    grads['pos_embed'][...] = dtokens.sum(axis=0)
    grads['value_b'][order] = dtokens.sum(axis=0)
    grads['value_w'][order] = np.einsum('np,npd->pd', c['reordered'], dtokens)
    return grads


def gradient_check(X, labels, ordering, gamma, params, loss_cfg, window=None, step=FD_STEP):
    """
    Largest relative difference between analytic gradients and central differences over every parameter entry,
    relative to max(|analytic|, |numeric|, 1e-6)
    """
    result = forward(X, labels, ordering, gamma, params, loss_cfg, window)
    analytic = dict((name, grad.copy()) for name, grad in backward(result, params, loss_cfg).items())
    worst = 0.0
    for name in PARAM_NAMES:
        value = params.values[name]
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + step
            plus = forward(X, labels, ordering, gamma, params, loss_cfg, window).loss
            value[index] = original - step
            minus = forward(X, labels, ordering, gamma, params, loss_cfg, window).loss
            value[index] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = analytic[name][index]
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-6)
            worst = max(worst, error)
    return worst


def balanced_class_weights(labels, num_classes):
    """
    Weights n / (C * count_c) so every class contributes equally; absent classes get weight 0
    """
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    weights = np.zeros(num_classes)
    present = counts > 0
    weights[present] = labels.shape[0] / (num_classes * counts[present])
    return weights.tolist()


def fit(X, labels, ordering, gamma, fusion_cfg, loss_cfg, epochs, lr, seed):
    """
    Full-batch gradient descent from a seeded initialization
    :return: (FusionParams, trace) where trace has one (epoch, task_loss, p_d, p_g, total) row per epoch,
        measured before that epoch's update
    """
    fusion_cfg.validate()
    loss_cfg.validate()
    if labels is None:
        raise ValidationException('Training needs labels')
    params = FusionParams.initialize(fusion_cfg, seed)
    trace = []
    for epoch in range(1, epochs + 1):
        result = forward(X, labels, ordering, gamma, params, loss_cfg, fusion_cfg.window)
        if not np.isfinite(result.loss):
            raise NonFiniteParametersException('Loss became non-finite at epoch {}'.format(epoch))
        trace.append((epoch, result.task_loss, result.p_d, result.p_g, result.loss))
        backward(result, params, loss_cfg)
        params.step(lr)
        if epoch == 1 or epoch == epochs or epoch % 50 == 0:
            log.info('Epoch {}: loss {:.6f} (task {:.6f})'.format(epoch, result.loss, result.task_loss))
    return params, trace


def predict(X, ordering, gamma, params, task, window=None):
    return forward(X, None, ordering, gamma, params, LossConfig(task=task), window).prediction


def accuracy(prediction, labels, task):
    labels = np.asarray(labels)
    if task == TaskLoss.BCE:
        return float(np.mean((prediction >= 0.5).astype(np.int64) == labels))
    if task == TaskLoss.CCE:
        return float(np.mean(prediction.argmax(axis=1) == labels))
    raise ValidationException('Accuracy is defined for classification, not {}'.format(task))


def write_loss_trace(path, trace):
    write_csv_atomic(path, LOSS_TRACE_HEADER, [[epoch] + [repr(float(v)) for v in row] for epoch, *row in trace])


def save_checkpoint(path, params, fusion_cfg, loss_cfg):
    document = {
        'format_version': CHECKPOINT_FORMAT_VERSION,
        'config': {'fusion': fusion_cfg.to_dict(), 'loss': loss_cfg.to_dict()},
        'params': params.to_json(),
    }
    write_text_atomic(path, to_json_text(document))


def load_checkpoint(path):
    """
    :return: (FusionParams, FusionConfig, LossConfig)
    """
    try:
        with open(path, encoding='utf-8') as f:
            document = json.load(f)
    except (OSError, ValueError) as ex:
        raise CheckpointException('Unable to read checkpoint {}: {}'.format(path, ex)) from ex
    if document.get('format_version') != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointException('Unsupported checkpoint format {}'.format(document.get('format_version')))
    fusion_cfg = FusionConfig.from_dict(document['config']['fusion'])
    loss_cfg = LossConfig.from_dict(document['config']['loss'])
    return FusionParams.from_json(document['params'], fusion_cfg), fusion_cfg, loss_cfg
